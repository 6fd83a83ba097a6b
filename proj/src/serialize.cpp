#include "csip/serialize.hpp"

#include <bit>
#include <fstream>

#include <json.hpp>

static_assert(std::endian::native == std::endian::little,
              "serialization writes native byte order and expects little-endian hosts");

namespace csip {

void ParamMap::merge(const std::string& prefix, const ParamMap& other) {
  for (const auto& [path, t] : other.items) {
    items.emplace_back(prefix.empty() ? path : prefix + "." + path, t);
  }
}

Tensor* ParamMap::find(const std::string& path) {
  for (auto& [p, t] : items)
    if (p == path) return &t;
  return nullptr;
}

const Tensor* ParamMap::find(const std::string& path) const {
  for (const auto& [p, t] : items)
    if (p == path) return &t;
  return nullptr;
}

void ParamMap::zero_grad() {
  for (auto& [p, t] : items) t.zero_grad();
}

void ParamMap::set_requires_grad(bool rg) {
  for (auto& [p, t] : items) t.set_requires_grad(rg);
}

namespace {

constexpr char kCkptMagic[8] = {'C', 'S', 'I', 'P', 'C', 'K', 'P', '1'};
constexpr char kMatMagic[8] = {'C', 'S', 'I', 'P', 'M', 'A', 'T', '1'};

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) tensor_error("truncated file: " + path);
  return v;
}

void write_tensor_body(std::ostream& os, const Tensor& t) {
  write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(t.ndim()));
  for (std::size_t d : t.shape) write_pod<std::uint64_t>(os, d);
  os.write(reinterpret_cast<const char*>(t.data->data()),
           static_cast<std::streamsize>(t.numel() * sizeof(double)));
}

Tensor read_tensor_body(std::istream& is, const std::string& path) {
  const auto ndim = read_pod<std::uint32_t>(is, path);
  Shape shape(ndim);
  for (auto& d : shape) d = read_pod<std::uint64_t>(is, path);
  Tensor t = Tensor::zeros(shape);
  is.read(reinterpret_cast<char*>(t.data->data()),
          static_cast<std::streamsize>(t.numel() * sizeof(double)));
  if (!is) tensor_error("truncated tensor data: " + path);
  return t;
}

}  // namespace

void save_checkpoint(const std::string& path, const ParamMap& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) tensor_error("cannot open for write: " + path);
  os.write(kCkptMagic, 8);
  write_pod<std::uint64_t>(os, params.items.size());
  for (const auto& [name, t] : params.items) {
    write_pod<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    write_tensor_body(os, t);
  }
  if (!os) tensor_error("write failed: " + path);
}

ParamMap load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) tensor_error("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kCkptMagic, 8)) {
    tensor_error("not a checkpoint file: " + path);
  }
  const auto count = read_pod<std::uint64_t>(is, path);
  ParamMap out;
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto len = read_pod<std::uint32_t>(is, path);
    std::string name(len, '\0');
    is.read(name.data(), len);
    if (!is) tensor_error("truncated entry name: " + path);
    out.add(name, read_tensor_body(is, path));
  }
  return out;
}

void load_checkpoint_into(const std::string& path, ParamMap& dst) {
  ParamMap loaded = load_checkpoint(path);
  for (auto& [name, t] : dst.items) {
    const Tensor* src = loaded.find(name);
    if (!src) tensor_error("checkpoint " + path + " is missing parameter " + name);
    if (src->shape != t.shape) {
      tensor_error("checkpoint parameter " + name + " has shape " + shape_str(src->shape) +
                   ", expected " + shape_str(t.shape));
    }
    *t.data = *src->data;
  }
}

void save_matrix(const std::string& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) tensor_error("cannot open for write: " + path);
  os.write(kMatMagic, 8);
  write_tensor_body(os, t);
  if (!os) tensor_error("write failed: " + path);
}

Tensor load_matrix(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) tensor_error("cannot open: " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kMatMagic, 8)) {
    tensor_error("not a matrix file: " + path);
  }
  return read_tensor_body(is, path);
}

void save_features(const std::string& path, const Tensor& feats, const std::vector<int>& pids,
                   const std::vector<int>& camids) {
  if (feats.ndim() != 2 || feats.shape[0] != pids.size() || pids.size() != camids.size()) {
    tensor_error("save_features: need N x C features with N pids and camids");
  }
  save_matrix(path, feats);
  nlohmann::json meta;
  meta["pids"] = pids;
  meta["camids"] = camids;
  std::ofstream os(path + ".meta.json");
  if (!os) tensor_error("cannot open for write: " + path + ".meta.json");
  os << meta.dump(2) << "\n";
}

FeatureFile load_features(const std::string& path) {
  FeatureFile f;
  f.feats = load_matrix(path);
  std::ifstream is(path + ".meta.json");
  if (!is) tensor_error("cannot open: " + path + ".meta.json");
  nlohmann::json meta = nlohmann::json::parse(is);
  f.pids = meta.at("pids").get<std::vector<int>>();
  f.camids = meta.at("camids").get<std::vector<int>>();
  if (f.feats.ndim() != 2 || f.feats.shape[0] != f.pids.size() ||
      f.pids.size() != f.camids.size()) {
    tensor_error("feature file and sidecar disagree on row count: " + path);
  }
  return f;
}

}  // namespace csip
