#include "csip/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <json.hpp>

#include "csip/rng.hpp"
#include "csip/serialize.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace csip {

void DataConfig::validate() const {
  if (identities < 2) tensor_error("data: need at least 2 identities");
  if (heldout_identities >= identities) {
    tensor_error("data: held-out identities must leave at least one training identity");
  }
  if (eval_tracklets_per_id < 2 || eval_tracklets_per_id >= tracklets_per_id) {
    tensor_error("data: eval tracklets per id must be in [2, tracklets_per_id)");
  }
  if (frames < 2) tensor_error("data: need at least 2 frames per tracklet");
  if (cameras < 2) tensor_error("data: need at least 2 cameras");
  if (height % 8 != 0 || width % 8 != 0) {
    tensor_error("data: frame dims must be divisible by the 8x8 patch default");
  }
}

namespace {

// Base standing pose for the 17-joint body graph, x lateral, y up, z depth.
constexpr double kBasePose[17][3] = {
    {0.00, 0.00, 0.0},  {-0.13, -0.02, 0.0}, {-0.14, -0.45, 0.0}, {-0.15, -0.90, 0.0},
    {0.13, -0.02, 0.0}, {0.14, -0.45, 0.0},  {0.15, -0.90, 0.0},  {0.00, 0.25, 0.0},
    {0.00, 0.50, 0.0},  {0.00, 0.60, 0.0},   {0.00, 0.75, 0.0},   {0.20, 0.48, 0.0},
    {0.24, 0.20, 0.0},  {0.26, -0.05, 0.0},  {-0.20, 0.48, 0.0},  {-0.24, 0.20, 0.0},
    {-0.26, -0.05, 0.0}};

// Joint -> body group (head, torso, left arm, right arm, left leg, right leg).
constexpr int kJointGroup[17] = {1, 5, 5, 5, 4, 4, 4, 1, 1, 0, 0, 2, 2, 2, 3, 3, 3};

// Limbs swing more than the torso.
constexpr double kSwingScale[17] = {0.2, 0.4, 0.8, 1.0, 0.4, 0.8, 1.0, 0.2, 0.2,
                                    0.3, 0.3, 0.5, 0.8, 1.0, 0.5, 0.8, 1.0};

struct IdentityParams {
  double freq = 0.0;
  double amp[17];
  double phase[17];
  double dir[17][3];
  double colors[6][3];  // body-group RGB
};

IdentityParams draw_identity(std::uint64_t seed, int pid) {
  auto rng = rng_stream(seed, "identity", static_cast<std::uint64_t>(pid));
  IdentityParams p;
  p.freq = uniform(rng, 0.15, 0.45);  // cycles per frame
  for (int j = 0; j < 17; ++j) {
    p.amp[j] = uniform(rng, 0.04, 0.14) * kSwingScale[j];
    p.phase[j] = uniform(rng, 0.0, 2.0 * M_PI);
    double d[3] = {uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0), uniform(rng, -1.0, 1.0)};
    const double n = std::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2]) + 1e-12;
    for (int c = 0; c < 3; ++c) p.dir[j][c] = d[c] / n;
  }
  for (int g = 0; g < 6; ++g)
    for (int c = 0; c < 3; ++c) p.colors[g][c] = uniform(rng, 0.25, 1.0);
  return p;
}

struct CameraParams {
  double bias[3];
};

CameraParams draw_camera(std::uint64_t seed, int camid) {
  auto rng = rng_stream(seed, "camera", static_cast<std::uint64_t>(camid));
  CameraParams c;
  for (int i = 0; i < 3; ++i) c.bias[i] = uniform(rng, 0.0, 0.22);
  return c;
}

Tracklet make_tracklet(const DataConfig& cfg, const IdentityParams& id, int pid, int tidx) {
  auto rng = rng_stream(cfg.seed, "tracklet", static_cast<std::uint64_t>(pid),
                        static_cast<std::uint64_t>(tidx));
  const int camid = tidx % static_cast<int>(cfg.cameras);
  const CameraParams cam = draw_camera(cfg.seed, camid);
  const double track_phase = uniform(rng, 0.0, 2.0 * M_PI);

  Tracklet t;
  t.pid = pid;
  t.camid = camid;
  t.source = TrackletSource::kSynthetic;
  t.skeletons.frames = cfg.frames;
  t.skeletons.joints = 17;
  t.skeletons.coords.assign(cfg.frames * 17 * 3, 0.0);
  t.skeletons.valid.assign(cfg.frames, 1);
  t.skeletons.pid = pid;
  t.skeletons.camid = camid;
  t.images.frames = cfg.frames;
  t.images.height = cfg.height;
  t.images.width = cfg.width;
  t.images.pixels.assign(cfg.frames * cfg.height * cfg.width * 3, 0.0);
  t.images.pid = pid;
  t.images.camid = camid;

  for (std::size_t f = 0; f < cfg.frames; ++f) {
    double* joints = t.skeletons.coords.data() + f * 17 * 3;
    for (int j = 0; j < 17; ++j) {
      const double swing =
          id.amp[j] * std::sin(2.0 * M_PI * id.freq * static_cast<double>(f) +
                               id.phase[j] + track_phase);
      for (int c = 0; c < 3; ++c) {
        joints[j * 3 + c] = kBasePose[j][c] + swing * id.dir[j][c] +
                            uniform(rng, -cfg.skeleton_noise, cfg.skeleton_noise);
      }
    }
    // Coarse block rasterization of the projected joints.
    double* img = t.images.pixels.data() + f * cfg.height * cfg.width * 3;
    for (std::size_t px = 0; px < cfg.height * cfg.width; ++px) {
      img[px * 3 + 0] = cam.bias[0];
      img[px * 3 + 1] = cam.bias[1];
      img[px * 3 + 2] = cam.bias[2];
    }
    for (int j = 0; j < 17; ++j) {
      const double x = joints[j * 3 + 0];
      const double y = joints[j * 3 + 1];
      const auto col0 = static_cast<long>(
          std::floor((x + 0.5) * static_cast<double>(cfg.width - 1)));
      const auto row0 = static_cast<long>(
          std::floor((1.0 - y) / 2.0 * static_cast<double>(cfg.height - 1)));
      const double* color = id.colors[kJointGroup[j]];
      for (long dr = 0; dr < 2; ++dr) {
        for (long dc = 0; dc < 2; ++dc) {
          const long r = row0 + dr, c = col0 + dc;
          if (r < 0 || c < 0 || r >= static_cast<long>(cfg.height) ||
              c >= static_cast<long>(cfg.width)) {
            continue;
          }
          double* px3 = img + (static_cast<std::size_t>(r) * cfg.width +
                               static_cast<std::size_t>(c)) * 3;
          px3[0] = color[0];
          px3[1] = color[1];
          px3[2] = color[2];
        }
      }
    }
    for (std::size_t i = 0; i < cfg.height * cfg.width * 3; ++i) {
      img[i] = std::clamp(img[i] + uniform(rng, -cfg.image_noise, cfg.image_noise), 0.0, 1.0);
    }
  }
  return t;
}

}  // namespace

Dataset generate_dataset(const DataConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.identities = cfg.identities;
  ds.joint_names = SkeletonGraph::human36m().names;
  const std::size_t train_ids = cfg.identities - cfg.heldout_identities;
  for (std::size_t pid = 0; pid < cfg.identities; ++pid) {
    const IdentityParams id = draw_identity(cfg.seed, static_cast<int>(pid));
    const bool heldout_id = pid >= train_ids;
    for (std::size_t tidx = 0; tidx < cfg.tracklets_per_id; ++tidx) {
      Tracklet t = make_tracklet(cfg, id, static_cast<int>(pid), static_cast<int>(tidx));
      const bool eval_tracklet =
          heldout_id || tidx >= cfg.tracklets_per_id - cfg.eval_tracklets_per_id;
      if (!eval_tracklet) {
        ds.train.push_back(std::move(t));
      } else {
        const std::size_t eval_rank =
            heldout_id ? tidx : tidx - (cfg.tracklets_per_id - cfg.eval_tracklets_per_id);
        if (eval_rank == 0) {
          ds.query.push_back(std::move(t));
        } else {
          ds.gallery.push_back(std::move(t));
        }
      }
    }
  }
  return ds;
}

void save_skeleton_json(const std::string& dir, const SkeletonSequence& seq,
                        const std::vector<std::string>& joint_names) {
  if (joint_names.size() != seq.joints) {
    tensor_error("skeleton json: " + std::to_string(joint_names.size()) + " names for " +
                 std::to_string(seq.joints) + " joints");
  }
  fs::create_directories(dir);
  for (std::size_t f = 0; f < seq.frames; ++f) {
    if (!seq.valid[f]) continue;  // masked frames stay absent on disk
    json frame;
    json kps = json::array();
    const double* p = seq.frame_ptr(f);
    for (std::size_t j = 0; j < seq.joints; ++j) {
      kps.push_back({{"name", joint_names[j]},
                     {"xyz", {p[j * 3], p[j * 3 + 1], p[j * 3 + 2]}}});
    }
    frame["keypoints"] = std::move(kps);
    char name[32];
    std::snprintf(name, sizeof(name), "frame_%04zu.json", f);
    std::ofstream os(fs::path(dir) / name);
    if (!os) tensor_error("cannot write " + (fs::path(dir) / name).string());
    os << frame.dump(1) << "\n";
  }
}

SkeletonSequence load_skeleton_json(const std::string& dir,
                                    const std::vector<std::string>& joint_names) {
  if (!fs::exists(dir)) tensor_error("skeleton directory missing: " + dir);
  std::vector<std::pair<std::size_t, fs::path>> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string stem = entry.path().filename().string();
    std::size_t idx = 0;
    if (std::sscanf(stem.c_str(), "frame_%zu.json", &idx) == 1) {
      files.emplace_back(idx, entry.path());
    }
  }
  if (files.empty()) tensor_error("no skeleton frames in " + dir);
  std::sort(files.begin(), files.end());
  const std::size_t frames = files.back().first + 1;
  const std::size_t j = joint_names.size();

  SkeletonSequence seq;
  seq.frames = frames;
  seq.joints = j;
  seq.coords.assign(frames * j * 3, 0.0);
  seq.valid.assign(frames, 0);  // missing indices stay masked
  for (const auto& [idx, path] : files) {
    std::ifstream is(path);
    if (!is) tensor_error("cannot open " + path.string());
    json frame;
    try {
      frame = json::parse(is);
    } catch (const json::parse_error& e) {
      tensor_error("malformed skeleton JSON " + path.string() + " at byte " +
                   std::to_string(e.byte) + ": " + e.what());
    }
    const auto& kps = frame.at("keypoints");
    if (kps.size() != j) {
      tensor_error(path.string() + ": expected " + std::to_string(j) + " keypoints, got " +
                   std::to_string(kps.size()));
    }
    double* dst = seq.coords.data() + idx * j * 3;
    for (std::size_t k = 0; k < j; ++k) {
      const auto& kp = kps[k];
      const std::string name = kp.at("name").get<std::string>();
      const auto it = std::find(joint_names.begin(), joint_names.end(), name);
      if (it == joint_names.end()) {
        tensor_error(path.string() + ": unknown joint name '" + name + "'");
      }
      const auto slot = static_cast<std::size_t>(it - joint_names.begin());
      const auto& xyz = kp.at("xyz");
      for (int c = 0; c < 3; ++c) dst[slot * 3 + c] = xyz.at(c).get<double>();
    }
    seq.valid[idx] = 1;
  }
  return seq;
}

Tensor regress_joints(const Tensor& vertices, const JointRegressor& reg) {
  if (vertices.ndim() != 2 || vertices.shape[1] != 3) {
    tensor_error("regress_joints: vertices must be V x 3, got " + shape_str(vertices.shape));
  }
  if (reg.matrix.ndim() != 2 || reg.matrix.shape[1] != vertices.shape[0]) {
    tensor_error("regress_joints: regressor " + shape_str(reg.matrix.shape) +
                 " does not match " + std::to_string(vertices.shape[0]) + " vertices");
  }
  NoGradGuard ng;
  return matmul(reg.matrix, vertices);
}

Tensor parse_obj(const std::string& path) {
  std::ifstream is(path);
  if (!is) tensor_error("cannot open obj file: " + path);
  std::vector<double> verts;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.size() < 2 || line[0] != 'v' || !std::isspace(static_cast<unsigned char>(line[1]))) {
      continue;  // faces, normals, uvs, comments
    }
    double x = 0, y = 0, z = 0;
    if (std::sscanf(line.c_str() + 1, "%lf %lf %lf", &x, &y, &z) != 3) {
      tensor_error(path + ": bad vertex line " + std::to_string(lineno) + ": " + line);
    }
    verts.push_back(x);
    verts.push_back(y);
    verts.push_back(z);
  }
  if (verts.empty()) {
    std::cerr << "warning: " << path << " contains no vertex lines\n";
  }
  const std::size_t rows = verts.size() / 3;
  return Tensor::from_data({rows, 3}, std::move(verts));
}

Tracklet discard_empty_frames(const Tracklet& t) {
  if (t.images.frames != t.skeletons.frames) {
    tensor_error("discard: modalities disagree on frame count");
  }
  std::vector<std::size_t> keep;
  for (std::size_t f = 0; f < t.skeletons.frames; ++f) {
    if (t.skeletons.frame_usable(f)) keep.push_back(f);
  }
  if (keep.empty()) tensor_error("tracklet fully empty");
  if (keep.size() == t.skeletons.frames) return t;

  Tracklet out = t;
  out.skeletons.frames = keep.size();
  out.skeletons.coords.clear();
  out.skeletons.valid.assign(keep.size(), 1);
  out.images.frames = keep.size();
  out.images.pixels.clear();
  const std::size_t jsz = t.skeletons.joints * 3;
  const std::size_t isz = t.images.frame_size();
  for (std::size_t f : keep) {
    out.skeletons.coords.insert(out.skeletons.coords.end(), t.skeletons.frame_ptr(f),
                                t.skeletons.frame_ptr(f) + jsz);
    out.images.pixels.insert(out.images.pixels.end(), t.images.frame_ptr(f),
                             t.images.frame_ptr(f) + isz);
  }
  return out;
}

namespace {

std::string tracklet_rel_dir(int pid, int tidx) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "id_%04d/track_%02d", pid, tidx);
  return buf;
}

void save_tracklet(const fs::path& root, const std::string& rel, const Tracklet& t,
                   const std::vector<std::string>& joint_names) {
  const fs::path dir = root / rel;
  fs::create_directories(dir);
  Tensor frames = Tensor::from_data({t.images.frames, t.images.height, t.images.width, 3},
                                    t.images.pixels);
  save_matrix((dir / "frames.bin").string(), frames);
  save_skeleton_json((dir / "skeleton").string(), t.skeletons, joint_names);
  json meta;
  meta["pid"] = t.pid;
  meta["camid"] = t.camid;
  meta["source"] = t.source == TrackletSource::kSynthetic ? "synthetic" : "ingested";
  std::ofstream os(dir / "meta.json");
  os << meta.dump(1) << "\n";
}

Tracklet load_tracklet(const fs::path& root, const std::string& rel,
                       const std::vector<std::string>& joint_names) {
  const fs::path dir = root / rel;
  Tracklet t;
  Tensor frames = load_matrix((dir / "frames.bin").string());
  if (frames.ndim() != 4 || frames.shape[3] != 3) {
    tensor_error("bad image tensor in " + dir.string());
  }
  t.images.frames = frames.shape[0];
  t.images.height = frames.shape[1];
  t.images.width = frames.shape[2];
  t.images.pixels = *frames.data;
  t.skeletons = load_skeleton_json((dir / "skeleton").string(), joint_names);
  std::ifstream is(dir / "meta.json");
  if (!is) tensor_error("missing meta.json in " + dir.string());
  json meta = json::parse(is);
  t.pid = meta.at("pid").get<int>();
  t.camid = meta.at("camid").get<int>();
  t.source = meta.at("source").get<std::string>() == "synthetic" ? TrackletSource::kSynthetic
                                                                 : TrackletSource::kIngested;
  t.images.pid = t.skeletons.pid = t.pid;
  t.images.camid = t.skeletons.camid = t.camid;
  if (t.images.frames != t.skeletons.frames) {
    tensor_error("modalities disagree on frame count in " + dir.string());
  }
  return t;
}

}  // namespace

void save_dataset(const std::string& dir, const Dataset& ds) {
  const fs::path root(dir);
  fs::create_directories(root);
  json manifest;
  manifest["identities"] = ds.identities;
  manifest["joint_names"] = ds.joint_names;
  json splits;
  std::vector<int> counter(ds.identities, 0);
  auto write_split = [&](const char* name, const std::vector<Tracklet>& split) {
    json list = json::array();
    for (const Tracklet& t : split) {
      const std::string rel = tracklet_rel_dir(t.pid, counter[t.pid]++);
      save_tracklet(root, rel, t, ds.joint_names);
      list.push_back({{"path", rel}, {"pid", t.pid}, {"camid", t.camid}});
    }
    splits[name] = std::move(list);
  };
  write_split("train", ds.train);
  write_split("query", ds.query);
  write_split("gallery", ds.gallery);
  manifest["splits"] = std::move(splits);
  std::ofstream os(root / "manifest.json");
  if (!os) tensor_error("cannot write manifest in " + dir);
  os << manifest.dump(1) << "\n";
}

Dataset load_dataset(const std::string& dir) {
  const fs::path root(dir);
  std::ifstream is(root / "manifest.json");
  if (!is) tensor_error("missing manifest.json in " + dir);
  json manifest = json::parse(is);
  Dataset ds;
  ds.identities = manifest.at("identities").get<std::size_t>();
  ds.joint_names = manifest.at("joint_names").get<std::vector<std::string>>();
  auto read_split = [&](const char* name, std::vector<Tracklet>& split) {
    for (const auto& entry : manifest.at("splits").at(name)) {
      split.push_back(load_tracklet(root, entry.at("path").get<std::string>(), ds.joint_names));
    }
  };
  read_split("train", ds.train);
  read_split("query", ds.query);
  read_split("gallery", ds.gallery);
  return ds;
}

}  // namespace csip
