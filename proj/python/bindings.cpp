#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "csip/align.hpp"
#include "csip/config.hpp"
#include "csip/eval.hpp"
#include "csip/gradcheck.hpp"
#include "csip/losses.hpp"
#include "csip/pfu.hpp"
#include "csip/pipeline.hpp"
#include "csip/rng.hpp"
#include "csip/skeleton_graph.hpp"

namespace py = pybind11;
using namespace csip;

namespace {

Tensor tensor_from_array(const py::array_t<double, py::array::c_style | py::array::forcecast>& a) {
  Shape shape(a.ndim());
  for (py::ssize_t i = 0; i < a.ndim(); ++i) shape[static_cast<std::size_t>(i)] =
      static_cast<std::size_t>(a.shape(i));
  std::vector<double> values(a.data(), a.data() + a.size());
  return Tensor::from_data(std::move(shape), std::move(values));
}

py::array_t<double> array_from_tensor(const Tensor& t) {
  std::vector<py::ssize_t> shape(t.shape.begin(), t.shape.end());
  py::array_t<double> out(shape);
  std::copy(t.data->begin(), t.data->end(), out.mutable_data());
  return out;
}

using Arr = py::array_t<double, py::array::c_style | py::array::forcecast>;

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "skeleton-image contrastive ReID pipeline core";

  m.def("softmax", [](const Arr& x) { return array_from_tensor(softmax(tensor_from_array(x))); },
        py::arg("x"), "row softmax over the last axis");

  m.def("pairwise_distances",
        [](const Arr& q, const Arr& g) {
          return array_from_tensor(pairwise_distances(tensor_from_array(q),
                                                      tensor_from_array(g)));
        },
        py::arg("queries"), py::arg("gallery"));

  m.def("laplacian_pe",
        [](std::size_t joints, const std::vector<std::pair<int, int>>& edges, std::size_t k) {
          return array_from_tensor(laplacian_pe(SkeletonGraph::from_edges(joints, edges), k));
        },
        py::arg("joints"), py::arg("edges"), py::arg("k"));

  m.def("contrastive_losses",
        [](const Arr& sim, const std::vector<int>& labels, double tau) {
          ContrastivePair pair =
              contrastive_losses_from_similarity(tensor_from_array(sim), labels, tau);
          return py::make_tuple(pair.v2s.item(), pair.s2v.item());
        },
        py::arg("similarity"), py::arg("labels"), py::arg("tau") = 0.07);

  m.def("batch_hard_triplet",
        [](const Arr& feats, const std::vector<int>& labels, double margin) {
          return batch_hard_triplet(tensor_from_array(feats), labels,
                                    TripletConfig{margin, false})
              .item();
        },
        py::arg("features"), py::arg("labels"), py::arg("margin") = 0.3);

  m.def("csip_loss",
        [](const Arr& feats, const std::vector<int>& labels, const Arr& prototypes) {
          Tensor p = tensor_from_array(prototypes);
          std::vector<Tensor> per_sample(labels.size(), p);
          return csip_loss(tensor_from_array(feats), labels, per_sample).item();
        },
        py::arg("features"), py::arg("labels"), py::arg("prototypes"),
        "prototype cross-entropy with one shared K x C prototype matrix");

  m.def("intra_id_pool",
        [](const Arr& feats, const std::vector<int>& labels, std::size_t classes) {
          return array_from_tensor(intra_id_pool(tensor_from_array(feats), labels, classes));
        },
        py::arg("features"), py::arg("labels"), py::arg("classes"));

  m.def("evaluate",
        [](const Arr& dist, const std::vector<int>& qp, const std::vector<int>& qc,
           const std::vector<int>& gp, const std::vector<int>& gc, bool exclude) {
          RankingResult r = evaluate(tensor_from_array(dist), qp, qc, gp, gc, exclude);
          py::dict out;
          out["mAP"] = r.map;
          out["cmc"] = r.cmc;
          out["evaluated_queries"] = r.evaluated_queries;
          out["skipped_queries"] = r.skipped_queries;
          return out;
        },
        py::arg("distances"), py::arg("query_pids"), py::arg("query_camids"),
        py::arg("gallery_pids"), py::arg("gallery_camids"),
        py::arg("exclude_same_camera") = true);

  m.def("lr_at",
        [](int epoch) {
          LRSchedule s;
          return lr_at(s, epoch);
        },
        py::arg("epoch"), "published warmup/decay schedule");

  m.def("gradcheck",
        [](int seeds, double tolerance) {
          py::list rows;
          for (const auto& row : run_gradcheck_suite(seeds, tolerance)) {
            py::dict d;
            d["name"] = row.name;
            d["max_error"] = row.max_error;
            d["passed"] = row.passed;
            rows.append(std::move(d));
          }
          return rows;
        },
        py::arg("seeds") = 3, py::arg("tolerance") = 1e-3);

  m.def("generate_dataset",
        [](const std::string& out_dir, const std::vector<std::string>& overrides) {
          RunConfig cfg = load_run_config("", overrides);
          Dataset ds = generate_dataset(cfg.data);
          save_dataset(out_dir, ds);
          py::dict out;
          out["train"] = ds.train.size();
          out["query"] = ds.query.size();
          out["gallery"] = ds.gallery.size();
          return out;
        },
        py::arg("out_dir"), py::arg("overrides") = std::vector<std::string>{});

  m.def("run_pipeline",
        [](const std::string& data_dir, const std::string& out_dir,
           const std::vector<std::string>& overrides, std::uint64_t seed) {
          RunConfig cfg = load_run_config("", overrides);
          cfg.seed = seed;
          Dataset ds = load_dataset(data_dir);
          Model model = init_model(cfg.model, seed);
          train_stage1(model, ds.train, cfg.stage1, seed);
          setup_stage2(model, ds.train, cfg.stage2, seed);
          train_stage2(model, ds.train, cfg.stage2, seed);
          save_checkpoint(out_dir + "/stage2.ckpt", model.all_params());

          RetrievalFeatures qf = extract_features(
              model, ds.query,
              cfg.stage2.use_sgtm ? FeatureKind::kSgtmTest : FeatureKind::kVisualPooled);
          RetrievalFeatures gf = extract_features(
              model, ds.gallery,
              cfg.stage2.use_sgtm ? FeatureKind::kSgtmTest : FeatureKind::kVisualPooled);
          RankingResult r = evaluate(pairwise_distances(qf.feats, gf.feats), qf.pids, qf.camids,
                                     gf.pids, gf.camids, cfg.eval.exclude_same_camera);
          py::dict out;
          out["mAP"] = r.map;
          out["rank1"] = r.cmc.empty() ? 0.0 : r.cmc[0];
          return out;
        },
        py::arg("data_dir"), py::arg("out_dir"), py::arg("overrides") = std::vector<std::string>{},
        py::arg("seed") = 0,
        "both training stages plus retrieval on the held-out tracklets");
}
