// Python surface for the workbench: config handling, the training and
// evaluation entry points, the snr sweep, retrieval, and the scalar metrics.
// Heavy state stays on the C++ side; results cross as plain dicts and lists.

#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cstdint>
#include <string>
#include <vector>

#include "mtsc/channel.hpp"
#include "mtsc/checkpoint.hpp"
#include "mtsc/config.hpp"
#include "mtsc/dataset.hpp"
#include "mtsc/kb.hpp"
#include "mtsc/metrics.hpp"
#include "mtsc/model.hpp"
#include "mtsc/rng.hpp"
#include "mtsc/sweep.hpp"

namespace py = pybind11;
using namespace mtsc;

namespace {

py::dict scores_to_dict(const EvalScores& sc) {
  py::dict d;
  d["classify_accuracy"] = sc.classify_acc;
  d["vqa_accuracy"] = sc.vqa_acc;
  d["caption_bleu1"] = sc.caption_bleu1;
  d["reconstruct_psnr_db"] = sc.psnr_db;
  d["iw_distortion"] = sc.iw_distortion;
  return d;
}

ModelBundle bundle_from(const AppConfig& cfg, const std::string& ckpt,
                        uint64_t seed) {
  RngStream scratch(seed, stream_id_of('p', 'y', 'b', 0));
  ModelBundle bundle = ModelBundle::init(cfg.model, scratch);
  bundle.load_values(load_checkpoint(ckpt));
  return bundle;
}

}  // namespace

PYBIND11_MODULE(pymtsc, m) {
  m.doc() =
      "multi-task semantic communication workbench: training, channel "
      "simulation, compression planning, retrieval, and snr sweeps";

  py::class_<AppConfig>(m, "Config")
      .def(py::init<>())
      .def_readwrite("channel_snr_db", &AppConfig::channel_snr_db)
      .def_readwrite("channel_k_factor", &AppConfig::channel_k_factor)
      .def_readwrite("pretrain_epochs", &AppConfig::pretrain_epochs)
      .def_readwrite("pretrain_batch", &AppConfig::pretrain_batch)
      .def_readwrite("pretrain_lr", &AppConfig::pretrain_lr)
      .def_readwrite("fed_rounds", &AppConfig::fed_rounds)
      .def_readwrite("fed_clients", &AppConfig::fed_clients)
      .def_readwrite("fed_batch", &AppConfig::fed_batch)
      .def_readwrite("fed_snr_db", &AppConfig::fed_snr_db)
      .def_readwrite("sweep_snr_min", &AppConfig::sweep_snr_min)
      .def_readwrite("sweep_snr_max", &AppConfig::sweep_snr_max)
      .def_readwrite("sweep_snr_step", &AppConfig::sweep_snr_step)
      .def_readwrite("sweep_seeds", &AppConfig::sweep_seeds)
      .def_readwrite("sweep_budget", &AppConfig::sweep_budget)
      .def_readwrite("rag_gate", &AppConfig::rag_gate)
      .def_readwrite("rag_k", &AppConfig::rag_k)
      .def_property(
          "n_train", [](const AppConfig& c) { return c.data.n_train; },
          [](AppConfig& c, size_t v) { c.data.n_train = v; })
      .def_property(
          "n_val", [](const AppConfig& c) { return c.data.n_val; },
          [](AppConfig& c, size_t v) { c.data.n_val = v; })
      .def_property(
          "n_test", [](const AppConfig& c) { return c.data.n_test; },
          [](AppConfig& c, size_t v) { c.data.n_test = v; })
      .def_property(
          "data_seed", [](const AppConfig& c) { return c.data.seed; },
          [](AppConfig& c, uint64_t v) { c.data.seed = v; })
      .def("validate", &AppConfig::validate)
      .def("run_id", [](const AppConfig& c) { return config_run_id(c); });

  m.def("parse_config", &parse_config, py::arg("text"),
        "parse dotted key = value lines into a validated Config");
  m.def("load_config", &load_config, py::arg("path"));

  m.def(
      "pretrain",
      [](const AppConfig& cfg, uint64_t seed, const std::string& ckpt_path) {
        Dataset data = generate_dataset(cfg.data);
        ModelBundle bundle = pretrain_phase1(cfg, data.train, seed);
        if (!ckpt_path.empty())
          save_checkpoint(bundle.named_all_params(), ckpt_path);
        PipelineOptions opts;
        opts.symbol_budget = cfg.sweep_budget;
        return scores_to_dict(evaluate_pipeline_arm(bundle, data.test, opts));
      },
      py::arg("config"), py::arg("seed") = 1, py::arg("checkpoint") = "",
      "train on the configured corpus, optionally save a checkpoint, and "
      "return clean-link scores on the held-out set");

  m.def(
      "evaluate",
      [](const AppConfig& cfg, const std::string& ckpt_path, double snr_db,
         uint64_t seed) {
        Dataset data = generate_dataset(cfg.data);
        ModelBundle bundle = bundle_from(cfg, ckpt_path, seed);
        ChannelState ch;
        ch.snr_db = snr_db;
        ch.k_factor = cfg.channel_k_factor;
        ch.rng = RngStream(seed, stream_id_of('p', 'y', 'e', 0));
        PipelineOptions opts;
        opts.symbol_budget = cfg.sweep_budget;
        opts.channel = &ch;
        return scores_to_dict(evaluate_pipeline_arm(bundle, data.test, opts));
      },
      py::arg("config"), py::arg("checkpoint"), py::arg("snr_db") = 6.0,
      py::arg("seed") = 1,
      "score a saved checkpoint on the held-out set at one snr");

  m.def(
      "run_sweep",
      [](const AppConfig& cfg, const std::string& out_dir) {
        SweepResult res = run_snr_sweep(cfg, out_dir);
        py::list rows;
        for (const MetricRecord& r : res.rows) {
          py::dict d;
          d["run_id"] = r.run_id;
          d["seed"] = r.seed;
          d["snr_db"] = r.snr_db;
          d["arm"] = r.arm;
          d["task"] = r.task;
          d["metric"] = r.metric;
          d["value"] = r.value;
          rows.append(d);
        }
        py::dict out;
        out["run_id"] = res.run_id;
        out["data_rows"] = res.data_rows;
        out["summary_rows"] = res.summary_rows;
        out["rows"] = rows;
        return out;
      },
      py::arg("config"), py::arg("out_dir") = "",
      "train every arm and sweep the snr grid; rows carry per-seed values "
      "followed by per-cell mean/std summaries");

  py::class_<RetrievedHit>(m, "RetrievedHit")
      .def_readonly("entry_pos", &RetrievedHit::entry_pos)
      .def_readonly("similarity", &RetrievedHit::similarity);

  py::class_<KnowledgeBase>(m, "KnowledgeBase")
      .def(py::init<>())
      .def("__len__", &KnowledgeBase::size)
      .def("insert",
           [](KnowledgeBase& kb, const std::vector<double>& key,
              const std::vector<double>& value, const std::string& tag) {
             kb.insert(key, value, tag);
           },
           py::arg("key"), py::arg("value"), py::arg("tag") = "")
      .def("retrieve",
           [](const KnowledgeBase& kb, const std::vector<double>& query,
              size_t k) { return kb.retrieve(query, k).hits; },
           py::arg("query"), py::arg("k") = 3)
      .def("entry_tag",
           [](const KnowledgeBase& kb, size_t pos) {
             return kb.entry(pos).tag;
           })
      .def("save", &KnowledgeBase::save)
      .def_static("load",
                  [](const std::string& path) {
                    return KnowledgeBase::load(path);
                  });

  m.def(
      "bleu1",
      [](const std::vector<int>& candidate, const std::vector<int>& reference) {
        return compute_bleu1(candidate, reference);
      },
      py::arg("candidate"), py::arg("reference"));
  m.def(
      "psnr",
      [](const std::vector<double>& reference,
         const std::vector<double>& estimate) {
        return compute_psnr(reference, estimate);
      },
      py::arg("reference"), py::arg("estimate"));
  m.def("noise_variance", &snr_db_to_noise_var, py::arg("snr_db"),
        py::arg("signal_power") = 1.0);

  m.attr("SEMANTIC_DIM") = py::int_(kSemanticDim);
  m.attr("MAX_SYMBOL_BUDGET") = py::int_(kMaxBudget);
}
