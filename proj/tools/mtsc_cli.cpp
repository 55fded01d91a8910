// Command-line front end for the semantic communication workbench. Every
// subcommand reads the same dotted key/value config file, honors the same
// master seed, and drops its artifacts into one output directory.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "mtsc/channel.hpp"
#include "mtsc/checkpoint.hpp"
#include "mtsc/compression.hpp"
#include "mtsc/config.hpp"
#include "mtsc/dataset.hpp"
#include "mtsc/federation.hpp"
#include "mtsc/kb.hpp"
#include "mtsc/model.hpp"
#include "mtsc/rng.hpp"
#include "mtsc/sweep.hpp"

namespace {

using namespace mtsc;

struct GlobalArgs {
  std::string config_path;
  uint64_t seed = 1;
  std::string out_dir = "out";
};

AppConfig load_or_default(const GlobalArgs& g) {
  if (g.config_path.empty()) {
    AppConfig cfg;
    cfg.validate();
    return cfg;
  }
  return load_config(g.config_path);
}

std::filesystem::path ensure_out(const GlobalArgs& g) {
  std::filesystem::path dir(g.out_dir);
  std::filesystem::create_directories(dir);
  return dir;
}

ModelBundle bundle_from_checkpoint(const AppConfig& cfg,
                                   const std::string& path, uint64_t seed) {
  RngStream scratch(seed, stream_id_of('c', 'l', 'i', 0));
  ModelBundle bundle = ModelBundle::init(cfg.model, scratch);
  bundle.load_values(load_checkpoint(path));
  return bundle;
}

void print_scores(const EvalScores& sc) {
  std::printf("  classify accuracy   %.4f\n", sc.classify_acc);
  std::printf("  vqa accuracy        %.4f\n", sc.vqa_acc);
  std::printf("  caption bleu1       %.4f\n", sc.caption_bleu1);
  std::printf("  reconstruct psnr    %.4f dB\n", sc.psnr_db);
  std::printf("  weighted distortion %.4f\n", sc.iw_distortion);
}

int cmd_pretrain(const GlobalArgs& g) {
  AppConfig cfg = load_or_default(g);
  std::filesystem::path dir = ensure_out(g);
  Dataset data = generate_dataset(cfg.data);

  std::printf("pretraining: %d epochs on %zu samples (seed %llu)\n",
              cfg.pretrain_epochs, data.train.size(),
              static_cast<unsigned long long>(g.seed));
  auto t0 = std::chrono::steady_clock::now();
  ModelBundle bundle = pretrain_phase1(cfg, data.train, g.seed);
  auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);

  std::string ckpt = (dir / "pretrained.ckpt").string();
  save_checkpoint(bundle.named_all_params(), ckpt);
  std::printf("trained in %.1f s, checkpoint written to %s\n", dt.count(),
              ckpt.c_str());

  PipelineOptions opts;
  opts.symbol_budget = cfg.sweep_budget;
  std::printf("clean-link scores on %zu held-out samples:\n",
              data.test.size());
  print_scores(evaluate_pipeline_arm(bundle, data.test, opts));
  return 0;
}

int cmd_fed_train(const GlobalArgs& g, const std::string& init_path) {
  AppConfig cfg = load_or_default(g);
  std::filesystem::path dir = ensure_out(g);
  Dataset data = generate_dataset(cfg.data);

  ModelBundle start;
  if (init_path.empty()) {
    RngStream scratch(g.seed, stream_id_of('c', 'l', 'i', 1));
    start = ModelBundle::init(cfg.model, scratch);
    std::printf("federated training from scratch\n");
  } else {
    start = bundle_from_checkpoint(cfg, init_path, g.seed);
    start.freeze_pretrained_core();
    std::printf("federated fine-tuning from %s (core frozen)\n",
                init_path.c_str());
  }

  RoundConfig rc = fed_config(cfg, g.seed);
  std::printf("%d rounds, %d clients, %d local steps, batch %d, snr %.1f dB\n",
              rc.rounds, rc.num_clients, rc.local_steps, rc.batch_size,
              rc.channel.snr_db);
  FedTrainResult result = run_training(start, rc, data.train);

  std::string ckpt = (dir / "fedtrained.ckpt").string();
  save_checkpoint(result.model.named_all_params(), ckpt);
  write_trainlog_csv(result.log, (dir / "trainlog.csv").string());
  if (!result.log.rows.empty()) {
    std::printf("final round mean loss %.6f\n",
                result.log.rows.back().mean_loss);
  }
  std::printf("checkpoint written to %s\n", ckpt.c_str());
  std::printf("round log written to %s\n", (dir / "trainlog.csv").c_str());
  return 0;
}

int cmd_compress(const GlobalArgs& g, const std::string& model_path) {
  AppConfig cfg = load_or_default(g);
  std::filesystem::path dir = ensure_out(g);
  Dataset data = generate_dataset(cfg.data);

  ModelBundle bundle;
  if (model_path.empty()) {
    std::printf("no checkpoint given, pretraining a model first\n");
    bundle = pretrain_phase1(cfg, data.train, g.seed);
  } else {
    bundle = bundle_from_checkpoint(cfg, model_path, g.seed);
  }

  ClientProfile profile;
  profile.mem_budget_bytes = cfg.compress_mem_budget;
  profile.mac_budget = cfg.compress_mac_budget;
  profile.acc_floor = cfg.compress_acc_floor;

  PlanChoice choice = optimize_plan(bundle, data.val, profile);
  std::printf("chosen plan: prune %.0f%%, %d-bit weights\n",
              choice.plan.prune_rate * 100.0, choice.plan.bits);
  std::printf("  device payload %llu bytes, %.0f MACs per forward\n",
              static_cast<unsigned long long>(choice.cost.mem_bytes),
              choice.cost.macs);
  std::printf("  classify accuracy %.4f (floor %.4f, %s)\n", choice.accuracy,
              profile.acc_floor, choice.meets_floor ? "met" : "NOT met");

  apply_compression(bundle, choice.plan);
  std::string ckpt = (dir / "compressed.ckpt").string();
  save_checkpoint(bundle.named_all_params(), ckpt);
  std::printf("compressed checkpoint written to %s\n", ckpt.c_str());

  std::ofstream plan_out(dir / "plan.txt");
  plan_out << "prune_rate " << choice.plan.prune_rate << "\n"
           << "bits " << choice.plan.bits << "\n"
           << "mem_bytes " << choice.cost.mem_bytes << "\n"
           << "macs " << choice.cost.macs << "\n"
           << "accuracy " << choice.accuracy << "\n"
           << "meets_floor " << (choice.meets_floor ? 1 : 0) << "\n";
  return choice.meets_floor ? 0 : 2;
}

int cmd_sweep(const GlobalArgs& g, const std::string& pretrained_path) {
  AppConfig cfg = load_or_default(g);
  std::filesystem::path dir = ensure_out(g);

  std::printf("sweeping snr %.1f..%.1f step %.1f, %d seeds, 3 arms\n",
              cfg.sweep_snr_min, cfg.sweep_snr_max, cfg.sweep_snr_step,
              cfg.sweep_seeds);
  auto t0 = std::chrono::steady_clock::now();
  SweepResult res = run_snr_sweep(cfg, dir.string(), pretrained_path);
  auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0);

  std::printf("run %s: %zu data rows, %zu summary rows in %.1f s\n",
              res.run_id.c_str(), res.data_rows, res.summary_rows, dt.count());

  std::vector<double> grid = sweep_snr_grid(cfg);
  for (const char* arm : {"proposed", "baseline1_traditional",
                          "baseline2_no_lam"}) {
    std::vector<double> acc =
        cell_means(res.rows, grid, arm, "classify", "accuracy");
    std::printf("  %-22s accuracy", arm);
    for (double v : acc) std::printf(" %.3f", v);
    std::printf("\n");
  }
  std::printf("metrics written to %s\n", (dir / "metrics.csv").c_str());
  std::printf("round log written to %s\n", (dir / "trainlog.csv").c_str());
  return 0;
}

int cmd_eval(const GlobalArgs& g, const std::string& model_path) {
  AppConfig cfg = load_or_default(g);
  Dataset data = generate_dataset(cfg.data);
  ModelBundle bundle = bundle_from_checkpoint(cfg, model_path, g.seed);

  ChannelState ch;
  ch.snr_db = cfg.channel_snr_db;
  ch.k_factor = cfg.channel_k_factor;
  ch.rng = RngStream(g.seed, stream_id_of('e', 'v', 'a', 'l'));

  PipelineOptions opts;
  opts.symbol_budget = cfg.sweep_budget;
  opts.channel = &ch;
  EvalScores sc = evaluate_pipeline_arm(bundle, data.test, opts);
  std::printf("scores at %.1f dB on %zu samples:\n", cfg.channel_snr_db,
              data.test.size());
  print_scores(sc);

  if (!g.out_dir.empty()) {
    std::filesystem::path dir = ensure_out(g);
    std::vector<MetricRecord> rows;
    const std::string run_id = config_run_id(cfg);
    auto push = [&](const char* task, const char* metric, double value) {
      rows.push_back({run_id, static_cast<int>(g.seed), cfg.channel_snr_db,
                      "proposed", task, metric, value});
    };
    push("classify", "accuracy", sc.classify_acc);
    push("vqa", "accuracy", sc.vqa_acc);
    push("caption", "bleu1", sc.caption_bleu1);
    push("reconstruct", "psnr_db", sc.psnr_db);
    push("semantics", "iw_distortion", sc.iw_distortion);
    write_metrics_csv(rows, (dir / "metrics.csv").string());
    std::printf("metrics written to %s\n", (dir / "metrics.csv").c_str());
  }
  return 0;
}

std::vector<double> random_unit_vec(RngStream& rng) {
  std::vector<double> v(kKbDim);
  double norm = 0.0;
  do {
    norm = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm += x * x;
    }
  } while (norm == 0.0);
  return v;
}

int cmd_kb_insert(const GlobalArgs& g, const std::string& kb_path, int count,
                  const std::string& tag) {
  KnowledgeBase kb = std::filesystem::exists(kb_path)
                         ? KnowledgeBase::load(kb_path)
                         : KnowledgeBase();
  RngStream rng(g.seed, stream_id_of('k', 'b', 'i', 0));
  for (int i = 0; i < count; ++i) {
    std::vector<double> key = random_unit_vec(rng);
    std::vector<double> value = random_unit_vec(rng);
    kb.insert(key, value, tag + std::to_string(kb.size()));
  }
  kb.save(kb_path);
  std::printf("inserted %d entries, kb now holds %zu (saved to %s)\n", count,
              kb.size(), kb_path.c_str());
  return 0;
}

int cmd_kb_retrieve(const GlobalArgs& g, const std::string& kb_path,
                    size_t k) {
  KnowledgeBase kb = KnowledgeBase::load(kb_path);
  RngStream rng(g.seed, stream_id_of('k', 'b', 'q', 0));
  std::vector<double> query = random_unit_vec(rng);
  RetrievalResult res = kb.retrieve(query, k);
  if (res.empty_kb) {
    std::printf("kb is empty\n");
    return 2;
  }
  std::printf("top %zu of %zu entries for a seed-%llu query:\n",
              res.hits.size(), kb.size(),
              static_cast<unsigned long long>(g.seed));
  for (const RetrievedHit& hit : res.hits) {
    std::printf("  #%-6zu sim %+.6f  %s\n", hit.entry_pos, hit.similarity,
                kb.entry(hit.entry_pos).tag.c_str());
  }
  return 0;
}

int cmd_kb_bench(const GlobalArgs& g, size_t k) {
  const size_t sizes[] = {10, 100, 10000};
  const int queries = 1000;
  RngStream rng(g.seed, stream_id_of('k', 'b', 'b', 0));
  for (size_t n : sizes) {
    KnowledgeBase kb;
    for (size_t i = 0; i < n; ++i) {
      std::vector<double> key = random_unit_vec(rng);
      std::vector<double> value = random_unit_vec(rng);
      kb.insert(key, value);
    }
    std::vector<std::vector<double>> qs;
    qs.reserve(queries);
    for (int q = 0; q < queries; ++q) qs.push_back(random_unit_vec(rng));

    auto t0 = std::chrono::steady_clock::now();
    double checksum = 0.0;
    for (const auto& q : qs) {
      RetrievalResult res = kb.retrieve(q, k);
      checksum += res.hits.empty() ? 0.0 : res.hits[0].similarity;
    }
    auto dt = std::chrono::duration<double, std::micro>(
        std::chrono::steady_clock::now() - t0);
    std::printf("  %6zu entries: %8.2f us/query (top-%zu, checksum %.3f)\n", n,
                dt.count() / queries, k, checksum);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-task semantic communication workbench"};
  app.require_subcommand(1);

  GlobalArgs g;
  app.add_option("--config", g.config_path,
                 "config file (dotted key = value lines)");
  app.add_option("--seed", g.seed, "master seed (default 1)");
  app.add_option("--out", g.out_dir, "output directory (default ./out)");

  CLI::App* pretrain = app.add_subcommand(
      "pretrain", "train the multi-task model over the simulated link");

  CLI::App* fed = app.add_subcommand(
      "fed-train", "federated split training across simulated clients");
  std::string init_path;
  fed->add_option("--init", init_path,
                  "checkpoint to fine-tune from (freezes the core)");

  CLI::App* compress = app.add_subcommand(
      "compress", "pick a deployment plan under the configured budgets");
  std::string model_path;
  compress->add_option("--model", model_path,
                       "checkpoint to compress (default: pretrain first)");

  CLI::App* sweep =
      app.add_subcommand("sweep", "snr sweep over all transmission arms");
  std::string pretrained_path;
  sweep->add_option("--pretrained", pretrained_path,
                    "reuse this checkpoint instead of pretraining per seed");

  CLI::App* eval =
      app.add_subcommand("eval", "score a checkpoint on the held-out set");
  std::string eval_model;
  eval->add_option("--model", eval_model, "checkpoint to evaluate")
      ->required();

  CLI::App* kb = app.add_subcommand("kb", "vector knowledge base utilities");
  kb->require_subcommand(1);
  std::string kb_path = "kb.bin";
  int kb_count = 100;
  std::string kb_tag = "entry-";
  size_t kb_k = 3;

  CLI::App* kb_insert =
      kb->add_subcommand("insert", "insert random-keyed entries");
  kb_insert->add_option("--kb", kb_path, "knowledge base file");
  kb_insert->add_option("--count", kb_count, "entries to insert");
  kb_insert->add_option("--tag", kb_tag, "tag prefix for new entries");

  CLI::App* kb_retrieve =
      kb->add_subcommand("retrieve", "query the top-k nearest entries");
  kb_retrieve->add_option("--kb", kb_path, "knowledge base file");
  kb_retrieve->add_option("--k", kb_k, "number of hits");

  CLI::App* kb_bench =
      kb->add_subcommand("bench", "time retrieval at several kb sizes");
  kb_bench->add_option("--k", kb_k, "number of hits per query");

  CLI11_PARSE(app, argc, argv);

  try {
    if (pretrain->parsed()) return cmd_pretrain(g);
    if (fed->parsed()) return cmd_fed_train(g, init_path);
    if (compress->parsed()) return cmd_compress(g, model_path);
    if (sweep->parsed()) return cmd_sweep(g, pretrained_path);
    if (eval->parsed()) return cmd_eval(g, eval_model);
    if (kb->parsed()) {
      if (kb_insert->parsed()) return cmd_kb_insert(g, kb_path, kb_count,
                                                    kb_tag);
      if (kb_retrieve->parsed()) return cmd_kb_retrieve(g, kb_path, kb_k);
      if (kb_bench->parsed()) return cmd_kb_bench(g, kb_k);
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
