#include "mtsc/sweep.hpp"

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "mtsc/checkpoint.hpp"
#include "mtsc/metrics.hpp"

namespace mtsc {
namespace {

std::string fmt_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

uint64_t fnv1a64_str(const std::string& s) {
  uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  return h;
}

// Deterministic Fisher-Yates pass over sample indices.
void shuffle_indices(std::vector<size_t>& idx, RngStream& rng) {
  for (size_t i = idx.size(); i > 1; --i) {
    size_t j = size_t(rng.uniform_int(0, int(i) - 1));
    std::swap(idx[i - 1], idx[j]);
  }
}

std::span<const int> trim_pad(std::span<const int> tokens) {
  size_t n = tokens.size();
  while (n > 0 && tokens[n - 1] == 0) --n;
  return tokens.subspan(0, n);
}

OptimizerConfig adam(double lr) {
  OptimizerConfig oc;
  oc.kind = OptimizerKind::Adam;
  oc.learning_rate = lr;
  return oc;
}

EvalScores score_outputs(const ModelBundle& model, const Sample& truth,
                         const PipelineResult& res) {
  EvalScores s;
  s.classify_acc =
      argmax_of(res.outputs.at(TaskId::Classify)) == truth.cls ? 1.0 : 0.0;
  s.vqa_acc =
      argmax_of(res.outputs.at(TaskId::Vqa)) == truth.vqa_answer ? 1.0 : 0.0;
  std::vector<int> cand = caption_readout(res.outputs.at(TaskId::Caption));
  s.caption_bleu1 = compute_bleu1(trim_pad(cand), trim_pad(truth.caption));
  s.psnr_db = compute_psnr(truth.image, res.outputs.at(TaskId::Reconstruct));
  // Semantic-level distortion is measured against the transmitter's own
  // semantic vector for pipeline arms; the transport arm overrides it.
  s.iw_distortion = importance_weighted_distortion(
      res.semantic, res.semantic_est, score_importance(res.semantic));
  (void)model;
  return s;
}

void accumulate(EvalScores& acc, const EvalScores& one) {
  acc.classify_acc += one.classify_acc;
  acc.vqa_acc += one.vqa_acc;
  acc.caption_bleu1 += one.caption_bleu1;
  acc.psnr_db += one.psnr_db;
  acc.iw_distortion += one.iw_distortion;
}

void divide(EvalScores& acc, double n) {
  acc.classify_acc /= n;
  acc.vqa_acc /= n;
  acc.caption_bleu1 /= n;
  acc.psnr_db /= n;
  acc.iw_distortion /= n;
}

bool row_key_less(const MetricRecord& a, const MetricRecord& b) {
  if (a.snr_db != b.snr_db) return a.snr_db < b.snr_db;
  if (a.arm != b.arm) return a.arm < b.arm;
  if (a.task != b.task) return a.task < b.task;
  if (a.metric != b.metric) return a.metric < b.metric;
  return a.seed < b.seed;
}

bool same_cell(const MetricRecord& a, const MetricRecord& b) {
  return a.snr_db == b.snr_db && a.arm == b.arm && a.task == b.task &&
         a.metric == b.metric;
}

}  // namespace

// Input-corruption augmentation: round the sample through the 8-bit payload
// codec and flip a few random bits, exactly the residue an uncoded
// hard-decision transport leaves behind at moderate SNR, so isolated symbol
// errors stop mattering to the encoders.
Sample corrupt_inputs(const Sample& s, RngStream& rng) {
  std::vector<uint8_t> bytes = serialize_payload(s);
  int flips = rng.uniform_int(0, 14);
  for (int f = 0; f < flips; ++f) {
    size_t at = size_t(rng.uniform_int(0, int(bytes.size()) - 1));
    bytes[at] = uint8_t(bytes[at] ^ (1u << rng.uniform_int(0, 7)));
  }
  // Text is a sliver of the payload but the most fragile modality; every
  // corrupted view carries at least one token error, often two, so the
  // token-denoising pressure stays high.
  int text_flips = 1 + (rng.uniform() < 0.5 ? 1 : 0);
  for (int f = 0; f < text_flips; ++f) {
    size_t at = kImagePixels + size_t(rng.uniform_int(0, int(kTextLen) - 1));
    bytes[at] = uint8_t(bytes[at] ^ (1u << rng.uniform_int(0, 7)));
  }
  Sample out = s;
  deserialize_payload(bytes, out);
  return out;
}

// One clean training step with per-sample importance allocation, the
// operating mode reduced budgets use at inference. Keeps the loss structure
// of the uniform-allocation step.
double importance_step(ModelBundle& model, Optimizer& device_opt,
                       Optimizer& server_opt,
                       std::span<const Sample* const> batch,
                       std::span<const TaskId> tasks, int symbol_budget) {
  Tensor total;
  for (const Sample* s : batch) {
    Tensor sv = encode_sample(model.device, model.config, *s);
    std::vector<double> vals(sv.values().begin(), sv.values().end());
    // snr 12 dB puts the mixing weight at 1: pure importance ranking.
    ImportanceScores scores = score_importance(vals);
    RateAllocation alloc = allocate_rates(scores, 12.0, symbol_budget);
    Tensor tx = jsc_encode_concat(model.device, sv, alloc);
    ChannelHop hop = transmit(tx, alloc, nullptr);
    Tensor est = jsc_decode_concat(model.server, hop.rx, alloc);
    Tensor rep = fusion_decode(model.server, est);
    Tensor per_sample;
    for (TaskId t : tasks) {
      std::array<TaskId, 1> one = {t};
      Tensor piece = task_loss(model.device, rep, *s, one);
      per_sample = per_sample.defined() ? add(per_sample, piece) : piece;
    }
    per_sample = scale(per_sample, 1.0 / double(tasks.size()));
    // Reduced-rate hops also train for fidelity: the decoded vector must
    // track the (frozen-target) encoder output under the block weights that
    // scored it, or coarse tiers drift into task-only representations whose
    // geometric error exceeds the block energy itself.
    std::vector<double> w(kSemanticDim);
    for (size_t i = 0; i < kSemanticDim; ++i)
      w[i] = scores.value[i / kBlockSize];
    Tensor diff = sub(est, sv.clone_detached());
    Tensor dist = sum_all(
        mul(mul(diff, diff),
            Tensor::from_values({kSemanticDim}, std::move(w))));
    per_sample = add(per_sample, scale(dist, 0.1));
    total = total.defined() ? add(total, per_sample) : per_sample;
  }
  Tensor loss = scale(total, 1.0 / double(batch.size()));
  double value = loss.scalar();
  device_opt.zero_grad();
  server_opt.zero_grad();
  backward(loss);
  server_opt.step();
  device_opt.step();
  return value;
}

ModelBundle pretrain_phase1(const AppConfig& cfg,
                            std::span<const Sample> corpus, uint64_t seed) {
  if (corpus.empty()) {
    throw std::invalid_argument("pretrain: empty corpus");
  }
  RngStream init_rng(seed, stream_id_of('p', 'h', '1', 0));
  ModelBundle model = ModelBundle::init(cfg.model, init_rng);

  RngStream order_rng(seed, stream_id_of('p', 'h', '1', 1));
  RngStream aug_rng(seed, stream_id_of('p', 'h', '1', 2));
  std::vector<size_t> idx(corpus.size());
  std::iota(idx.begin(), idx.end(), size_t{0});
  const size_t batch = size_t(cfg.pretrain_batch);

  auto run_epochs = [&](int epochs, double lr) {
    Optimizer device_opt(adam(lr));
    Optimizer server_opt(adam(lr));
    for (const auto& [name, t] : model.named_device_params()) {
      device_opt.add_param(name, t);
    }
    for (const auto& [name, t] : model.named_server_params()) {
      server_opt.add_param(name, t);
    }
    // Full rate half the time; the rest cycles the reduced budgets so every
    // codec tier trains, not just the full-rate pair.
    static constexpr int kBudgetCycle[6] = {32, 8, 32, 16, 32, 24};
    size_t step = 0;
    for (int epoch = 0; epoch < epochs; ++epoch) {
      shuffle_indices(idx, order_rng);
      for (size_t start = 0; start < idx.size(); start += batch) {
        size_t stop = std::min(idx.size(), start + batch);
        std::vector<Sample> views;
        views.reserve(stop - start);
        for (size_t i = start; i < stop; ++i) {
          // Half of every batch trains on corrupted views, half clean.
          views.push_back((i - start) % 2 == 1
                              ? corrupt_inputs(corpus[idx[i]], aug_rng)
                              : corpus[idx[i]]);
        }
        std::vector<const Sample*> ptrs;
        ptrs.reserve(views.size());
        for (const Sample& v : views) ptrs.push_back(&v);
        const int budget = kBudgetCycle[step % 6];
        if (budget < kMaxBudget) {
          importance_step(model, device_opt, server_opt, ptrs, all_tasks(),
                          budget);
        } else {
          centralized_step(model, device_opt, server_opt, ptrs, all_tasks(),
                           budget, nullptr);
        }
        ++step;
      }
    }
  };

  // Two-stage schedule: bulk of the run at full rate, then a cooldown at a
  // quarter of it to settle the decision boundaries.
  const int hi = (cfg.pretrain_epochs * 7) / 10;
  run_epochs(hi, cfg.pretrain_lr);
  run_epochs(cfg.pretrain_epochs - hi, cfg.pretrain_lr / 4.0);
  return model;
}

RoundConfig fed_config(const AppConfig& cfg, uint64_t seed) {
  RoundConfig rc;
  rc.rounds = cfg.fed_rounds;
  rc.num_clients = cfg.fed_clients;
  rc.local_steps = cfg.fed_local_steps;
  rc.batch_size = cfg.fed_batch;
  rc.train_with_channel_noise = cfg.fed_noisy_activations;
  rc.channel.snr_db = cfg.fed_snr_db;
  rc.channel.k_factor = cfg.channel_k_factor;
  rc.seed = seed;
  rc.symbol_budget = kMaxBudget;  // fine-tuning always runs full rate
  rc.tasks = all_tasks();
  rc.device_opt = adam(cfg.fed_device_lr);
  rc.server_opt = adam(cfg.fed_server_lr);
  return rc;
}

TrainedArms train_arms(const AppConfig& cfg, const Dataset& client_data,
                       uint64_t seed, const std::string& pretrained_path) {
  TrainedArms arms;
  if (!pretrained_path.empty()) {
    RngStream scratch(seed, stream_id_of('p', 'h', '1', 0));
    arms.pretrained = ModelBundle::init(cfg.model, scratch);
    arms.pretrained.load_values(load_checkpoint(pretrained_path));
  } else {
    // The pretraining corpus is drawn with a seed disjoint from client data
    // and is larger than any one client's shard, as a shared corpus would be.
    DatasetSpec pub = cfg.data;
    pub.seed = cfg.data.seed + 0x9E3779B97F4A7C15ULL;
    pub.n_train = cfg.data.n_train * 2;
    Dataset pub_data = generate_dataset(pub);
    arms.pretrained = pretrain_phase1(cfg, pub_data.train, seed);
  }

  ModelBundle proposed_init = arms.pretrained.clone();
  proposed_init.freeze_pretrained_core();
  RoundConfig rc_prop = fed_config(cfg, stream_id_of('f', 'e', 'd', 1) ^ seed);
  FedTrainResult prop = run_training(proposed_init, rc_prop, client_data.train);
  arms.proposed = std::move(prop.model);
  arms.proposed_log = std::move(prop.log);

  RngStream ablation_rng(seed, stream_id_of('a', 'b', 'l', 0));
  ModelBundle ablation_init =
      ModelBundle::init(baseline2_config(cfg.model), ablation_rng);
  RoundConfig rc_abl = fed_config(cfg, stream_id_of('f', 'e', 'd', 2) ^ seed);
  FedTrainResult abl = run_training(ablation_init, rc_abl, client_data.train);
  arms.ablation = std::move(abl.model);
  arms.ablation_log = std::move(abl.log);
  return arms;
}

EvalScores evaluate_pipeline_arm(const ModelBundle& model,
                                 std::span<const Sample> samples,
                                 const PipelineOptions& options) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  EvalScores acc;
  for (const Sample& s : samples) {
    PipelineResult res = forward_pipeline(model, s, all_tasks(), options);
    accumulate(acc, score_outputs(model, s, res));
  }
  divide(acc, double(samples.size()));
  return acc;
}

EvalScores evaluate_transport_arm(const ModelBundle& clean_model,
                                  std::span<const Sample> samples,
                                  ChannelState* channel, double* mean_ber) {
  if (samples.empty()) throw std::invalid_argument("evaluate: no samples");
  EvalScores acc;
  double ber_sum = 0.0;
  for (const Sample& s : samples) {
    Baseline1Result res = run_baseline1(clean_model, s, channel, all_tasks());
    ber_sum += res.bit_error_rate;
    EvalScores one = score_outputs(clean_model, s, res.pipeline);
    // Semantic distortion: what the receiver recovered versus what the
    // original sample would have encoded to.
    Tensor sem = encode_sample(clean_model.device, clean_model.config, s);
    std::vector<double> orig(sem.values().begin(), sem.values().end());
    one.iw_distortion = importance_weighted_distortion(
        orig, res.pipeline.semantic_est, score_importance(orig));
    accumulate(acc, one);
  }
  divide(acc, double(samples.size()));
  if (mean_ber != nullptr) *mean_ber = ber_sum / double(samples.size());
  return acc;
}

std::vector<double> sweep_snr_grid(const AppConfig& cfg) {
  std::vector<double> grid;
  for (double v = cfg.sweep_snr_min; v <= cfg.sweep_snr_max + 1e-9;
       v += cfg.sweep_snr_step) {
    grid.push_back(v);
  }
  return grid;
}

std::string config_run_id(const AppConfig& cfg) {
  std::ostringstream key;
  key << "mtsc-sweep-v1|" << cfg.model.fusion_hidden << '|'
      << cfg.model.image_hidden << '|' << cfg.model.token_dim << '|'
      << cfg.model.audio_bins << '|' << cfg.model.lora_enabled << '|'
      << cfg.model.lora_rank << '|' << fmt_double(cfg.model.lora_alpha) << '|'
      << fmt_double(cfg.channel_snr_db) << '|'
      << fmt_double(cfg.channel_k_factor) << '|' << cfg.data.n_train << '|'
      << cfg.data.n_val << '|' << cfg.data.n_test << '|' << cfg.data.seed
      << '|' << fmt_double(cfg.data.jitter) << '|' << cfg.pretrain_epochs
      << '|' << cfg.pretrain_batch << '|' << fmt_double(cfg.pretrain_lr) << '|'
      << cfg.fed_rounds << '|' << cfg.fed_clients << '|' << cfg.fed_local_steps
      << '|' << cfg.fed_batch << '|' << cfg.fed_noisy_activations << '|'
      << fmt_double(cfg.fed_snr_db) << '|' << fmt_double(cfg.fed_device_lr)
      << '|' << fmt_double(cfg.fed_server_lr) << '|'
      << fmt_double(cfg.sweep_snr_min) << '|' << fmt_double(cfg.sweep_snr_max)
      << '|' << fmt_double(cfg.sweep_snr_step) << '|' << cfg.sweep_seeds << '|'
      << cfg.sweep_budget << '|' << fmt_double(cfg.rag_gate) << '|' << cfg.rag_k
      << '|' << cfg.compress_mem_budget << '|'
      << fmt_double(cfg.compress_mac_budget) << '|'
      << fmt_double(cfg.compress_acc_floor);
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64_str(key.str())));
  return buf;
}

SweepResult run_snr_sweep(const AppConfig& cfg, const std::string& out_dir,
                          const std::string& pretrained_path) {
  cfg.validate();
  const Dataset client = generate_dataset(cfg.data);
  const std::vector<double> grid = sweep_snr_grid(cfg);
  SweepResult result;
  result.run_id = config_run_id(cfg);

  TrainLog first_seed_log;
  for (int seed_i = 0; seed_i < cfg.sweep_seeds; ++seed_i) {
    const uint64_t seed = uint64_t(seed_i) + 1;
    TrainedArms arms = train_arms(cfg, client, seed, pretrained_path);
    if (seed_i == 0) first_seed_log = arms.proposed_log;

    for (size_t gi = 0; gi < grid.size(); ++gi) {
      for (ArmId arm : all_arms()) {
        ChannelState ch;
        ch.snr_db = grid[gi];
        ch.k_factor = cfg.channel_k_factor;
        // Common random numbers: every cell of one seed replays the same
        // noise stream, so curves across SNR and arms are paired and
        // differences reflect the configuration, not the noise draw.
        ch.rng = RngStream(seed, stream_id_of('s', 'w', 0, 0));

        EvalScores sc;
        switch (arm) {
          case ArmId::Proposed: {
            PipelineOptions opts;
            opts.symbol_budget = cfg.sweep_budget;
            opts.channel = &ch;
            sc = evaluate_pipeline_arm(arms.proposed, client.test, opts);
            break;
          }
          case ArmId::Baseline1Traditional: {
            sc = evaluate_transport_arm(arms.pretrained, client.test, &ch);
            break;
          }
          case ArmId::Baseline2NoLam: {
            PipelineOptions opts;
            opts.symbol_budget = cfg.sweep_budget;
            opts.channel = &ch;
            sc = evaluate_pipeline_arm(arms.ablation, client.test, opts);
            break;
          }
        }

        const std::string name = arm_name(arm);
        auto push = [&](const std::string& task, const std::string& metric,
                        double value) {
          result.rows.push_back({result.run_id, int(seed), grid[gi], name,
                                 task, metric, value});
        };
        push("classify", "accuracy", sc.classify_acc);
        push("vqa", "accuracy", sc.vqa_acc);
        push("caption", "bleu1", sc.caption_bleu1);
        push("reconstruct", "psnr_db", sc.psnr_db);
        push("semantics", "iw_distortion", sc.iw_distortion);
      }
    }
  }

  std::sort(result.rows.begin(), result.rows.end(), row_key_less);
  result.data_rows = result.rows.size();

  // Mean/std per cell, appended after the data block in the same order.
  std::vector<MetricRecord> summary;
  for (size_t i = 0; i < result.data_rows;) {
    size_t j = i;
    std::vector<double> vals;
    while (j < result.data_rows && same_cell(result.rows[i], result.rows[j])) {
      vals.push_back(result.rows[j].value);
      ++j;
    }
    MetricRecord base = result.rows[i];
    base.seed = -1;
    MetricRecord m = base, s = base;
    m.metric += "_mean";
    m.value = mean_of(vals);
    s.metric += "_std";
    s.value = vals.size() > 1 ? sample_std(vals) : 0.0;
    summary.push_back(m);
    summary.push_back(s);
    i = j;
  }
  result.summary_rows = summary.size();
  result.rows.insert(result.rows.end(), summary.begin(), summary.end());

  if (!out_dir.empty()) {
    std::filesystem::create_directories(out_dir);
    write_metrics_csv(result.rows,
                      (std::filesystem::path(out_dir) / "metrics.csv").string());
    write_trainlog_csv(first_seed_log, (std::filesystem::path(out_dir) /
                                        "trainlog.csv")
                                           .string());
  }
  return result;
}

std::string metrics_csv_text(std::span<const MetricRecord> rows) {
  std::ostringstream out;
  out << "run_id,seed,snr_db,arm,task,metric,value\n";
  for (const MetricRecord& r : rows) {
    out << r.run_id << ',' << r.seed << ',' << fmt_double(r.snr_db) << ','
        << r.arm << ',' << r.task << ',' << r.metric << ','
        << fmt_double(r.value) << '\n';
  }
  return out.str();
}

void write_metrics_csv(std::span<const MetricRecord> rows,
                       const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out << metrics_csv_text(rows);
}

std::vector<double> cell_values(std::span<const MetricRecord> rows,
                                double snr_db, const std::string& arm,
                                const std::string& task,
                                const std::string& metric) {
  std::vector<std::pair<int, double>> hits;
  for (const MetricRecord& r : rows) {
    if (r.seed >= 0 && r.snr_db == snr_db && r.arm == arm && r.task == task &&
        r.metric == metric) {
      hits.emplace_back(r.seed, r.value);
    }
  }
  std::sort(hits.begin(), hits.end());
  std::vector<double> vals;
  vals.reserve(hits.size());
  for (auto& [seed, v] : hits) vals.push_back(v);
  return vals;
}

std::vector<double> cell_means(std::span<const MetricRecord> rows,
                               std::span<const double> grid,
                               const std::string& arm, const std::string& task,
                               const std::string& metric) {
  std::vector<double> means;
  means.reserve(grid.size());
  for (double snr : grid) {
    std::vector<double> vals = cell_values(rows, snr, arm, task, metric);
    if (vals.empty()) {
      throw std::runtime_error("cell_means: empty cell at snr " +
                               fmt_double(snr));
    }
    means.push_back(mean_of(vals));
  }
  return means;
}

TrendStats trend_of(std::span<const double> xs) {
  TrendStats t;
  for (size_t i = 0; i + 1 < xs.size(); ++i) {
    if (xs[i + 1] < xs[i]) {
      ++t.drops;
      t.worst_drop = std::max(t.worst_drop, xs[i] - xs[i + 1]);
    }
  }
  return t;
}

}  // namespace mtsc
