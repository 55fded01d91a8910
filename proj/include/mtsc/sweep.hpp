#pragma once

#include <span>
#include <string>
#include <vector>

#include "mtsc/baselines.hpp"
#include "mtsc/config.hpp"
#include "mtsc/federation.hpp"
#include "mtsc/model.hpp"

namespace mtsc {

// One measurement cell of an evaluation grid. Summary rows aggregate a
// (snr, arm, task, metric) cell over seeds and carry seed = -1 with the
// metric name suffixed "_mean" / "_std".
struct MetricRecord {
  std::string run_id;
  int seed = 0;
  double snr_db = 0.0;
  std::string arm;
  std::string task;    // classify / reconstruct / vqa / caption / semantics
  std::string metric;  // accuracy / psnr_db / bleu1 / iw_distortion
  double value = 0.0;
};

// Mean task scores over an evaluation set.
struct EvalScores {
  double classify_acc = 0.0;
  double vqa_acc = 0.0;
  double caption_bleu1 = 0.0;
  double psnr_db = 0.0;
  double iw_distortion = 0.0;
};

// Phase I: centralized training of the full pipeline over a clean full-rate
// link on a held-out public corpus. The returned bundle is not yet frozen.
ModelBundle pretrain_phase1(const AppConfig& cfg, std::span<const Sample> corpus,
                            uint64_t seed);

// The three evaluation arms trained for one seed. The transport arm reuses
// the clean pretrained pipeline; the ablation arm is the quarter-width,
// adapter-free variant federated from scratch.
struct TrainedArms {
  ModelBundle pretrained;
  ModelBundle proposed;
  ModelBundle ablation;
  TrainLog proposed_log;
  TrainLog ablation_log;
};

// Trains all arms for one seed. `pretrained_path`, when non-empty, loads the
// Phase-I weights from a checkpoint instead of training them (missing file
// throws). Client data comes from cfg.data; the public Phase-I corpus uses a
// disjoint seed derived from it.
TrainedArms train_arms(const AppConfig& cfg, const Dataset& client_data,
                       uint64_t seed, const std::string& pretrained_path = "");

RoundConfig fed_config(const AppConfig& cfg, uint64_t seed);

// Scores the end-to-end pipeline over samples. The channel pointer may be
// null (clean link); the same options apply to every sample.
EvalScores evaluate_pipeline_arm(const ModelBundle& model,
                                 std::span<const Sample> samples,
                                 const PipelineOptions& options);

// Scores the conventional transport arm: quantize, QPSK over the channel,
// then the clean-trained pipeline channel-free on the reconstruction.
// Metrics compare against the original samples.
EvalScores evaluate_transport_arm(const ModelBundle& clean_model,
                                  std::span<const Sample> samples,
                                  ChannelState* channel,
                                  double* mean_ber = nullptr);

// SNR grid {min, min+step, ..., <= max}.
std::vector<double> sweep_snr_grid(const AppConfig& cfg);

// Deterministic run identifier derived from the config contents.
std::string config_run_id(const AppConfig& cfg);

// grid x arms x seeds x {5 task metrics} data rows, followed by mean/std
// summary rows per cell; canonical order (snr, arm, task, metric, seed).
struct SweepResult {
  std::vector<MetricRecord> rows;
  std::string run_id;
  size_t data_rows = 0;
  size_t summary_rows = 0;
};

SweepResult run_snr_sweep(const AppConfig& cfg,
                          const std::string& out_dir = "",
                          const std::string& pretrained_path = "");

// CSV surface: header run_id,seed,snr_db,arm,task,metric,value; %.17g
// values so equal runs produce byte-identical files.
std::string metrics_csv_text(std::span<const MetricRecord> rows);
void write_metrics_csv(std::span<const MetricRecord> rows,
                       const std::string& path);

// Per-seed values of one cell, ordered by seed.
std::vector<double> cell_values(std::span<const MetricRecord> rows,
                                double snr_db, const std::string& arm,
                                const std::string& task,
                                const std::string& metric);

// Seed-mean of one cell per grid point, in grid order.
std::vector<double> cell_means(std::span<const MetricRecord> rows,
                               std::span<const double> grid,
                               const std::string& arm, const std::string& task,
                               const std::string& metric);

// Trend shape of a curve: count and worst magnitude of decreasing steps.
struct TrendStats {
  int drops = 0;
  double worst_drop = 0.0;
};

TrendStats trend_of(std::span<const double> xs);

}  // namespace mtsc
