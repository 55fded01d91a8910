#pragma once

#include <array>
#include <cstdint>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mtsc/checkpoint.hpp"
#include "mtsc/dataset.hpp"
#include "mtsc/model.hpp"

namespace mtsc {

// Device-side compression: global magnitude pruning (biases exempt) plus
// symmetric per-tensor quantization, searched over a small plan grid.

inline constexpr std::array<double, 4> kPruneGrid = {0.0, 0.25, 0.5, 0.75};
inline constexpr std::array<int, 4> kBitsGrid = {4, 8, 16, 32};

struct CompressionPlan {
  double prune_rate = 0.0;
  int bits = 32;
  bool operator==(const CompressionPlan&) const = default;
};

// Per-client deployment limits. Defaults are unbounded.
struct ClientProfile {
  uint64_t mem_budget_bytes = std::numeric_limits<uint64_t>::max();
  double mac_budget = std::numeric_limits<double>::infinity();
  double acc_floor = 0.0;
};

// keep[name][i] == 1 when entry i survives pruning. Tensors without an entry
// in `keep` (biases) are untouched.
struct PruneDecision {
  std::map<std::string, std::vector<uint8_t>> keep;
  size_t pruned = 0;
  size_t prunable = 0;
};

// Biases are exempt; everything else participates in the global ranking.
bool prunable_tensor(const std::string& name);

// Zeroes the ceil(rate * n) smallest-magnitude prunable entries across all
// tensors jointly. Ties break by (tensor name, flat index) ascending.
PruneDecision prune_magnitude(const NamedTensors& params, double rate);

// scale = max|v| / (2^(bits-1) - 1); all-zero input yields scale 0.
double quant_scale(std::span<const double> values, int bits);

// Rounds half away from zero, then clamps to the symmetric code range.
int32_t quantize_value(double v, double scale, int bits);

// Prune + quantize every device tensor into serializable records.
std::vector<QuantTensorRecord> compress_params(const NamedTensors& params,
                                               const CompressionPlan& plan);

// Overwrites the bundle's device parameters with their compressed
// (dequantized) counterparts. Server parameters are untouched.
void apply_compression(ModelBundle& bundle, const CompressionPlan& plan);

struct CostEstimate {
  uint64_t mem_bytes = 0;  // serialized payload size of all device tensors
  double macs = 0.0;       // multiply-accumulates for one pipeline forward
};

// Dense multiply-accumulate count for one device-side forward at full rate.
double device_macs_per_forward(const ModelConfig& config);

CostEstimate estimate_cost(const ModelBundle& bundle,
                           const CompressionPlan& plan);

// Fraction of samples whose classify argmax matches the label. A null
// channel evaluates over a clean hop, which is fully deterministic.
double eval_classify_accuracy(const ModelBundle& bundle,
                              std::span<const Sample> samples,
                              ChannelState* channel = nullptr);

struct PlanChoice {
  CompressionPlan plan;
  CostEstimate cost;
  double accuracy = 0.0;
  bool meets_floor = false;
};

// Exhaustive search over the plan grid. Among plans inside both budgets that
// reach the accuracy floor, prefers fewer MACs, then higher accuracy, then
// fewer bits. If no in-budget plan reaches the floor, returns the most
// accurate in-budget plan with meets_floor == false. Throws when no plan
// fits the budgets at all.
PlanChoice optimize_plan(const ModelBundle& bundle,
                         std::span<const Sample> eval_set,
                         const ClientProfile& profile);

}  // namespace mtsc
