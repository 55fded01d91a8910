#include "mtsc/compression.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <tuple>

namespace mtsc {

bool prunable_tensor(const std::string& name) {
  return name.size() < 2 || name.compare(name.size() - 2, 2, ".b") != 0;
}

PruneDecision prune_magnitude(const NamedTensors& params, double rate) {
  if (rate < 0.0 || rate >= 1.0)
    throw std::invalid_argument("prune rate must lie in [0, 1)");
  PruneDecision decision;

  struct Entry {
    double magnitude;
    const std::string* name;
    size_t index;
  };
  std::vector<Entry> entries;
  for (const auto& [name, t] : params) {
    if (!prunable_tensor(name)) continue;
    decision.keep[name].assign(t.numel(), uint8_t(1));
    auto v = t.values();
    for (size_t i = 0; i < v.size(); ++i)
      entries.push_back({std::abs(v[i]), &name, i});
  }
  decision.prunable = entries.size();
  size_t k = size_t(std::ceil(rate * double(entries.size())));
  if (k == 0) return decision;

  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) {
    return std::tie(a.magnitude, *a.name, a.index) <
           std::tie(b.magnitude, *b.name, b.index);
  });
  for (size_t i = 0; i < k; ++i)
    decision.keep[*entries[i].name][entries[i].index] = 0;
  decision.pruned = k;
  return decision;
}

double quant_scale(std::span<const double> values, int bits) {
  if (bits != 4 && bits != 8 && bits != 16)
    throw std::invalid_argument("quantization width must be 4, 8, or 16");
  double max_abs = 0.0;
  for (double v : values) max_abs = std::max(max_abs, std::abs(v));
  double levels = double((int32_t(1) << (bits - 1)) - 1);
  return max_abs / levels;
}

int32_t quantize_value(double v, double scale, int bits) {
  if (scale == 0.0) return 0;
  int32_t limit = (int32_t(1) << (bits - 1)) - 1;
  double scaled = v / scale;
  double rounded = scaled >= 0.0 ? std::floor(scaled + 0.5)
                                 : std::ceil(scaled - 0.5);
  rounded = std::clamp(rounded, double(-limit), double(limit));
  return int32_t(rounded);
}

std::vector<QuantTensorRecord> compress_params(const NamedTensors& params,
                                               const CompressionPlan& plan) {
  if (std::find(kBitsGrid.begin(), kBitsGrid.end(), plan.bits) ==
      kBitsGrid.end())
    throw std::invalid_argument("bits outside the plan grid");
  PruneDecision decision = prune_magnitude(params, plan.prune_rate);

  std::vector<QuantTensorRecord> records;
  records.reserve(params.size());
  for (const auto& [name, t] : params) {
    QuantTensorRecord rec;
    rec.name = name;
    rec.shape = t.shape();
    rec.bits = uint8_t(plan.bits);
    auto v = t.values();

    std::vector<double> kept_values;
    auto it = decision.keep.find(name);
    bool sparse = plan.prune_rate > 0.0 && it != decision.keep.end();
    if (sparse) {
      rec.mask.assign((t.numel() + 7) / 8, 0);
      for (size_t i = 0; i < v.size(); ++i) {
        if (!it->second[i]) continue;
        rec.mask[i / 8] |= uint8_t(1u << (i % 8));
        kept_values.push_back(v[i]);
      }
    } else {
      kept_values.assign(v.begin(), v.end());
    }

    if (plan.bits == 32) {
      rec.scale = 1.0;
      rec.raw.reserve(kept_values.size());
      for (double x : kept_values) rec.raw.push_back(float(x));
    } else {
      rec.scale = quant_scale(kept_values, plan.bits);
      rec.codes.reserve(kept_values.size());
      for (double x : kept_values)
        rec.codes.push_back(quantize_value(x, rec.scale, plan.bits));
    }
    records.push_back(std::move(rec));
  }
  return records;
}

void apply_compression(ModelBundle& bundle, const CompressionPlan& plan) {
  NamedTensors device = bundle.named_device_params();
  auto records = compress_params(device, plan);
  for (size_t i = 0; i < records.size(); ++i) {
    auto restored = records[i].dequantize();
    auto dst = device[i].second.values_mut();
    std::copy(restored.begin(), restored.end(), dst.begin());
  }
}

double device_macs_per_forward(const ModelConfig& config) {
  size_t d = config.semantic_dim;
  double macs = 0.0;
  macs += double(config.image_hidden) * kImagePixels;  // img1
  macs += double(d) * config.image_hidden;             // img2
  macs += double(d) * config.token_dim;                // text_proj
  macs += double(d) * config.audio_bins;               // audio_proj
  macs += double(config.fusion_hidden) * (3 * d);      // fusion.l1
  macs += double(d) * config.fusion_hidden;            // fusion.l2
  if (config.lora_enabled) {
    double r = double(config.lora_rank);
    macs += r * (3 * d) + double(config.fusion_hidden) * r;  // a1
    macs += r * config.fusion_hidden + double(d) * r;        // a2
  }
  // Full-rate link: every block runs the widest coder.
  macs += double(kNumBlocks) * (2.0 * kBlockSize) * kBlockSize;
  for (TaskId task : all_tasks()) macs += double(task_output_dim(task)) * d;
  return macs;
}

CostEstimate estimate_cost(const ModelBundle& bundle,
                           const CompressionPlan& plan) {
  CostEstimate cost;
  auto records = compress_params(bundle.named_device_params(), plan);
  for (const auto& rec : records) cost.mem_bytes += quant_payload_bytes(rec);
  cost.macs = device_macs_per_forward(bundle.config) * (1.0 - plan.prune_rate);
  return cost;
}

double eval_classify_accuracy(const ModelBundle& bundle,
                              std::span<const Sample> samples,
                              ChannelState* channel) {
  if (samples.empty()) throw std::invalid_argument("empty evaluation set");
  PipelineOptions options;
  options.channel = channel;
  std::vector<TaskId> task = {TaskId::Classify};
  size_t correct = 0;
  for (const Sample& s : samples) {
    auto result = forward_pipeline(bundle, s, task, options);
    if (argmax_of(result.outputs.at(TaskId::Classify)) == s.cls) ++correct;
  }
  return double(correct) / double(samples.size());
}

PlanChoice optimize_plan(const ModelBundle& bundle,
                         std::span<const Sample> eval_set,
                         const ClientProfile& profile) {
  bool any_in_budget = false;
  PlanChoice best_feasible;   // meets budgets and the floor
  PlanChoice best_in_budget;  // meets budgets only, maximizing accuracy
  bool have_feasible = false, have_in_budget = false;

  for (double rate : kPruneGrid) {
    for (int bits : kBitsGrid) {
      CompressionPlan plan{rate, bits};
      PlanChoice cand;
      cand.plan = plan;
      cand.cost = estimate_cost(bundle, plan);
      if (cand.cost.mem_bytes > profile.mem_budget_bytes ||
          cand.cost.macs > profile.mac_budget)
        continue;
      any_in_budget = true;

      ModelBundle trial = bundle.clone();
      apply_compression(trial, plan);
      cand.accuracy = eval_classify_accuracy(trial, eval_set);
      cand.meets_floor = cand.accuracy >= profile.acc_floor;

      if (cand.meets_floor) {
        bool better =
            !have_feasible ||
            std::make_tuple(cand.cost.macs, -cand.accuracy, cand.plan.bits) <
                std::make_tuple(best_feasible.cost.macs,
                                -best_feasible.accuracy,
                                best_feasible.plan.bits);
        if (better) best_feasible = cand;
        have_feasible = true;
      }
      bool better_acc =
          !have_in_budget ||
          std::make_tuple(-cand.accuracy, cand.cost.macs, cand.plan.bits) <
              std::make_tuple(-best_in_budget.accuracy,
                              best_in_budget.cost.macs,
                              best_in_budget.plan.bits);
      if (better_acc) best_in_budget = cand;
      have_in_budget = true;
    }
  }
  if (!any_in_budget)
    throw std::runtime_error("no compression plan fits the client budgets");
  return have_feasible ? best_feasible : best_in_budget;
}

}  // namespace mtsc
