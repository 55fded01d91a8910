#include "mtsc/allocation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace mtsc {

ImportanceScores score_importance(std::span<const double> semantic) {
  if (semantic.size() != kSemanticDim)
    throw std::invalid_argument("semantic vector must have " +
                                std::to_string(kSemanticDim) + " entries");
  ImportanceScores out;
  double total = 0.0;
  for (size_t b = 0; b < kNumBlocks; ++b) {
    double sq = 0.0;
    for (size_t j = 0; j < kBlockSize; ++j) {
      double v = semantic[b * kBlockSize + j];
      if (!std::isfinite(v))
        throw std::invalid_argument("non-finite semantic value");
      sq += v * v;
    }
    out.value[b] = std::sqrt(sq);
    total += out.value[b];
  }
  if (total == 0.0) {
    out.value.fill(1.0 / double(kNumBlocks));
  } else {
    for (double& v : out.value) v /= total;
  }
  return out;
}

int RateAllocation::total() const {
  return std::accumulate(symbols.begin(), symbols.end(), 0);
}

double snr_mix_lambda(double snr_db) {
  return std::clamp((snr_db + 6.0) / 18.0, 0.0, 1.0);
}

RateAllocation allocate_rates(const ImportanceScores& scores, double snr_db,
                              int total_budget) {
  if (total_budget < 0)
    throw std::invalid_argument("negative symbol budget");
  RateAllocation alloc;
  alloc.budget_clamped = total_budget > kMaxBudget;
  alloc.total_budget = std::min(total_budget, kMaxBudget);

  double lambda = snr_mix_lambda(snr_db);
  std::array<double, kNumBlocks> remainder{};
  int placed = 0;
  for (size_t i = 0; i < kNumBlocks; ++i) {
    double target = double(alloc.total_budget) *
                    (lambda * scores.value[i] + (1.0 - lambda) / kNumBlocks);
    double whole = std::floor(target);
    remainder[i] = target - whole;
    alloc.symbols[i] = int(std::min(whole, double(kMaxSymbolsPerBlock)));
    placed += alloc.symbols[i];
  }

  // leftover = budget minus placed floors (cap overflow folds in here);
  // hand out one symbol at a time by remainder rank, cycling past full blocks
  std::array<size_t, kNumBlocks> order;
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return remainder[a] > remainder[b];
  });
  int leftover = alloc.total_budget - placed;
  while (leftover > 0) {
    bool progressed = false;
    for (size_t idx : order) {
      if (leftover == 0) break;
      if (alloc.symbols[idx] >= kMaxSymbolsPerBlock) continue;
      ++alloc.symbols[idx];
      --leftover;
      progressed = true;
    }
    if (!progressed) break;  // unreachable while budget <= 32
  }
  return alloc;
}

RateAllocation allocate_rates(const ImportanceScores& scores,
                              const ChannelState& channel, int total_budget) {
  return allocate_rates(scores, channel.snr_db, total_budget);
}

double importance_weighted_distortion(std::span<const double> semantic,
                                      std::span<const double> estimate,
                                      const ImportanceScores& scores) {
  if (semantic.size() != kSemanticDim || estimate.size() != kSemanticDim)
    throw std::invalid_argument("distortion inputs must have " +
                                std::to_string(kSemanticDim) + " entries");
  double total = 0.0;
  for (size_t b = 0; b < kNumBlocks; ++b) {
    double sq = 0.0;
    for (size_t j = 0; j < kBlockSize; ++j) {
      double d = semantic[b * kBlockSize + j] - estimate[b * kBlockSize + j];
      sq += d * d;
    }
    total += scores.value[b] * sq;
  }
  return total;
}

std::vector<uint8_t> encode_alloc_meta(const RateAllocation& alloc) {
  std::vector<uint8_t> out;
  out.reserve(kNumBlocks * 2);
  for (size_t i = 0; i < kNumBlocks; ++i) {
    out.push_back(uint8_t(i));
    out.push_back(uint8_t(alloc.symbols[i]));
  }
  return out;
}

RateAllocation decode_alloc_meta(std::span<const uint8_t> bytes) {
  if (bytes.size() != kNumBlocks * 2)
    throw std::invalid_argument("allocation metadata must be " +
                                std::to_string(kNumBlocks * 2) + " bytes");
  RateAllocation alloc;
  std::array<bool, kNumBlocks> seen{};
  for (size_t p = 0; p < kNumBlocks; ++p) {
    uint8_t id = bytes[2 * p], s = bytes[2 * p + 1];
    if (id >= kNumBlocks || seen[id])
      throw std::invalid_argument("bad block id in allocation metadata");
    if (s > kMaxSymbolsPerBlock)
      throw std::invalid_argument("symbol count above per-block cap");
    seen[id] = true;
    alloc.symbols[id] = s;
  }
  alloc.total_budget = alloc.total();
  return alloc;
}

}  // namespace mtsc
