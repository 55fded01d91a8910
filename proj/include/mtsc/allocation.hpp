// Importance-aware symbol budgeting: score 4-feature blocks of a semantic
// vector by L2 norm, then split a symbol budget between uniform protection
// (low SNR) and importance-proportional allocation (high SNR).

#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "mtsc/channel.hpp"

namespace mtsc {

inline constexpr size_t kNumBlocks = 8;
inline constexpr size_t kBlockSize = 4;
inline constexpr size_t kSemanticDim = kNumBlocks * kBlockSize;  // 32
inline constexpr int kMaxSymbolsPerBlock = 4;
inline constexpr int kMaxBudget = int(kNumBlocks) * kMaxSymbolsPerBlock;  // 32

struct ImportanceScores {
  std::array<double, kNumBlocks> value{};  // non-negative, sums to 1
};

// score_i = ||block_i|| / sum_j ||block_j||; all-zero vector scores uniform.
ImportanceScores score_importance(std::span<const double> semantic);

struct RateAllocation {
  std::array<int, kNumBlocks> symbols{};  // each in [0, 4]
  int total_budget = 0;                   // after clamping to 32
  bool budget_clamped = false;            // requested budget exceeded 32

  int total() const;
};

// Mixing weight between uniform (0) and importance-proportional (1):
// clamp((snr_db + 6) / 18, 0, 1).
double snr_mix_lambda(double snr_db);

// target_i = budget * (lambda*score_i + (1-lambda)/8), integerized by
// largest remainder. Blocks are capped at 4 symbols; overflow moves to the
// next-largest remainder (ties to the lower block index), cycling until the
// budget is placed. Negative budgets throw; budgets above 32 clamp and flag.
RateAllocation allocate_rates(const ImportanceScores& scores, double snr_db,
                              int total_budget);
RateAllocation allocate_rates(const ImportanceScores& scores,
                              const ChannelState& channel, int total_budget);

// sum_i score_i * ||block_i - block_hat_i||^2
double importance_weighted_distortion(std::span<const double> semantic,
                                      std::span<const double> estimate,
                                      const ImportanceScores& scores);

// Side info for the error-free control channel: (block_id, s_i) byte pairs.
std::vector<uint8_t> encode_alloc_meta(const RateAllocation& alloc);
RateAllocation decode_alloc_meta(std::span<const uint8_t> bytes);

}  // namespace mtsc
