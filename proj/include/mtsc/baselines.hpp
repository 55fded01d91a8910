#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "mtsc/channel.hpp"
#include "mtsc/dataset.hpp"
#include "mtsc/model.hpp"
#include "mtsc/rng.hpp"

namespace mtsc {

// Comparison arms for the SNR sweeps.
enum class ArmId { Proposed, Baseline1Traditional, Baseline2NoLam };

const std::vector<ArmId>& all_arms();
std::string arm_name(ArmId arm);

// QPSK with unit symbol energy: bit b maps to (1 - 2b) / sqrt(2) per
// component, I first. Bit count must be even.
std::vector<Cx> qpsk_modulate(std::span<const uint8_t> bits);
std::vector<uint8_t> qpsk_demodulate(std::span<const Cx> symbols);

// Analytic bit error rate over AWGN: Q(sqrt(Es/N0)) with Es = 1 and
// N0 = 10^(-snr/10), where Q(x) = erfc(x / sqrt(2)) / 2.
double qpsk_ber_analytic(double snr_db);

// Measured bit error rate of the modem over a pure AWGN hop (h = 1), the
// setting the analytic formula describes.
double qpsk_ber_monte_carlo(double snr_db, size_t n_bits, RngStream& rng);

// Classical source coding proxy: every modality uniformly quantized to
// 8 bits, concatenated image | text | audio, serialized MSB-first.
inline constexpr size_t kPayloadBytes = kImagePixels + kTextLen + kAudioLen;
inline constexpr size_t kPayloadBits = kPayloadBytes * 8;

std::vector<uint8_t> serialize_payload(const Sample& s);
void deserialize_payload(std::span<const uint8_t> bytes, Sample& out);

std::vector<uint8_t> bytes_to_bits(std::span<const uint8_t> bytes);
std::vector<uint8_t> bits_to_bytes(std::span<const uint8_t> bits);

struct Baseline1Result {
  Sample reconstructed;      // payload after the QPSK hop
  double bit_error_rate = 0.0;
  PipelineResult pipeline;   // clean pipeline run on the reconstruction
};

// Source/channel-separated transport: 8-bit quantization, QPSK hard
// decisions through the given channel, then the clean-trained pipeline on
// the reconstructed payload over a noise-free link.
Baseline1Result run_baseline1(const ModelBundle& clean_model,
                              const Sample& sample, ChannelState* channel,
                              std::span<const TaskId> tasks);

// The no-pretraining ablation: identical topology, quarter-width fusion,
// adapters disabled. Training happens elsewhere; this fixes the shape.
ModelConfig baseline2_config(const ModelConfig& base);

}  // namespace mtsc
