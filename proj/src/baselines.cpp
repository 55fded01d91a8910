#include "mtsc/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtsc {

const std::vector<ArmId>& all_arms() {
  static const std::vector<ArmId> arms = {
      ArmId::Proposed, ArmId::Baseline1Traditional, ArmId::Baseline2NoLam};
  return arms;
}

std::string arm_name(ArmId arm) {
  switch (arm) {
    case ArmId::Proposed: return "proposed";
    case ArmId::Baseline1Traditional: return "baseline1_traditional";
    case ArmId::Baseline2NoLam: return "baseline2_no_lam";
  }
  throw std::invalid_argument("unknown arm");
}

std::vector<Cx> qpsk_modulate(std::span<const uint8_t> bits) {
  if (bits.size() % 2 != 0)
    throw std::invalid_argument("QPSK needs an even number of bits");
  const double amp = 1.0 / std::sqrt(2.0);
  std::vector<Cx> symbols(bits.size() / 2);
  for (size_t i = 0; i < symbols.size(); ++i) {
    double re = bits[2 * i] ? -amp : amp;
    double im = bits[2 * i + 1] ? -amp : amp;
    symbols[i] = {re, im};
  }
  return symbols;
}

std::vector<uint8_t> qpsk_demodulate(std::span<const Cx> symbols) {
  std::vector<uint8_t> bits(symbols.size() * 2);
  for (size_t i = 0; i < symbols.size(); ++i) {
    bits[2 * i] = symbols[i].real() < 0.0 ? 1 : 0;
    bits[2 * i + 1] = symbols[i].imag() < 0.0 ? 1 : 0;
  }
  return bits;
}

double qpsk_ber_analytic(double snr_db) {
  double n0 = snr_db_to_noise_var(snr_db);
  double x = std::sqrt(1.0 / n0);
  return 0.5 * std::erfc(x / std::sqrt(2.0));
}

double qpsk_ber_monte_carlo(double snr_db, size_t n_bits, RngStream& rng) {
  if (n_bits == 0 || n_bits % 2 != 0)
    throw std::invalid_argument("need a positive even bit count");
  double sigma2 = snr_db_to_noise_var(snr_db);
  double comp_std = std::sqrt(sigma2 / 2.0);
  std::vector<uint8_t> bits(n_bits);
  for (auto& b : bits) b = uint8_t(rng.uniform_int(0, 1));
  auto symbols = qpsk_modulate(bits);
  for (auto& s : symbols)
    s += Cx(comp_std * rng.normal(), comp_std * rng.normal());
  auto decided = qpsk_demodulate(symbols);
  size_t errors = 0;
  for (size_t i = 0; i < n_bits; ++i)
    if (decided[i] != bits[i]) ++errors;
  return double(errors) / double(n_bits);
}

namespace {

uint8_t quant_unit(double v) {  // [0,1] -> byte
  double r = std::floor(v * 255.0 + 0.5);
  return uint8_t(std::clamp(r, 0.0, 255.0));
}

uint8_t quant_signed(double v) {  // [-1,1] -> byte
  return quant_unit((v + 1.0) / 2.0);
}

}  // namespace

std::vector<uint8_t> serialize_payload(const Sample& s) {
  std::vector<uint8_t> bytes;
  bytes.reserve(kPayloadBytes);
  for (double p : s.image) bytes.push_back(quant_unit(p));
  for (int t : s.text) bytes.push_back(uint8_t(t));
  for (double a : s.audio) bytes.push_back(quant_signed(a));
  if (bytes.size() != kPayloadBytes)
    throw std::logic_error("payload layout drifted");
  return bytes;
}

void deserialize_payload(std::span<const uint8_t> bytes, Sample& out) {
  if (bytes.size() != kPayloadBytes)
    throw std::invalid_argument("payload must have " +
                                std::to_string(kPayloadBytes) + " bytes");
  size_t off = 0;
  out.image.resize(kImagePixels);
  for (size_t i = 0; i < kImagePixels; ++i)
    out.image[i] = double(bytes[off++]) / 255.0;
  out.text.resize(kTextLen);
  for (size_t i = 0; i < kTextLen; ++i)
    out.text[i] = int(bytes[off++]) % kVocabSize;  // corrupted bits stay valid
  out.audio.resize(kAudioLen);
  for (size_t i = 0; i < kAudioLen; ++i)
    out.audio[i] = double(bytes[off++]) / 255.0 * 2.0 - 1.0;
}

std::vector<uint8_t> bytes_to_bits(std::span<const uint8_t> bytes) {
  std::vector<uint8_t> bits;
  bits.reserve(bytes.size() * 8);
  for (uint8_t b : bytes)
    for (int k = 7; k >= 0; --k) bits.push_back(uint8_t((b >> k) & 1));
  return bits;
}

std::vector<uint8_t> bits_to_bytes(std::span<const uint8_t> bits) {
  if (bits.size() % 8 != 0)
    throw std::invalid_argument("bit count must be a multiple of 8");
  std::vector<uint8_t> bytes(bits.size() / 8, 0);
  for (size_t i = 0; i < bits.size(); ++i)
    bytes[i / 8] = uint8_t((bytes[i / 8] << 1) | bits[i]);
  return bytes;
}

Baseline1Result run_baseline1(const ModelBundle& clean_model,
                              const Sample& sample, ChannelState* channel,
                              std::span<const TaskId> tasks) {
  Baseline1Result result;
  auto bytes = serialize_payload(sample);
  auto bits = bytes_to_bits(bytes);
  auto symbols = qpsk_modulate(bits);

  std::vector<uint8_t> received_bits;
  if (channel) {
    auto use = apply_channel(symbols, *channel);
    auto eq = equalize(use);
    received_bits = qpsk_demodulate(eq.x_hat);
  } else {
    received_bits = bits;
  }
  size_t errors = 0;
  for (size_t i = 0; i < bits.size(); ++i)
    if (bits[i] != received_bits[i]) ++errors;
  result.bit_error_rate = double(errors) / double(bits.size());

  result.reconstructed = sample;  // labels stay local for scoring only
  deserialize_payload(bits_to_bytes(received_bits), result.reconstructed);

  PipelineOptions options;  // clean hop, full rate, no augmentation
  result.pipeline =
      forward_pipeline(clean_model, result.reconstructed, tasks, options);
  return result;
}

ModelConfig baseline2_config(const ModelConfig& base) {
  ModelConfig cfg = base;
  cfg.fusion_hidden = std::max<size_t>(1, base.fusion_hidden / 4);
  cfg.lora_enabled = false;
  return cfg;
}

}  // namespace mtsc
