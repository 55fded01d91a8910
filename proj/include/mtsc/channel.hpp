// Wireless hop: transmit power normalization, Rician block fading with
// additive white Gaussian noise, and perfect-CSI zero-forcing equalization.

#pragma once

#include <complex>
#include <span>
#include <string>
#include <vector>

#include "mtsc/rng.hpp"

namespace mtsc {

using Cx = std::complex<double>;

enum class FadingMode {
  Block,   // fresh h every transmission
  Static,  // one h shared by every transmission of this state
};

struct ChannelState {
  double snr_db = 6.0;
  double k_factor = 3.0;  // Rician K; ratio of line-of-sight to scattered power
  FadingMode fading_mode = FadingMode::Block;
  RngStream rng{0, 0};
};

struct NormalizeResult {
  double scale = 1.0;  // amplitude multiplier applied to every symbol
  bool zero_power = false;
};

// Scales symbols in place so average per-symbol power is exactly 1.
// All-zero input is left unchanged and flagged.
NormalizeResult power_normalize(std::span<Cx> symbols);

// sigma2 = signal_power / 10^(snr_db/10); the variance splits evenly over
// the real and imaginary components.
double snr_db_to_noise_var(double snr_db, double signal_power = 1.0);

struct ChannelUse {
  std::vector<Cx> received;
  Cx h{1.0, 0.0};
  double sigma2 = 0.0;
};

// y = h*x + n with h = sqrt(K/(K+1)) + sqrt(1/(K+1))*g, g circularly
// symmetric unit-variance complex Gaussian, so E[|h|^2] = 1. Block mode
// draws one h per call from state.rng; static mode reuses a single h
// derived from the state's stream. Noise always advances state.rng.
ChannelUse apply_channel(std::span<const Cx> symbols, ChannelState& state);

struct EqualizeResult {
  std::vector<Cx> x_hat;
  bool erased = false;  // deep fade: |h| <= 1e-12, symbols imputed as zero
};

EqualizeResult equalize(const ChannelUse& use);

struct ChannelTraceRow {
  size_t sample_id = 0;
  double h_re = 0.0;
  double h_im = 0.0;
  double sigma2 = 0.0;
};

// CSV with header sample_id,h_re,h_im,sigma2.
void write_channel_trace(const std::string& path,
                         const std::vector<ChannelTraceRow>& rows);

}  // namespace mtsc
