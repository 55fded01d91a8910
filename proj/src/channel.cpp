#include "mtsc/channel.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>

namespace mtsc {

namespace {

constexpr uint64_t kStaticFadeTag = 0x57a71cfade000001ull;
constexpr double kDeepFadeFloor = 1e-12;

Cx draw_rician(double k_factor, RngStream& rng) {
  double los = std::sqrt(k_factor / (k_factor + 1.0));
  double nlos = std::sqrt(1.0 / (k_factor + 1.0));
  // unit-variance circularly symmetric g: each component N(0, 1/2)
  double g_re = rng.normal() * std::sqrt(0.5);
  double g_im = rng.normal() * std::sqrt(0.5);
  return {los + nlos * g_re, nlos * g_im};
}

}  // namespace

NormalizeResult power_normalize(std::span<Cx> symbols) {
  if (symbols.empty())
    throw std::invalid_argument("power_normalize: empty transmission");
  double total = 0.0;
  for (const Cx& s : symbols) total += std::norm(s);
  if (total == 0.0) return {1.0, true};
  double scale = std::sqrt(double(symbols.size()) / total);
  for (Cx& s : symbols) s *= scale;
  return {scale, false};
}

double snr_db_to_noise_var(double snr_db, double signal_power) {
  return signal_power / std::pow(10.0, snr_db / 10.0);
}

ChannelUse apply_channel(std::span<const Cx> symbols, ChannelState& state) {
  if (state.k_factor < 0.0)
    throw std::invalid_argument("k_factor must be non-negative");
  ChannelUse use;
  if (state.fading_mode == FadingMode::Block) {
    use.h = draw_rician(state.k_factor, state.rng);
  } else {
    RngStream fixed = state.rng.substream(kStaticFadeTag);
    use.h = draw_rician(state.k_factor, fixed);
  }
  use.sigma2 = snr_db_to_noise_var(state.snr_db);
  double comp_std = std::sqrt(use.sigma2 / 2.0);
  use.received.reserve(symbols.size());
  for (const Cx& x : symbols) {
    Cx n{comp_std * state.rng.normal(), comp_std * state.rng.normal()};
    use.received.push_back(use.h * x + n);
  }
  return use;
}

EqualizeResult equalize(const ChannelUse& use) {
  EqualizeResult out;
  if (std::abs(use.h) <= kDeepFadeFloor) {
    out.erased = true;
    out.x_hat.assign(use.received.size(), Cx{0.0, 0.0});
    return out;
  }
  out.x_hat.reserve(use.received.size());
  for (const Cx& y : use.received) out.x_hat.push_back(y / use.h);
  return out;
}

void write_channel_trace(const std::string& path,
                         const std::vector<ChannelTraceRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open trace file " + path);
  out << "sample_id,h_re,h_im,sigma2\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%zu,%.17g,%.17g,%.17g\n", r.sample_id,
                  r.h_re, r.h_im, r.sigma2);
    out << buf;
  }
}

}  // namespace mtsc
