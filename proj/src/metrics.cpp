#include "mtsc/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>

namespace mtsc {

double compute_psnr(std::span<const double> reference,
                    std::span<const double> test, double max_val) {
  if (reference.size() != test.size() || reference.empty())
    throw std::invalid_argument("psnr inputs must match and be non-empty");
  double mse = 0.0;
  for (size_t i = 0; i < reference.size(); ++i) {
    double d = reference[i] - test[i];
    mse += d * d;
  }
  mse /= double(reference.size());
  if (mse == 0.0) return 99.0;
  return std::min(99.0, 10.0 * std::log10(max_val * max_val / mse));
}

double compute_bleu1(std::span<const int> candidate,
                     std::span<const int> reference) {
  if (reference.empty())
    throw std::invalid_argument("bleu reference must be non-empty");
  if (candidate.empty()) return 0.0;
  std::map<int, int> ref_counts;
  for (int t : reference) ++ref_counts[t];
  int clipped = 0;
  std::map<int, int> used;
  for (int t : candidate) {
    auto it = ref_counts.find(t);
    if (it != ref_counts.end() && used[t] < it->second) {
      ++used[t];
      ++clipped;
    }
  }
  double precision = double(clipped) / double(candidate.size());
  double bp = std::exp(std::min(
      0.0, 1.0 - double(reference.size()) / double(candidate.size())));
  return precision * bp;
}

double mean_of(std::span<const double> xs) {
  if (xs.empty()) throw std::invalid_argument("mean of empty sample");
  double s = 0.0;
  for (double x : xs) s += x;
  return s / double(xs.size());
}

double sample_std(std::span<const double> xs) {
  if (xs.size() < 2) return 0.0;
  double m = mean_of(xs);
  double acc = 0.0;
  for (double x : xs) acc += (x - m) * (x - m);
  return std::sqrt(acc / double(xs.size() - 1));
}

namespace {

// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double betacf(double a, double b, double x) {
  const double tiny = 1e-300;
  double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0, d = 1.0 - qab * x / qap;
  if (std::fabs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::fabs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    double del = d * c;
    h *= del;
    if (std::fabs(del - 1.0) < 1e-14) break;
  }
  return h;
}

double inc_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  double ln_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                    a * std::log(x) + b * std::log(1.0 - x);
  double front = std::exp(ln_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_cdf(double t, double dof) {
  if (dof <= 0.0) throw std::invalid_argument("dof must be positive");
  double x = dof / (dof + t * t);
  double p = 0.5 * inc_beta(dof / 2.0, 0.5, x);
  return t >= 0.0 ? 1.0 - p : p;
}

double student_t_quantile(double p, double dof) {
  if (p <= 0.0 || p >= 1.0)
    throw std::invalid_argument("quantile probability must be in (0, 1)");
  double lo = -1e6, hi = 1e6;
  for (int i = 0; i < 200; ++i) {
    double mid = 0.5 * (lo + hi);
    if (student_t_cdf(mid, dof) < p)
      lo = mid;
    else
      hi = mid;
  }
  return 0.5 * (lo + hi);
}

MeanCi mean_ci(std::span<const double> xs, double confidence) {
  if (xs.size() < 2)
    throw std::invalid_argument("confidence interval needs >= 2 samples");
  MeanCi out;
  out.mean = mean_of(xs);
  double se = sample_std(xs) / std::sqrt(double(xs.size()));
  double tcrit =
      student_t_quantile(1.0 - (1.0 - confidence) / 2.0, double(xs.size() - 1));
  out.lo = out.mean - tcrit * se;
  out.hi = out.mean + tcrit * se;
  return out;
}

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2)
    throw std::invalid_argument("welch test needs >= 2 samples per group");
  WelchResult r;
  double ma = mean_of(a), mb = mean_of(b);
  double va = sample_std(a), vb = sample_std(b);
  va *= va;
  vb *= vb;
  double na = double(a.size()), nb = double(b.size());
  double se2 = va / na + vb / nb;
  r.mean_diff = ma - mb;
  if (se2 == 0.0) {
    r.t_stat = r.mean_diff == 0.0 ? 0.0 : std::copysign(1e12, r.mean_diff);
    r.dof = na + nb - 2.0;
    r.p_two_sided = r.mean_diff == 0.0 ? 1.0 : 0.0;
    return r;
  }
  r.t_stat = r.mean_diff / std::sqrt(se2);
  r.dof = se2 * se2 /
          (va * va / (na * na * (na - 1.0)) + vb * vb / (nb * nb * (nb - 1.0)));
  r.p_two_sided = 2.0 * (1.0 - student_t_cdf(std::fabs(r.t_stat), r.dof));
  return r;
}

}  // namespace mtsc
