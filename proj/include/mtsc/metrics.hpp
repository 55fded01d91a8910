// Evaluation metrics and the small-sample statistics used to compare arms:
// PSNR, unigram BLEU, mean/std, and Student-t confidence intervals.

#pragma once

#include <span>
#include <vector>

namespace mtsc {

// 10*log10(max_val^2 / MSE), capped at 99.0 dB; zero MSE returns the cap.
double compute_psnr(std::span<const double> reference,
                    std::span<const double> test, double max_val = 1.0);

// Clipped unigram precision times brevity penalty
// exp(min(0, 1 - |ref|/|cand|)). Empty candidate scores 0.
double compute_bleu1(std::span<const int> candidate,
                     std::span<const int> reference);

double mean_of(std::span<const double> xs);
double sample_std(std::span<const double> xs);  // n-1 denominator

// Student-t CDF and upper quantile for fractional degrees of freedom.
double student_t_cdf(double t, double dof);
double student_t_quantile(double p, double dof);  // P(T <= result) = p

struct MeanCi {
  double mean = 0.0;
  double lo = 0.0;
  double hi = 0.0;
};

// Two-sided t confidence interval for the mean (default 95%).
MeanCi mean_ci(std::span<const double> xs, double confidence = 0.95);

struct WelchResult {
  double t_stat = 0.0;
  double dof = 0.0;
  double p_two_sided = 1.0;
  double mean_diff = 0.0;  // mean(a) - mean(b)
};

WelchResult welch_t_test(std::span<const double> a, std::span<const double> b);

}  // namespace mtsc
