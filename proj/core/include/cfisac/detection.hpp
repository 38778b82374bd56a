#pragma once

#include <complex>
#include <vector>

namespace cfisac {

// Multi-receiver energy detector built on the chi-squared family.
//
// The detection statistic for N receivers with known per-receiver signature
// vectors eta_n and matched-filtered snapshots y_n is
//
//   Lambda = (1/noise_power) * sum_n |eta_n^H y_n|^2 / ||eta_n||^2
//
// Complex noise is modelled with independent N(0, noise_power) real and
// imaginary parts per sample, so Lambda is chi-squared with 2N degrees of
// freedom under noise only and non-central chi-squared with the same dof
// under signal presence.

// CCDF of the central chi-squared distribution, even dof >= 2.
double chi2_ccdf(double x, int dof);

// Inverse of chi2_ccdf in x: smallest threshold whose CCDF equals p.
// p must lie in (0, 1]; p == 1 maps to 0.
double chi2_ccdf_inverse(double p, int dof);

// CCDF of the non-central chi-squared distribution, even dof >= 2,
// non-centrality nc >= 0. Evaluated as a Poisson-weighted mixture of central
// CCDFs; truncation leaves less than 1e-12 of the mixture mass.
double noncentral_chi2_ccdf(double x, int dof, double nc);

struct DetectionSetup {
    int n_receivers = 1;
    double p_fa = 1e-3;
    double noise_power = 1.0;
};

// Threshold lambda with P(Lambda > lambda | noise only) == p_fa.
double cfar_threshold(const DetectionSetup& setup);

// Closed-form detection probability given per-receiver non-centralities.
double detection_probability(const DetectionSetup& setup,
                             const std::vector<double>& per_receiver_nc);

using CVec = std::vector<std::complex<double>>;

// Detection statistic. Receivers whose signature energy falls at or below
// 1e-30 are excluded with a warning; throws if every receiver is degenerate
// or the inputs are inconsistent.
double glrt_statistic(const std::vector<CVec>& snapshots,
                      const std::vector<CVec>& signatures,
                      double noise_power);

// Least-squares scalar gain estimate eta^H y / ||eta||^2.
std::complex<double> reflection_coefficient_estimate(const CVec& snapshot,
                                                     const CVec& signature);

namespace detail {

// Regularized upper incomplete gamma Q(a, y), a > 0, y >= 0. Canonical
// series / continued-fraction split at y < a + 1. Exposed for tests that
// need non-even chi-squared tail probabilities.
double regularized_gamma_q(double a, double y);

}  // namespace detail

}  // namespace cfisac
