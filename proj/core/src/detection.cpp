#include "cfisac/detection.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

namespace cfisac {

namespace {

constexpr double kSignatureEnergyFloor = 1e-30;

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

// Lower regularized gamma P(a, y) by power series.
double gamma_p_series(double a, double y) {
    double ap = a;
    double del = 1.0 / a;
    double sum = del;
    for (int k = 0; k < 10000; ++k) {
        ap += 1.0;
        del *= y / ap;
        sum += del;
        if (std::abs(del) < std::abs(sum) * 1e-17) break;
    }
    return sum * std::exp(-y + a * std::log(y) - std::lgamma(a));
}

// Upper regularized gamma Q(a, y) by modified Lentz continued fraction.
double gamma_q_contfrac(double a, double y) {
    const double tiny = 1e-300;
    double b = y + 1.0 - a;
    double c = 1.0 / tiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < 10000; ++i) {
        const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < tiny) d = tiny;
        c = b + an / c;
        if (std::abs(c) < tiny) c = tiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < 1e-16) break;
    }
    return std::exp(-y + a * std::log(y) - std::lgamma(a)) * h;
}

}  // namespace

namespace detail {

double regularized_gamma_q(double a, double y) {
    require(a > 0.0 && y >= 0.0, "gamma_q needs a > 0, y >= 0");
    if (y == 0.0) return 1.0;
    if (y < a + 1.0) return 1.0 - gamma_p_series(a, y);
    return gamma_q_contfrac(a, y);
}

}  // namespace detail

double chi2_ccdf(double x, int dof) {
    require(dof >= 1, "chi2_ccdf needs dof >= 1");
    if (x <= 0.0) return 1.0;
    const double a = 0.5 * dof;
    const double y = 0.5 * x;
    // Series below the mean, continued fraction at or above it.
    const double q = (x < static_cast<double>(dof)) ? 1.0 - gamma_p_series(a, y)
                                                    : gamma_q_contfrac(a, y);
    return std::clamp(q, 0.0, 1.0);
}

double chi2_ccdf_inverse(double p, int dof) {
    require(dof >= 1, "chi2_ccdf_inverse needs dof >= 1");
    require(p > 0.0 && p <= 1.0, "chi2_ccdf_inverse needs p in (0, 1]");
    if (p == 1.0) return 0.0;
    double hi = static_cast<double>(dof);
    while (chi2_ccdf(hi, dof) > p) hi *= 2.0;
    double lo = 0.0;
    for (int i = 0; i < 400; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (chi2_ccdf(mid, dof) > p) {
            lo = mid;
        } else {
            hi = mid;
        }
        if (hi - lo <= 1e-12 * std::max(1.0, hi)) break;
    }
    return 0.5 * (lo + hi);
}

double noncentral_chi2_ccdf(double x, int dof, double nc) {
    require(dof >= 2 && dof % 2 == 0,
            "noncentral_chi2_ccdf needs even dof >= 2");
    require(nc >= 0.0, "noncentral_chi2_ccdf needs nc >= 0");
    if (nc == 0.0) return chi2_ccdf(x, dof);
    if (x <= 0.0) return 1.0;

    const double h = 0.5 * nc;  // Poisson mixing rate
    const double q = 0.5 * x;
    const int m0 = dof / 2;

    // If even the smallest Poisson-plausible mixture index already has its
    // central CCDF equal to one at double precision, the mixture is one.
    const double j_low_plausible = std::max(0.0, h - 45.0 * std::sqrt(h) - 45.0);
    if (m0 + j_low_plausible > q + 45.0 * std::sqrt(q) + 46.0) return 1.0;

    const long j0 = static_cast<long>(h);
    const double log_w0 = -h + j0 * std::log(h) - std::lgamma(j0 + 1.0);
    const double w0 = std::exp(log_w0);
    const double t0 = chi2_ccdf(x, dof + 2 * static_cast<int>(j0));
    // Poisson pdf of q at index m0 + j - 1 links consecutive central CCDFs:
    // ccdf(x, dof + 2(j+1)) = ccdf(x, dof + 2j) + pdf(m0 + j)
    const double log_p0 =
        -q + (m0 + j0) * std::log(q) - std::lgamma(m0 + j0 + 1.0);
    const double p0 = std::exp(log_p0);

    // enough terms per direction to cover the Poisson spread around j0
    const long max_terms = 5000 + static_cast<long>(60.0 * std::sqrt(h));
    constexpr double kMassTail = 1e-12;
    constexpr double kWeightFloor = 1e-18;  // weights fall monotonically here

    double sum = w0 * t0;
    double mass = w0;

    // upward in j
    {
        double w = w0, t = t0, p = p0;
        for (long j = j0 + 1; j <= j0 + max_terms; ++j) {
            w *= h / static_cast<double>(j);
            t += p;
            if (t > 1.0) t = 1.0;
            p *= q / static_cast<double>(m0 + j);
            sum += w * t;
            mass += w;
            if (w < kWeightFloor || 1.0 - mass < kMassTail) break;
        }
    }
    // downward in j
    if (1.0 - mass >= kMassTail) {
        double w = w0, t = t0;
        double p = p0 * static_cast<double>(m0 + j0) / q;  // pdf at m0 + j0 - 1
        const long j_stop = std::max(0L, j0 - max_terms);
        for (long j = j0 - 1; j >= j_stop; --j) {
            w *= static_cast<double>(j + 1) / h;
            t -= p;
            if (t < 0.0) t = 0.0;
            p *= static_cast<double>(m0 + j) / q;
            sum += w * t;
            mass += w;
            if (w < kWeightFloor || 1.0 - mass < kMassTail) break;
        }
    }
    return std::clamp(sum, 0.0, 1.0);
}

double cfar_threshold(const DetectionSetup& setup) {
    require(setup.n_receivers >= 1, "need at least one receiver");
    return chi2_ccdf_inverse(setup.p_fa, 2 * setup.n_receivers);
}

double detection_probability(const DetectionSetup& setup,
                             const std::vector<double>& per_receiver_nc) {
    require(setup.n_receivers >= 1, "need at least one receiver");
    require(per_receiver_nc.size() == static_cast<size_t>(setup.n_receivers),
            "one non-centrality per receiver");
    double total = 0.0;
    for (double nc : per_receiver_nc) {
        require(nc >= 0.0, "non-centrality must be >= 0");
        total += nc;
    }
    const int dof = 2 * setup.n_receivers;
    return noncentral_chi2_ccdf(chi2_ccdf_inverse(setup.p_fa, dof), dof, total);
}

double glrt_statistic(const std::vector<CVec>& snapshots,
                      const std::vector<CVec>& signatures, double noise_power) {
    require(!snapshots.empty(), "at least one receiver required");
    require(snapshots.size() == signatures.size(),
            "snapshot/signature count mismatch");
    require(noise_power > 0.0, "noise power must be positive");

    double acc = 0.0;
    int used = 0;
    for (size_t n = 0; n < snapshots.size(); ++n) {
        const CVec& y = snapshots[n];
        const CVec& eta = signatures[n];
        require(y.size() == eta.size(), "snapshot/signature length mismatch");
        double energy = 0.0;
        for (const auto& e : eta) energy += std::norm(e);
        if (energy <= kSignatureEnergyFloor) {
            std::fprintf(stderr,
                         "[cfisac] warning: receiver %zu signature energy %g at "
                         "or below floor, excluded from statistic\n",
                         n, energy);
            continue;
        }
        std::complex<double> dot{0.0, 0.0};
        for (size_t m = 0; m < y.size(); ++m) dot += std::conj(eta[m]) * y[m];
        acc += std::norm(dot) / energy;
        ++used;
    }
    require(used > 0, "all receiver signatures degenerate");
    return acc / noise_power;
}

std::complex<double> reflection_coefficient_estimate(const CVec& snapshot,
                                                     const CVec& signature) {
    require(snapshot.size() == signature.size() && !snapshot.empty(),
            "snapshot/signature length mismatch");
    double energy = 0.0;
    for (const auto& e : signature) energy += std::norm(e);
    require(energy > kSignatureEnergyFloor, "degenerate signature");
    std::complex<double> dot{0.0, 0.0};
    for (size_t m = 0; m < snapshot.size(); ++m)
        dot += std::conj(signature[m]) * snapshot[m];
    return dot / energy;
}

}  // namespace cfisac
