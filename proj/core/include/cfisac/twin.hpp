#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfisac/env.hpp"
#include "cfisac/net.hpp"

namespace cfisac {

struct TwinConfig {
    int latent_dim = 16;
    int embed_dim = 16;  // sinusoidal code width per beam index
    int hidden = 128;
    int hidden_layers = 3;
    double lr = 2e-4;
    double lr_decay = 1.0;  // per-epoch multiplicative decay, 1 disables
    double adam_beta1 = 0.5;
    double adam_beta2 = 0.999;
    int batch_size = 64;
    int epochs = 100;
    int d_steps_per_g = 1;
    double b3 = 5.0;      // steepness of the probability encoding
    double pd_floor = 0.0;  // smallest outcome the modelled detector can emit
};

// Condition vector [code(mu_next), code(mu_cur), rescaled pd_cur, fg_cur],
// length 2 * embed_dim + 2.
std::vector<double> encode_condition(int mu_next, int mu_cur, double pd_cur,
                                     int fg_cur, int embed_dim, double b3 = 5.0);

// Conditional generator/critic pair over next-probe detection probability.
// The generator maps [noise, condition] to pd_next through a sigmoid output;
// the critic scores [rescaled pd_next, condition].
struct TwinModel {
    TwinConfig cfg;
    DenseNet gen;
    DenseNet dis;
    bool trained = false;

    int cond_dim() const { return 2 * cfg.embed_dim + 2; }

    // One synthetic probe outcome, evaluation mode. Clamped to
    // [pd_floor, 1]: a threshold detector never reports below its
    // false-alarm rate, so neither does its surrogate.
    double sample(int mu_next, int mu_cur, double pd_cur, int fg_cur, Rng& rng);
};

TwinModel make_twin(const TwinConfig& cfg, Rng& rng);

void save_twin(const std::string& path, const TwinModel& model);
TwinModel load_twin(const std::string& path);

struct TwinEpochStats {
    int epoch = 0;
    double loss_g = 0.0;  // -mean log D(fake), 0.693 at equilibrium
    double loss_d = 0.0;  // -mean log D(real) - mean log(1-D(fake)), 1.386
    double d_real = 0.0;  // mean critic score on data
    double d_fake = 0.0;  // mean critic score on generated samples
};

// Adversarial training on recorded transitions. Batches alternate critic and
// generator updates; epoch statistics are means over the epoch's batches.
std::vector<TwinEpochStats> train_twin(TwinModel& model,
                                       const std::vector<Transition>& data,
                                       Rng& rng);

void write_twin_metrics_csv(const std::string& path,
                            const std::vector<TwinEpochStats>& stats);

// Non-saturating adversarial losses, exposed for direct unit checks.
double generator_loss(const Vec& d_fake);
double discriminator_loss(const Vec& d_real, const Vec& d_fake);

// Initial states of recorded tasks (rows with step == 1).
std::vector<MdpState> episode_start_states(const std::vector<Transition>& data);

// Synthetic environment: probes are answered by the twin instead of the
// scene. Tasks restart from recorded initial states, so interaction never
// touches the detector.
class TwinEnv : public Environment {
public:
    TwinEnv(TwinModel* model, std::vector<MdpState> start_states,
            const EnvParams& params, int codebook_size);

    MdpState reset(Rng& rng) override;
    Transition step(int action_index, Rng& rng) override;

    const MdpState& state() const override { return state_; }
    bool done() const override { return !active_; }
    int codebook_size() const override { return codebook_; }
    const EnvParams& params() const override { return params_; }
    std::uint64_t probe_count() const override { return probes_; }
    std::uint64_t reset_count() const override { return resets_; }
    bool is_synthetic() const override { return true; }

private:
    TwinModel* model_;
    std::vector<MdpState> starts_;
    EnvParams params_;
    int codebook_;
    MdpState state_;
    std::uint64_t episode_ = 0;
    int t_ = 0;
    bool active_ = false;
    std::uint64_t probes_ = 0;
    std::uint64_t resets_ = 0;
};

// KL divergence between two discrete distributions (same support).
double kl_discrete(const std::vector<double>& p, const std::vector<double>& q);

// Add-one smoothed histogram over [lo, hi]: (count + 1) / (n + bins).
std::vector<double> smoothed_histogram(const std::vector<double>& x, int bins,
                                       double lo, double hi);

// KL of the binned sample distributions, generated relative to real.
double kl_divergence(const std::vector<double>& gen,
                     const std::vector<double>& real, int bins = 50,
                     double lo = 0.0, double hi = 1.0);

// Exact first Wasserstein distance between empirical distributions.
double w1_distance(std::vector<double> a, std::vector<double> b);

// Unbiased squared-MMD estimate with a Gaussian kernel, median-distance
// bandwidth; returns sqrt of the positive part.
double mmd_gaussian(const std::vector<double>& a, const std::vector<double>& b);

struct FidelityStats {
    double kl = 0.0;
    double w1 = 0.0;
    double mmd = 0.0;
    std::size_t n = 0;  // paired sample count
};

FidelityStats compare_samples(const std::vector<double>& gen,
                              const std::vector<double>& real);

// Draws one twin sample per held-out transition under the recorded condition
// and compares the pooled outcome distributions.
FidelityStats twin_fidelity(TwinModel& model,
                            const std::vector<Transition>& held_out, Rng& rng);

struct FidelityBucket {
    double lo = 0.0;  // pd_cur range of the conditions pooled here
    double hi = 0.0;
    FidelityStats stats;
};

// Same comparison restricted to conditions whose pd_cur falls in each
// [edges[i], edges[i+1]) range.
std::vector<FidelityBucket> twin_fidelity_buckets(
    TwinModel& model, const std::vector<Transition>& held_out, Rng& rng,
    const std::vector<double>& edges = {0.0, 0.2, 0.5, 0.8, 1.0});

}  // namespace cfisac
