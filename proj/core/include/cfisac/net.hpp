#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "cfisac/rng.hpp"

namespace cfisac {

using Mat = Eigen::MatrixXd;  // rows are batch samples
using Vec = Eigen::VectorXd;

enum class Activation { Linear, Relu, Sigmoid };

struct LayerSpec {
    int in = 0;
    int out = 0;
    Activation act = Activation::Linear;
    bool batch_norm = false;
};

// Fully connected feed-forward stack: affine, optional batch-norm, then the
// activation. forward() caches per-layer intermediates; backward() consumes
// them and accumulates parameter gradients, returning the input gradient.
// Instances are not safe for concurrent use.
class DenseNet {
public:
    DenseNet() = default;
    DenseNet(std::vector<LayerSpec> specs, Rng& rng);

    Mat forward(const Mat& x, bool train);
    // grad_out: dLoss/dOutput of the last forward(train=true) call.
    Mat backward(const Mat& grad_out);

    void zero_grads();
    // Handles are stable for the lifetime of the net: per layer W, b and,
    // for batch-norm layers, gamma then beta.
    std::vector<Mat*> params();
    std::vector<Mat*> grads();
    std::vector<const Mat*> params() const;

    int input_dim() const;
    int output_dim() const;
    const std::vector<LayerSpec>& specs() const { return specs_; }

    // Running batch-norm statistics, exposed for serialization.
    std::vector<std::pair<Vec, Vec>>& norm_stats() { return run_stats_; }
    const std::vector<std::pair<Vec, Vec>>& norm_stats() const { return run_stats_; }

    static constexpr double kNormEps = 1e-5;
    static constexpr double kNormMomentum = 0.9;

private:
    struct Layer {
        Mat w;  // in x out
        Mat b;  // 1 x out
        Mat gamma, beta;
        Mat gw, gb, ggamma, gbeta;
        // caches
        Mat x_in, z, z_hat, out;
        Vec mean, var;
        bool used_batch_stats = false;
    };

    std::vector<LayerSpec> specs_;
    std::vector<Layer> layers_;
    std::vector<std::pair<Vec, Vec>> run_stats_;  // running mean/var per layer
};

struct AdamConfig {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

// Adaptive-moment optimizer with bias correction. One instance per
// parameter set; the handle list must be identical on every call.
class Adam {
public:
    explicit Adam(const AdamConfig& cfg) : cfg_(cfg) {}

    void step(const std::vector<Mat*>& params, const std::vector<Mat*>& grads);
    void set_lr(double lr) { cfg_.lr = lr; }
    double lr() const { return cfg_.lr; }
    std::int64_t steps_taken() const { return t_; }

private:
    AdamConfig cfg_;
    std::int64_t t_ = 0;
    std::vector<Mat> m_, v_;
};

// Interleaved sin/cos positional code of a beam index: pair i of dim/2 uses
// divisor 1000^(2i/dim). dim must be even and >= 2.
std::vector<double> sinusoidal_embedding(double mu, int dim);

// Odd sigmoid rescaled to fix sigma_v(0) = 0 and sigma_v(1) = 1; steepness
// b3 sharpens resolution near zero where detection probabilities cluster.
// Inputs outside [0,1] saturate, so the derivative vanishes there.
double variant_sigmoid(double x, double b3 = 5.0);
double variant_sigmoid_deriv(double x, double b3 = 5.0);

/// Versioned checkpoint: JSON header describing each net's layer stack,
// then raw little-endian doubles. The loader rebuilds the nets and
// validates payload size against the declared shapes.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const DenseNet*>>& nets,
                     const std::map<std::string, std::string>& meta = {});

struct Checkpoint {
    std::map<std::string, DenseNet> nets;
    std::map<std::string, std::string> meta;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace cfisac
