#include "cfisac/net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace cfisac {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

Mat apply_activation(const Mat& z, Activation act) {
    switch (act) {
        case Activation::Linear:
            return z;
        case Activation::Relu:
            return z.cwiseMax(0.0);
        case Activation::Sigmoid:
            return ((-z.array()).exp() + 1.0).inverse().matrix();
    }
    throw std::logic_error("unknown activation");
}

Mat activation_grad(const Mat& g, const Mat& out, Activation act) {
    switch (act) {
        case Activation::Linear:
            return g;
        case Activation::Relu:
            return (out.array() > 0.0).select(g, Mat::Zero(g.rows(), g.cols()));
        case Activation::Sigmoid:
            return (g.array() * out.array() * (1.0 - out.array())).matrix();
    }
    throw std::logic_error("unknown activation");
}

const char* act_name(Activation a) {
    switch (a) {
        case Activation::Linear: return "linear";
        case Activation::Relu: return "relu";
        case Activation::Sigmoid: return "sigmoid";
    }
    return "?";
}

Activation act_from_name(const std::string& s) {
    if (s == "linear") return Activation::Linear;
    if (s == "relu") return Activation::Relu;
    if (s == "sigmoid") return Activation::Sigmoid;
    throw std::runtime_error("unknown activation name: " + s);
}

}  // namespace

DenseNet::DenseNet(std::vector<LayerSpec> specs, Rng& rng) : specs_(std::move(specs)) {
    require(!specs_.empty(), "network needs at least one layer");
    layers_.resize(specs_.size());
    run_stats_.resize(specs_.size());
    for (size_t l = 0; l < specs_.size(); ++l) {
        const auto& s = specs_[l];
        require(s.in >= 1 && s.out >= 1, "layer dims must be >= 1");
        if (l > 0) require(s.in == specs_[l - 1].out, "layer dims must chain");
        auto& L = layers_[l];
        const double bound = 1.0 / std::sqrt(static_cast<double>(s.in));
        L.w = Mat::NullaryExpr(s.in, s.out, [&]() { return rng.uniform(-bound, bound); });
        L.b = Mat::Zero(1, s.out);
        L.gw = Mat::Zero(s.in, s.out);
        L.gb = Mat::Zero(1, s.out);
        if (s.batch_norm) {
            L.gamma = Mat::Ones(1, s.out);
            L.beta = Mat::Zero(1, s.out);
            L.ggamma = Mat::Zero(1, s.out);
            L.gbeta = Mat::Zero(1, s.out);
            run_stats_[l] = {Vec::Zero(s.out), Vec::Ones(s.out)};
        }
    }
}

Mat DenseNet::forward(const Mat& x, bool train) {
    require(!layers_.empty(), "forward on an empty network");
    require(x.cols() == specs_.front().in, "input width mismatch");
    require(x.rows() >= 1, "empty batch");
    Mat cur = x;
    for (size_t l = 0; l < layers_.size(); ++l) {
        auto& L = layers_[l];
        const auto& s = specs_[l];
        if (train) L.x_in = cur;
        Mat z = cur * L.w;
        z.rowwise() += L.b.row(0);
        if (s.batch_norm) {
            Vec mean, var;
            if (train) {
                mean = z.colwise().mean().transpose();
                Mat centered = z.rowwise() - mean.transpose();
                var = centered.array().square().colwise().mean().transpose();
                auto& [rm, rv] = run_stats_[l];
                rm = kNormMomentum * rm + (1.0 - kNormMomentum) * mean;
                rv = kNormMomentum * rv + (1.0 - kNormMomentum) * var;
                L.mean = mean;
                L.var = var;
                L.used_batch_stats = true;
            } else {
                mean = run_stats_[l].first;
                var = run_stats_[l].second;
                L.used_batch_stats = false;
            }
            const Vec inv_std = (var.array() + kNormEps).rsqrt();
            Mat z_hat = z.rowwise() - mean.transpose();
            z_hat = z_hat.array().rowwise() * inv_std.transpose().array();
            if (train) {
                L.z = z;
                L.z_hat = z_hat;
            }
            Mat y = z_hat.array().rowwise() * L.gamma.row(0).array();
            y.rowwise() += L.beta.row(0);
            cur = apply_activation(y, s.act);
        } else {
            if (train) {
                L.z = z;
                L.z_hat.resize(0, 0);
            }
            cur = apply_activation(z, s.act);
        }
        if (train) L.out = cur;
    }
    return cur;
}

Mat DenseNet::backward(const Mat& grad_out) {
    require(!layers_.empty(), "backward on an empty network");
    require(layers_.front().x_in.size() > 0, "backward requires a train-mode forward");
    Mat g = grad_out;
    for (size_t li = layers_.size(); li-- > 0;) {
        auto& L = layers_[li];
        const auto& s = specs_[li];
        require(g.rows() == L.out.rows() && g.cols() == L.out.cols(),
                "gradient shape mismatch");
        g = activation_grad(g, L.out, s.act);

        Mat dz;
        if (s.batch_norm) {
            L.ggamma.row(0) += (g.array() * L.z_hat.array()).colwise().sum().matrix();
            L.gbeta.row(0) += g.colwise().sum();
            Mat dzh = g.array().rowwise() * L.gamma.row(0).array();
            if (L.used_batch_stats) {
                const double B = static_cast<double>(g.rows());
                const Vec inv_std = (L.var.array() + kNormEps).rsqrt();
                Mat zc = L.z.rowwise() - L.mean.transpose();
                const Vec dvar =
                    ((dzh.array() * zc.array()).colwise().sum().transpose().array() *
                     (-0.5) * inv_std.array().cube())
                        .matrix();
                const Vec dmean =
                    (-(dzh.colwise().sum().transpose().array() * inv_std.array()) +
                     dvar.array() * (-2.0 / B) * zc.colwise().sum().transpose().array())
                        .matrix();
                dz = dzh.array().rowwise() * inv_std.transpose().array();
                dz.array() += zc.array().rowwise() * (dvar.transpose().array() * (2.0 / B));
                dz.array().rowwise() += (dmean.transpose().array() / B);
            } else {
                const Vec inv_std = (run_stats_[li].second.array() + kNormEps).rsqrt();
                dz = dzh.array().rowwise() * inv_std.transpose().array();
            }
        } else {
            dz = std::move(g);
        }

        L.gw += L.x_in.transpose() * dz;
        L.gb.row(0) += dz.colwise().sum();
        g = dz * L.w.transpose();
    }
    return g;
}

void DenseNet::zero_grads() {
    for (auto& L : layers_) {
        L.gw.setZero();
        L.gb.setZero();
        if (L.ggamma.size() > 0) L.ggamma.setZero();
        if (L.gbeta.size() > 0) L.gbeta.setZero();
    }
}

std::vector<Mat*> DenseNet::params() {
    std::vector<Mat*> out;
    for (size_t l = 0; l < layers_.size(); ++l) {
        out.push_back(&layers_[l].w);
        out.push_back(&layers_[l].b);
        if (specs_[l].batch_norm) {
            out.push_back(&layers_[l].gamma);
            out.push_back(&layers_[l].beta);
        }
    }
    return out;
}

std::vector<const Mat*> DenseNet::params() const {
    std::vector<const Mat*> out;
    for (size_t l = 0; l < layers_.size(); ++l) {
        out.push_back(&layers_[l].w);
        out.push_back(&layers_[l].b);
        if (specs_[l].batch_norm) {
            out.push_back(&layers_[l].gamma);
            out.push_back(&layers_[l].beta);
        }
    }
    return out;
}

std::vector<Mat*> DenseNet::grads() {
    std::vector<Mat*> out;
    for (size_t l = 0; l < layers_.size(); ++l) {
        out.push_back(&layers_[l].gw);
        out.push_back(&layers_[l].gb);
        if (specs_[l].batch_norm) {
            out.push_back(&layers_[l].ggamma);
            out.push_back(&layers_[l].gbeta);
        }
    }
    return out;
}

int DenseNet::input_dim() const { return specs_.empty() ? 0 : specs_.front().in; }
int DenseNet::output_dim() const { return specs_.empty() ? 0 : specs_.back().out; }

void Adam::step(const std::vector<Mat*>& params, const std::vector<Mat*>& grads) {
    require(params.size() == grads.size(), "params/grads size mismatch");
    if (m_.empty()) {
        m_.reserve(params.size());
        v_.reserve(params.size());
        for (const Mat* p : params) {
            m_.push_back(Mat::Zero(p->rows(), p->cols()));
            v_.push_back(Mat::Zero(p->rows(), p->cols()));
        }
    }
    require(m_.size() == params.size(), "optimizer bound to a different parameter set");
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (size_t i = 0; i < params.size(); ++i) {
        Mat& p = *params[i];
        const Mat& g = *grads[i];
        require(p.rows() == g.rows() && p.cols() == g.cols(), "grad shape mismatch");
        require(g.allFinite(), "non-finite gradient");
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        p.array() -= cfg_.lr * (m_[i].array() / bc1) /
                     ((v_[i].array() / bc2).sqrt() + cfg_.eps);
    }
}

std::vector<double> sinusoidal_embedding(double mu, int dim) {
    require(dim >= 2 && dim % 2 == 0, "embedding dim must be even and >= 2");
    std::vector<double> emb(dim);
    for (int i = 1; i <= dim / 2; ++i) {
        const double div = std::pow(1000.0, 2.0 * i / dim);
        emb[2 * i - 2] = std::sin(mu / div);
        emb[2 * i - 1] = std::cos(mu / div);
    }
    return emb;
}

double variant_sigmoid(double x, double b3) {
    require(b3 > 0.0, "b3 must be positive");
    x = std::clamp(x, 0.0, 1.0);  // probabilities only; saturate outside
    const double denom = 1.0 / (1.0 + std::exp(-b3)) - 0.5;
    const double s = 1.0 / (1.0 + std::exp(-b3 * x));
    return (s - 0.5) / denom;
}

double variant_sigmoid_deriv(double x, double b3) {
    require(b3 > 0.0, "b3 must be positive");
    if (x < 0.0 || x > 1.0) return 0.0;  // flat where the value saturates
    const double denom = 1.0 / (1.0 + std::exp(-b3)) - 0.5;
    const double s = 1.0 / (1.0 + std::exp(-b3 * x));
    return b3 * s * (1.0 - s) / denom;
}

namespace {

constexpr char kMagic[8] = {'C', 'F', 'I', 'S', 'A', 'C', '0', '1'};

void append_net_payload(std::ofstream& out, const DenseNet& net) {
    const auto params = net.params();
    for (const Mat* p : params) {
        out.write(reinterpret_cast<const char*>(p->data()),
                  static_cast<std::streamsize>(sizeof(double) * p->size()));
    }
    for (size_t l = 0; l < net.specs().size(); ++l) {
        if (!net.specs()[l].batch_norm) continue;
        const auto& [rm, rv] = net.norm_stats()[l];
        out.write(reinterpret_cast<const char*>(rm.data()),
                  static_cast<std::streamsize>(sizeof(double) * rm.size()));
        out.write(reinterpret_cast<const char*>(rv.data()),
                  static_cast<std::streamsize>(sizeof(double) * rv.size()));
    }
}

}  // namespace

void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, const DenseNet*>>& nets,
                     const std::map<std::string, std::string>& meta) {
    nlohmann::json header;
    header["version"] = 1;
    header["meta"] = meta;
    nlohmann::json jnets = nlohmann::json::array();
    for (const auto& [name, net] : nets) {
        nlohmann::json jn;
        jn["name"] = name;
        nlohmann::json layers = nlohmann::json::array();
        for (const auto& s : net->specs()) {
            layers.push_back({{"in", s.in},
                              {"out", s.out},
                              {"act", act_name(s.act)},
                              {"bn", s.batch_norm}});
        }
        jn["layers"] = layers;
        jnets.push_back(jn);
    }
    header["nets"] = jnets;
    const std::string hs = header.dump();

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
    out.write(kMagic, sizeof(kMagic));
    const std::uint32_t hlen = static_cast<std::uint32_t>(hs.size());
    out.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    out.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, net] : nets) append_net_payload(out, *net);
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
    char magic[8];
    in.read(magic, sizeof(magic));
    if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("bad checkpoint magic: " + path);
    std::uint32_t hlen = 0;
    in.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    in.read(hs.data(), hlen);
    if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
    const auto header = nlohmann::json::parse(hs);
    if (header.at("version").get<int>() != 1)
        throw std::runtime_error("unsupported checkpoint version");

    Checkpoint ck;
    if (header.contains("meta")) {
        for (const auto& [k, v] : header["meta"].items())
            ck.meta[k] = v.get<std::string>();
    }
    Rng zero(0);
    for (const auto& jn : header.at("nets")) {
        std::vector<LayerSpec> specs;
        for (const auto& jl : jn.at("layers")) {
            specs.push_back({jl.at("in").get<int>(), jl.at("out").get<int>(),
                             act_from_name(jl.at("act").get<std::string>()),
                             jl.at("bn").get<bool>()});
        }
        DenseNet net(specs, zero);
        for (Mat* p : net.params()) {
            in.read(reinterpret_cast<char*>(p->data()),
                    static_cast<std::streamsize>(sizeof(double) * p->size()));
        }
        for (size_t l = 0; l < specs.size(); ++l) {
            if (!specs[l].batch_norm) continue;
            auto& [rm, rv] = net.norm_stats()[l];
            in.read(reinterpret_cast<char*>(rm.data()),
                    static_cast<std::streamsize>(sizeof(double) * rm.size()));
            in.read(reinterpret_cast<char*>(rv.data()),
                    static_cast<std::streamsize>(sizeof(double) * rv.size()));
        }
        if (!in) throw std::runtime_error("checkpoint payload shorter than declared shapes");
        ck.nets.emplace(jn.at("name").get<std::string>(), std::move(net));
    }
    return ck;
}

}  // namespace cfisac
