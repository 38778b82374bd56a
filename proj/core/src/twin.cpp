#include "cfisac/twin.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace cfisac {

namespace {

constexpr double kProbEps = 1e-12;  // keeps log/denominators finite

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

double clamp_prob(double p) { return std::min(std::max(p, kProbEps), 1.0 - kProbEps); }

// Deterministic strided subsample, at most cap points.
std::vector<double> strided(const std::vector<double>& x, std::size_t cap) {
    if (x.size() <= cap) return x;
    std::vector<double> out;
    out.reserve(cap);
    const std::size_t step = (x.size() + cap - 1) / cap;
    for (std::size_t i = 0; i < x.size(); i += step) out.push_back(x[i]);
    return out;
}

}  // namespace

std::vector<double> encode_condition(int mu_next, int mu_cur, double pd_cur,
                                     int fg_cur, int embed_dim, double b3) {
    std::vector<double> u = sinusoidal_embedding(static_cast<double>(mu_next), embed_dim);
    const std::vector<double> cur = sinusoidal_embedding(static_cast<double>(mu_cur), embed_dim);
    u.insert(u.end(), cur.begin(), cur.end());
    u.push_back(variant_sigmoid(pd_cur, b3));
    u.push_back(static_cast<double>(fg_cur));
    return u;
}

TwinModel make_twin(const TwinConfig& cfg, Rng& rng) {
    require(cfg.latent_dim >= 1 && cfg.embed_dim >= 2 && cfg.hidden >= 1 &&
                cfg.hidden_layers >= 1,
            "bad twin dimensions");
    require(cfg.pd_floor >= 0.0 && cfg.pd_floor < 1.0, "bad outcome floor");
    TwinModel m;
    m.cfg = cfg;
    const int cond = 2 * cfg.embed_dim + 2;

    std::vector<LayerSpec> g;
    g.push_back({cfg.latent_dim + cond, cfg.hidden, Activation::Relu, true});
    for (int l = 1; l < cfg.hidden_layers; ++l)
        g.push_back({cfg.hidden, cfg.hidden, Activation::Relu, true});
    g.push_back({cfg.hidden, 1, Activation::Sigmoid, false});
    m.gen = DenseNet(g, rng);

    std::vector<LayerSpec> d;
    d.push_back({1 + cond, cfg.hidden, Activation::Relu, false});
    for (int l = 1; l < cfg.hidden_layers; ++l)
        d.push_back({cfg.hidden, cfg.hidden, Activation::Relu, false});
    d.push_back({cfg.hidden, 1, Activation::Sigmoid, false});
    m.dis = DenseNet(d, rng);
    return m;
}

double TwinModel::sample(int mu_next, int mu_cur, double pd_cur, int fg_cur, Rng& rng) {
    const std::vector<double> u = encode_condition(mu_next, mu_cur, pd_cur, fg_cur,
                                                   cfg.embed_dim, cfg.b3);
    Mat x(1, cfg.latent_dim + static_cast<int>(u.size()));
    for (int i = 0; i < cfg.latent_dim; ++i) x(0, i) = rng.normal();
    for (std::size_t i = 0; i < u.size(); ++i)
        x(0, cfg.latent_dim + static_cast<Eigen::Index>(i)) = u[i];
    const double pd = gen.forward(x, false)(0, 0);
    return std::min(std::max(pd, cfg.pd_floor), 1.0);
}

void save_twin(const std::string& path, const TwinModel& model) {
    std::map<std::string, std::string> meta;
    meta["kind"] = "twin";
    meta["latent_dim"] = std::to_string(model.cfg.latent_dim);
    meta["embed_dim"] = std::to_string(model.cfg.embed_dim);
    meta["hidden"] = std::to_string(model.cfg.hidden);
    meta["hidden_layers"] = std::to_string(model.cfg.hidden_layers);
    meta["b3"] = std::to_string(model.cfg.b3);
    meta["pd_floor"] = std::to_string(model.cfg.pd_floor);
    save_checkpoint(path, {{"generator", &model.gen}, {"discriminator", &model.dis}},
                    meta);
}

TwinModel load_twin(const std::string& path) {
    Checkpoint ck = load_checkpoint(path);
    if (ck.meta.count("kind") && ck.meta.at("kind") != "twin")
        throw std::runtime_error("checkpoint does not hold a twin model: " + path);
    TwinConfig cfg;
    cfg.latent_dim = std::stoi(ck.meta.at("latent_dim"));
    cfg.embed_dim = std::stoi(ck.meta.at("embed_dim"));
    cfg.hidden = std::stoi(ck.meta.at("hidden"));
    cfg.hidden_layers = std::stoi(ck.meta.at("hidden_layers"));
    cfg.b3 = std::stod(ck.meta.at("b3"));
    if (ck.meta.count("pd_floor")) cfg.pd_floor = std::stod(ck.meta.at("pd_floor"));
    TwinModel m;
    m.cfg = cfg;
    m.gen = ck.nets.at("generator");
    m.dis = ck.nets.at("discriminator");
    if (m.gen.input_dim() != cfg.latent_dim + m.cond_dim() ||
        m.dis.input_dim() != 1 + m.cond_dim())
        throw std::runtime_error("twin checkpoint shape mismatch: " + path);
    m.trained = true;
    return m;
}

double generator_loss(const Vec& d_fake) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < d_fake.size(); ++i) s -= std::log(clamp_prob(d_fake(i)));
    return s / static_cast<double>(d_fake.size());
}

double discriminator_loss(const Vec& d_real, const Vec& d_fake) {
    double s = 0.0;
    for (Eigen::Index i = 0; i < d_real.size(); ++i) s -= std::log(clamp_prob(d_real(i)));
    for (Eigen::Index i = 0; i < d_fake.size(); ++i)
        s -= std::log(1.0 - clamp_prob(d_fake(i)));
    return s / static_cast<double>(d_real.size());
}

std::vector<TwinEpochStats> train_twin(TwinModel& model,
                                       const std::vector<Transition>& data,
                                       Rng& rng) {
    const TwinConfig& cfg = model.cfg;
    const int B = cfg.batch_size;
    require(static_cast<int>(data.size()) >= B, "dataset smaller than one batch");
    const int cond_dim = model.cond_dim();
    require(model.gen.input_dim() == cfg.latent_dim + cond_dim &&
                model.dis.input_dim() == 1 + cond_dim,
            "model does not match its config");

    Adam opt_g({cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});
    Adam opt_d({cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8});

    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);

    const auto fill_cond = [&](Mat& dst, int col0, const Transition& t,
                               Eigen::Index row) {
        const auto u = encode_condition(t.next.mu, t.s.mu, t.s.pd, t.s.fg,
                                        cfg.embed_dim, cfg.b3);
        for (int j = 0; j < cond_dim; ++j) dst(row, col0 + j) = u[j];
    };

    std::vector<TwinEpochStats> out;
    out.reserve(cfg.epochs);
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        if (cfg.lr_decay != 1.0) {
            const double lr = cfg.lr * std::pow(cfg.lr_decay, epoch);
            opt_g.set_lr(lr);
            opt_d.set_lr(lr);
        }
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j =
                static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(i) - 1));
            std::swap(order[i - 1], order[j]);
        }

        TwinEpochStats st;
        st.epoch = epoch;
        int batches = 0;
        for (std::size_t start = 0; start + B <= order.size(); start += B) {
            Mat cond(B, cond_dim);
            Vec real_pd(B);
            for (int r = 0; r < B; ++r) {
                const Transition& t = data[order[start + r]];
                fill_cond(cond, 0, t, r);
                real_pd(r) = t.next.pd;
            }

            // critic update(s): real batch up, generated batch down
            double loss_d = 0.0, mean_dr = 0.0, mean_df = 0.0;
            for (int ds = 0; ds < cfg.d_steps_per_g; ++ds) {
                model.dis.zero_grads();

                Mat xr(B, 1 + cond_dim);
                for (int r = 0; r < B; ++r) xr(r, 0) = variant_sigmoid(real_pd(r), cfg.b3);
                xr.rightCols(cond_dim) = cond;
                const Mat dr = model.dis.forward(xr, true);
                Mat grad_r(B, 1);
                for (int r = 0; r < B; ++r) grad_r(r, 0) = -1.0 / (B * clamp_prob(dr(r, 0)));
                model.dis.backward(grad_r);

                Mat xg(B, cfg.latent_dim + cond_dim);
                for (int r = 0; r < B; ++r)
                    for (int c = 0; c < cfg.latent_dim; ++c) xg(r, c) = rng.normal();
                xg.rightCols(cond_dim) = cond;
                const Mat fake = model.gen.forward(xg, true);
                Mat xf(B, 1 + cond_dim);
                for (int r = 0; r < B; ++r) xf(r, 0) = variant_sigmoid(fake(r, 0), cfg.b3);
                xf.rightCols(cond_dim) = cond;
                const Mat df = model.dis.forward(xf, true);
                Mat grad_f(B, 1);
                for (int r = 0; r < B; ++r)
                    grad_f(r, 0) = 1.0 / (B * (1.0 - clamp_prob(df(r, 0))));
                model.dis.backward(grad_f);

                opt_d.step(model.dis.params(), model.dis.grads());
                loss_d = discriminator_loss(dr.col(0), df.col(0));
                mean_dr = dr.col(0).mean();
            }

            // generator update: backprop through the critic's input
            model.gen.zero_grads();
            model.dis.zero_grads();
            Mat xg(B, cfg.latent_dim + cond_dim);
            for (int r = 0; r < B; ++r)
                for (int c = 0; c < cfg.latent_dim; ++c) xg(r, c) = rng.normal();
            xg.rightCols(cond_dim) = cond;
            const Mat fake = model.gen.forward(xg, true);
            Mat xf(B, 1 + cond_dim);
            for (int r = 0; r < B; ++r) xf(r, 0) = variant_sigmoid(fake(r, 0), cfg.b3);
            xf.rightCols(cond_dim) = cond;
            const Mat df = model.dis.forward(xf, true);
            Mat grad_d(B, 1);
            for (int r = 0; r < B; ++r) grad_d(r, 0) = -1.0 / (B * clamp_prob(df(r, 0)));
            const Mat din = model.dis.backward(grad_d);
            Mat grad_fake(B, 1);
            for (int r = 0; r < B; ++r)
                grad_fake(r, 0) = din(r, 0) * variant_sigmoid_deriv(fake(r, 0), cfg.b3);
            model.gen.backward(grad_fake);
            opt_g.step(model.gen.params(), model.gen.grads());

            mean_df = df.col(0).mean();
            st.loss_g += generator_loss(df.col(0));
            st.loss_d += loss_d;
            st.d_real += mean_dr;
            st.d_fake += mean_df;
            ++batches;
        }
        require(batches > 0, "dataset smaller than one batch");
        st.loss_g /= batches;
        st.loss_d /= batches;
        st.d_real /= batches;
        st.d_fake /= batches;
        out.push_back(st);
    }
    model.trained = true;
    return out;
}

void write_twin_metrics_csv(const std::string& path,
                            const std::vector<TwinEpochStats>& stats) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics: " + path);
    out << "epoch,loss_g,loss_d,d_real,d_fake\n";
    char buf[192];
    for (const auto& s : stats) {
        std::snprintf(buf, sizeof(buf), "%d,%.10g,%.10g,%.10g,%.10g\n", s.epoch,
                      s.loss_g, s.loss_d, s.d_real, s.d_fake);
        out << buf;
    }
}

std::vector<MdpState> episode_start_states(const std::vector<Transition>& data) {
    std::vector<MdpState> out;
    for (const auto& t : data)
        if (t.step == 1) out.push_back(t.s);
    return out;
}

TwinEnv::TwinEnv(TwinModel* model, std::vector<MdpState> start_states,
                 const EnvParams& params, int codebook_size)
    : model_(model),
      starts_(std::move(start_states)),
      params_(params),
      codebook_(codebook_size) {
    require(model_ != nullptr, "twin environment needs a model");
    require(model_->trained, "twin environment needs a trained model");
    require(!starts_.empty(), "twin environment needs recorded start states");
    require(codebook_ >= 2, "codebook must have at least two beams");
    for (const auto& s : starts_)
        require(s.mu >= 0 && s.mu < codebook_, "start state outside the codebook");
}

MdpState TwinEnv::reset(Rng& rng) {
    state_ = starts_[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<int>(starts_.size()) - 1))];
    ++episode_;
    ++resets_;
    t_ = 0;
    active_ = true;
    return state_;
}

Transition TwinEnv::step(int action_index, Rng& rng) {
    if (!active_) throw std::logic_error("step on a finished episode");
    require(action_index >= 0 && action_index < num_actions(params_.tau),
            "action index out of range");
    const int mu_next = std::clamp(state_.mu + action_delta(action_index, params_.tau),
                                   0, codebook_ - 1);
    const double pd_next =
        model_->sample(mu_next, state_.mu, state_.pd, state_.fg, rng);
    ++probes_;
    ++t_;
    const StepOutcome o =
        finish_step(state_, action_index, pd_next, params_, t_, codebook_);
    Transition tr;
    tr.episode = episode_;
    tr.step = t_;
    tr.s = state_;
    tr.action = action_index;
    tr.reward_base = o.reward_base;
    tr.reward_shaped = o.reward_shaped;
    tr.next = o.next;
    tr.done = o.done;
    state_ = o.next;
    active_ = !o.done;
    return tr;
}

double kl_discrete(const std::vector<double>& p, const std::vector<double>& q) {
    require(p.size() == q.size() && !p.empty(), "distributions must match in size");
    double sp = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        require(p[i] >= 0.0 && q[i] >= 0.0, "negative mass");
        sp += p[i];
        sq += q[i];
    }
    require(sp > 0.0 && sq > 0.0, "empty distribution");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = p[i] / sp;
        if (pi == 0.0) continue;
        const double qi = q[i] / sq;
        if (qi == 0.0) return std::numeric_limits<double>::infinity();
        kl += pi * std::log(pi / qi);
    }
    return kl;
}

std::vector<double> smoothed_histogram(const std::vector<double>& x, int bins,
                                       double lo, double hi) {
    require(bins >= 1, "need at least one bin");
    require(hi > lo, "empty range");
    std::vector<double> counts(static_cast<std::size_t>(bins), 0.0);
    const double w = (hi - lo) / bins;
    for (double v : x) {
        int b = static_cast<int>(std::floor((v - lo) / w));
        b = std::clamp(b, 0, bins - 1);
        counts[static_cast<std::size_t>(b)] += 1.0;
    }
    const double denom = static_cast<double>(x.size()) + bins;
    for (double& c : counts) c = (c + 1.0) / denom;
    return counts;
}

double kl_divergence(const std::vector<double>& gen, const std::vector<double>& real,
                     int bins, double lo, double hi) {
    return kl_discrete(smoothed_histogram(gen, bins, lo, hi),
                       smoothed_histogram(real, bins, lo, hi));
}

double w1_distance(std::vector<double> a, std::vector<double> b) {
    require(!a.empty() && !b.empty(), "empty sample set");
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const double na = static_cast<double>(a.size());
    const double nb = static_cast<double>(b.size());
    std::size_t ia = 0, ib = 0;
    double prev = std::min(a.front(), b.front());
    double acc = 0.0;
    while (ia < a.size() || ib < b.size()) {
        const double xa = ia < a.size() ? a[ia] : std::numeric_limits<double>::infinity();
        const double xb = ib < b.size() ? b[ib] : std::numeric_limits<double>::infinity();
        const double x = std::min(xa, xb);
        acc += std::abs(ia / na - ib / nb) * (x - prev);
        while (ia < a.size() && a[ia] == x) ++ia;
        while (ib < b.size() && b[ib] == x) ++ib;
        prev = x;
    }
    return acc;
}

double mmd_gaussian(const std::vector<double>& a, const std::vector<double>& b) {
    require(a.size() >= 2 && b.size() >= 2, "need at least two samples per set");
    const std::vector<double> xa = strided(a, 4000);
    const std::vector<double> xb = strided(b, 4000);

    std::vector<double> pooled = strided(xa, 1000);
    const std::vector<double> pb = strided(xb, 1000);
    pooled.insert(pooled.end(), pb.begin(), pb.end());
    std::vector<double> dists;
    dists.reserve(pooled.size() * (pooled.size() - 1) / 2);
    for (std::size_t i = 0; i < pooled.size(); ++i)
        for (std::size_t j = i + 1; j < pooled.size(); ++j)
            dists.push_back(std::abs(pooled[i] - pooled[j]));
    auto mid = dists.begin() + static_cast<std::ptrdiff_t>(dists.size() / 2);
    std::nth_element(dists.begin(), mid, dists.end());
    double h = *mid;
    if (h <= 0.0) h = 1.0;  // degenerate spread, any bandwidth works
    const double scale = -1.0 / (2.0 * h * h);

    const auto self_sum = [&](const std::vector<double>& x) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i)
            for (std::size_t j = i + 1; j < x.size(); ++j) {
                const double d = x[i] - x[j];
                s += std::exp(scale * d * d);
            }
        const double n = static_cast<double>(x.size());
        return 2.0 * s / (n * (n - 1.0));
    };
    double cross = 0.0;
    for (double va : xa)
        for (double vb : xb) {
            const double d = va - vb;
            cross += std::exp(scale * d * d);
        }
    cross *= 2.0 / (static_cast<double>(xa.size()) * static_cast<double>(xb.size()));
    const double mmd2 = self_sum(xa) + self_sum(xb) - cross;
    return std::sqrt(std::max(0.0, mmd2));
}

FidelityStats compare_samples(const std::vector<double>& gen,
                              const std::vector<double>& real) {
    FidelityStats f;
    f.kl = kl_divergence(gen, real);
    f.w1 = w1_distance(gen, real);
    f.mmd = mmd_gaussian(gen, real);
    f.n = gen.size();
    return f;
}

FidelityStats twin_fidelity(TwinModel& model, const std::vector<Transition>& held_out,
                            Rng& rng) {
    require(!held_out.empty(), "empty held-out set");
    std::vector<double> gen, real;
    gen.reserve(held_out.size());
    real.reserve(held_out.size());
    for (const auto& t : held_out) {
        gen.push_back(model.sample(t.next.mu, t.s.mu, t.s.pd, t.s.fg, rng));
        real.push_back(t.next.pd);
    }
    return compare_samples(gen, real);
}

std::vector<FidelityBucket> twin_fidelity_buckets(TwinModel& model,
                                                  const std::vector<Transition>& held_out,
                                                  Rng& rng,
                                                  const std::vector<double>& edges) {
    require(edges.size() >= 2, "need at least one bucket");
    std::vector<FidelityBucket> out;
    for (std::size_t k = 0; k + 1 < edges.size(); ++k) {
        FidelityBucket b;
        b.lo = edges[k];
        b.hi = edges[k + 1];
        const bool last = k + 2 == edges.size();
        std::vector<double> gen, real;
        for (const auto& t : held_out) {
            const bool in = t.s.pd >= b.lo && (t.s.pd < b.hi || (last && t.s.pd <= b.hi));
            if (!in) continue;
            gen.push_back(model.sample(t.next.mu, t.s.mu, t.s.pd, t.s.fg, rng));
            real.push_back(t.next.pd);
        }
        if (gen.size() >= 25) {
            b.stats = compare_samples(gen, real);
        } else {
            b.stats.n = gen.size();  // too thin to compare, metrics left zero
        }
        out.push_back(b);
    }
    return out;
}

}  // namespace cfisac
