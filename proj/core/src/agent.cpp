#include "cfisac/agent.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace cfisac {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

void copy_net(DenseNet& dst, const DenseNet& src) {
    auto dp = dst.params();
    auto sp = src.params();
    require(dp.size() == sp.size(), "network shape mismatch");
    for (size_t i = 0; i < dp.size(); ++i) {
        require(dp[i]->rows() == sp[i]->rows() && dp[i]->cols() == sp[i]->cols(),
                "network shape mismatch");
        *dp[i] = *sp[i];
    }
    dst.norm_stats() = src.norm_stats();
}

}  // namespace

std::vector<double> encode_state(const MdpState& s, int embed_dim, double b3) {
    std::vector<double> f = sinusoidal_embedding(static_cast<double>(s.mu), embed_dim);
    f.push_back(variant_sigmoid(s.pd, b3));
    f.push_back(static_cast<double>(s.fg));
    return f;
}

double epsilon_for_episode(int episode, int total_episodes, double eps_max) {
    require(total_episodes >= 1, "total episodes must be >= 1");
    require(episode >= 0, "episode must be >= 0");
    const double e = eps_max * (1.0 - static_cast<double>(episode) / total_episodes);
    return std::max(0.0, e);
}

QNetwork::QNetwork(int input_dim, int hidden, int hidden_layers, int n_actions, Rng& rng) {
    require(input_dim >= 1 && hidden >= 1 && hidden_layers >= 1 && n_actions >= 2,
            "bad network dimensions");
    std::vector<LayerSpec> trunk;
    trunk.push_back({input_dim, hidden, Activation::Relu, false});
    for (int l = 1; l < hidden_layers; ++l)
        trunk.push_back({hidden, hidden, Activation::Relu, false});
    trunk_ = DenseNet(trunk, rng);
    value_ = DenseNet({{hidden, 1, Activation::Linear, false}}, rng);
    adv_ = DenseNet({{hidden, n_actions, Activation::Linear, false}}, rng);
}

Mat QNetwork::forward(const Mat& x, bool train) {
    h_ = trunk_.forward(x, train);
    const Mat u = value_.forward(h_, train);
    const Mat a = adv_.forward(h_, train);
    Mat q(a.rows(), a.cols());
    if (train) argmax_cache_.assign(a.rows(), 0);
    for (Eigen::Index i = 0; i < a.rows(); ++i) {
        Eigen::Index jmax = 0;
        const double amax = a.row(i).maxCoeff(&jmax);
        q.row(i) = a.row(i).array() - amax + u(i, 0);
        if (train) argmax_cache_[i] = static_cast<int>(jmax);
    }
    return q;
}

void QNetwork::backward(const Mat& grad_q) {
    require(static_cast<size_t>(grad_q.rows()) == argmax_cache_.size(),
            "backward requires a train-mode forward");
    Mat du(grad_q.rows(), 1);
    Mat da = grad_q;
    for (Eigen::Index i = 0; i < grad_q.rows(); ++i) {
        const double s = grad_q.row(i).sum();
        du(i, 0) = s;
        da(i, argmax_cache_[i]) -= s;
    }
    Mat dh = value_.backward(du);
    dh += adv_.backward(da);
    trunk_.backward(dh);
}

void QNetwork::zero_grads() {
    trunk_.zero_grads();
    value_.zero_grads();
    adv_.zero_grads();
}

std::vector<Mat*> QNetwork::params() {
    std::vector<Mat*> out = trunk_.params();
    for (Mat* p : value_.params()) out.push_back(p);
    for (Mat* p : adv_.params()) out.push_back(p);
    return out;
}

std::vector<Mat*> QNetwork::grads() {
    std::vector<Mat*> out = trunk_.grads();
    for (Mat* p : value_.grads()) out.push_back(p);
    for (Mat* p : adv_.grads()) out.push_back(p);
    return out;
}

void QNetwork::copy_from(const QNetwork& other) {
    copy_net(trunk_, other.trunk_);
    copy_net(value_, other.value_);
    copy_net(adv_, other.adv_);
}

ReplayBuffer::ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    require(capacity >= 1, "replay capacity must be >= 1");
    data_.reserve(std::min<std::size_t>(capacity, 1 << 16));
}

void ReplayBuffer::push(const Transition& t) {
    if (data_.size() < capacity_) {
        data_.push_back(t);
    } else {
        data_[next_] = t;  // overwrite oldest first
        next_ = (next_ + 1) % capacity_;
    }
}

const Transition& ReplayBuffer::sample_one(Rng& rng) const {
    require(!data_.empty(), "sampling from an empty replay buffer");
    return data_[static_cast<std::size_t>(rng.uniform_int(0, static_cast<int>(data_.size()) - 1))];
}

std::vector<const Transition*> ReplayBuffer::sample(std::size_t n, Rng& rng) const {
    require(!data_.empty(), "sampling from an empty replay buffer");
    std::vector<const Transition*> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(&sample_one(rng));
    return out;
}

DqnAgent::DqnAgent(const AgentConfig& cfg, const EnvParams& env_params, Rng& rng)
    : cfg_(cfg),
      env_params_(env_params),
      q_(cfg.embed_dim + 2, cfg.hidden, cfg.hidden_layers, num_actions(env_params.tau), rng),
      q_target_(cfg.embed_dim + 2, cfg.hidden, cfg.hidden_layers, num_actions(env_params.tau), rng),
      opt_({cfg.lr, cfg.adam_beta1, cfg.adam_beta2, 1e-8}),
      replay_(cfg.replay_capacity) {
    q_target_.copy_from(q_);
}

Vec DqnAgent::q_values(const MdpState& s) {
    const auto f = encode_state(s, cfg_.embed_dim, cfg_.b3);
    Mat x(1, static_cast<Eigen::Index>(f.size()));
    for (size_t i = 0; i < f.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = f[i];
    return q_.forward(x, false).row(0).transpose();
}

int DqnAgent::greedy_action(const MdpState& s) {
    const Vec q = q_values(s);
    Eigen::Index a = 0;
    q.maxCoeff(&a);
    return static_cast<int>(a);
}

int DqnAgent::select_action(const MdpState& s, double eps, Rng& rng) {
    if (rng.uniform() < eps) return rng.uniform_int(0, num_actions(env_params_.tau) - 1);
    return greedy_action(s);
}

void DqnAgent::seed_replay(const std::vector<Transition>& data) {
    for (const auto& t : data) replay_.push(t);
}

void DqnAgent::set_conservative_anchor(std::vector<Transition> data) {
    require(!data.empty(), "conservative anchor must be nonempty");
    anchor_ = std::move(data);
}

std::vector<const Transition*> DqnAgent::sample_anchor(std::size_t n, Rng& rng) const {
    std::vector<const Transition*> out;
    out.reserve(n);
    const int hi = static_cast<int>(anchor_.size()) - 1;
    for (std::size_t i = 0; i < n; ++i)
        out.push_back(&anchor_[static_cast<std::size_t>(rng.uniform_int(0, hi))]);
    return out;
}

Mat DqnAgent::encode_batch(const std::vector<const Transition*>& batch, bool next) const {
    require(!batch.empty(), "empty batch");
    const int dim = cfg_.embed_dim + 2;
    Mat x(static_cast<Eigen::Index>(batch.size()), dim);
    for (size_t i = 0; i < batch.size(); ++i) {
        const MdpState& s = next ? batch[i]->next : batch[i]->s;
        const auto f = encode_state(s, cfg_.embed_dim, cfg_.b3);
        for (int j = 0; j < dim; ++j) x(static_cast<Eigen::Index>(i), j) = f[j];
    }
    return x;
}

Vec DqnAgent::td_targets(const std::vector<const Transition*>& batch) {
    const auto B = static_cast<Eigen::Index>(batch.size());
    const Mat xn = encode_batch(batch, true);
    const Mat q_next_online = q_.forward(xn, false);
    const Mat q_next_target = q_target_.forward(xn, false);
    Vec y(B);
    for (Eigen::Index i = 0; i < B; ++i) {
        const Transition& t = *batch[i];
        double v = 0.0;
        if (!t.done) {
            Eigen::Index astar = 0;
            q_next_online.row(i).maxCoeff(&astar);
            v = cfg_.gamma * q_next_target(i, astar);
        }
        y(i) = t.reward_base + t.reward_shaped + v;
    }
    return y;
}

LossStats DqnAgent::update_from_batch(const std::vector<const Transition*>& batch) {
    const auto B = static_cast<Eigen::Index>(batch.size());
    const Vec y = td_targets(batch);
    const Mat x = encode_batch(batch, false);
    const Mat q = q_.forward(x, true);
    Mat dq = Mat::Zero(q.rows(), q.cols());
    LossStats stats;
    const double invB = 1.0 / static_cast<double>(B);
    for (Eigen::Index i = 0; i < B; ++i) {
        const int a = batch[i]->action;
        const double diff = q(i, a) - y(i);
        stats.td += diff * diff * invB;
        dq(i, a) += 2.0 * diff * invB;

        // log-sum-exp over actions minus the dataset action's value
        const double m = q.row(i).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < q.cols(); ++j) z += std::exp(q(i, j) - m);
        const double lse = m + std::log(z);
        stats.cql += (lse - q(i, a)) * invB;
        if (cfg_.cql_alpha > 0.0) {
            for (Eigen::Index j = 0; j < q.cols(); ++j)
                dq(i, j) += cfg_.cql_alpha * invB * std::exp(q(i, j) - m) / z;
            dq(i, a) -= cfg_.cql_alpha * invB;
        }
    }

    q_.zero_grads();
    q_.backward(dq);
    opt_.step(q_.params(), q_.grads());
    ++grad_steps_;
    if (grad_steps_ % cfg_.target_sync_every == 0) q_target_.copy_from(q_);
    return stats;
}

LossStats DqnAgent::update_from_batch(const std::vector<const Transition*>& batch,
                                      const std::vector<const Transition*>& cql_batch) {
    const auto B = static_cast<Eigen::Index>(batch.size());
    const Vec y = td_targets(batch);
    const Mat x = encode_batch(batch, false);
    const Mat q = q_.forward(x, true);
    Mat dq = Mat::Zero(q.rows(), q.cols());
    LossStats stats;
    const double invB = 1.0 / static_cast<double>(B);
    for (Eigen::Index i = 0; i < B; ++i) {
        const int a = batch[i]->action;
        const double diff = q(i, a) - y(i);
        stats.td += diff * diff * invB;
        dq(i, a) += 2.0 * diff * invB;
    }
    q_.zero_grads();
    q_.backward(dq);

    // Conservative term on its own rows; gradients accumulate into the
    // same step so the applied update is the sum of both losses.
    const auto C = static_cast<Eigen::Index>(cql_batch.size());
    const Mat xc = encode_batch(cql_batch, false);
    const Mat qc = q_.forward(xc, true);
    Mat dqc = Mat::Zero(qc.rows(), qc.cols());
    const double invC = 1.0 / static_cast<double>(C);
    for (Eigen::Index i = 0; i < C; ++i) {
        const int a = cql_batch[i]->action;
        const double m = qc.row(i).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < qc.cols(); ++j) z += std::exp(qc(i, j) - m);
        stats.cql += (m + std::log(z) - qc(i, a)) * invC;
        if (cfg_.cql_alpha > 0.0) {
            for (Eigen::Index j = 0; j < qc.cols(); ++j)
                dqc(i, j) += cfg_.cql_alpha * invC * std::exp(qc(i, j) - m) / z;
            dqc(i, a) -= cfg_.cql_alpha * invC;
        }
    }
    q_.backward(dqc);

    opt_.step(q_.params(), q_.grads());
    ++grad_steps_;
    if (grad_steps_ % cfg_.target_sync_every == 0) q_target_.copy_from(q_);
    return stats;
}

LossStats DqnAgent::sampled_update(Rng& rng) {
    const auto batch = replay_.sample(static_cast<std::size_t>(cfg_.batch_size), rng);
    if (anchor_.empty() || cfg_.cql_alpha == 0.0) return update_from_batch(batch);
    return update_from_batch(batch,
                             sample_anchor(static_cast<std::size_t>(cfg_.batch_size), rng));
}

EpisodeStats DqnAgent::run_training_episode(Environment& env, double eps, Rng& rng) {
    EpisodeStats st;
    st.epsilon = eps;
    env.reset(rng);
    ++st.tasks;
    int updates = 0;
    for (int step = 0; step < env.params().max_steps; ++step) {
        if (env.done()) {
            env.reset(rng);
            ++st.tasks;
        }
        const int action = select_action(env.state(), eps, rng);
        const Transition tr = env.step(action, rng);
        replay_.push(tr);
        st.cum_reward_base += tr.reward_base;
        st.cum_reward += tr.reward_base + tr.reward_shaped;
        ++st.steps;
        if (tr.done && tr.next.pd >= env.params().reward.zeta) ++st.successes;
        if (replay_.size() >= static_cast<std::size_t>(cfg_.batch_size)) {
            const LossStats ls = sampled_update(rng);
            st.loss_td += ls.td;
            st.loss_cql += ls.cql;
            ++updates;
        }
    }
    if (updates > 0) {
        st.loss_td /= updates;
        st.loss_cql /= updates;
    }
    return st;
}

EpisodeStats DqnAgent::run_offline_episode(int updates, Rng& rng) {
    require(replay_.size() >= static_cast<std::size_t>(cfg_.batch_size),
            "offline training requires a seeded replay buffer");
    EpisodeStats st;
    for (int u = 0; u < updates; ++u) {
        const LossStats ls = sampled_update(rng);
        st.loss_td += ls.td;
        st.loss_cql += ls.cql;
    }
    if (updates > 0) {
        st.loss_td /= updates;
        st.loss_cql /= updates;
    }
    return st;
}

std::vector<EpisodeStats> DqnAgent::train(Environment* env, Rng& rng) {
    std::vector<EpisodeStats> out;
    out.reserve(cfg_.episodes);
    for (int e = 0; e < cfg_.episodes; ++e) {
        const double eps = epsilon_for_episode(e, cfg_.episodes, cfg_.eps_max);
        if (cfg_.lr_decay != 1.0) opt_.set_lr(cfg_.lr * std::pow(cfg_.lr_decay, e));
        EpisodeStats st = env ? run_training_episode(*env, eps, rng)
                              : run_offline_episode(env_params_.max_steps, rng);
        st.episode = static_cast<std::uint64_t>(e);
        out.push_back(st);
    }
    return out;
}

EvalRecord DqnAgent::evaluate_episode(Environment& env, Rng& rng) {
    EvalRecord rec;
    MdpState s = env.reset(rng);
    if (s.pd >= env.params().reward.zeta) {
        // the spawn probe already satisfies the detection target
        return {1, true, s.pd};
    }
    while (!env.done()) {
        const int action = greedy_action(env.state());
        const Transition tr = env.step(action, rng);
        ++rec.steps;
        rec.final_pd = tr.next.pd;
    }
    rec.success = rec.final_pd >= env.params().reward.zeta;
    return rec;
}

void DqnAgent::save(const std::string& path) const {
    auto& self = const_cast<DqnAgent&>(*this);
    save_checkpoint(path,
                    {{"trunk", &self.q_.trunk()},
                     {"value", &self.q_.value_head()},
                     {"advantage", &self.q_.advantage_head()}},
                    {{"kind", "dqn_agent"}});
}

DqnAgent DqnAgent::load(const std::string& path, const AgentConfig& cfg,
                        const EnvParams& env_params) {
    Checkpoint ck = load_checkpoint(path);
    Rng zero(0);
    DqnAgent agent(cfg, env_params, zero);
    copy_net(agent.q_.trunk(), ck.nets.at("trunk"));
    copy_net(agent.q_.value_head(), ck.nets.at("value"));
    copy_net(agent.q_.advantage_head(), ck.nets.at("advantage"));
    agent.q_target_.copy_from(agent.q_);
    return agent;
}

void write_episode_metrics_csv(const std::string& path,
                               const std::vector<EpisodeStats>& stats) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write metrics: " + path);
    out << "episode,cum_reward,steps,epsilon,loss_td,loss_cql\n";
    char buf[256];
    for (const auto& s : stats) {
        std::snprintf(buf, sizeof(buf), "%llu,%.10g,%d,%.10g,%.10g,%.10g\n",
                      static_cast<unsigned long long>(s.episode), s.cum_reward,
                      s.steps, s.epsilon, s.loss_td, s.loss_cql);
        out << buf;
    }
}

}  // namespace cfisac
