#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfisac/env.hpp"
#include "cfisac/net.hpp"

namespace cfisac {

struct AgentConfig {
    int embed_dim = 16;     // sinusoidal code width for the beam index
    int hidden = 128;
    int hidden_layers = 3;
    double lr = 1e-4;
    double lr_decay = 1.0;  // per-episode multiplicative decay, 1 disables
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double gamma = 0.99;    // discount, also used by the shaping term
    int batch_size = 16;
    int target_sync_every = 200;  // gradient steps between target refreshes
    std::size_t replay_capacity = 50000;
    double eps_max = 0.2;
    int episodes = 1000;
    double cql_alpha = 0.1;  // conservative penalty weight, 0 disables
    double b3 = 5.0;         // steepness of the probability encoding
};

// Feature vector [sin/cos code of mu, rescaled pd, fg], length embed_dim + 2.
std::vector<double> encode_state(const MdpState& s, int embed_dim, double b3 = 5.0);

// Exploration schedule: eps_max * (1 - episode/total), floored at 0.
double epsilon_for_episode(int episode, int total_episodes, double eps_max);

// Dueling head over a shared trunk: Q(s,a) = U(s) + A(s,a) - max_a' A(s,a').
class QNetwork {
public:
    QNetwork() = default;
    QNetwork(int input_dim, int hidden, int hidden_layers, int n_actions, Rng& rng);

    Mat forward(const Mat& x, bool train);
    // dLoss/dQ of the last train-mode forward; accumulates parameter grads.
    void backward(const Mat& grad_q);

    void zero_grads();
    std::vector<Mat*> params();
    std::vector<Mat*> grads();
    void copy_from(const QNetwork& other);

    int n_actions() const { return adv_.output_dim(); }
    int input_dim() const { return trunk_.input_dim(); }

    DenseNet& trunk() { return trunk_; }
    DenseNet& value_head() { return value_; }
    DenseNet& advantage_head() { return adv_; }

private:
    DenseNet trunk_, value_, adv_;
    Mat h_, dq_value_cache_;
    std::vector<int> argmax_cache_;
};

class ReplayBuffer {
public:
    explicit ReplayBuffer(std::size_t capacity);
    void push(const Transition& t);
    std::size_t size() const { return data_.size(); }
    const Transition& sample_one(Rng& rng) const;
    std::vector<const Transition*> sample(std::size_t n, Rng& rng) const;

private:
    std::size_t capacity_;
    std::size_t next_ = 0;
    std::vector<Transition> data_;
};

// Mean squared TD error and mean conservative penalty of one minibatch.
struct LossStats {
    double td = 0.0;
    double cql = 0.0;
};

struct EpisodeStats {
    std::uint64_t episode = 0;
    double cum_reward = 0.0;  // base + shaping over the episode budget
    double cum_reward_base = 0.0;
    int steps = 0;
    int tasks = 0;      // task attempts consumed within the episode budget
    int successes = 0;  // tasks that reached the success threshold
    double epsilon = 0.0;
    double loss_td = 0.0;   // means over the episode's gradient steps
    double loss_cql = 0.0;
};

struct EvalRecord {
    int steps = 0;  // probes until success, capped at the episode budget
    bool success = false;
    double final_pd = 0.0;
};

class DqnAgent {
public:
    DqnAgent(const AgentConfig& cfg, const EnvParams& env_params, Rng& rng);

    const AgentConfig& config() const { return cfg_; }

    int select_action(const MdpState& s, double eps, Rng& rng);
    int greedy_action(const MdpState& s);
    // Q row for one state, eval mode.
    Vec q_values(const MdpState& s);

    void seed_replay(const std::vector<Transition>& data);
    std::size_t replay_size() const { return replay_.size(); }

    // Fixed rows for the conservative term. When set and cql_alpha > 0,
    // penalty batches are drawn from here instead of the TD minibatch, so
    // conservatism stays anchored to the recorded data and its behavior
    // policy even while the replay fills with synthetic rollouts.
    void set_conservative_anchor(std::vector<Transition> data);
    std::size_t anchor_size() const { return anchor_.size(); }

    // One fixed-budget training episode: the environment is reset at the
    // start and whenever a task finishes, and exactly params.max_steps
    // transitions are consumed, one gradient step after each.
    EpisodeStats run_training_episode(Environment& env, double eps, Rng& rng);

    // Gradient-only episode for dataset training (no environment).
    EpisodeStats run_offline_episode(int updates, Rng& rng);

    // Full schedule of cfg.episodes training episodes with the linear
    // exploration decay. Offline mode is selected by passing nullptr.
    std::vector<EpisodeStats> train(Environment* env, Rng& rng);

    // Single-task evaluation: reset once, act greedily until termination.
    EvalRecord evaluate_episode(Environment& env, Rng& rng);

    LossStats update_from_batch(const std::vector<const Transition*>& batch);
    // Same update with the conservative term computed on its own rows.
    LossStats update_from_batch(const std::vector<const Transition*>& batch,
                                const std::vector<const Transition*>& cql_batch);

    std::int64_t gradient_steps() const { return grad_steps_; }
    QNetwork& online_net() { return q_; }
    QNetwork& target_net() { return q_target_; }

    void save(const std::string& path) const;
    static DqnAgent load(const std::string& path, const AgentConfig& cfg,
                         const EnvParams& env_params);

private:
    Mat encode_batch(const std::vector<const Transition*>& batch, bool next) const;
    // Double-DQN targets: online argmax, target evaluation, terminal masked.
    Vec td_targets(const std::vector<const Transition*>& batch);
    std::vector<const Transition*> sample_anchor(std::size_t n, Rng& rng) const;
    LossStats sampled_update(Rng& rng);

    AgentConfig cfg_;
    EnvParams env_params_;
    QNetwork q_, q_target_;
    Adam opt_;
    ReplayBuffer replay_;
    std::vector<Transition> anchor_;
    std::int64_t grad_steps_ = 0;
};

void write_episode_metrics_csv(const std::string& path,
                               const std::vector<EpisodeStats>& stats);

}  // namespace cfisac
