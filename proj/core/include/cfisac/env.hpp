#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "cfisac/rng.hpp"
#include "cfisac/scenario.hpp"

namespace cfisac {

struct MdpState {
    int mu = 0;       // beam index
    double pd = 0.0;  // detection probability of the current beam
    int fg = 0;       // -1/0/+1, sign of the last action's P_D change
};

struct RewardParams {
    double zeta = 0.9;   // success threshold on P_D
    double b0 = 5.0;     // success reward
    double b1 = 1.0;     // potential scale
    double b2 = 5.0;     // potential steepness
    double rho = 0.99;   // discount used inside the shaping term
};

struct EnvParams {
    RewardParams reward;
    int max_steps = 64;  // probe budget per episode
    int tau = 5;         // largest beam step; actions are +-1..tau, zero excluded
};

struct Transition {
    std::uint64_t episode = 0;
    int step = 0;  // 1-based index within the episode's current task
    MdpState s;
    int action = 0;  // action index in [0, 2*tau)
    double reward_base = 0.0;
    double reward_shaped = 0.0;  // shaping component only
    MdpState next;
    bool done = false;
};

int num_actions(int tau);
// Signed beam displacement of an action index; the zero step is excluded.
int action_delta(int action_index, int tau);
// Inverse of action_delta.
int action_index_of(int delta, int tau);

double base_reward(double pd_next, const RewardParams& rp);
double potential(double pd, const RewardParams& rp);
// rho * potential(pd_next) - potential(pd_cur); emitted on every step,
// including terminal ones.
double shaping_reward(double pd_cur, double pd_next, const RewardParams& rp);
int gain_flag(double pd_prev, double pd_next, int delta);

struct StepOutcome {
    MdpState next;
    double reward_base = 0.0;
    double reward_shaped = 0.0;
    bool done = false;
};

// Completes a step given the observed next-beam detection probability.
// Beam arithmetic clamps at the codebook edges. Shared by every
// environment implementation so reward logic cannot diverge.
StepOutcome finish_step(const MdpState& s, int action_index, double pd_next,
                        const EnvParams& params, int step_id, int codebook_size);

class Environment {
public:
    virtual ~Environment() = default;

    // Starts a fresh task and returns its initial state.
    virtual MdpState reset(Rng& rng) = 0;
    // Applies an action; throws if the current task already finished.
    virtual Transition step(int action_index, Rng& rng) = 0;

    virtual const MdpState& state() const = 0;
    virtual bool done() const = 0;
    virtual int codebook_size() const = 0;
    virtual const EnvParams& params() const = 0;

    // Transition count served so far, and whether they are synthetic.
    virtual std::uint64_t probe_count() const = 0;
    virtual std::uint64_t reset_count() const = 0;
    virtual bool is_synthetic() const = 0;
};

// Radar scene environment: every probe runs the detector on the live scene.
class BeamEnv : public Environment {
public:
    BeamEnv(const ScenarioConfig& cfg, const EnvParams& params);

    MdpState reset(Rng& rng) override;
    Transition step(int action_index, Rng& rng) override;

    const MdpState& state() const override { return state_; }
    bool done() const override { return !active_; }
    int codebook_size() const override { return scene_.codebook_size(); }
    const EnvParams& params() const override { return params_; }
    std::uint64_t probe_count() const override { return probes_; }
    std::uint64_t reset_count() const override { return resets_; }
    bool is_synthetic() const override { return false; }

    const Scene& scene() const { return scene_; }
    const TargetTrack& target() const { return track_; }

    // Direct beam probe outside the action structure; advances the target
    // and counts one transition. Used by the sweep/swarm baselines.
    double probe_beam(int mu, Rng& rng);

private:
    Scene scene_;
    EnvParams params_;
    TargetTrack track_;
    MdpState state_;
    std::uint64_t episode_ = 0;
    int t_ = 0;
    bool active_ = false;
    std::uint64_t probes_ = 0;
    std::uint64_t resets_ = 0;
};

void write_transitions_csv(const std::string& path, const std::vector<Transition>& rows);
std::vector<Transition> read_transitions_csv(const std::string& path);

}  // namespace cfisac
