#include "cfisac/env.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>

namespace cfisac {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

}  // namespace

int num_actions(int tau) {
    require(tau >= 1, "tau must be >= 1");
    return 2 * tau;
}

int action_delta(int action_index, int tau) {
    require(tau >= 1, "tau must be >= 1");
    require(action_index >= 0 && action_index < 2 * tau, "action index out of range");
    return action_index < tau ? action_index - tau : action_index - tau + 1;
}

int action_index_of(int delta, int tau) {
    require(delta != 0 && delta >= -tau && delta <= tau, "delta out of range");
    return delta < 0 ? delta + tau : delta + tau - 1;
}

double base_reward(double pd_next, const RewardParams& rp) {
    return pd_next >= rp.zeta ? rp.b0 : -1.0;
}

double potential(double pd, const RewardParams& rp) {
    return rp.b1 / (1.0 + std::exp(-rp.b2 * pd));
}

double shaping_reward(double pd_cur, double pd_next, const RewardParams& rp) {
    return rp.rho * potential(pd_next, rp) - potential(pd_cur, rp);
}

int gain_flag(double pd_prev, double pd_next, int delta) {
    const double v = (pd_next - pd_prev) * static_cast<double>(delta);
    if (v > 0.0) return 1;
    if (v < 0.0) return -1;
    return 0;
}

StepOutcome finish_step(const MdpState& s, int action_index, double pd_next,
                        const EnvParams& params, int step_id, int codebook_size) {
    const int delta = action_delta(action_index, params.tau);
    StepOutcome out;
    out.next.mu = std::clamp(s.mu + delta, 0, codebook_size - 1);
    out.next.pd = pd_next;
    out.next.fg = gain_flag(s.pd, pd_next, delta);
    out.reward_base = base_reward(pd_next, params.reward);
    out.reward_shaped = shaping_reward(s.pd, pd_next, params.reward);
    out.done = pd_next >= params.reward.zeta || step_id >= params.max_steps;
    return out;
}

BeamEnv::BeamEnv(const ScenarioConfig& cfg, const EnvParams& params)
    : scene_(cfg), params_(params) {
    require(params_.max_steps >= 1, "episode budget must be >= 1");
    require(params_.tau >= 1 && params_.tau < scene_.codebook_size(),
            "tau must lie in [1, codebook size)");
    params_.reward.zeta = cfg.zeta;
}

MdpState BeamEnv::reset(Rng& rng) {
    const auto& cfg = scene_.config();
    if (cfg.target_xy) {
        track_.position = *cfg.target_xy;
    } else {
        track_.position = {rng.uniform(0.0, cfg.geometry.area_side),
                           rng.uniform(0.0, cfg.geometry.area_side)};
    }
    track_.heading = rng.uniform(0.0, 2.0 * std::numbers::pi);
    track_.speed = rng.uniform(0.0, cfg.target_speed_mps);
    track_.step_interval = cfg.step_interval_s;

    state_.mu = rng.uniform_int(0, scene_.codebook_size() - 1);
    state_.pd = scene_.observe(state_.mu, track_.position, rng).pd;
    state_.fg = 0;
    t_ = 0;
    ++episode_;
    ++resets_;
    active_ = true;
    return state_;
}

Transition BeamEnv::step(int action_index, Rng& rng) {
    if (!active_) throw std::logic_error("step on a finished episode");
    const int delta = action_delta(action_index, params_.tau);
    const int mu_next = std::clamp(state_.mu + delta, 0, scene_.codebook_size() - 1);

    if (track_.speed > 0.0) advance_target(track_, scene_.config().geometry.area_side, rng);
    const double pd_next = scene_.observe(mu_next, track_.position, rng).pd;
    ++probes_;
    ++t_;

    const StepOutcome out = finish_step(state_, action_index, pd_next, params_, t_, scene_.codebook_size());
    Transition tr;
    tr.episode = episode_;
    tr.step = t_;
    tr.s = state_;
    tr.action = action_index;
    tr.reward_base = out.reward_base;
    tr.reward_shaped = out.reward_shaped;
    tr.next = out.next;
    tr.done = out.done;

    state_ = out.next;
    active_ = !out.done;
    return tr;
}

double BeamEnv::probe_beam(int mu, Rng& rng) {
    if (track_.speed > 0.0) advance_target(track_, scene_.config().geometry.area_side, rng);
    const double pd = scene_.observe(mu, track_.position, rng).pd;
    ++probes_;
    state_.mu = mu;
    state_.pd = pd;
    return pd;
}

void write_transitions_csv(const std::string& path, const std::vector<Transition>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write dataset: " + path);
    out << "episode,step,mu_t,pd_t,fg_t,action,reward_base,reward_shaped,"
           "mu_next,pd_next,fg_next,done\n";
    char buf[512];
    for (const auto& r : rows) {
        std::snprintf(buf, sizeof(buf),
                      "%llu,%d,%d,%.17g,%d,%d,%.17g,%.17g,%d,%.17g,%d,%d\n",
                      static_cast<unsigned long long>(r.episode), r.step, r.s.mu,
                      r.s.pd, r.s.fg, r.action, r.reward_base, r.reward_shaped,
                      r.next.mu, r.next.pd, r.next.fg, r.done ? 1 : 0);
        out << buf;
    }
}

std::vector<Transition> read_transitions_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read dataset: " + path);
    std::string line;
    if (!std::getline(in, line)) throw std::runtime_error("empty dataset: " + path);

    std::vector<Transition> rows;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 12) throw std::runtime_error("malformed dataset row: " + line);
        Transition r;
        r.episode = std::stoull(cells[0]);
        r.step = std::stoi(cells[1]);
        r.s.mu = std::stoi(cells[2]);
        r.s.pd = std::stod(cells[3]);
        r.s.fg = std::stoi(cells[4]);
        r.action = std::stoi(cells[5]);
        r.reward_base = std::stod(cells[6]);
        r.reward_shaped = std::stod(cells[7]);
        r.next.mu = std::stoi(cells[8]);
        r.next.pd = std::stod(cells[9]);
        r.next.fg = std::stoi(cells[10]);
        r.done = cells[11] == "1";
        rows.push_back(r);
    }
    return rows;
}

}  // namespace cfisac
