#include "cfisac/scenario.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <stdexcept>

#include "json.hpp"

namespace cfisac {

namespace {

constexpr double kPi = std::numbers::pi;

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

double dist(const Vec2& a, const Vec2& b) {
    return std::hypot(a.x - b.x, a.y - b.y);
}

// Unit vector along the array axis of an AP whose broadside faces the
// area center.
Vec2 array_axis(const Vec2& ap, double area_side) {
    const Vec2 center{0.5 * area_side, 0.5 * area_side};
    double bx = center.x - ap.x;
    double by = center.y - ap.y;
    const double n = std::hypot(bx, by);
    if (n < 1e-12) {
        bx = 1.0;
        by = 0.0;
    } else {
        bx /= n;
        by /= n;
    }
    return {-by, bx};
}

double sin_angle_along(const Vec2& ap, const Vec2& axis, const Vec2& p) {
    const double d = dist(ap, p);
    if (d < 1e-9) return 0.0;
    const double ux = (p.x - ap.x) / d;
    const double uy = (p.y - ap.y) / d;
    double s = ux * axis.x + uy * axis.y;
    if (s > 1.0) s = 1.0;
    if (s < -1.0) s = -1.0;
    return s;
}

}  // namespace

double ScenarioConfig::tx_power_dbmw() const {
    return 10.0 * std::log10(channel.tx_power_w * 1000.0);
}

void ScenarioConfig::set_tx_power_dbmw(double dbmw) {
    channel.tx_power_w = std::pow(10.0, dbmw / 10.0) / 1000.0;
}

CVec steering_vector_from_sin(double sin_phi, int m_antennas) {
    require(m_antennas >= 1, "antenna count must be >= 1");
    require(sin_phi >= -1.0 && sin_phi <= 1.0, "sin(phi) must lie in [-1, 1]");
    CVec a(m_antennas);
    for (int m = 0; m < m_antennas; ++m) {
        const double phase = m * kPi * sin_phi;
        a[m] = {std::cos(phase), std::sin(phase)};
    }
    return a;
}

CVec steering_vector(double phi_rad, int m_antennas) {
    require(phi_rad > -kPi / 2 && phi_rad < kPi / 2,
            "departure/arrival angle must lie in (-pi/2, pi/2)");
    return steering_vector_from_sin(std::sin(phi_rad), m_antennas);
}

CVec dft_codeword(int mu, int m_antennas) {
    require(m_antennas >= 1, "antenna count must be >= 1");
    require(mu >= 0 && mu < m_antennas, "beam index out of range");
    CVec w(m_antennas);
    const double scale = 1.0 / std::sqrt(static_cast<double>(m_antennas));
    for (int m = 0; m < m_antennas; ++m) {
        const double phase = -2.0 * kPi * m * mu / m_antennas;
        w[m] = {scale * std::cos(phase), scale * std::sin(phase)};
    }
    return w;
}

double beam_gain(double sin_phi, int mu, int m_antennas) {
    require(m_antennas >= 1, "antenna count must be >= 1");
    require(mu >= 0 && mu < m_antennas, "beam index out of range");
    require(sin_phi >= -1.0 && sin_phi <= 1.0, "sin(phi) must lie in [-1, 1]");
    // a(phi)^T w_mu is a geometric series with per-element phase delta.
    const double delta = kPi * sin_phi - 2.0 * kPi * mu / m_antennas;
    const double s = std::sin(0.5 * delta);
    const double M = static_cast<double>(m_antennas);
    if (std::abs(s) < 1e-12) return M;  // |sum|^2 = M^2, scaled by 1/M
    const double num = std::sin(0.5 * M * delta);
    return (num * num) / (s * s) / M;
}

double pathloss(double d_tx, double d_rx, const ChannelParams& params, Rng* rng) {
    require(d_tx > 0.0 && d_rx > 0.0, "leg distances must be positive");
    double beta = params.pathloss_ref / (d_tx * d_tx * d_rx * d_rx);
    if (params.shadowing_db > 0.0 && rng != nullptr) {
        beta *= std::pow(10.0, params.shadowing_db * rng->normal() / 10.0);
    }
    return beta;
}

void advance_target(TargetTrack& track, double area_side, Rng& rng) {
    track.heading += rng.uniform(-kPi / 8.0, kPi / 8.0);
    double x = track.position.x + track.speed * track.step_interval * std::cos(track.heading);
    double y = track.position.y + track.speed * track.step_interval * std::sin(track.heading);
    bool moved = true;
    while (moved) {
        moved = false;
        if (x < 0.0) {
            x = -x;
            track.heading = kPi - track.heading;
            moved = true;
        } else if (x > area_side) {
            x = 2.0 * area_side - x;
            track.heading = kPi - track.heading;
            moved = true;
        }
        if (y < 0.0) {
            y = -y;
            track.heading = -track.heading;
            moved = true;
        } else if (y > area_side) {
            y = 2.0 * area_side - y;
            track.heading = -track.heading;
            moved = true;
        }
    }
    track.position = {x, y};
}

Scene::Scene(const ScenarioConfig& cfg) : cfg_(cfg) {
    const auto& g = cfg_.geometry;
    require(g.antennas >= 1, "antenna count must be >= 1");
    require(!g.rx.empty(), "at least one receive AP required");
    require(g.area_side > 0.0, "area side must be positive");
    require(cfg_.p_fa > 0.0 && cfg_.p_fa < 1.0, "false alarm rate must lie in (0, 1)");
    require(cfg_.zeta > 0.0 && cfg_.zeta <= 1.0, "success threshold must lie in (0, 1]");
    const auto& ch = cfg_.channel;
    require(ch.tx_power_w > 0.0 && ch.noise_power > 0.0 && ch.pathloss_ref > 0.0,
            "power, noise and pathloss reference must be positive");
    require(ch.rcs_var >= 0.0, "scatter variance must be >= 0");

    tx_axis_ = array_axis(g.tx, g.area_side);
    rx_axes_.reserve(g.rx.size());
    for (const auto& ap : g.rx) rx_axes_.push_back(array_axis(ap, g.area_side));

    codebook_.reserve(g.antennas);
    for (int mu = 0; mu < g.antennas; ++mu) codebook_.push_back(dft_codeword(mu, g.antennas));

    DetectionSetup setup{static_cast<int>(g.rx.size()), cfg_.p_fa, ch.noise_power};
    threshold_ = cfar_threshold(setup);
}

double Scene::tx_sin_angle(const Vec2& target) const {
    return sin_angle_along(cfg_.geometry.tx, tx_axis_, target);
}

SensingObservation Scene::observe(int mu, const Vec2& target, Rng& rng) const {
    const auto& g = cfg_.geometry;
    const auto& ch = cfg_.channel;
    require(mu >= 0 && mu < g.antennas, "beam index out of range");

    const double g_beam = beam_gain(tx_sin_angle(target), mu, g.antennas);
    // ||eta_n||^2 = ||a(phi_n)||^2 |a(phi_0)^T w|^2 = M * gain
    const double sig_energy = static_cast<double>(g.antennas) * g_beam;

    // Probes within 10 cm of an AP are clamped to keep the pathloss finite.
    const double d_tx = std::max(dist(g.tx, target), 0.1);

    SensingObservation obs;
    obs.threshold = threshold_;
    obs.per_receiver_nc.reserve(g.rx.size());
    for (size_t n = 0; n < g.rx.size(); ++n) {
        const double d_rx = std::max(dist(g.rx[n], target), 0.1);
        const double beta = pathloss(d_tx, d_rx, ch, ch.shadowing_db > 0.0 ? &rng : nullptr);
        double scatter_power = ch.rcs_var;
        if (cfg_.rcs_sampled) scatter_power = std::norm(rng.cnormal(0.5 * ch.rcs_var));
        const double nc = ch.tx_power_w * scatter_power * beta * sig_energy / ch.noise_power;
        obs.per_receiver_nc.push_back(nc);
        obs.sum_nc += nc;
    }
    const int dof = 2 * static_cast<int>(g.rx.size());
    obs.pd = noncentral_chi2_ccdf(threshold_, dof, obs.sum_nc);
    return obs;
}

std::vector<double> Scene::pd_profile(const Vec2& target, Rng& rng) const {
    std::vector<double> pd(cfg_.geometry.antennas);
    for (int mu = 0; mu < cfg_.geometry.antennas; ++mu) pd[mu] = observe(mu, target, rng).pd;
    return pd;
}

namespace {

using nlohmann::json;

Vec2 vec2_from(const json& j) {
    require(j.is_array() && j.size() == 2, "expected [x, y] pair");
    return {j[0].get<double>(), j[1].get<double>()};
}

}  // namespace

ScenarioConfig load_scenario_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open scenario config: " + path);
    json j;
    in >> j;

    ScenarioConfig cfg;
    auto& g = cfg.geometry;
    if (j.contains("area_m")) g.area_side = j["area_m"].get<double>();
    if (j.contains("ap_tx")) g.tx = vec2_from(j["ap_tx"]);
    if (j.contains("ap_rx")) {
        g.rx.clear();
        for (const auto& e : j["ap_rx"]) g.rx.push_back(vec2_from(e));
    }
    if (j.contains("antennas")) g.antennas = j["antennas"].get<int>();
    if (j.contains("tx_power_dbmw")) cfg.set_tx_power_dbmw(j["tx_power_dbmw"].get<double>());
    if (j.contains("noise_power_w")) cfg.channel.noise_power = j["noise_power_w"].get<double>();
    if (j.contains("rcs_var")) cfg.channel.rcs_var = j["rcs_var"].get<double>();
    if (j.contains("pathloss_ref")) cfg.channel.pathloss_ref = j["pathloss_ref"].get<double>();
    if (j.contains("shadowing_db")) cfg.channel.shadowing_db = j["shadowing_db"].get<double>();
    if (j.contains("p_fa")) cfg.p_fa = j["p_fa"].get<double>();
    if (j.contains("zeta")) cfg.zeta = j["zeta"].get<double>();
    if (j.contains("target_speed_mps")) cfg.target_speed_mps = j["target_speed_mps"].get<double>();
    if (j.contains("step_interval_s")) cfg.step_interval_s = j["step_interval_s"].get<double>();
    if (j.contains("rcs_sampled")) cfg.rcs_sampled = j["rcs_sampled"].get<bool>();
    if (j.contains("target_xy")) cfg.target_xy = vec2_from(j["target_xy"]);
    if (j.contains("seed")) cfg.seed = j["seed"].get<std::uint64_t>();
    return cfg;
}

void save_scenario_config(const ScenarioConfig& cfg, const std::string& path) {
    json j;
    j["area_m"] = cfg.geometry.area_side;
    j["ap_tx"] = {cfg.geometry.tx.x, cfg.geometry.tx.y};
    json rx = json::array();
    for (const auto& ap : cfg.geometry.rx) rx.push_back({ap.x, ap.y});
    j["ap_rx"] = rx;
    j["antennas"] = cfg.geometry.antennas;
    j["tx_power_dbmw"] = cfg.tx_power_dbmw();
    j["noise_power_w"] = cfg.channel.noise_power;
    j["rcs_var"] = cfg.channel.rcs_var;
    j["pathloss_ref"] = cfg.channel.pathloss_ref;
    j["shadowing_db"] = cfg.channel.shadowing_db;
    j["p_fa"] = cfg.p_fa;
    j["zeta"] = cfg.zeta;
    j["target_speed_mps"] = cfg.target_speed_mps;
    j["step_interval_s"] = cfg.step_interval_s;
    j["rcs_sampled"] = cfg.rcs_sampled;
    if (cfg.target_xy) j["target_xy"] = {cfg.target_xy->x, cfg.target_xy->y};
    j["seed"] = cfg.seed;

    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write scenario config: " + path);
    out << j.dump(2) << "\n";
}

}  // namespace cfisac
