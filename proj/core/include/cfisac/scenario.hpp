#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "cfisac/detection.hpp"
#include "cfisac/rng.hpp"

namespace cfisac {

struct Vec2 {
    double x = 0.0;
    double y = 0.0;
};

// Square service area [0, side] x [0, side] with one transmit AP and N
// receive APs. Every AP carries a half-wavelength ULA whose broadside faces
// the area center; angles are therefore measured by projecting the AP-to-
// target direction onto the array axis, which keeps sin(angle) in [-1, 1]
// for targets anywhere in the plane.
struct ArrayGeometry {
    double area_side = 400.0;
    Vec2 tx{250.0, 250.0};
    std::vector<Vec2> rx{{100.0, 100.0}, {100.0, 400.0}, {400.0, 100.0}, {400.0, 400.0}};
    int antennas = 64;
};

struct ChannelParams {
    double tx_power_w = 0.1;       // 20 dBmW
    double noise_power = 4e-14;    // per complex dimension, watts
    double rcs_var = 1.0;          // E|alpha|^2 of the scatter coefficient
    double pathloss_ref = 4e-4;    // two-leg reference gain at 1 m legs
    double shadowing_db = 0.0;     // log-normal sigma in dB, 0 disables
};

struct TargetTrack {
    Vec2 position{200.0, 200.0};
    double heading = 0.0;          // radians
    double speed = 0.0;            // m/s
    double step_interval = 0.1;    // s advanced per call
};

// Everything needed to instantiate a scene; serializable to/from JSON.
struct ScenarioConfig {
    ArrayGeometry geometry;
    ChannelParams channel;
    double p_fa = 1e-3;
    double zeta = 0.9;             // detection probability success threshold
    double target_speed_mps = 5.0; // per-episode speed drawn from [0, this]
    double step_interval_s = 0.1;
    bool rcs_sampled = false;      // false: expected-power scatter; true: drawn per observation
    std::optional<Vec2> target_xy; // pins the target spawn when present
    std::uint64_t seed = 1;

    double tx_power_dbmw() const;
    void set_tx_power_dbmw(double dbmw);
};

ScenarioConfig load_scenario_config(const std::string& path);
void save_scenario_config(const ScenarioConfig& cfg, const std::string& path);

// ULA steering vector, element m = exp(j * m * pi * sin(phi)).
CVec steering_vector(double phi_rad, int m_antennas);

// Same response parameterized by sin(phi) directly.
CVec steering_vector_from_sin(double sin_phi, int m_antennas);

// Unit-norm DFT codeword mu of an M-beam codebook.
CVec dft_codeword(int mu, int m_antennas);

// |a(sin_phi)^T w_mu|^2 without materializing the vectors.
double beam_gain(double sin_phi, int mu, int m_antennas);

// Two-leg power pathloss ref / (d_tx^2 * d_rx^2); optional log-normal
// shadowing draw when params.shadowing_db > 0 and rng is provided.
double pathloss(double d_tx, double d_rx, const ChannelParams& params,
                Rng* rng = nullptr);

struct SensingObservation {
    double pd = 0.0;          // detection probability of the probe
    double threshold = 0.0;   // detector threshold used
    double sum_nc = 0.0;      // total non-centrality across receivers
    std::vector<double> per_receiver_nc;
};

// Random-direction mobility: heading perturbed uniformly in [-pi/8, pi/8],
// then a straight step with reflection at the area boundary.
void advance_target(TargetTrack& track, double area_side, Rng& rng);

// Precomputed codebook + threshold for repeated probes of one scenario.
class Scene {
public:
    explicit Scene(const ScenarioConfig& cfg);

    const ScenarioConfig& config() const { return cfg_; }
    int codebook_size() const { return cfg_.geometry.antennas; }
    double threshold() const { return threshold_; }

    // Probe beam mu against the target position. rng feeds shadowing and the
    // sampled-scatter mode; deterministic when neither is enabled.
    SensingObservation observe(int mu, const Vec2& target, Rng& rng) const;

    // sin of the transmit-array departure angle toward a point.
    double tx_sin_angle(const Vec2& target) const;

    // Full profile over all beams, used by sweeps and diagnostics.
    std::vector<double> pd_profile(const Vec2& target, Rng& rng) const;

private:
    ScenarioConfig cfg_;
    double threshold_ = 0.0;
    Vec2 tx_axis_{1.0, 0.0};               // transmit array axis unit vector
    std::vector<Vec2> rx_axes_;
    std::vector<CVec> codebook_;
};

}  // namespace cfisac
