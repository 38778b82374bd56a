#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "cfisac/agent.hpp"
#include "cfisac/twin.hpp"

namespace cfisac {

// Environment parameters wired to a scene's success threshold.
EnvParams make_env_params(const ScenarioConfig& cfg, int max_steps = 64, int tau = 5);

// Uniform-random probing over full episode budgets; tasks restart in place
// when they finish early so every episode yields exactly max_steps rows.
std::vector<Transition> collect_random_dataset(BeamEnv& env, int episodes, Rng& rng);

// Splits on recorded task boundaries, last fraction held out.
void split_dataset(const std::vector<Transition>& data, double held_out_fraction,
                   std::vector<Transition>& train, std::vector<Transition>& held_out);

// One task under uniform action choice, for reference performance.
EvalRecord random_policy_episode(Environment& env, Rng& rng);

// Probes beams in index order until the threshold is met, at most one pass.
EvalRecord baseline_sweep(BeamEnv& env, Rng& rng);

struct PsoConfig {
    int particles = 4;
    double inertia = 0.7;
    double c_personal = 1.5;
    double c_social = 1.5;
};

// Integer particle swarm over the beam index; every fitness evaluation
// spends one probe of the episode budget.
EvalRecord baseline_pso(BeamEnv& env, const PsoConfig& cfg, Rng& rng);

struct EvalSummary {
    int episodes = 0;
    double mean_steps = 0.0;
    double sd_steps = 0.0;
    double ci_low = 0.0;   // normal 95% interval on the mean
    double ci_high = 0.0;
    double success_rate = 0.0;
};

EvalSummary summarize(const std::vector<EvalRecord>& records);

using EpisodeRunner = std::function<EvalRecord(BeamEnv&, Rng&)>;

// Runs one episode per index with an episode-keyed generator stream, so
// different policies evaluated with the same seed see identical spawns.
std::vector<EvalRecord> run_paired_eval(const ScenarioConfig& cfg,
                                        const EnvParams& params, int episodes,
                                        std::uint64_t seed,
                                        const EpisodeRunner& run_one);

struct AuditReport {
    std::uint64_t real_transitions = 0;
    std::uint64_t real_resets = 0;
    std::uint64_t synthetic_transitions = 0;
    std::uint64_t synthetic_resets = 0;

    double real_fraction() const;
};

void write_audit_json(const std::string& path, const AuditReport& report);
AuditReport read_audit_json(const std::string& path);

struct PipelineConfig {
    ScenarioConfig scenario;
    EnvParams env;
    AgentConfig agent;
    TwinConfig twin;
    int collect_episodes = 200;
    double held_out_fraction = 0.2;
    int eval_episodes = 100;
    std::uint64_t seed = 1;
};

// Fills env from the scenario and keeps the sub-configs' defaults.
PipelineConfig make_pipeline(const ScenarioConfig& scenario);

struct DatasetBundle {
    std::vector<Transition> train;
    std::vector<Transition> held_out;
    AuditReport audit;  // real probes spent collecting
};

DatasetBundle collect_dataset(const PipelineConfig& cfg);

struct TwinBundle {
    TwinModel model;
    std::vector<TwinEpochStats> history;
    FidelityStats fidelity;  // generated vs held-out outcomes
};

TwinBundle build_twin(const PipelineConfig& cfg, const DatasetBundle& data);

struct AgentBundle {
    DqnAgent agent;
    std::vector<EpisodeStats> history;
    AuditReport audit;  // probes spent producing this agent
};

AgentBundle train_online_agent(const PipelineConfig& cfg);
AgentBundle train_offline_agent(const PipelineConfig& cfg, const DatasetBundle& data,
                                bool cql);
AgentBundle train_twin_agent(const PipelineConfig& cfg, const DatasetBundle& data,
                             TwinModel& twin, bool cql);

// Greedy single-task evaluation of a trained agent on the given seed stream,
// paired with the other methods.
std::vector<EvalRecord> evaluate_agent(DqnAgent& agent, const PipelineConfig& cfg);
std::vector<EvalRecord> evaluate_method(const std::string& method,
                                        const PipelineConfig& cfg,
                                        DqnAgent* agent = nullptr);

struct SweepPoint {
    double power_dbmw = 0.0;
    EvalSummary eval;
    FidelityStats fidelity;
    AuditReport audit;
};

// Full data-collection, twin, twin-trained-agent pipeline per power level,
// evaluated on the matching real scene.
std::vector<SweepPoint> dt_power_sweep(const PipelineConfig& base,
                                       const std::vector<double>& powers_dbmw);

struct ExperimentPlan {
    PipelineConfig pipeline;
    std::vector<std::string> methods;  // of: random sweep pso online offline dt_cql dt_nocql
    std::vector<double> power_sweep_dbmw;
    std::string out_dir = "out";
};

ExperimentPlan load_plan(const std::string& path);

// Executes the plan and writes datasets, checkpoints, metrics, the method
// summary table, plot-ready CSVs and the probe-source audit under out_dir.
void run_plan(const ExperimentPlan& plan);

// Generator stream ids, one per pipeline phase, so phases are reproducible
// independently of each other.
namespace streams {
constexpr std::uint64_t kCollect = 1;
constexpr std::uint64_t kTwinInit = 2;
constexpr std::uint64_t kTwinTrain = 3;
constexpr std::uint64_t kTwinFidelity = 4;
constexpr std::uint64_t kOnlineInit = 5;
constexpr std::uint64_t kOnlineTrain = 6;
constexpr std::uint64_t kOfflineInit = 7;
constexpr std::uint64_t kOfflineTrain = 8;
constexpr std::uint64_t kOfflineNoCqlInit = 9;
constexpr std::uint64_t kOfflineNoCqlTrain = 10;
constexpr std::uint64_t kDtInit = 11;
constexpr std::uint64_t kDtTrain = 12;
constexpr std::uint64_t kDtNoCqlInit = 13;
constexpr std::uint64_t kDtNoCqlTrain = 14;
constexpr std::uint64_t kEval = 15;
}  // namespace streams

}  // namespace cfisac
