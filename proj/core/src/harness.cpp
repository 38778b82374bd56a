#include "cfisac/harness.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "json.hpp"

namespace cfisac {

namespace {

void require(bool cond, const char* msg) {
    if (!cond) throw std::invalid_argument(msg);
}

std::ofstream open_out(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return out;
}

}  // namespace

EnvParams make_env_params(const ScenarioConfig& cfg, int max_steps, int tau) {
    EnvParams p;
    p.reward.zeta = cfg.zeta;
    p.max_steps = max_steps;
    p.tau = tau;
    return p;
}

std::vector<Transition> collect_random_dataset(BeamEnv& env, int episodes, Rng& rng) {
    require(episodes >= 1, "need at least one episode");
    std::vector<Transition> out;
    out.reserve(static_cast<std::size_t>(episodes) * env.params().max_steps);
    const int n_act = num_actions(env.params().tau);
    for (int e = 0; e < episodes; ++e) {
        env.reset(rng);
        for (int t = 0; t < env.params().max_steps; ++t) {
            if (env.done()) env.reset(rng);
            out.push_back(env.step(rng.uniform_int(0, n_act - 1), rng));
        }
    }
    return out;
}

void split_dataset(const std::vector<Transition>& data, double held_out_fraction,
                   std::vector<Transition>& train, std::vector<Transition>& held_out) {
    require(!data.empty(), "empty dataset");
    require(held_out_fraction >= 0.0 && held_out_fraction < 1.0,
            "held-out fraction must be in [0, 1)");
    std::vector<std::uint64_t> ids;
    for (const auto& t : data)
        if (ids.empty() || ids.back() != t.episode) ids.push_back(t.episode);
    const auto n_held = static_cast<std::size_t>(
        std::llround(held_out_fraction * static_cast<double>(ids.size())));
    const std::size_t cut = ids.size() - std::min(n_held, ids.size() - 1);
    train.clear();
    held_out.clear();
    for (const auto& t : data) {
        const auto pos = std::lower_bound(ids.begin(), ids.end(), t.episode) - ids.begin();
        if (static_cast<std::size_t>(pos) < cut)
            train.push_back(t);
        else
            held_out.push_back(t);
    }
}

EvalRecord random_policy_episode(Environment& env, Rng& rng) {
    const MdpState s0 = env.reset(rng);
    if (s0.pd >= env.params().reward.zeta) return {1, true, s0.pd};
    EvalRecord rec;
    const int n_act = num_actions(env.params().tau);
    while (!env.done()) {
        const Transition tr = env.step(rng.uniform_int(0, n_act - 1), rng);
        ++rec.steps;
        rec.final_pd = tr.next.pd;
    }
    rec.success = rec.final_pd >= env.params().reward.zeta;
    return rec;
}

EvalRecord baseline_sweep(BeamEnv& env, Rng& rng) {
    env.reset(rng);
    EvalRecord rec;
    const double zeta = env.params().reward.zeta;
    for (int mu = 0; mu < env.codebook_size(); ++mu) {
        rec.final_pd = env.probe_beam(mu, rng);
        ++rec.steps;
        if (rec.final_pd >= zeta) {
            rec.success = true;
            break;
        }
    }
    return rec;
}

EvalRecord baseline_pso(BeamEnv& env, const PsoConfig& cfg, Rng& rng) {
    require(cfg.particles >= 1, "need at least one particle");
    env.reset(rng);
    const int m = env.codebook_size();
    const double zeta = env.params().reward.zeta;
    const int budget = env.params().max_steps;

    EvalRecord rec;
    const auto probe = [&](int mu) {
        rec.final_pd = env.probe_beam(mu, rng);
        ++rec.steps;
        if (rec.final_pd >= zeta) rec.success = true;
        return rec.final_pd;
    };

    const int p = cfg.particles;
    std::vector<double> x(p), v(p, 0.0), best_x(p), best_f(p);
    double gbest_x = 0.0, gbest_f = -1.0;
    for (int i = 0; i < p && !rec.success && rec.steps < budget; ++i) {
        x[i] = rng.uniform_int(0, m - 1);
        best_x[i] = x[i];
        best_f[i] = probe(static_cast<int>(x[i]));
        if (best_f[i] > gbest_f) {
            gbest_f = best_f[i];
            gbest_x = x[i];
        }
    }
    while (!rec.success && rec.steps < budget) {
        for (int i = 0; i < p && !rec.success && rec.steps < budget; ++i) {
            v[i] = cfg.inertia * v[i] +
                   cfg.c_personal * rng.uniform() * (best_x[i] - x[i]) +
                   cfg.c_social * rng.uniform() * (gbest_x - x[i]);
            x[i] = std::clamp(std::round(x[i] + v[i]), 0.0, static_cast<double>(m - 1));
            const double f = probe(static_cast<int>(x[i]));
            if (f > best_f[i]) {
                best_f[i] = f;
                best_x[i] = x[i];
            }
            if (f > gbest_f) {
                gbest_f = f;
                gbest_x = x[i];
            }
        }
    }
    return rec;
}

EvalSummary summarize(const std::vector<EvalRecord>& records) {
    require(!records.empty(), "no evaluation records");
    EvalSummary s;
    s.episodes = static_cast<int>(records.size());
    double sum = 0.0, succ = 0.0;
    for (const auto& r : records) {
        sum += r.steps;
        succ += r.success ? 1.0 : 0.0;
    }
    s.mean_steps = sum / s.episodes;
    s.success_rate = succ / s.episodes;
    if (records.size() > 1) {
        double ss = 0.0;
        for (const auto& r : records) {
            const double d = r.steps - s.mean_steps;
            ss += d * d;
        }
        s.sd_steps = std::sqrt(ss / (s.episodes - 1));
    }
    const double half = 1.96 * s.sd_steps / std::sqrt(static_cast<double>(s.episodes));
    s.ci_low = s.mean_steps - half;
    s.ci_high = s.mean_steps + half;
    return s;
}

std::vector<EvalRecord> run_paired_eval(const ScenarioConfig& cfg,
                                        const EnvParams& params, int episodes,
                                        std::uint64_t seed,
                                        const EpisodeRunner& run_one) {
    require(episodes >= 1, "need at least one episode");
    BeamEnv env(cfg, params);
    Rng root(seed);
    std::vector<EvalRecord> out;
    out.reserve(static_cast<std::size_t>(episodes));
    for (int e = 0; e < episodes; ++e) {
        Rng rng = root.fork(static_cast<std::uint64_t>(e));
        out.push_back(run_one(env, rng));
    }
    return out;
}

double AuditReport::real_fraction() const {
    const double total =
        static_cast<double>(real_transitions) + static_cast<double>(synthetic_transitions);
    if (total == 0.0) return 0.0;
    return static_cast<double>(real_transitions) / total;
}

void write_audit_json(const std::string& path, const AuditReport& report) {
    nlohmann::json j;
    j["real_transitions"] = report.real_transitions;
    j["real_resets"] = report.real_resets;
    j["synthetic_transitions"] = report.synthetic_transitions;
    j["synthetic_resets"] = report.synthetic_resets;
    j["real_fraction"] = report.real_fraction();
    auto out = open_out(path);
    out << j.dump(2) << "\n";
}

AuditReport read_audit_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json j;
    in >> j;
    AuditReport r;
    r.real_transitions = j.at("real_transitions").get<std::uint64_t>();
    r.real_resets = j.at("real_resets").get<std::uint64_t>();
    r.synthetic_transitions = j.at("synthetic_transitions").get<std::uint64_t>();
    r.synthetic_resets = j.at("synthetic_resets").get<std::uint64_t>();
    return r;
}

PipelineConfig make_pipeline(const ScenarioConfig& scenario) {
    PipelineConfig cfg;
    cfg.scenario = scenario;
    cfg.env = make_env_params(scenario);
    cfg.twin.pd_floor = scenario.p_fa;  // detector outcomes never fall below P_FA
    cfg.seed = scenario.seed;
    return cfg;
}

DatasetBundle collect_dataset(const PipelineConfig& cfg) {
    BeamEnv env(cfg.scenario, cfg.env);
    Rng rng = Rng(cfg.seed).fork(streams::kCollect);
    const std::vector<Transition> rows =
        collect_random_dataset(env, cfg.collect_episodes, rng);
    DatasetBundle b;
    split_dataset(rows, cfg.held_out_fraction, b.train, b.held_out);
    b.audit.real_transitions = env.probe_count();
    b.audit.real_resets = env.reset_count();
    return b;
}

TwinBundle build_twin(const PipelineConfig& cfg, const DatasetBundle& data) {
    Rng root(cfg.seed);
    Rng init = root.fork(streams::kTwinInit);
    TwinModel model = make_twin(cfg.twin, init);
    Rng train = root.fork(streams::kTwinTrain);
    std::vector<TwinEpochStats> hist = train_twin(model, data.train, train);
    Rng fid = root.fork(streams::kTwinFidelity);
    FidelityStats f = data.held_out.empty() ? FidelityStats{}
                                            : twin_fidelity(model, data.held_out, fid);
    return {std::move(model), std::move(hist), f};
}

AgentBundle train_online_agent(const PipelineConfig& cfg) {
    BeamEnv env(cfg.scenario, cfg.env);
    Rng root(cfg.seed);
    Rng init = root.fork(streams::kOnlineInit);
    DqnAgent agent(cfg.agent, cfg.env, init);
    Rng train = root.fork(streams::kOnlineTrain);
    std::vector<EpisodeStats> hist = agent.train(&env, train);
    AuditReport a;
    a.real_transitions = env.probe_count();
    a.real_resets = env.reset_count();
    return {std::move(agent), std::move(hist), a};
}

AgentBundle train_offline_agent(const PipelineConfig& cfg, const DatasetBundle& data,
                                bool cql) {
    AgentConfig ac = cfg.agent;
    if (!cql) ac.cql_alpha = 0.0;
    Rng root(cfg.seed);
    Rng init = root.fork(cql ? streams::kOfflineInit : streams::kOfflineNoCqlInit);
    DqnAgent agent(ac, cfg.env, init);
    agent.seed_replay(data.train);
    Rng train = root.fork(cql ? streams::kOfflineTrain : streams::kOfflineNoCqlTrain);
    std::vector<EpisodeStats> hist = agent.train(nullptr, train);
    return {std::move(agent), std::move(hist), data.audit};
}

AgentBundle train_twin_agent(const PipelineConfig& cfg, const DatasetBundle& data,
                             TwinModel& twin, bool cql) {
    AgentConfig ac = cfg.agent;
    if (!cql) ac.cql_alpha = 0.0;
    TwinEnv env(&twin, episode_start_states(data.train), cfg.env,
                cfg.scenario.geometry.antennas);
    Rng root(cfg.seed);
    Rng init = root.fork(cql ? streams::kDtInit : streams::kDtNoCqlInit);
    DqnAgent agent(ac, cfg.env, init);
    // The replay fills with synthetic rollouts only; the recorded data
    // enters through the conservative anchor, which keeps the penalty's
    // expectation over the collection behavior policy.
    agent.set_conservative_anchor(data.train);
    Rng train = root.fork(cql ? streams::kDtTrain : streams::kDtNoCqlTrain);
    std::vector<EpisodeStats> hist = agent.train(&env, train);
    AuditReport a = data.audit;
    a.synthetic_transitions = env.probe_count();
    a.synthetic_resets = env.reset_count();
    return {std::move(agent), std::move(hist), a};
}

std::vector<EvalRecord> evaluate_agent(DqnAgent& agent, const PipelineConfig& cfg) {
    const std::uint64_t seed = Rng(cfg.seed).fork(streams::kEval).seed();
    return run_paired_eval(cfg.scenario, cfg.env, cfg.eval_episodes, seed,
                           [&agent](BeamEnv& env, Rng& rng) {
                               return agent.evaluate_episode(env, rng);
                           });
}

std::vector<EvalRecord> evaluate_method(const std::string& method,
                                        const PipelineConfig& cfg, DqnAgent* agent) {
    const std::uint64_t seed = Rng(cfg.seed).fork(streams::kEval).seed();
    EpisodeRunner runner;
    if (method == "random") {
        runner = [](BeamEnv& env, Rng& rng) { return random_policy_episode(env, rng); };
    } else if (method == "sweep") {
        runner = [](BeamEnv& env, Rng& rng) { return baseline_sweep(env, rng); };
    } else if (method == "pso") {
        runner = [](BeamEnv& env, Rng& rng) {
            return baseline_pso(env, PsoConfig{}, rng);
        };
    } else if (method == "online" || method == "offline" || method == "dt_cql" ||
               method == "dt_nocql") {
        require(agent != nullptr, "method needs a trained agent");
        runner = [agent](BeamEnv& env, Rng& rng) {
            return agent->evaluate_episode(env, rng);
        };
    } else {
        throw std::invalid_argument("unknown method: " + method);
    }
    return run_paired_eval(cfg.scenario, cfg.env, cfg.eval_episodes, seed, runner);
}

std::vector<SweepPoint> dt_power_sweep(const PipelineConfig& base,
                                       const std::vector<double>& powers_dbmw) {
    std::vector<SweepPoint> out;
    out.reserve(powers_dbmw.size());
    for (const double p : powers_dbmw) {
        PipelineConfig cfg = base;
        cfg.scenario.set_tx_power_dbmw(p);
        const DatasetBundle data = collect_dataset(cfg);
        TwinBundle twin = build_twin(cfg, data);
        AgentBundle agent = train_twin_agent(cfg, data, twin.model, true);
        SweepPoint pt;
        pt.power_dbmw = p;
        pt.eval = summarize(evaluate_agent(agent.agent, cfg));
        pt.fidelity = twin.fidelity;
        pt.audit = agent.audit;
        out.push_back(pt);
    }
    return out;
}

ExperimentPlan load_plan(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    nlohmann::json j;
    in >> j;

    ExperimentPlan plan;
    if (j.contains("scenario_path")) {
        plan.pipeline =
            make_pipeline(load_scenario_config(j.at("scenario_path").get<std::string>()));
    } else if (j.contains("scenario")) {
        const auto tmp = std::filesystem::temp_directory_path() / "cfisac_plan_scn.json";
        {
            auto out = open_out(tmp);
            out << j.at("scenario").dump();
        }
        plan.pipeline = make_pipeline(load_scenario_config(tmp.string()));
    } else {
        plan.pipeline = make_pipeline(ScenarioConfig{});
    }

    PipelineConfig& pc = plan.pipeline;
    if (j.contains("seed")) pc.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("collect_episodes")) pc.collect_episodes = j.at("collect_episodes");
    if (j.contains("held_out_fraction")) pc.held_out_fraction = j.at("held_out_fraction");
    if (j.contains("eval_episodes")) pc.eval_episodes = j.at("eval_episodes");
    if (j.contains("train_episodes")) pc.agent.episodes = j.at("train_episodes");
    if (j.contains("twin_epochs")) pc.twin.epochs = j.at("twin_epochs");
    if (j.contains("cql_alpha")) pc.agent.cql_alpha = j.at("cql_alpha");
    if (j.contains("methods"))
        plan.methods = j.at("methods").get<std::vector<std::string>>();
    else
        plan.methods = {"random", "sweep", "pso", "online", "dt_cql"};
    if (j.contains("power_sweep_dbmw"))
        plan.power_sweep_dbmw = j.at("power_sweep_dbmw").get<std::vector<double>>();
    if (j.contains("out_dir")) plan.out_dir = j.at("out_dir");
    return plan;
}

void run_plan(const ExperimentPlan& plan) {
    namespace fs = std::filesystem;
    const fs::path out_dir(plan.out_dir);
    fs::create_directories(out_dir / "plot_data");
    const PipelineConfig& cfg = plan.pipeline;
    save_scenario_config(cfg.scenario, (out_dir / "scenario.json").string());

    const auto has = [&](const std::string& m) {
        return std::find(plan.methods.begin(), plan.methods.end(), m) !=
               plan.methods.end();
    };
    const bool needs_data = has("offline") || has("dt_cql") || has("dt_nocql");
    const bool needs_twin = has("dt_cql") || has("dt_nocql");

    DatasetBundle data;
    if (needs_data) {
        data = collect_dataset(cfg);
        std::vector<Transition> all = data.train;
        all.insert(all.end(), data.held_out.begin(), data.held_out.end());
        write_transitions_csv((out_dir / "dataset.csv").string(), all);
    }

    TwinBundle twin;
    if (needs_twin) {
        twin = build_twin(cfg, data);
        write_twin_metrics_csv((out_dir / "twin_metrics.csv").string(), twin.history);
        save_twin((out_dir / "twin.ckpt").string(), twin.model);
        nlohmann::json fj;
        fj["kl"] = twin.fidelity.kl;
        fj["w1"] = twin.fidelity.w1;
        fj["mmd"] = twin.fidelity.mmd;
        fj["n"] = twin.fidelity.n;
        auto out = open_out(out_dir / "fidelity.json");
        out << fj.dump(2) << "\n";
    }

    std::map<std::string, EvalSummary> table;
    std::vector<std::string> order;
    AuditReport dt_audit;
    bool have_dt_audit = false;
    for (const std::string& m : plan.methods) {
        std::vector<EvalRecord> records;
        if (m == "random" || m == "sweep" || m == "pso") {
            records = evaluate_method(m, cfg);
        } else {
            AgentBundle bundle = [&]() {
                if (m == "online") return train_online_agent(cfg);
                if (m == "offline") return train_offline_agent(cfg, data, true);
                if (m == "dt_cql") return train_twin_agent(cfg, data, twin.model, true);
                if (m == "dt_nocql") return train_twin_agent(cfg, data, twin.model, false);
                throw std::invalid_argument("unknown method: " + m);
            }();
            write_episode_metrics_csv((out_dir / ("metrics_" + m + ".csv")).string(),
                                      bundle.history);
            bundle.agent.save((out_dir / ("agent_" + m + ".ckpt")).string());
            if (m == "dt_cql") {
                dt_audit = bundle.audit;
                have_dt_audit = true;
            }
            records = evaluate_method(m, cfg, &bundle.agent);
        }
        table[m] = summarize(records);
        order.push_back(m);
    }

    char buf[256];
    {
        auto out = open_out(out_dir / "summary.csv");
        out << "method,power_dbmw,episodes,mean_steps,ci_low,ci_high,success_rate\n";
        for (const std::string& m : order) {
            const EvalSummary& s = table[m];
            std::snprintf(buf, sizeof(buf), "%s,%.10g,%d,%.10g,%.10g,%.10g,%.10g\n",
                          m.c_str(), cfg.scenario.tx_power_dbmw(), s.episodes,
                          s.mean_steps, s.ci_low, s.ci_high, s.success_rate);
            out << buf;
        }
    }
    {
        auto out = open_out(out_dir / "plot_data" / "steps_by_method.csv");
        out << "x,mean,ci_low,ci_high\n";
        for (const std::string& m : order) {
            const EvalSummary& s = table[m];
            std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g\n", m.c_str(),
                          s.mean_steps, s.ci_low, s.ci_high);
            out << buf;
        }
    }

    if (!plan.power_sweep_dbmw.empty()) {
        const std::vector<SweepPoint> sweep = dt_power_sweep(cfg, plan.power_sweep_dbmw);
        auto out = open_out(out_dir / "plot_data" / "steps_vs_power.csv");
        out << "x,mean,ci_low,ci_high\n";
        for (const SweepPoint& p : sweep) {
            std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g,%.10g\n", p.power_dbmw,
                          p.eval.mean_steps, p.eval.ci_low, p.eval.ci_high);
            out << buf;
        }
    }

    if (have_dt_audit)
        write_audit_json((out_dir / "audit.json").string(), dt_audit);
}

}  // namespace cfisac
