// Command line front end: scene simulation, dataset collection, twin and
// agent training, policy evaluation, full experiment plans and probe audits.

#include <cstdio>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "cfisac/harness.hpp"

namespace {

using namespace cfisac;

ScenarioConfig load_scenario_or_default(const std::string& path) {
    if (path.empty()) return ScenarioConfig{};
    return load_scenario_config(path);
}

int cmd_simulate(const std::string& config, std::uint64_t seed,
                 const std::string& out) {
    const ScenarioConfig cfg = load_scenario_or_default(config);
    Scene scene(cfg);
    Rng rng(seed);
    Vec2 target;
    if (cfg.target_xy) {
        target = *cfg.target_xy;
    } else {
        target.x = rng.uniform(0.0, cfg.geometry.area_side);
        target.y = rng.uniform(0.0, cfg.geometry.area_side);
    }
    const std::vector<double> profile = scene.pd_profile(target, rng);
    std::ofstream os(out);
    if (!os) {
        std::fprintf(stderr, "cannot write %s\n", out.c_str());
        return 1;
    }
    os << "mu,pd\n";
    char buf[64];
    for (std::size_t mu = 0; mu < profile.size(); ++mu) {
        std::snprintf(buf, sizeof(buf), "%zu,%.10g\n", mu, profile[mu]);
        os << buf;
    }
    double best = 0.0;
    std::size_t best_mu = 0;
    for (std::size_t mu = 0; mu < profile.size(); ++mu)
        if (profile[mu] > best) {
            best = profile[mu];
            best_mu = mu;
        }
    std::printf("target (%.2f, %.2f)  threshold %.6g  best beam %zu  best pd %.6g\n",
                target.x, target.y, scene.threshold(), best_mu, best);
    return 0;
}

int cmd_collect(const std::string& config, int episodes, std::uint64_t seed,
                const std::string& out) {
    PipelineConfig cfg = make_pipeline(load_scenario_or_default(config));
    cfg.seed = seed;
    BeamEnv env(cfg.scenario, cfg.env);
    Rng rng = Rng(seed).fork(streams::kCollect);
    const std::vector<Transition> rows = collect_random_dataset(env, episodes, rng);
    write_transitions_csv(out, rows);
    std::printf("wrote %zu transitions (%llu tasks) to %s\n", rows.size(),
                static_cast<unsigned long long>(env.reset_count()), out.c_str());
    return 0;
}

int cmd_train_twin(const std::string& config, const std::string& data_path,
                   int epochs, std::uint64_t seed, const std::string& out,
                   const std::string& metrics) {
    PipelineConfig cfg = make_pipeline(load_scenario_or_default(config));
    cfg.seed = seed;
    cfg.twin.epochs = epochs;
    const std::vector<Transition> data = read_transitions_csv(data_path);
    Rng init = Rng(seed).fork(streams::kTwinInit);
    TwinModel model = make_twin(cfg.twin, init);
    Rng train = Rng(seed).fork(streams::kTwinTrain);
    const std::vector<TwinEpochStats> hist = train_twin(model, data, train);
    save_twin(out, model);
    if (!metrics.empty()) write_twin_metrics_csv(metrics, hist);
    std::printf("trained twin on %zu transitions, final losses g %.4f d %.4f\n",
                data.size(), hist.back().loss_g, hist.back().loss_d);
    return 0;
}

int cmd_train_agent(const std::string& config, const std::string& mode,
                    const std::string& data_path, const std::string& twin_path,
                    bool cql, int episodes, std::uint64_t seed,
                    const std::string& out, const std::string& metrics) {
    PipelineConfig cfg = make_pipeline(load_scenario_or_default(config));
    cfg.seed = seed;
    cfg.agent.episodes = episodes;

    DatasetBundle data;
    if (mode != "online") {
        if (data_path.empty()) {
            std::fprintf(stderr, "mode %s needs --data\n", mode.c_str());
            return 1;
        }
        std::vector<Transition> rows = read_transitions_csv(data_path);
        split_dataset(rows, cfg.held_out_fraction, data.train, data.held_out);
        data.audit.real_transitions = rows.size();
    }

    AgentBundle bundle = [&]() {
        if (mode == "online") return train_online_agent(cfg);
        if (mode == "offline") return train_offline_agent(cfg, data, cql);
        if (mode == "twin") {
            if (twin_path.empty())
                throw std::invalid_argument("mode twin needs --twin");
            TwinModel twin = load_twin(twin_path);
            return train_twin_agent(cfg, data, twin, cql);
        }
        throw std::invalid_argument("unknown mode: " + mode);
    }();
    bundle.agent.save(out);
    if (!metrics.empty()) write_episode_metrics_csv(metrics, bundle.history);
    std::printf("trained %s agent over %zu episodes, %lld gradient steps\n",
                mode.c_str(), bundle.history.size(),
                static_cast<long long>(bundle.agent.gradient_steps()));
    return 0;
}

int cmd_evaluate(const std::string& config, const std::string& method,
                 const std::string& agent_path, int episodes, std::uint64_t seed,
                 const std::string& out) {
    PipelineConfig cfg = make_pipeline(load_scenario_or_default(config));
    cfg.seed = seed;
    cfg.eval_episodes = episodes;

    std::optional<DqnAgent> agent;
    std::vector<EvalRecord> records;
    if (method == "agent") {
        if (agent_path.empty()) {
            std::fprintf(stderr, "method agent needs --agent\n");
            return 1;
        }
        agent.emplace(DqnAgent::load(agent_path, cfg.agent, cfg.env));
        records = evaluate_agent(*agent, cfg);
    } else {
        records = evaluate_method(method, cfg);
    }

    if (!out.empty()) {
        std::ofstream os(out);
        if (!os) {
            std::fprintf(stderr, "cannot write %s\n", out.c_str());
            return 1;
        }
        os << "episode,steps,success,final_pd\n";
        char buf[96];
        for (std::size_t i = 0; i < records.size(); ++i) {
            std::snprintf(buf, sizeof(buf), "%zu,%d,%d,%.10g\n", i, records[i].steps,
                          records[i].success ? 1 : 0, records[i].final_pd);
            os << buf;
        }
    }
    const EvalSummary s = summarize(records);
    std::printf("%s: mean steps %.3f [%.3f, %.3f], success rate %.3f over %d episodes\n",
                method.c_str(), s.mean_steps, s.ci_low, s.ci_high, s.success_rate,
                s.episodes);
    return 0;
}

int cmd_plan(const std::string& plan_path, const std::string& out_dir) {
    ExperimentPlan plan = load_plan(plan_path);
    if (!out_dir.empty()) plan.out_dir = out_dir;
    run_plan(plan);
    std::printf("plan outputs written under %s\n", plan.out_dir.c_str());
    return 0;
}

int cmd_audit(const std::string& path, double max_real_fraction) {
    const AuditReport r = read_audit_json(path);
    std::printf("real transitions %llu (resets %llu), synthetic %llu (resets %llu)\n",
                static_cast<unsigned long long>(r.real_transitions),
                static_cast<unsigned long long>(r.real_resets),
                static_cast<unsigned long long>(r.synthetic_transitions),
                static_cast<unsigned long long>(r.synthetic_resets));
    std::printf("real fraction %.6f (limit %.6f)\n", r.real_fraction(),
                max_real_fraction);
    return r.real_fraction() <= max_real_fraction ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"beam management experiments"};
    app.require_subcommand(1);

    std::string config, data_path, twin_path, agent_path, out, metrics, plan_path;
    std::string mode = "online", method = "random";
    std::uint64_t seed = 1;
    int episodes = 0;
    int epochs = 100;
    bool cql = true;
    double max_real_fraction = 0.2;

    auto* sim = app.add_subcommand("simulate", "per-beam detection profile of a scene");
    sim->add_option("--config", config, "scenario json");
    sim->add_option("--seed", seed, "generator seed");
    sim->add_option("--out", out, "output csv")->required();

    auto* col = app.add_subcommand("collect", "record random-policy transitions");
    col->add_option("--config", config, "scenario json");
    col->add_option("--episodes", episodes, "episode budget count")->default_val(200);
    col->add_option("--seed", seed, "generator seed");
    col->add_option("--out", out, "output csv")->required();

    auto* twn = app.add_subcommand("train-twin", "fit the probe twin to a dataset");
    twn->add_option("--config", config, "scenario json");
    twn->add_option("--data", data_path, "transitions csv")->required();
    twn->add_option("--epochs", epochs, "training epochs")->default_val(100);
    twn->add_option("--seed", seed, "generator seed");
    twn->add_option("--out", out, "checkpoint path")->required();
    twn->add_option("--metrics", metrics, "per-epoch loss csv");

    auto* agt = app.add_subcommand("train-agent", "train a beam selection agent");
    agt->add_option("--config", config, "scenario json");
    agt->add_option("--mode", mode, "online, offline or twin")->default_val("online");
    agt->add_option("--data", data_path, "transitions csv (offline and twin modes)");
    agt->add_option("--twin", twin_path, "twin checkpoint (twin mode)");
    agt->add_flag("--cql,!--no-cql", cql, "conservative value penalty");
    agt->add_option("--episodes", episodes, "training episodes")->default_val(1000);
    agt->add_option("--seed", seed, "generator seed");
    agt->add_option("--out", out, "checkpoint path")->required();
    agt->add_option("--metrics", metrics, "per-episode metrics csv");

    auto* evl = app.add_subcommand("evaluate", "score a policy on the real scene");
    evl->add_option("--config", config, "scenario json");
    evl->add_option("--method", method, "random, sweep, pso or agent")
        ->default_val("random");
    evl->add_option("--agent", agent_path, "agent checkpoint (method agent)");
    evl->add_option("--episodes", episodes, "evaluation episodes")->default_val(100);
    evl->add_option("--seed", seed, "generator seed");
    evl->add_option("--out", out, "per-episode csv");

    auto* pln = app.add_subcommand("plan", "run a full experiment plan");
    pln->add_option("--plan", plan_path, "plan json")->required();
    pln->add_option("--out", out, "override the plan's output directory");

    auto* aud = app.add_subcommand("audit", "check the probe-source audit");
    aud->add_option("--in", plan_path, "audit json")->required();
    aud->add_option("--max-real-fraction", max_real_fraction, "pass threshold")
        ->default_val(0.2);

    CLI11_PARSE(app, argc, argv);

    try {
        if (sim->parsed()) return cmd_simulate(config, seed, out);
        if (col->parsed()) return cmd_collect(config, episodes, seed, out);
        if (twn->parsed())
            return cmd_train_twin(config, data_path, epochs, seed, out, metrics);
        if (agt->parsed())
            return cmd_train_agent(config, mode, data_path, twin_path, cql, episodes,
                                   seed, out, metrics);
        if (evl->parsed())
            return cmd_evaluate(config, method, agent_path, episodes, seed, out);
        if (pln->parsed()) return cmd_plan(plan_path, out);
        if (aud->parsed()) return cmd_audit(plan_path, max_real_fraction);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
