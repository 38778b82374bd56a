#include <cmath>
#include <fstream>
#include <vector>

#include "cfisac/agent.hpp"
#include "cfisac/detection.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace cfisac;

namespace {

AgentConfig small_agent_config() {
    AgentConfig cfg;
    cfg.embed_dim = 8;
    cfg.hidden = 16;
    cfg.hidden_layers = 2;
    cfg.batch_size = 8;
    return cfg;
}

Mat encode_one(const MdpState& s, int embed_dim) {
    const auto f = encode_state(s, embed_dim);
    Mat x(1, static_cast<Eigen::Index>(f.size()));
    for (std::size_t i = 0; i < f.size(); ++i) x(0, static_cast<Eigen::Index>(i)) = f[i];
    return x;
}

Transition make_transition(MdpState s, int action, double rb, double rs, MdpState next,
                           bool done, std::uint64_t ep = 1, int step = 1) {
    Transition t;
    t.episode = ep;
    t.step = step;
    t.s = s;
    t.action = action;
    t.reward_base = rb;
    t.reward_shaped = rs;
    t.next = next;
    t.done = done;
    return t;
}

}  // namespace

TEST_CASE("state encoding concatenates beam code, rescaled pd and flag") {
    const MdpState s{0, 0.0, 0};
    const auto f = encode_state(s, 16);
    REQUIRE(f.size() == 18);
    for (int i = 0; i < 8; ++i) {
        CHECK(f[static_cast<std::size_t>(2 * i)] == 0.0);
        CHECK(f[static_cast<std::size_t>(2 * i + 1)] == 1.0);
    }
    CHECK(f[16] == 0.0);
    CHECK(f[17] == 0.0);

    const auto g = encode_state({5, 1.0, -1}, 16);
    const auto code = sinusoidal_embedding(5.0, 16);
    for (int i = 0; i < 16; ++i)
        CHECK(g[static_cast<std::size_t>(i)] == code[static_cast<std::size_t>(i)]);
    CHECK(g[16] == doctest::Approx(1.0).epsilon(1e-15));  // variant sigmoid at 1
    CHECK(g[17] == -1.0);
    CHECK(encode_state({5, 0.1, 1}, 16)[16] == doctest::Approx(variant_sigmoid(0.1)));
}

TEST_CASE("exploration probability decays linearly to zero") {
    CHECK(epsilon_for_episode(0, 1000, 0.2) == doctest::Approx(0.2));
    CHECK(epsilon_for_episode(500, 1000, 0.2) == doctest::Approx(0.1));
    CHECK(epsilon_for_episode(1000, 1000, 0.2) == 0.0);
    CHECK(epsilon_for_episode(2000, 1000, 0.2) == 0.0);  // floored
    CHECK_THROWS(epsilon_for_episode(1, 0, 0.2));
    CHECK_THROWS(epsilon_for_episode(-1, 10, 0.2));
}

TEST_CASE("dueling head composes value and centered advantages") {
    Rng rng(5);
    QNetwork net(10, 12, 2, 10, rng);
    Mat x = Mat::NullaryExpr(4, 10, [&]() { return rng.uniform(-1.0, 1.0); });

    const Mat q = net.forward(x, false);
    const Mat h = net.trunk().forward(x, false);
    const Mat u = net.value_head().forward(h, false);
    const Mat a = net.advantage_head().forward(h, false);
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        const double amax = a.row(i).maxCoeff();
        for (Eigen::Index j = 0; j < q.cols(); ++j)
            CHECK(q(i, j) == doctest::Approx(u(i, 0) + a(i, j) - amax).epsilon(1e-12));
        // The best action's value collapses to the state value.
        CHECK(q.row(i).maxCoeff() == doctest::Approx(u(i, 0)).epsilon(1e-12));
    }
}

TEST_CASE("q-network gradients match finite differences through both heads") {
    Rng rng(11);
    QNetwork net(6, 10, 2, 10, rng);
    const Mat x = Mat::NullaryExpr(5, 6, [&]() { return rng.uniform(-1.0, 1.0); });
    const Mat w = Mat::NullaryExpr(5, 10, [&]() { return rng.uniform(-1.0, 1.0); });

    net.zero_grads();
    net.forward(x, true);
    net.backward(w);
    auto loss = [&](QNetwork& n) { return (n.forward(x, true).array() * w.array()).sum(); };
    const auto params = net.params();
    const auto grads = net.grads();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double err =
            oracle::max_grad_rel_err(net, loss, params[i]->data(), grads[i]->data(),
                                     params[i]->rows(), params[i]->cols(), 40, 1e-6);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("combined td and conservative gradient matches finite differences") {
    Rng rng(13);
    QNetwork net(6, 8, 1, 10, rng);
    const Mat x = Mat::NullaryExpr(4, 6, [&]() { return rng.uniform(-1.0, 1.0); });
    const std::vector<int> act{3, 0, 9, 5};
    const std::vector<double> y{0.4, -1.2, 2.0, 0.0};
    const double alpha = 0.1;

    // mean squared TD error plus alpha * mean(logsumexp(Q) - Q(., a))
    auto loss = [&](QNetwork& n) {
        const Mat q = n.forward(x, true);
        double L = 0.0;
        const double invB = 1.0 / static_cast<double>(q.rows());
        for (Eigen::Index i = 0; i < q.rows(); ++i) {
            const double diff = q(i, act[static_cast<std::size_t>(i)]) - y[static_cast<std::size_t>(i)];
            L += diff * diff * invB;
            const double m = q.row(i).maxCoeff();
            double z = 0.0;
            for (Eigen::Index j = 0; j < q.cols(); ++j) z += std::exp(q(i, j) - m);
            L += alpha * (m + std::log(z) - q(i, act[static_cast<std::size_t>(i)])) * invB;
        }
        return L;
    };

    net.zero_grads();
    const Mat q = net.forward(x, true);
    Mat dq = Mat::Zero(q.rows(), q.cols());
    const double invB = 1.0 / static_cast<double>(q.rows());
    for (Eigen::Index i = 0; i < q.rows(); ++i) {
        const int a = act[static_cast<std::size_t>(i)];
        dq(i, a) += 2.0 * (q(i, a) - y[static_cast<std::size_t>(i)]) * invB;
        const double m = q.row(i).maxCoeff();
        double z = 0.0;
        for (Eigen::Index j = 0; j < q.cols(); ++j) z += std::exp(q(i, j) - m);
        for (Eigen::Index j = 0; j < q.cols(); ++j)
            dq(i, j) += alpha * invB * std::exp(q(i, j) - m) / z;
        dq(i, a) -= alpha * invB;
    }
    net.backward(dq);

    const auto params = net.params();
    const auto grads = net.grads();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double err =
            oracle::max_grad_rel_err(net, loss, params[i]->data(), grads[i]->data(),
                                     params[i]->rows(), params[i]->cols(), 40, 1e-6);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("replay buffer evicts oldest entries first") {
    ReplayBuffer buf(4);
    CHECK_THROWS(ReplayBuffer(0));
    Rng rng(3);
    CHECK_THROWS(buf.sample_one(rng));

    for (std::uint64_t e = 1; e <= 6; ++e)
        buf.push(make_transition({0, 0.1, 0}, 0, -1.0, 0.0, {1, 0.2, 1}, false, e));
    CHECK(buf.size() == 4);
    // 1 and 2 were overwritten by 5 and 6.
    for (int i = 0; i < 200; ++i) {
        const std::uint64_t e = buf.sample_one(rng).episode;
        CHECK(e >= 3);
        CHECK(e <= 6);
    }
    const auto batch = buf.sample(16, rng);
    CHECK(batch.size() == 16);
}

TEST_CASE("double dqn targets use online argmax, target values and a terminal mask") {
    AgentConfig cfg = small_agent_config();
    cfg.cql_alpha = 0.0;
    Rng rng(21);
    DqnAgent agent(cfg, EnvParams{}, rng);

    std::vector<Transition> data;
    data.push_back(make_transition({3, 0.2, 0}, 7, -1.0, 0.1, {5, 0.3, 1}, false));
    data.push_back(make_transition({10, 0.5, -1}, 2, 5.0, -0.05, {12, 0.95, 1}, true));
    std::vector<const Transition*> batch{&data[0], &data[1]};

    // Reproduce the target from the public nets before the update mutates them.
    const Vec qn_online = agent.q_values(data[0].next);
    Eigen::Index astar = 0;
    qn_online.maxCoeff(&astar);
    const Mat xn = encode_one(data[0].next, cfg.embed_dim);
    const double qt = agent.target_net().forward(xn, false)(0, astar);
    const double y0 = -1.0 + 0.1 + cfg.gamma * qt;
    const double y1 = 5.0 - 0.05;  // terminal: no bootstrap term

    const double q0 = agent.q_values(data[0].s)(7);
    const double q1 = agent.q_values(data[1].s)(2);
    const double want_td = 0.5 * ((q0 - y0) * (q0 - y0) + (q1 - y1) * (q1 - y1));

    const LossStats stats = agent.update_from_batch(batch);
    CHECK(stats.td == doctest::Approx(want_td).epsilon(1e-10));
    CHECK(agent.gradient_steps() == 1);
}

TEST_CASE("conservative penalty reports ln(num actions) for flat q rows") {
    AgentConfig cfg = small_agent_config();
    cfg.cql_alpha = 0.0;  // the statistic is reported even when disabled
    Rng rng(31);
    DqnAgent agent(cfg, EnvParams{}, rng);
    for (Mat* p : agent.online_net().params()) p->setZero();

    std::vector<Transition> data{
        make_transition({3, 0.2, 0}, 4, -1.0, 0.0, {5, 0.3, 1}, true),
        make_transition({8, 0.6, 1}, 9, -1.0, 0.0, {9, 0.62, 1}, true)};
    const LossStats stats = agent.update_from_batch({&data[0], &data[1]});
    CHECK(stats.cql == doctest::Approx(std::log(10.0)).epsilon(1e-12));

    // The penalty weight changes the parameter update.
    AgentConfig with = small_agent_config();
    with.cql_alpha = 0.5;
    AgentConfig without = small_agent_config();
    without.cql_alpha = 0.0;
    Rng ra(41), rb(41);
    DqnAgent a(with, EnvParams{}, ra), b(without, EnvParams{}, rb);
    a.update_from_batch({&data[0], &data[1]});
    b.update_from_batch({&data[0], &data[1]});
    double diff = 0.0;
    const auto pa = a.online_net().params(), pb = b.online_net().params();
    for (std::size_t i = 0; i < pa.size(); ++i)
        diff = std::max(diff, (*pa[i] - *pb[i]).cwiseAbs().maxCoeff());
    CHECK(diff > 0.0);
}

TEST_CASE("conservative updates read the anchor rows, not the td minibatch") {
    AgentConfig cfg = small_agent_config();
    cfg.cql_alpha = 0.1;

    std::vector<Transition> td_rows, anchor_rows;
    for (int i = 0; i < 6; ++i) {
        td_rows.push_back(make_transition({i, 0.1 * i, 0}, i, -1.0, 0.02,
                                          {i + 2, 0.1 * i + 0.04, 1}, i == 5, 1, i + 1));
        anchor_rows.push_back(make_transition({40 + i, 0.9 - 0.1 * i, -1}, 9 - i, -1.0,
                                              -0.01, {38 + i, 0.85 - 0.1 * i, -1}, false,
                                              2, i + 1));
    }
    auto ptrs = [](const std::vector<Transition>& v) {
        std::vector<const Transition*> p;
        for (const auto& t : v) p.push_back(&t);
        return p;
    };

    // Coinciding rows reproduce the fused single-batch update.
    Rng ra(7), rb(7);
    DqnAgent fused(cfg, EnvParams{}, ra), split(cfg, EnvParams{}, rb);
    const LossStats sf = fused.update_from_batch(ptrs(td_rows));
    const LossStats ss = split.update_from_batch(ptrs(td_rows), ptrs(td_rows));
    CHECK(ss.td == doctest::Approx(sf.td).epsilon(1e-12));
    CHECK(ss.cql == doctest::Approx(sf.cql).epsilon(1e-12));
    double gap = 0.0;
    const auto pf = fused.online_net().params(), ps = split.online_net().params();
    for (std::size_t i = 0; i < pf.size(); ++i)
        gap = std::max(gap, (*pf[i] - *ps[i]).cwiseAbs().maxCoeff());
    CHECK(gap < 1e-9);  // same step up to gradient-accumulation rounding

    // The penalty statistic depends only on the conservative rows.
    Rng rc(7), rd(7);
    DqnAgent c(cfg, EnvParams{}, rc), d(cfg, EnvParams{}, rd);
    const LossStats sc = c.update_from_batch(ptrs(td_rows), ptrs(anchor_rows));
    const LossStats sd = d.update_from_batch(ptrs(anchor_rows), ptrs(anchor_rows));
    CHECK(sc.cql == doctest::Approx(sd.cql).epsilon(1e-12));
    CHECK(sc.td != sd.td);

    CHECK_THROWS(c.set_conservative_anchor({}));
    c.set_conservative_anchor(anchor_rows);
    CHECK(c.anchor_size() == anchor_rows.size());
}

TEST_CASE("action selection is greedy, tie-broken low, and uniform when forced") {
    AgentConfig cfg = small_agent_config();
    Rng rng(51);
    DqnAgent agent(cfg, EnvParams{}, rng);
    const MdpState s{20, 0.4, 1};

    const Vec q = agent.q_values(s);
    Eigen::Index want = 0;
    q.maxCoeff(&want);
    for (int i = 0; i < 20; ++i)
        CHECK(agent.select_action(s, 0.0, rng) == static_cast<int>(want));

    // All-equal Q values pick the first action.
    for (Mat* p : agent.online_net().params()) p->setZero();
    CHECK(agent.greedy_action(s) == 0);

    // Forced exploration is uniform over the 10 actions.
    std::vector<int> counts(10, 0);
    const int n = 10000;
    for (int i = 0; i < n; ++i) ++counts[static_cast<std::size_t>(agent.select_action(s, 1.0, rng))];
    const double expect = n / 10.0;
    double stat = 0.0;
    for (int c : counts) stat += (c - expect) * (c - expect) / expect;
    CHECK(stat < chi2_ccdf_inverse(1e-3, 9));
}

TEST_CASE("target network refreshes only at the sync period") {
    AgentConfig cfg = small_agent_config();
    cfg.target_sync_every = 3;
    cfg.batch_size = 4;
    Rng rng(61);
    DqnAgent agent(cfg, EnvParams{}, rng);

    auto max_gap = [&]() {
        double gap = 0.0;
        const auto po = agent.online_net().params(), pt = agent.target_net().params();
        for (std::size_t i = 0; i < po.size(); ++i)
            gap = std::max(gap, (*po[i] - *pt[i]).cwiseAbs().maxCoeff());
        return gap;
    };
    CHECK(max_gap() == 0.0);  // synced at construction

    std::vector<Transition> data;
    for (int i = 0; i < 4; ++i)
        data.push_back(make_transition({i, 0.1 * i, 0}, i, -1.0, 0.01, {i + 1, 0.1 * i + 0.05, 1},
                                       false, 1, i + 1));
    std::vector<const Transition*> batch{&data[0], &data[1], &data[2], &data[3]};

    agent.update_from_batch(batch);
    CHECK(max_gap() > 0.0);  // stale target after one step
    agent.update_from_batch(batch);
    CHECK(max_gap() > 0.0);
    agent.update_from_batch(batch);
    CHECK(max_gap() == 0.0);  // third step lands on the sync period
    agent.update_from_batch(batch);
    CHECK(max_gap() > 0.0);
}

TEST_CASE("training episodes consume the fixed probe budget across tasks") {
    ScenarioConfig scfg;
    scfg.target_xy = Vec2{320.0, 180.0};
    scfg.target_speed_mps = 0.0;
    EnvParams ep;
    ep.max_steps = 12;
    BeamEnv env(scfg, ep);

    AgentConfig cfg = small_agent_config();
    cfg.batch_size = 4;
    Rng rng(71);
    DqnAgent agent(cfg, ep, rng);

    const std::uint64_t before = env.probe_count();
    const EpisodeStats st = agent.run_training_episode(env, 0.3, rng);
    CHECK(st.steps == 12);  // budget, not task length
    CHECK(env.probe_count() == before + 12);
    CHECK(st.tasks >= 1);
    CHECK(st.epsilon == 0.3);
    CHECK(std::isfinite(st.loss_td));
    CHECK(std::isfinite(st.loss_cql));
    CHECK(agent.replay_size() == 12);
    CHECK(agent.gradient_steps() == 12 - 3);  // updates start once 4 fill the replay
}

TEST_CASE("offline episodes train from the seeded replay alone") {
    AgentConfig cfg = small_agent_config();
    cfg.batch_size = 4;
    cfg.episodes = 3;
    EnvParams ep;
    ep.max_steps = 6;
    Rng rng(81);
    DqnAgent agent(cfg, ep, rng);

    CHECK_THROWS(agent.run_offline_episode(2, rng));  // empty replay

    std::vector<Transition> data;
    for (int i = 0; i < 10; ++i)
        data.push_back(make_transition({i, 0.05 * i, 0}, i % 10, -1.0, 0.02,
                                       {i + 1, 0.05 * i + 0.03, 1}, i % 4 == 3, 1, i + 1));
    agent.seed_replay(data);
    CHECK(agent.replay_size() == 10);

    const EpisodeStats st = agent.run_offline_episode(5, rng);
    CHECK(agent.gradient_steps() == 5);
    CHECK(std::isfinite(st.loss_td));

    const auto history = agent.train(nullptr, rng);
    REQUIRE(history.size() == 3);
    CHECK(history[0].episode == 0);
    CHECK(history[2].episode == 2);
    CHECK(agent.gradient_steps() == 5 + 3 * ep.max_steps);
}

TEST_CASE("checkpoints restore the policy exactly") {
    AgentConfig cfg = small_agent_config();
    cfg.batch_size = 4;
    Rng rng(91);
    DqnAgent agent(cfg, EnvParams{}, rng);
    std::vector<Transition> data;
    for (int i = 0; i < 8; ++i)
        data.push_back(make_transition({i * 3, 0.1 * i, 0}, i, -1.0, 0.01,
                                       {i * 3 + 2, 0.1 * i + 0.02, 1}, i == 7, 1, i + 1));
    agent.seed_replay(data);
    agent.run_offline_episode(10, rng);

    const std::string path = "/tmp/cfisac_test_agent.ckpt";
    agent.save(path);
    CHECK(load_checkpoint(path).meta.at("kind") == "dqn_agent");

    DqnAgent back = DqnAgent::load(path, cfg, EnvParams{});
    for (const MdpState s : {MdpState{0, 0.0, 0}, MdpState{31, 0.5, -1}, MdpState{63, 0.97, 1}}) {
        const Vec qa = agent.q_values(s);
        const Vec qb = back.q_values(s);
        CHECK((qa - qb).cwiseAbs().maxCoeff() == 0.0);
        CHECK(back.greedy_action(s) == agent.greedy_action(s));
    }
}

TEST_CASE("evaluation stops at the first success, counting the spawn probe") {
    ScenarioConfig scfg;
    scfg.target_xy = Vec2{320.0, 180.0};
    scfg.target_speed_mps = 0.0;

    AgentConfig cfg = small_agent_config();
    Rng rng(101);

    // A threshold at the false-alarm floor makes the spawn probe succeed.
    ScenarioConfig easy = scfg;
    easy.zeta = 1e-4;
    BeamEnv env_easy(easy, EnvParams{});
    DqnAgent agent(cfg, env_easy.params(), rng);
    const EvalRecord spawn = agent.evaluate_episode(env_easy, rng);
    CHECK(spawn.steps == 1);
    CHECK(spawn.success);
    CHECK(spawn.final_pd >= 1e-4);

    BeamEnv env(scfg, EnvParams{});
    for (int i = 0; i < 5; ++i) {
        const EvalRecord rec = agent.evaluate_episode(env, rng);
        CHECK(rec.steps >= 1);
        CHECK(rec.steps <= env.params().max_steps);
        CHECK(rec.success == (rec.final_pd >= env.params().reward.zeta));
    }
}

TEST_CASE("episode metrics serialize one row per episode") {
    std::vector<EpisodeStats> stats(2);
    stats[0].episode = 0;
    stats[0].cum_reward = -12.5;
    stats[0].steps = 64;
    stats[0].epsilon = 0.2;
    stats[0].loss_td = 0.5;
    stats[0].loss_cql = 2.3;
    stats[1].episode = 1;
    stats[1].cum_reward = 3.25;
    stats[1].steps = 64;

    const std::string path = "/tmp/cfisac_test_agent_metrics.csv";
    write_episode_metrics_csv(path, stats);
    std::ifstream in(path);
    std::string line;
    std::getline(in, line);
    CHECK(line == "episode,cum_reward,steps,epsilon,loss_td,loss_cql");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 2);
}
