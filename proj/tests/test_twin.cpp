#include <cmath>
#include <fstream>
#include <vector>

#include "cfisac/twin.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace cfisac;

namespace {

TwinConfig small_twin_config() {
    TwinConfig cfg;
    cfg.latent_dim = 4;
    cfg.embed_dim = 4;
    cfg.hidden = 16;
    cfg.hidden_layers = 2;
    cfg.batch_size = 16;
    cfg.epochs = 3;
    return cfg;
}

// Synthetic transition corpus: pd_next depends smoothly on the chosen beam
// plus noise, enough structure for a short adversarial smoke run.
std::vector<Transition> synthetic_dataset(int n, Rng& rng) {
    std::vector<Transition> data;
    data.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        Transition t;
        t.episode = static_cast<std::uint64_t>(1 + i / 8);
        t.step = 1 + i % 8;
        t.s.mu = rng.uniform_int(0, 63);
        t.s.pd = rng.uniform(0.0, 0.4);
        t.s.fg = rng.uniform_int(-1, 1);
        t.action = rng.uniform_int(0, 9);
        t.next.mu = rng.uniform_int(0, 63);
        t.next.pd = std::clamp(0.35 + 0.25 * std::sin(0.3 * t.next.mu) +
                                   0.1 * rng.uniform(-1.0, 1.0),
                               0.0, 1.0);
        t.next.fg = 1;
        t.done = t.step == 8;
        data.push_back(t);
    }
    return data;
}

}  // namespace

TEST_CASE("condition vector stacks both beam codes, rescaled pd and flag") {
    const auto u = encode_condition(7, 3, 0.25, -1, 8);
    REQUIRE(u.size() == 18);
    const auto cn = sinusoidal_embedding(7.0, 8);
    const auto cc = sinusoidal_embedding(3.0, 8);
    for (int i = 0; i < 8; ++i) {
        CHECK(u[static_cast<std::size_t>(i)] == cn[static_cast<std::size_t>(i)]);
        CHECK(u[static_cast<std::size_t>(8 + i)] == cc[static_cast<std::size_t>(i)]);
    }
    CHECK(u[16] == doctest::Approx(variant_sigmoid(0.25)));
    CHECK(u[17] == -1.0);
}

TEST_CASE("twin construction wires generator and critic widths") {
    Rng rng(3);
    const TwinConfig cfg = small_twin_config();
    TwinModel m = make_twin(cfg, rng);
    CHECK(m.cond_dim() == 10);
    CHECK(m.gen.input_dim() == cfg.latent_dim + 10);
    CHECK(m.gen.output_dim() == 1);
    CHECK(m.dis.input_dim() == 1 + 10);
    CHECK(m.dis.output_dim() == 1);
    CHECK_FALSE(m.trained);

    // Normalization only stabilizes the generator; the critic must see raw
    // batches or its score degenerates.
    for (std::size_t l = 0; l + 1 < m.gen.specs().size(); ++l)
        CHECK(m.gen.specs()[l].batch_norm);
    for (const auto& s : m.dis.specs()) CHECK_FALSE(s.batch_norm);
    CHECK(m.gen.specs().back().act == Activation::Sigmoid);
    CHECK(m.dis.specs().back().act == Activation::Sigmoid);

    TwinConfig bad = cfg;
    bad.latent_dim = 0;
    CHECK_THROWS(make_twin(bad, rng));
    bad = cfg;
    bad.pd_floor = 1.0;
    CHECK_THROWS(make_twin(bad, rng));
    bad.pd_floor = -0.1;
    CHECK_THROWS(make_twin(bad, rng));

    for (int i = 0; i < 50; ++i) {
        const double pd = m.sample(5, 3, 0.2, 0, rng);
        CHECK(pd >= 0.0);
        CHECK(pd <= 1.0);
    }
    // Distinct latent draws give distinct outcomes.
    const double a = m.sample(5, 3, 0.2, 0, rng);
    const double b = m.sample(5, 3, 0.2, 0, rng);
    CHECK(a != b);

    // The sampler never reports below the modelled detector's floor.
    TwinConfig floored = cfg;
    floored.pd_floor = 0.6;
    TwinModel fm = make_twin(floored, rng);
    bool clamped = false;
    for (int i = 0; i < 200; ++i) {
        const double pd = fm.sample(5, 3, 0.2, 0, rng);
        CHECK(pd >= 0.6);
        CHECK(pd <= 1.0);
        clamped |= pd == 0.6;
    }
    CHECK(clamped);  // a fresh generator strays below such a high floor
}

TEST_CASE("adversarial losses sit at the indifference point for a blind critic") {
    const Vec half = Vec::Constant(8, 0.5);
    CHECK(generator_loss(half) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    CHECK(discriminator_loss(half, half) == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-12));

    // A perfect critic drives its own loss to zero and the generator's up.
    const Vec ones = Vec::Constant(8, 1.0);
    const Vec zeros = Vec::Constant(8, 0.0);
    CHECK(discriminator_loss(ones, zeros) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(generator_loss(ones) == doctest::Approx(0.0).epsilon(1e-9));
    CHECK(generator_loss(zeros) > 20.0);  // clamped, large but finite
    CHECK(std::isfinite(generator_loss(zeros)));
}

TEST_CASE("discrete kl divergence matches hand arithmetic") {
    CHECK(kl_discrete({0.5, 0.5}, {0.5, 0.5}) == 0.0);
    CHECK(kl_discrete({0.5, 0.5}, {0.25, 0.75}) == doctest::Approx(0.143841).epsilon(1e-5));
    // Unnormalized masses are normalized first.
    CHECK(kl_discrete({2.0, 2.0}, {1.0, 3.0}) == doctest::Approx(0.143841).epsilon(1e-5));
    CHECK(std::isinf(kl_discrete({0.5, 0.5}, {1.0, 0.0})));
    CHECK(kl_discrete({1.0, 0.0}, {0.5, 0.5}) == doctest::Approx(std::log(2.0)));
    CHECK_THROWS(kl_discrete({0.5}, {0.5, 0.5}));
    CHECK_THROWS(kl_discrete({-0.1, 1.1}, {0.5, 0.5}));
    CHECK_THROWS(kl_discrete({}, {}));
}

TEST_CASE("histograms use add-one smoothing over the fixed range") {
    const auto h = smoothed_histogram({0.1, 0.3, 0.6, 0.9}, 4, 0.0, 1.0);
    REQUIRE(h.size() == 4);
    for (double v : h) CHECK(v == doctest::Approx(0.25).epsilon(1e-15));  // (1+1)/(4+4)

    const auto skew = smoothed_histogram({0.1, 0.15, 0.2}, 4, 0.0, 1.0);
    CHECK(skew[0] == doctest::Approx(4.0 / 7.0));
    CHECK(skew[1] == doctest::Approx(1.0 / 7.0));
    double total = 0.0;
    for (double v : skew) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    // Boundary values and strays land in the edge bins.
    const auto edge = smoothed_histogram({0.0, 1.0, 1.5, -0.5}, 2, 0.0, 1.0);
    CHECK(edge[0] == doctest::Approx(3.0 / 6.0));
    CHECK(edge[1] == doctest::Approx(3.0 / 6.0));

    CHECK_THROWS(smoothed_histogram({0.5}, 0, 0.0, 1.0));
    CHECK_THROWS(smoothed_histogram({0.5}, 4, 1.0, 1.0));
}

TEST_CASE("wasserstein distance is exact on point masses and translations") {
    CHECK(w1_distance({0.0}, {1.0}) == doctest::Approx(1.0));
    CHECK(w1_distance({0.3, 0.3, 0.3}, {0.3, 0.3, 0.3}) == 0.0);
    CHECK(w1_distance({0.0, 1.0}, {0.5}) == doctest::Approx(0.5));
    CHECK(w1_distance({0.1, 0.2, 0.3}, {0.35, 0.45, 0.55}) == doctest::Approx(0.25).epsilon(1e-12));
    CHECK(w1_distance({0.1, 0.9}, {0.9, 0.1}) == 0.0);  // order free
    CHECK(w1_distance({0.2}, {0.7}) == w1_distance({0.7}, {0.2}));
    CHECK_THROWS(w1_distance({}, {0.5}));
}

TEST_CASE("kernel discrepancy separates distributions and vanishes on matches") {
    Rng rng(7);
    std::vector<double> a, b, far;
    for (int i = 0; i < 400; ++i) {
        a.push_back(rng.uniform(0.0, 1.0));
        b.push_back(rng.uniform(0.0, 1.0));
        far.push_back(rng.uniform(0.9, 1.0));
    }
    const double same = mmd_gaussian(a, b);
    const double apart = mmd_gaussian(a, far);
    CHECK(same < 0.1);
    CHECK(apart > 0.3);
    CHECK(apart > same);

    const std::vector<double> constant(50, 0.5);
    CHECK(mmd_gaussian(constant, constant) == 0.0);  // degenerate bandwidth path
    CHECK_THROWS(mmd_gaussian({0.5}, a));

    const FidelityStats f = compare_samples(a, b);
    CHECK(f.n == a.size());
    CHECK(f.kl < 0.1);
    CHECK(f.w1 < 0.05);
    CHECK(f.mmd == doctest::Approx(same));
}

TEST_CASE("critic gradients match finite differences on both batch branches") {
    Rng rng(11);
    TwinModel m = make_twin(small_twin_config(), rng);
    const int B = 6;
    const int cond_dim = m.cond_dim();

    Mat xr(B, 1 + cond_dim), xf(B, 1 + cond_dim);
    for (int r = 0; r < B; ++r) {
        const auto u = encode_condition(rng.uniform_int(0, 63), rng.uniform_int(0, 63),
                                        rng.uniform(0.0, 1.0), rng.uniform_int(-1, 1),
                                        m.cfg.embed_dim);
        xr(r, 0) = variant_sigmoid(rng.uniform(0.0, 1.0));
        xf(r, 0) = variant_sigmoid(rng.uniform(0.0, 1.0));
        for (int j = 0; j < cond_dim; ++j) xr(r, 1 + j) = u[static_cast<std::size_t>(j)];
        xf.row(r).tail(cond_dim) = xr.row(r).tail(cond_dim);
    }

    // -mean log D(real) - mean log(1 - D(fake)) with both inputs frozen.
    auto loss = [&](TwinModel& model) {
        const Mat dr = model.dis.forward(xr, true);
        const Mat df = model.dis.forward(xf, true);
        double L = 0.0;
        for (int r = 0; r < B; ++r)
            L += -std::log(dr(r, 0)) - std::log(1.0 - df(r, 0));
        return L / B;
    };

    m.dis.zero_grads();
    const Mat dr = m.dis.forward(xr, true);
    Mat grad_r(B, 1);
    for (int r = 0; r < B; ++r) grad_r(r, 0) = -1.0 / (B * dr(r, 0));
    m.dis.backward(grad_r);
    const Mat df = m.dis.forward(xf, true);
    Mat grad_f(B, 1);
    for (int r = 0; r < B; ++r) grad_f(r, 0) = 1.0 / (B * (1.0 - df(r, 0)));
    m.dis.backward(grad_f);

    const auto params = m.dis.params();
    const auto grads = m.dis.grads();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double err =
            oracle::max_grad_rel_err(m, loss, params[i]->data(), grads[i]->data(),
                                     params[i]->rows(), params[i]->cols(), 40, 1e-6);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("generator gradients flow through the critic and the pd rescaling") {
    Rng rng(13);
    TwinModel m = make_twin(small_twin_config(), rng);
    const int B = 8;
    const int cond_dim = m.cond_dim();

    Mat xg(B, m.cfg.latent_dim + cond_dim);
    for (int r = 0; r < B; ++r) {
        for (int c = 0; c < m.cfg.latent_dim; ++c) xg(r, c) = rng.normal();
        const auto u = encode_condition(rng.uniform_int(0, 63), rng.uniform_int(0, 63),
                                        rng.uniform(0.0, 1.0), rng.uniform_int(-1, 1),
                                        m.cfg.embed_dim);
        for (int j = 0; j < cond_dim; ++j)
            xg(r, m.cfg.latent_dim + j) = u[static_cast<std::size_t>(j)];
    }

    // -mean log D([sigma_v(G(z,u)), u]) with the latent batch frozen.
    auto loss = [&](TwinModel& model) {
        const Mat fake = model.gen.forward(xg, true);
        Mat xf(B, 1 + cond_dim);
        for (int r = 0; r < B; ++r) xf(r, 0) = variant_sigmoid(fake(r, 0), model.cfg.b3);
        xf.rightCols(cond_dim) = xg.rightCols(cond_dim);
        const Mat df = model.dis.forward(xf, true);
        double L = 0.0;
        for (int r = 0; r < B; ++r) L -= std::log(df(r, 0));
        return L / B;
    };

    m.gen.zero_grads();
    m.dis.zero_grads();
    const Mat fake = m.gen.forward(xg, true);
    Mat xf(B, 1 + cond_dim);
    for (int r = 0; r < B; ++r) xf(r, 0) = variant_sigmoid(fake(r, 0), m.cfg.b3);
    xf.rightCols(cond_dim) = xg.rightCols(cond_dim);
    const Mat df = m.dis.forward(xf, true);
    Mat grad_d(B, 1);
    for (int r = 0; r < B; ++r) grad_d(r, 0) = -1.0 / (B * df(r, 0));
    const Mat din = m.dis.backward(grad_d);
    Mat grad_fake(B, 1);
    for (int r = 0; r < B; ++r)
        grad_fake(r, 0) = din(r, 0) * variant_sigmoid_deriv(fake(r, 0), m.cfg.b3);
    m.gen.backward(grad_fake);

    const auto params = m.gen.params();
    const auto grads = m.gen.grads();
    for (std::size_t i = 0; i < params.size(); ++i) {
        const double err =
            oracle::max_grad_rel_err(m, loss, params[i]->data(), grads[i]->data(),
                                     params[i]->rows(), params[i]->cols(), 40, 1e-6);
        CHECK(err < 1e-4);
    }
}

TEST_CASE("start states are the first row of each recorded task") {
    Rng rng(17);
    auto data = synthetic_dataset(24, rng);
    const auto starts = episode_start_states(data);
    std::size_t expect = 0;
    for (const auto& t : data)
        if (t.step == 1) ++expect;
    CHECK(starts.size() == expect);
    CHECK(expect > 0);
    std::size_t k = 0;
    for (const auto& t : data) {
        if (t.step != 1) continue;
        CHECK(starts[k].mu == t.s.mu);
        CHECK(starts[k].pd == t.s.pd);
        ++k;
    }
}

TEST_CASE("short adversarial training run keeps finite balanced statistics") {
    Rng rng(19);
    TwinModel m = make_twin(small_twin_config(), rng);
    auto data = synthetic_dataset(48, rng);

    CHECK_THROWS(train_twin(m, std::vector<Transition>(data.begin(), data.begin() + 8), rng));

    const auto stats = train_twin(m, data, rng);
    CHECK(m.trained);
    REQUIRE(stats.size() == 3);
    for (std::size_t e = 0; e < stats.size(); ++e) {
        CHECK(stats[e].epoch == static_cast<int>(e));
        CHECK(std::isfinite(stats[e].loss_g));
        CHECK(std::isfinite(stats[e].loss_d));
        CHECK(stats[e].loss_g > 0.0);
        CHECK(stats[e].loss_d > 0.0);
        CHECK(stats[e].d_real > 0.0);
        CHECK(stats[e].d_real < 1.0);
        CHECK(stats[e].d_fake > 0.0);
        CHECK(stats[e].d_fake < 1.0);
    }

    const std::string mpath = "/tmp/cfisac_test_twin_metrics.csv";
    write_twin_metrics_csv(mpath, stats);
    std::ifstream in(mpath);
    std::string line;
    std::getline(in, line);
    CHECK(line == "epoch,loss_g,loss_d,d_real,d_fake");
    int rows = 0;
    while (std::getline(in, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 3);
}

TEST_CASE("twin checkpoints restore the sampler exactly") {
    Rng rng(23);
    TwinConfig cfg = small_twin_config();
    cfg.pd_floor = 0.01;
    TwinModel m = make_twin(cfg, rng);
    m.gen.forward(Mat::Random(8, m.gen.input_dim()), true);  // move BN stats
    m.trained = true;

    const std::string path = "/tmp/cfisac_test_twin.ckpt";
    save_twin(path, m);
    TwinModel back = load_twin(path);
    CHECK(back.trained);
    CHECK(back.cfg.latent_dim == m.cfg.latent_dim);
    CHECK(back.cfg.embed_dim == m.cfg.embed_dim);
    CHECK(back.cfg.hidden == m.cfg.hidden);
    CHECK(back.cfg.b3 == m.cfg.b3);
    CHECK(back.cfg.pd_floor == m.cfg.pd_floor);

    Rng ra(31), rb(31);
    for (int i = 0; i < 10; ++i) {
        const double sa = m.sample(7, 3, 0.2, 1, ra);
        const double sb = back.sample(7, 3, 0.2, 1, rb);
        CHECK(sa == sb);
    }

    // A checkpoint of some other model kind is refused.
    const std::string foreign = "/tmp/cfisac_test_twin_foreign.ckpt";
    save_checkpoint(foreign, {{"generator", &m.gen}}, {{"kind", "dqn_agent"}});
    CHECK_THROWS(load_twin(foreign));
}

TEST_CASE("fidelity evaluation pools one synthetic draw per held-out row") {
    Rng rng(29);
    TwinModel m = make_twin(small_twin_config(), rng);
    m.trained = true;
    auto held = synthetic_dataset(120, rng);

    const FidelityStats f = twin_fidelity(m, held, rng);
    CHECK(f.n == held.size());
    CHECK(f.kl >= 0.0);
    CHECK(std::isfinite(f.kl));
    CHECK(f.w1 >= 0.0);
    CHECK(f.w1 <= 1.0);  // both samples live in [0,1]
    CHECK(f.mmd >= 0.0);
    CHECK_THROWS(twin_fidelity(m, {}, rng));
}

TEST_CASE("bucketed fidelity skips ranges with too few conditions") {
    Rng rng(37);
    TwinModel m = make_twin(small_twin_config(), rng);
    m.trained = true;

    // pd_cur concentrated in [0, 0.2): the first bucket is dense, the
    // upper ones starve.
    auto held = synthetic_dataset(150, rng);
    for (auto& t : held) t.s.pd = rng.uniform(0.0, 0.19);

    const auto buckets = twin_fidelity_buckets(m, held, rng);
    REQUIRE(buckets.size() == 4);
    CHECK(buckets[0].lo == 0.0);
    CHECK(buckets[0].hi == 0.2);
    CHECK(buckets[0].stats.n == held.size());
    CHECK(buckets[0].stats.w1 > 0.0);
    for (std::size_t k = 1; k < buckets.size(); ++k) {
        CHECK(buckets[k].stats.n == 0);
        CHECK(buckets[k].stats.kl == 0.0);  // too thin to score
    }
    CHECK_THROWS(twin_fidelity_buckets(m, held, rng, {0.5}));
}
