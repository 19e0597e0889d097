#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "support.hpp"
#include "surfopt/errors.hpp"
#include "surfopt/optimizer.hpp"

using namespace surfopt;
using namespace surfopt::optimizer;
using Eigen::VectorXd;

namespace {

// mean = -|z - c|^2 + offset, sigma^2 = spread * |z - c|
class Quadratic final : public LatentModel {
public:
    Quadratic(VectorXd c, double spread = 0.0, double sign = 1.0) : c_(std::move(c)), spread_(spread), sign_(sign) {}
    double mean(const VectorXd& z) const override { return -sign_ * (z - c_).squaredNorm(); }
    Prediction stats(const VectorXd& z) const override { return {mean(z), spread_ * (z - c_).norm()}; }
    bool has_gradient() const override { return true; }
    double mean_gradient(const VectorXd& z, VectorXd& grad) const override {
        grad = -2.0 * sign_ * (z - c_);
        return mean(z);
    }

private:
    VectorXd c_;
    double spread_;
    double sign_;
};

class Constant final : public LatentModel {
public:
    double mean(const VectorXd&) const override { return 1.0; }
    Prediction stats(const VectorXd&) const override { return {1.0, 0.0}; }
    bool has_gradient() const override { return true; }
    double mean_gradient(const VectorXd& z, VectorXd& grad) const override {
        grad = VectorXd::Zero(z.size());
        return 1.0;
    }
};

// sigma forced to zero on top of another model
class NoSpread final : public LatentModel {
public:
    explicit NoSpread(const LatentModel& inner) : inner_(inner) {}
    double mean(const VectorXd& z) const override { return inner_.mean(z); }
    Prediction stats(const VectorXd& z) const override { return {inner_.mean(z), 0.0}; }

private:
    const LatentModel& inner_;
};

Problem toy_problem(int dim, Direction dir = Direction::maximize) {
    Problem p;
    p.name = "toy";
    p.bounds = Bounds(static_cast<std::size_t>(dim), Bound{-1.0, 1.0});
    p.direction = dir;
    p.task = {Task::max_stress, 0.0};
    p.simulate = [dir](const VectorXd& z) {
        FieldSample s;
        s.field = VectorXd::Constant(1, 0.0);
        const double v = -(z.array() - 0.3).square().sum();
        s.performance = dir == Direction::maximize ? v : -v;
        return s;
    };
    return p;
}

BOConfig small_loop() {
    BOConfig c;
    c.init_size = 8;
    c.iterations = 4;
    c.proposals = 6;
    c.retained = 3;
    c.ga.population = 16;
    c.ga.generations = 8;
    c.seed = 5;
    return c;
}

Strategy quadratic_strategy(bool use_ei) {
    Strategy s;
    s.method = "quad";
    s.use_ei = use_ei;
    s.fit = [](const RunHistory&, int) -> std::unique_ptr<LatentModel> {
        return std::make_unique<Quadratic>(VectorXd::Constant(2, 0.3), 0.1);
    };
    return s;
}

}  // namespace

TEST_CASE("normal distribution functions") {
    CHECK(normal_cdf(0.0) == 0.5);
    CHECK(normal_pdf(0.0) == doctest::Approx(0.3989422804).epsilon(1e-10));
    std::mt19937_64 rng(1);
    std::normal_distribution<double> g(0.0, 2.0);
    for (int i = 0; i < 100; ++i) {
        const double x = g(rng);
        CHECK(std::abs(normal_cdf(-x) - (1.0 - normal_cdf(x))) < 1e-15);
    }
    // composite trapezoid of the pdf from -8
    for (double x : {-3.0, -1.2, -0.1, 0.0, 0.4, 1.0, 2.5, 5.0}) {
        const int n = 200000;
        const double a = -8.0, h = (x - a) / n;
        double s = 0.5 * (normal_pdf(a) + normal_pdf(x));
        for (int k = 1; k < n; ++k) s += normal_pdf(a + k * h);
        const double tail = normal_pdf(a) / 8.0;  // mass below -8, about 5e-16
        CHECK(std::abs(normal_cdf(x) - (s * h + tail)) < 1e-9);
    }
}

TEST_CASE("expected improvement closed form") {
    const AcquisitionParams p{0.5, 1.0, Direction::maximize};
    CHECK(expected_improvement(1.5, 1.0, p) == doctest::Approx(1.0 / std::sqrt(2.0 * M_PI)).epsilon(1e-14));
    CHECK(expected_improvement(1.25, 0.0, p) == 0.0);
    CHECK(expected_improvement(1.5, 0.0, p) == 0.0);
    CHECK(expected_improvement(2.0, 0.0, p) == doctest::Approx(0.5));
    CHECK_THROWS_AS(expected_improvement(0.0, -1.0, p), ConfigError);
}

TEST_CASE("expected improvement against Monte Carlo") {
    std::mt19937_64 rng(2024);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    std::uniform_real_distribution<double> su(0.05, 2.0);
    std::uniform_real_distribution<double> eu(0.0, 0.3);
    for (int t = 0; t < 10; ++t) {
        const double mu = u(rng), sigma = su(rng), best = u(rng), eps = eu(rng);
        const double ei = expected_improvement(mu, sigma, {eps, best, Direction::maximize});
        std::normal_distribution<double> g(mu, sigma);
        const int n = 200000;
        double sum = 0.0, sq = 0.0;
        for (int i = 0; i < n; ++i) {
            const double v = std::max(g(rng) - best - eps, 0.0);
            sum += v;
            sq += v * v;
        }
        const double mean = sum / n;
        const double se = std::sqrt((sq / n - mean * mean) / n);
        CHECK(std::abs(ei - mean) <= 4.0 * se + 1e-12);
    }
}

TEST_CASE("expected improvement properties") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-3.0, 3.0);
    for (int t = 0; t < 200; ++t) {
        const double mu = u(rng), best = u(rng), eps = std::abs(u(rng)) * 0.1, sigma = std::abs(u(rng));
        const double up = expected_improvement(mu, sigma, {eps, best, Direction::maximize});
        const double down = expected_improvement(-mu, sigma, {eps, best, Direction::minimize});
        CHECK(up >= 0.0);
        CHECK(up == down);
    }
    // strictly increasing in sigma below the incumbent
    for (double gap : {-0.1, -0.5, -1.5}) {
        double prev = 0.0;
        for (int i = 1; i <= 50; ++i) {
            const double v = expected_improvement(gap, 0.05 * i, {0.0, 0.0, Direction::maximize});
            CHECK(v > prev);
            prev = v;
        }
    }
}

TEST_CASE("sampling designs") {
    std::mt19937_64 rng(4);
    const Bounds b = {{0.0, 1.0}, {-2.0, 2.0}, {5.0, 5.5}};
    const auto lhs = latin_hypercube(20, b, rng);
    REQUIRE(lhs.size() == 20);
    for (std::size_t k = 0; k < 3; ++k) {
        std::vector<int> bins(20, 0);
        for (const auto& z : lhs) {
            CHECK(z[static_cast<Eigen::Index>(k)] >= b[k].lo);
            CHECK(z[static_cast<Eigen::Index>(k)] <= b[k].hi);
            const int bin = std::min(19, static_cast<int>((z[static_cast<Eigen::Index>(k)] - b[k].lo) / b[k].width() * 20));
            bins[static_cast<std::size_t>(bin)] += 1;
        }
        for (int c : bins) CHECK(c == 1);
    }
    const auto uni = uniform_samples(50, b, rng);
    for (const auto& z : uni) CHECK_NOTHROW(check_in_bounds(z, b));
}

TEST_CASE("ga finds the optimum of a concave test function") {
    VectorXd c(3);
    c << 0.3, -0.7, 0.15;
    const Bounds b(3, Bound{-1.0, 1.0});
    const ScoreFn f = [&](const VectorXd& z) {
        const double v = -(z - c).squaredNorm();
        return Score{v, v};
    };
    GaConfig cfg;
    cfg.population = 64;
    cfg.generations = 100;
    cfg.seed = 11;
    const auto out = ga_propose(f, b, cfg, 10, {}, {});
    REQUIRE(out.size() == 10);
    for (int i = 0; i < 3; ++i) CHECK(std::abs(out[0][i] - c[i]) < 1e-2);
    for (const auto& z : out) CHECK_NOTHROW(check_in_bounds(z, b));
    for (std::size_t i = 0; i < out.size(); ++i) {
        for (std::size_t j = i + 1; j < out.size(); ++j) CHECK((out[i] - out[j]).norm() >= kDuplicateDistance);
    }
    for (std::size_t i = 1; i < out.size(); ++i) CHECK_FALSE(better(f(out[i]), f(out[i - 1])));

    const auto again = ga_propose(f, b, cfg, 10, {}, {});
    for (std::size_t i = 0; i < 10; ++i) CHECK(again[i] == out[i]);

    const std::vector<VectorXd> exclude = {out[0]};
    const auto excl = ga_propose(f, b, cfg, 10, exclude, exclude);
    for (const auto& z : excl) CHECK((z - out[0]).norm() >= kDuplicateDistance);

    CHECK_THROWS_AS(ga_propose(f, {{1.0, 0.0}}, cfg, 5), ConfigError);
    CHECK_THROWS_AS(ga_propose(f, b, cfg, 65), ConfigError);
}

TEST_CASE("ga respects tight and one-sided bounds") {
    const Bounds b = {{0.0, 0.01}, {2.0, 3.0}};
    const ScoreFn f = [](const VectorXd& z) { return Score{z.sum(), 0.0}; };
    GaConfig cfg;
    cfg.population = 20;
    cfg.generations = 30;
    cfg.mutation_sigma = 0.5;
    const auto out = ga_propose(f, b, cfg, 20);
    for (const auto& z : out) CHECK_NOTHROW(check_in_bounds(z, b));
    CHECK(out[0][0] == doctest::Approx(0.01).epsilon(1e-3));
    CHECK(out[0][1] == doctest::Approx(3.0).epsilon(1e-3));
}

TEST_CASE("gradient proposals") {
    const Bounds b(2, Bound{-2.0, 2.0});
    VectorXd c(2);
    c << 0.4, -0.9;
    const Quadratic q(c);
    VectorXd z0(2);
    z0 << -1.5, 1.7;
    const VectorXd z = gradient_propose(z0, q, Direction::maximize, b, 400, 0.05, 0.0, {});
    CHECK((z - c).norm() < 1e-3);

    // minimizing the negated model reaches the same point
    const Quadratic qn(c, 0.0, -1.0);
    const VectorXd zn = gradient_propose(z0, qn, Direction::minimize, b, 400, 0.05, 0.0, {});
    CHECK((zn - c).norm() < 1e-3);

    const Constant flat;
    CHECK(gradient_propose(z0, flat, Direction::maximize, b, 50, 0.05, 0.0, {}) == z0);

    // a dominant penalty keeps the proposal near the data
    std::mt19937_64 rng(6);
    std::vector<VectorXd> train = latin_hypercube(12, Bounds(2, Bound{-0.5, 0.0}), rng);
    VectorXd start = train[3];
    start[0] += 0.05;
    const double before = physics::r_aux(start, train);
    const VectorXd zp = gradient_propose(start, q, Direction::maximize, b, 60, 0.05, 1e4, train);
    CHECK(physics::r_aux(zp, train) <= before + 1e-6);
    CHECK_NOTHROW(check_in_bounds(zp, b));
}

TEST_CASE("ranking with zero spread equals ranking by mean") {
    std::mt19937_64 rng(7);
    const Bounds b(2, Bound{-1.0, 1.0});
    const auto cand = uniform_samples(40, b, rng);
    const Quadratic q(VectorXd::Constant(2, 0.3), 0.5);
    const NoSpread flat(q);
    for (double best : {-10.0, -0.2, 5.0}) {
        for (Direction dir : {Direction::maximize, Direction::minimize}) {
            const AcquisitionParams p{0.01, best, dir};
            const auto a = rank_candidates(cand, flat, true, p, nullptr);
            const auto m = rank_candidates(cand, flat, false, p, nullptr);
            CHECK(a == m);
        }
    }
    std::vector<Score> scores;
    const auto idx = rank_candidates(cand, q, true, {0.0, -0.05, Direction::maximize}, &scores, 3);
    for (std::size_t i = 1; i < idx.size(); ++i) CHECK_FALSE(better(scores[idx[i]], scores[idx[i - 1]]));
}

TEST_CASE("loop bookkeeping") {
    const Problem p = toy_problem(2);
    BOConfig cfg = small_loop();
    const RunHistory h = run_loop(cfg, p, quadratic_strategy(true));
    REQUIRE(h.records.size() == 5);
    CHECK(h.records[0].sim_calls == 8);
    for (std::size_t i = 1; i < h.records.size(); ++i) {
        CHECK(h.records[i].sim_calls == 8 + 3 * static_cast<int>(i));
        CHECK(h.records[i].best_r >= h.records[i - 1].best_r);
        CHECK(h.records[i].retained_z.size() == 3);
        CHECK(h.records[i].acquisition.size() == 3);
    }
    CHECK(h.sim_calls() == 20);
    CHECK(h.z.size() == 20);
    CHECK(h.best_r == *std::max_element(h.r.begin(), h.r.end()));
    for (const auto& z : h.z) CHECK_NOTHROW(check_in_bounds(z, p.bounds));

    const RunHistory again = run_loop(cfg, p, quadratic_strategy(true));
    CHECK(again.r == h.r);

    cfg.iterations = 0;
    const RunHistory only = run_loop(cfg, p, quadratic_strategy(true));
    CHECK(only.records.size() == 1);
    CHECK(only.sim_calls() == 8);
    CHECK(only.best_r == *std::max_element(only.r.begin(), only.r.end()));
}

TEST_CASE("minimization loop") {
    const Problem p = toy_problem(2, Direction::minimize);
    Strategy s;
    s.method = "quad";
    s.fit = [](const RunHistory&, int) -> std::unique_ptr<LatentModel> {
        return std::make_unique<Quadratic>(VectorXd::Constant(2, 0.3), 0.0, -1.0);
    };
    const RunHistory h = run_loop(small_loop(), p, s);
    for (std::size_t i = 1; i < h.records.size(); ++i) CHECK(h.records[i].best_r <= h.records[i - 1].best_r);
    CHECK(h.best_r == *std::min_element(h.r.begin(), h.r.end()));
    CHECK(h.best_r < 1e-3);
}

TEST_CASE("failed simulations are dropped and counted") {
    Problem p = toy_problem(2);
    auto inner = p.simulate;
    p.simulate = [inner](const VectorXd& z) {
        if (z[0] > 0.6) throw SolverError("refused");
        return inner(z);
    };
    BOConfig cfg = small_loop();
    cfg.init_size = 12;
    const RunHistory h = run_loop(cfg, p, quadratic_strategy(true));
    int retained = 0;
    for (const auto& r : h.records) retained += static_cast<int>(r.retained_z.size());
    CHECK(h.sim_calls() + static_cast<int>(h.failures.size()) == retained);
    CHECK(h.failures.size() > 0);
    for (const auto& f : h.failures) CHECK(f.z[0] > 0.6);
    for (std::size_t i = 1; i < h.records.size(); ++i) CHECK(h.records[i].sim_calls >= h.records[i - 1].sim_calls);
}

TEST_CASE("gradient refinement joins the pool") {
    const Problem p = toy_problem(2);
    BOConfig cfg = small_loop();
    cfg.gradient.enabled = true;
    cfg.gradient.starts = 3;
    cfg.gradient.steps = 50;
    const RunHistory h = run_loop(cfg, p, quadratic_strategy(false));
    CHECK(h.best_r > -1e-4);
}

TEST_CASE("config validation") {
    BOConfig c = small_loop();
    c.retained = 7;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_loop();
    c.ga.population = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = small_loop();
    c.lambda = -1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
}
