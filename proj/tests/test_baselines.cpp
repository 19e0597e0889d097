#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "support.hpp"
#include "surfopt/baselines.hpp"
#include "surfopt/errors.hpp"
#include "surfopt/tasks.hpp"

using namespace surfopt;
using namespace surfopt::baselines;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

VectorXd v1(double x) { return VectorXd::Constant(1, x); }

optimizer::Problem line_problem(std::function<double(double)> f, Bound b) {
    optimizer::Problem p;
    p.name = "line";
    p.bounds = {b};
    p.task = {Task::max_stress, 0.0};
    p.simulate = [f](const VectorXd& z) {
        FieldSample s;
        s.field = VectorXd::Zero(1);
        s.performance = f(z[0]);
        return s;
    };
    return p;
}

// Textbook posterior without a factorization.
optimizer::Prediction naive_posterior(const GpModel& m, const VectorXd& q) {
    const Eigen::Index n = m.z.rows();
    MatrixXd K(n, n);
    VectorXd k(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double d = (m.z.row(i).transpose() - q).squaredNorm();
        k[i] = m.signal_variance * std::exp(-d / (2 * m.length_scale * m.length_scale));
        for (Eigen::Index j = 0; j < n; ++j) {
            const double dij = (m.z.row(i) - m.z.row(j)).squaredNorm();
            K(i, j) = m.signal_variance * std::exp(-dij / (2 * m.length_scale * m.length_scale));
        }
    }
    K.diagonal().array() += m.noise_variance + m.jitter;
    const Eigen::FullPivLU<MatrixXd> lu(K);
    return {k.dot(lu.solve(m.r)), m.signal_variance - k.dot(lu.solve(k))};
}

}  // namespace

TEST_CASE("gp interpolates its training data") {
    const std::vector<VectorXd> z = {v1(0.0), v1(1.0)};
    const std::vector<double> r = {0.0, 1.0};
    const GpModel m = gp_fit(z, r, 1e-10);
    const auto p0 = gp_predict(m, v1(0.0));
    const auto p1 = gp_predict(m, v1(1.0));
    CHECK(std::abs(p0.mean) < 1e-6);
    CHECK(std::abs(p1.mean - 1.0) < 1e-6);
    CHECK(p0.sigma2 <= 1e-10 + 1e-9);
    CHECK(p1.sigma2 <= 1e-10 + 1e-9);
    CHECK(p0.sigma2 >= 0.0);

    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<VectorXd> zz;
    std::vector<double> rr;
    for (int i = 0; i < 15; ++i) {
        VectorXd q(2);
        q << u(rng), u(rng);
        zz.push_back(q);
        rr.push_back(std::sin(3 * q[0]) + q[1] * q[1]);
    }
    const GpModel g = gp_fit(zz, rr, 1e-10);
    for (std::size_t i = 0; i < zz.size(); ++i) CHECK(std::abs(gp_predict(g, zz[i]).mean - rr[i]) < 1e-6);
}

TEST_CASE("gp posterior matches a direct solve") {
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> u(0.0, 2.0);
    std::vector<VectorXd> z;
    std::vector<double> r;
    for (int i = 0; i < 10; ++i) {
        VectorXd q(3);
        q << u(rng), u(rng), u(rng);
        z.push_back(q);
        r.push_back(q.sum() - q[1] * q[2]);
    }
    for (double noise : {1e-6, 1e-2}) {
        const GpModel m = gp_fit(z, r, noise);
        for (int t = 0; t < 20; ++t) {
            VectorXd q(3);
            q << u(rng), u(rng), u(rng);
            const auto a = gp_predict(m, q);
            const auto b = naive_posterior(m, q);
            CHECK(std::abs(a.mean - b.mean) < 1e-8);
            CHECK(std::abs(a.sigma2 - std::max(b.sigma2, 0.0)) < 1e-8);
            const auto c = gp_predict(m, q + VectorXd::Constant(3, 1e-9));
            CHECK(std::abs(c.mean - a.mean) < 1e-6);
        }
    }
}

TEST_CASE("gp reverts to the prior far from data") {
    const std::vector<VectorXd> z = {v1(0.0), v1(0.5), v1(1.0)};
    const std::vector<double> r = {0.3, -0.2, 0.8};
    const GpModel m = gp_fit(z, r, 1e-8);
    const auto far = gp_predict(m, v1(1e3 * (1.0 + m.length_scale)));
    CHECK(std::abs(far.mean) < 1e-6);
    CHECK(std::abs(far.sigma2 - m.signal_variance) <= 0.01 * m.signal_variance);
}

TEST_CASE("gp hyperparameter grid") {
    std::vector<VectorXd> z;
    std::vector<double> r;
    for (int i = 0; i < 12; ++i) {
        const double x = i / 11.0;
        z.push_back(v1(x));
        r.push_back(std::sin(2 * M_PI * x));
    }
    const GpModel m = gp_fit(z, r, 1e-10);
    double sq = 0.0;
    const int n = 1001;
    for (int i = 0; i < n; ++i) {
        const double x = static_cast<double>(i) / (n - 1);
        const double e = gp_predict(m, v1(x)).mean - std::sin(2 * M_PI * x);
        sq += e * e;
    }
    CHECK(std::sqrt(sq / n) < 0.05);

    // the selected pair beats every other point of a coarse scan
    for (double ell : {0.03, 0.1, 0.3, 1.0, 3.0}) {
        for (double s2 : {0.01, 0.1, 1.0, 10.0}) {
            try {
                const GpModel other = gp_fit_fixed(z, r, 1e-10, ell, s2);
                CHECK(other.log_marginal_likelihood <= m.log_marginal_likelihood + 0.5);
            } catch (const ConditioningError&) {
            }
        }
    }
}

TEST_CASE("gp input errors") {
    CHECK_THROWS_AS(gp_fit(std::vector<VectorXd>{v1(0)}, std::vector<double>{1.0}, 1e-6), InsufficientDataError);
    CHECK_THROWS_AS(gp_fit(std::vector<VectorXd>{v1(0), v1(1)}, std::vector<double>{1.0}, 1e-6), ShapeError);
    CHECK_THROWS_AS(gp_fit_fixed(std::vector<VectorXd>{v1(0), v1(1)}, std::vector<double>{1.0, 2.0}, 1e-6, -1.0, 1.0),
                    ConfigError);
}

TEST_CASE("gp latent model works in the unit box") {
    const Bounds b = {{10.0, 20.0}, {-0.01, 0.01}};
    std::mt19937_64 rng(8);
    const auto z = optimizer::latin_hypercube(15, b, rng);
    std::vector<double> r;
    for (const auto& q : z) r.push_back(100.0 + (q[0] - 15.0) + 300.0 * q[1]);
    const GpLatentModel m(z, r, b, 1e-10);
    for (std::size_t i = 0; i < z.size(); ++i) CHECK(m.mean(z[i]) == doctest::Approx(r[i]).epsilon(1e-6));
    const auto s = m.stats(z[0]);
    CHECK(s.sigma2 >= 0.0);
    CHECK(s.sigma2 < 1e-4);
}

TEST_CASE("kriging bo on a one-dimensional quadratic") {
    const optimizer::Problem p = line_problem([](double x) { return -(x - 0.37) * (x - 0.37); }, {-2.0, 2.0});
    optimizer::BOConfig cfg;
    cfg.init_size = 5;
    cfg.iterations = 5;
    cfg.proposals = 10;
    cfg.retained = 5;
    cfg.ga.population = 32;
    cfg.ga.generations = 30;
    cfg.seed = 2;
    const auto h = kriging_bo_run(cfg, p);
    CHECK(h.method == "krig");
    CHECK(h.sim_calls() <= 30);
    CHECK(std::abs(h.best_z[0] - 0.37) < 1e-2);
    for (std::size_t i = 1; i < h.records.size(); ++i) {
        CHECK(h.records[i].best_r >= h.records[i - 1].best_r);
        CHECK(h.records[i].sim_calls > h.records[i - 1].sim_calls);
    }
    const auto again = kriging_bo_run(cfg, p);
    CHECK(again.r == h.r);
}

TEST_CASE("random search order statistics") {
    const optimizer::Problem p = line_problem([](double x) { return x; }, {0.0, 1.0});
    optimizer::BOConfig cfg;
    cfg.init_size = 4;
    cfg.iterations = 3;
    cfg.retained = 2;
    cfg.proposals = 2;
    const int n = 4 + 3 * 2;
    const int seeds = 200;
    double sum = 0.0;
    for (int s = 0; s < seeds; ++s) {
        cfg.seed = static_cast<std::uint64_t>(s);
        const auto h = random_search_run(cfg, p);
        CHECK(h.sim_calls() == n);
        for (const auto& z : h.z) CHECK_NOTHROW(check_in_bounds(z, p.bounds));
        sum += h.best_r;
    }
    const double expected = n / (n + 1.0);
    const double sd = std::sqrt(n / ((n + 1.0) * (n + 1.0) * (n + 2.0)));
    CHECK(std::abs(sum / seeds - expected) < 4.0 * sd / std::sqrt(seeds));

    cfg.seed = 9;
    CHECK(random_search_run(cfg, p).r == random_search_run(cfg, p).r);
}

TEST_CASE("ranking by predicted value picks the true best") {
    class Oracle final : public optimizer::LatentModel {
    public:
        double mean(const VectorXd& z) const override { return std::cos(3 * z[0]) * z[1]; }
        optimizer::Prediction stats(const VectorXd&) const override {
            throw InvariantError("sigma requested");
        }
    };
    const Oracle oracle;
    std::mt19937_64 rng(4);
    const auto cand = optimizer::uniform_samples(30, Bounds(2, Bound{-1, 1}), rng);
    const auto idx = optimizer::rank_candidates(cand, oracle, false, {0.0, 0.0, optimizer::Direction::maximize}, nullptr);
    for (const auto& c : cand) CHECK(oracle.mean(cand[idx[0]]) >= oracle.mean(c));
}

TEST_CASE("deterministic gnn run never asks for a spread") {
    tasks::AirfoilOptions opt;
    opt.n_panels = 24;
    const optimizer::Problem p = tasks::make_airfoil_problem(opt);
    optimizer::BOConfig cfg;
    cfg.init_size = 6;
    cfg.iterations = 2;
    cfg.proposals = 4;
    cfg.retained = 2;
    cfg.ga.population = 8;
    cfg.ga.generations = 3;
    cfg.predictor.train.model.depth = 2;
    cfg.predictor.train.model.hidden_dim = 4;
    cfg.predictor.train.model.kernels = 1;
    cfg.predictor.train.epochs = 2;
    const auto h = deterministic_gnn_run(cfg, p);
    CHECK(h.method == "gnn");
    CHECK(h.sim_calls() == 10);
    for (std::size_t i = 1; i < h.records.size(); ++i) CHECK(h.records[i].best_r >= h.records[i - 1].best_r);

    const surrogate::SurrogateModel net = surrogate::initialize(cfg.predictor.train.model);
    const SurrogateLatentModel m(net, p.param, p.task);
    VectorXd z(3);
    z << 0.02, 0.4, 0.12;
    CHECK_THROWS_AS(m.stats(z), InvariantError);
}
