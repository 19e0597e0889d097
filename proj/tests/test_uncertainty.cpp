#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <atomic>
#include <filesystem>
#include <random>

#include "support.hpp"
#include "surfopt/errors.hpp"
#include "surfopt/uncertainty.hpp"

using namespace surfopt;
using namespace surfopt::uncertainty;
using Eigen::VectorXd;
namespace fs = std::filesystem;

namespace {

std::vector<FieldSample> toy_data(int count, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::vector<FieldSample> out;
    for (int i = 0; i < count; ++i) out.push_back(testing::random_sample(8, rng, 1));
    return out;
}

PredictorConfig toy_config(Mode mode) {
    PredictorConfig c;
    c.mode = mode;
    c.members = 3;
    c.passes = 6;
    c.dropout_rate = 0.2;
    c.train.model.sinusoids = 1;
    c.train.model.depth = 2;
    c.train.model.hidden_dim = 6;
    c.train.model.kernels = 2;
    c.train.model.seed = 40;
    c.train.epochs = 3;
    c.train.batch_size = 2;
    c.task = {Task::max_stress, 0.0};
    return c;
}

double two_pass_variance(const std::vector<double>& x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return ss / static_cast<double>(x.size() - 1);
}

}  // namespace

TEST_CASE("hand-computable statistics") {
    const std::vector<double> e = {1.0, 2.0, 3.0};
    const Stats s = estimate_stats(e);
    CHECK(s.mu == 2.0);
    CHECK(s.sigma2 == 1.0);
    const std::vector<double> same(5, 0.731);
    const Stats z = estimate_stats(same);
    CHECK(z.mu == 0.731);
    CHECK(z.sigma2 == 0.0);
    CHECK_THROWS_AS(estimate_stats(std::vector<double>{4.0}), ConfigError);
}

TEST_CASE("welford agrees with the two-pass formulas") {
    std::mt19937_64 rng(12);
    std::normal_distribution<double> g(0.0, 1.0);
    for (int trial = 0; trial < 200; ++trial) {
        const int n = 2 + trial % 30;
        const double offset = trial % 3 == 0 ? 1e6 : 0.0;
        std::vector<double> x(static_cast<std::size_t>(n));
        for (auto& v : x) v = offset + 3.0 * g(rng);
        const Stats s = estimate_stats(x);
        double mean = 0.0;
        for (double v : x) mean += v;
        mean /= n;
        CHECK(s.mu == doctest::Approx(mean).epsilon(1e-14));
        CHECK(s.sigma2 == doctest::Approx(two_pass_variance(x)).epsilon(1e-9));
        CHECK(s.sigma2 >= 0.0);
        std::vector<double> y = x;
        std::shuffle(y.begin(), y.end(), rng);
        const Stats t = estimate_stats(y);
        CHECK(t.mu == doctest::Approx(s.mu).epsilon(1e-14));
        CHECK(t.sigma2 == doctest::Approx(s.sigma2).epsilon(1e-9));
    }
}

TEST_CASE("config validation") {
    PredictorConfig c = toy_config(Mode::ensemble);
    c.members = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(fit(toy_data(2, 1), c), ConfigError);
    c = toy_config(Mode::mc_dropout);
    c.dropout_rate = 0.0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK_THROWS_AS(fit(toy_data(2, 1), c), ConfigError);
    c = toy_config(Mode::mc_dropout);
    c.passes = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    CHECK(mode_from_string(to_string(Mode::mc_dropout)) == Mode::mc_dropout);
    CHECK_THROWS_AS(mode_from_string("bagging"), ConfigError);
    CHECK_THROWS_AS(fit(std::vector<FieldSample>{}, toy_config(Mode::ensemble)), InsufficientDataError);
}

TEST_CASE("ensemble fit and prediction") {
    const auto data = toy_data(4, 7);
    PredictorConfig c = toy_config(Mode::ensemble);
    const UncertainPredictor a = fit(data, c);
    c.jobs = 3;
    const UncertainPredictor b = fit(data, c);
    REQUIRE(a.members().size() == 3);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(a.members()[i].parameters() == b.members()[i].parameters());
        CHECK(a.members()[i].config().seed == 40 + i);
    }
    CHECK(a.members()[0].parameters() != a.members()[1].parameters());

    const Mesh& mesh = data[0].mesh;
    const Stats s = a.predict_mesh(mesh);
    std::vector<double> one_by_one;
    VectorXd field_sum = VectorXd::Zero(8);
    for (const auto& m : a.members()) {
        const VectorXd f = surrogate::forward(m, mesh);
        field_sum += f;
        one_by_one.push_back(physics::performance(mesh, f, c.task));
    }
    CHECK(s.mu == doctest::Approx((one_by_one[0] + one_by_one[1] + one_by_one[2]) / 3.0).epsilon(1e-14));
    CHECK(s.sigma2 == doctest::Approx(two_pass_variance(one_by_one)).epsilon(1e-10));
    CHECK((s.field_mean - field_sum / 3.0).norm() < 1e-12);
    CHECK(a.estimates(mesh) == one_by_one);

    // reversed member order
    std::vector<surrogate::SurrogateModel> rev(a.members().rbegin(), a.members().rend());
    const UncertainPredictor r(Mode::ensemble, rev, 0, c.task);
    const Stats sr = r.predict_mesh(mesh);
    CHECK(sr.mu == doctest::Approx(s.mu).epsilon(1e-14));
    CHECK(sr.sigma2 == doctest::Approx(s.sigma2).epsilon(1e-12));

    std::vector<surrogate::SurrogateModel> clones(3, a.members()[0]);
    const UncertainPredictor same(Mode::ensemble, clones, 0, c.task);
    CHECK(same.predict_mesh(mesh).sigma2 == 0.0);
}

TEST_CASE("mc dropout prediction") {
    const auto data = toy_data(4, 9);
    const PredictorConfig c = toy_config(Mode::mc_dropout);
    const UncertainPredictor p = fit(data, c);
    REQUIRE(p.members().size() == 1);
    CHECK(p.members()[0].config().dropout_rate == 0.2);
    const auto e1 = p.estimates(data[1].mesh);
    const auto e2 = p.estimates(data[1].mesh);
    CHECK(e1.size() == 6);
    CHECK(e1 == e2);
    const Stats s = p.predict_mesh(data[1].mesh);
    CHECK(s.sigma2 > 0.0);
    CHECK(s.sigma2 == doctest::Approx(two_pass_variance(e1)).epsilon(1e-10));

    auto model = p.members()[0];
    surrogate::ModelConfig nodrop = model.config();
    nodrop.dropout_rate = 0.0;
    surrogate::SurrogateModel plain(nodrop);
    plain.parameters() = model.parameters();
    CHECK_THROWS_AS(UncertainPredictor(Mode::mc_dropout, {plain}, 6, c.task), ConfigError);
}

TEST_CASE("mean gradient through the shape map") {
    const geometry::NacaParameterizer param(24);
    std::vector<FieldSample> data;
    for (double t : {0.1, 0.14, 0.2}) {
        VectorXd z(3);
        z << 0.03, 0.4, t;
        data.push_back(physics::panel_solve(param.mesh(z), 0.05));
    }
    for (Mode mode : {Mode::ensemble, Mode::mc_dropout}) {
        PredictorConfig c = toy_config(mode);
        c.train.model.sinusoids = 4;
        c.task = {Task::airfoil_lift, 0.05};
        const UncertainPredictor p = fit(data, c);
        VectorXd z(3);
        z << 0.04, 0.5, 0.15;
        VectorXd grad;
        const double value = p.mean_gradient(z, param, grad);
        double plain_mean = 0.0;
        for (const auto& m : p.members()) plain_mean += physics::performance(param.mesh(z), surrogate::forward(m, param.mesh(z)), c.task);
        plain_mean /= static_cast<double>(p.members().size());
        CHECK(value == doctest::Approx(plain_mean).epsilon(1e-12));
        const double h = 1e-6;
        for (int i = 0; i < 3; ++i) {
            VectorXd a = z, b = z;
            a[i] += h;
            b[i] -= h;
            VectorXd unused;
            const double fd = (p.mean_gradient(a, param, unused) - p.mean_gradient(b, param, unused)) / (2 * h);
            CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-5).scale(1e-6));
        }
        if (mode == Mode::ensemble) CHECK(p.predict_stats(z, param).mu == doctest::Approx(value).epsilon(1e-12));
    }
}

TEST_CASE("predictor directory round trip") {
    const auto data = toy_data(3, 5);
    for (Mode mode : {Mode::ensemble, Mode::mc_dropout}) {
        const UncertainPredictor p = fit(data, toy_config(mode));
        const fs::path dir = fs::temp_directory_path() / "surfopt_test_predictor" / std::string(to_string(mode));
        fs::remove_all(dir);
        save_predictor(p, dir);
        CHECK(fs::exists(dir / "manifest.json"));
        const UncertainPredictor q = load_predictor(dir);
        CHECK(q.mode() == p.mode());
        CHECK(q.passes() == p.passes());
        CHECK(q.task().kind == p.task().kind);
        REQUIRE(q.members().size() == p.members().size());
        for (std::size_t i = 0; i < p.members().size(); ++i) CHECK(q.members()[i].parameters() == p.members()[i].parameters());
        CHECK(q.estimates(data[0].mesh) == p.estimates(data[0].mesh));
    }
}

TEST_CASE("parallel_for") {
    std::vector<int> hit(50, 0);
    parallel_for(50, 4, [&](int i) { hit[static_cast<std::size_t>(i)] += 1; });
    CHECK(std::all_of(hit.begin(), hit.end(), [](int h) { return h == 1; }));
    try {
        parallel_for(20, 3, [](int i) {
            if (i == 7 || i == 13) throw std::runtime_error("fail " + std::to_string(i));
        });
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "fail 7");
    }
}
