#include "surfopt/baselines.hpp"

#include <cmath>
#include <limits>
#include <numbers>

#include "surfopt/errors.hpp"
#include "surfopt/uncertainty.hpp"

namespace surfopt::baselines {

namespace {

Eigen::MatrixXd stack(std::span<const Eigen::VectorXd> z) {
    if (z.empty()) return {};
    Eigen::MatrixXd out(static_cast<Eigen::Index>(z.size()), z.front().size());
    for (std::size_t i = 0; i < z.size(); ++i) {
        if (z[i].size() != out.cols()) throw ShapeError("GP inputs have mixed dimensions");
        out.row(static_cast<Eigen::Index>(i)) = z[i].transpose();
    }
    return out;
}

Eigen::MatrixXd squared_distances(const Eigen::MatrixXd& z) {
    const Eigen::Index n = z.rows();
    Eigen::MatrixXd d2(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < n; ++j) d2(i, j) = (z.row(i) - z.row(j)).squaredNorm();
    }
    return d2;
}

// Factorizes s2 * exp(-d2 / 2 ell^2) + noise I, escalating jitter; false if hopeless.
bool factor(GpModel& m, const Eigen::MatrixXd& d2) {
    const Eigen::Index n = d2.rows();
    Eigen::MatrixXd k = (m.signal_variance * (-d2.array() / (2.0 * m.length_scale * m.length_scale)).exp()).matrix();
    for (double jitter : {0.0, 1e-12, 1e-11, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
        Eigen::MatrixXd kk = k;
        kk.diagonal().array() += m.noise_variance + jitter;
        m.chol.compute(kk);
        if (m.chol.info() != Eigen::Success) continue;
        const Eigen::MatrixXd l = m.chol.matrixL();
        if ((l.diagonal().array() <= 0.0).any() || !l.diagonal().allFinite()) continue;
        m.jitter = jitter;
        m.alpha = m.chol.solve(m.r);
        if (!m.alpha.allFinite()) continue;
        m.log_marginal_likelihood = -0.5 * m.r.dot(m.alpha) - l.diagonal().array().log().sum() -
                                    0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
        return true;
    }
    return false;
}

void check_inputs(std::span<const Eigen::VectorXd> z, std::span<const double> r, double noise) {
    if (z.size() < 2) throw InsufficientDataError("a GP needs at least 2 training points");
    if (z.size() != r.size()) throw ShapeError("GP inputs and targets differ in length");
    if (!(noise >= 0.0)) throw ConfigError("noise variance must be >= 0");
}

}  // namespace

double GpModel::kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const {
    return signal_variance * std::exp(-(a - b).squaredNorm() / (2.0 * length_scale * length_scale));
}

GpModel gp_fit_fixed(std::span<const Eigen::VectorXd> z, std::span<const double> r, double noise_variance,
                     double length_scale, double signal_variance) {
    check_inputs(z, r, noise_variance);
    if (!(length_scale > 0.0 && signal_variance > 0.0)) throw ConfigError("GP hyperparameters must be positive");
    GpModel m;
    m.z = stack(z);
    m.r = Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
    m.noise_variance = noise_variance;
    m.length_scale = length_scale;
    m.signal_variance = signal_variance;
    if (!factor(m, squared_distances(m.z))) throw ConditioningError("GP kernel matrix is not positive definite");
    return m;
}

GpModel gp_fit(std::span<const Eigen::VectorXd> z, std::span<const double> r, double noise_variance) {
    check_inputs(z, r, noise_variance);
    GpModel m;
    m.z = stack(z);
    m.r = Eigen::Map<const Eigen::VectorXd>(r.data(), static_cast<Eigen::Index>(r.size()));
    m.noise_variance = noise_variance;
    const Eigen::MatrixXd d2 = squared_distances(m.z);
    double diameter = std::sqrt(d2.maxCoeff());
    if (!(diameter > 0.0)) diameter = 1.0;
    double mean_r2 = m.r.squaredNorm() / static_cast<double>(m.r.size());
    if (!(mean_r2 > 0.0)) mean_r2 = 1.0;

    constexpr int kGrid = 16;
    GpModel best;
    bool found = false;
    for (int i = 0; i < kGrid; ++i) {
        for (int j = 0; j < kGrid; ++j) {
            GpModel trial = m;
            trial.length_scale = diameter * std::pow(10.0, -2.0 + 3.0 * i / (kGrid - 1));
            trial.signal_variance = mean_r2 * std::pow(10.0, -2.0 + 4.0 * j / (kGrid - 1));
            if (!factor(trial, d2)) continue;
            if (!found || trial.log_marginal_likelihood > best.log_marginal_likelihood) {
                best = std::move(trial);
                found = true;
            }
        }
    }
    if (!found) throw ConditioningError("no GP hyperparameters gave a positive definite kernel matrix");
    return best;
}

optimizer::Prediction gp_predict(const GpModel& m, const Eigen::VectorXd& z) {
    if (z.size() != m.z.cols()) throw ShapeError("GP query has the wrong dimension");
    Eigen::VectorXd ks(m.z.rows());
    for (Eigen::Index i = 0; i < m.z.rows(); ++i) ks[i] = m.kernel(m.z.row(i).transpose(), z);
    optimizer::Prediction p;
    p.mean = ks.dot(m.alpha);
    const Eigen::VectorXd v = m.chol.matrixL().solve(ks);
    p.sigma2 = std::max(m.signal_variance - v.squaredNorm(), 0.0);
    return p;
}

// ---------------------------------------------------------------------------

GpLatentModel::GpLatentModel(std::span<const Eigen::VectorXd> z, std::span<const double> r, const Bounds& bounds,
                             double noise_variance)
    : bounds_(bounds) {
    check_bounds(bounds_);
    check_inputs(z, r, noise_variance);
    double sum = 0.0;
    for (double v : r) sum += v;
    shift_ = sum / static_cast<double>(r.size());
    double ss = 0.0;
    for (double v : r) ss += (v - shift_) * (v - shift_);
    scale_ = std::sqrt(ss / static_cast<double>(r.size()));
    if (!(scale_ > 0.0)) scale_ = 1.0;
    std::vector<Eigen::VectorXd> u;
    std::vector<double> t;
    for (std::size_t i = 0; i < z.size(); ++i) {
        u.push_back(unit(z[i]));
        t.push_back((r[i] - shift_) / scale_);
    }
    gp_ = gp_fit(u, t, noise_variance);
}

Eigen::VectorXd GpLatentModel::unit(const Eigen::VectorXd& z) const {
    Eigen::VectorXd u(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const Bound& b = bounds_[static_cast<std::size_t>(i)];
        u[i] = b.width() > 0.0 ? (z[i] - b.lo) / b.width() : 0.0;
    }
    return u;
}

double GpLatentModel::mean(const Eigen::VectorXd& z) const { return stats(z).mean; }

optimizer::Prediction GpLatentModel::stats(const Eigen::VectorXd& z) const {
    const optimizer::Prediction p = gp_predict(gp_, unit(z));
    return {shift_ + scale_ * p.mean, scale_ * scale_ * p.sigma2};
}

SurrogateLatentModel::SurrogateLatentModel(surrogate::SurrogateModel model, std::shared_ptr<const Parameterizer> param,
                                           TaskSpec task)
    : model_(std::move(model)), param_(std::move(param)), task_(task) {
    if (!param_) throw ConfigError("surrogate predictors need a shape parameterizer");
}

double SurrogateLatentModel::mean(const Eigen::VectorXd& z) const {
    Mesh m = param_->mesh(z);
    geometry::build_features(m, model_.config().sinusoids);
    return physics::performance(m, surrogate::forward(model_, m), task_);
}

optimizer::Prediction SurrogateLatentModel::stats(const Eigen::VectorXd&) const {
    throw InvariantError("a single deterministic network has no predictive variance");
}

double SurrogateLatentModel::mean_gradient(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const {
    const Mesh m = param_->mesh(z);
    double value = 0.0;
    const Eigen::VectorXd g = uncertainty::performance_coord_gradient(model_, m, task_, &value);
    grad = param_->jacobian(z).transpose() * g;
    return value;
}

// ---------------------------------------------------------------------------

optimizer::RunHistory kriging_bo_run(const optimizer::BOConfig& cfg, const optimizer::Problem& problem,
                                     double noise_variance) {
    optimizer::Strategy s;
    s.method = "krig";
    s.fit = [bounds = problem.bounds, noise_variance](const optimizer::RunHistory& data,
                                                      int) -> std::unique_ptr<optimizer::LatentModel> {
        return std::make_unique<GpLatentModel>(data.z, data.r, bounds, noise_variance);
    };
    return optimizer::run_loop(cfg, problem, s);
}

optimizer::RunHistory deterministic_gnn_run(const optimizer::BOConfig& cfg, const optimizer::Problem& problem) {
    if (!problem.param) throw ConfigError("the GNN baseline needs a shape parameterizer");
    optimizer::Strategy s;
    s.method = "gnn";
    s.use_ei = false;
    s.fit = [train = cfg.predictor.train, param = problem.param, task = problem.task](
                const optimizer::RunHistory& data, int) -> std::unique_ptr<optimizer::LatentModel> {
        return std::make_unique<SurrogateLatentModel>(surrogate::train(data.samples, train).model, param, task);
    };
    return optimizer::run_loop(cfg, problem, s);
}

optimizer::RunHistory random_search_run(const optimizer::BOConfig& cfg, const optimizer::Problem& problem) {
    optimizer::Strategy s;
    s.method = "random";
    return optimizer::run_loop(cfg, problem, s);
}

}  // namespace surfopt::baselines
