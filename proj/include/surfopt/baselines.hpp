#pragma once

#include <span>
#include <vector>

#include <Eigen/Dense>

#include "surfopt/optimizer.hpp"
#include "surfopt/surrogate.hpp"

namespace surfopt::baselines {

/// Zero-mean GP with isotropic squared-exponential kernel
/// k(a, b) = s2 * exp(-|a - b|^2 / (2 ell^2)).
struct GpModel {
    Eigen::MatrixXd z;        // n x d training inputs
    Eigen::VectorXd r;        // n targets
    double length_scale = 1.0;
    double signal_variance = 1.0;
    double noise_variance = 0.0;
    double jitter = 0.0;      // extra diagonal that made the factorization succeed
    double log_marginal_likelihood = 0.0;
    Eigen::LLT<Eigen::MatrixXd> chol;
    Eigen::VectorXd alpha;    // (K + (noise + jitter) I)^-1 r

    double kernel(const Eigen::VectorXd& a, const Eigen::VectorXd& b) const;
};

/// Picks (ell, s2) maximizing the log marginal likelihood on a 16 x 16
/// log grid: ell in [0.01, 10] x input diameter, s2 in [0.01, 100] x mean(r^2).
/// Jitter escalates to 1e-6 before giving up with ConditioningError.
GpModel gp_fit(std::span<const Eigen::VectorXd> z, std::span<const double> r, double noise_variance);

/// GP fit with fixed hyperparameters.
GpModel gp_fit_fixed(std::span<const Eigen::VectorXd> z, std::span<const double> r, double noise_variance,
                     double length_scale, double signal_variance);

/// Posterior mean and latent variance (clamped at 0).
optimizer::Prediction gp_predict(const GpModel& model, const Eigen::VectorXd& z);

/// GP over z mapped to the unit box with standardized targets.
class GpLatentModel final : public optimizer::LatentModel {
public:
    GpLatentModel(std::span<const Eigen::VectorXd> z, std::span<const double> r, const Bounds& bounds,
                  double noise_variance);
    double mean(const Eigen::VectorXd& z) const override;
    optimizer::Prediction stats(const Eigen::VectorXd& z) const override;
    const GpModel& gp() const { return gp_; }

private:
    Eigen::VectorXd unit(const Eigen::VectorXd& z) const;
    Bounds bounds_;
    double shift_ = 0.0;
    double scale_ = 1.0;
    GpModel gp_;
};

/// One trained network; only the mean is available. stats() throws.
class SurrogateLatentModel final : public optimizer::LatentModel {
public:
    SurrogateLatentModel(surrogate::SurrogateModel model, std::shared_ptr<const Parameterizer> param, TaskSpec task);
    double mean(const Eigen::VectorXd& z) const override;
    optimizer::Prediction stats(const Eigen::VectorXd& z) const override;
    bool has_gradient() const override { return true; }
    double mean_gradient(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const override;

private:
    surrogate::SurrogateModel model_;
    std::shared_ptr<const Parameterizer> param_;
    TaskSpec task_;
};

inline constexpr double kKrigingNoise = 1e-6;  // in standardized target units

/// The BO loop with a GP over z as predictor.
optimizer::RunHistory kriging_bo_run(const optimizer::BOConfig& cfg, const optimizer::Problem& problem,
                                     double noise_variance = kKrigingNoise);

/// One network, candidates ranked by predicted performance alone.
optimizer::RunHistory deterministic_gnn_run(const optimizer::BOConfig& cfg, const optimizer::Problem& problem);

/// Uniform sampling with the same budget and history layout.
optimizer::RunHistory random_search_run(const optimizer::BOConfig& cfg, const optimizer::Problem& problem);

}  // namespace surfopt::baselines
