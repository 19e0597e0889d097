#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "surfopt/geometry.hpp"
#include "surfopt/physics.hpp"
#include "surfopt/uncertainty.hpp"

namespace surfopt::optimizer {

enum class Direction { maximize, minimize };

/// +1 for maximize, -1 for minimize: multiplies native values into the
/// internal maximize convention.
inline double sign(Direction d) { return d == Direction::maximize ? 1.0 : -1.0; }

std::string_view to_string(Direction d);

double normal_pdf(double x);
double normal_cdf(double x);

struct AcquisitionParams {
    double epsilon = 0.0;
    double best_value = 0.0;  // incumbent, already in the maximize convention
    Direction direction = Direction::maximize;
};

/// EI = (m - best - eps) Phi(Z) + sigma phi(Z), Z = (m - best - eps) / sigma,
/// with m = sign(direction) * mu. sigma = 0 gives max(m - best - eps, 0).
double expected_improvement(double mu, double sigma, const AcquisitionParams& params);

// ---------------------------------------------------------------------------
// predictors over the latent space

struct Prediction {
    double mean = 0.0;
    double sigma2 = 0.0;
};

/// Scalar performance prediction r(z) in the task's native convention.
class LatentModel {
public:
    virtual ~LatentModel() = default;
    virtual double mean(const Eigen::VectorXd& z) const = 0;
    virtual Prediction stats(const Eigen::VectorXd& z) const = 0;
    virtual bool has_gradient() const { return false; }
    /// Returns mean(z) and writes d mean / dz.
    virtual double mean_gradient(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const;
};

/// Ensemble / MC-dropout predictor composed with the shape map.
class PredictorModel final : public LatentModel {
public:
    PredictorModel(uncertainty::UncertainPredictor predictor, std::shared_ptr<const Parameterizer> param);
    double mean(const Eigen::VectorXd& z) const override;
    Prediction stats(const Eigen::VectorXd& z) const override;
    bool has_gradient() const override { return true; }
    double mean_gradient(const Eigen::VectorXd& z, Eigen::VectorXd& grad) const override;
    const uncertainty::UncertainPredictor& predictor() const { return predictor_; }

private:
    uncertainty::UncertainPredictor predictor_;
    std::shared_ptr<const Parameterizer> param_;
};

// ---------------------------------------------------------------------------
// candidate generation

/// Lexicographic fitness: primary first, secondary breaks ties.
struct Score {
    double primary = 0.0;
    double secondary = 0.0;
};
bool better(const Score& a, const Score& b);
using ScoreFn = std::function<Score(const Eigen::VectorXd&)>;

struct GaConfig {
    int population = 64;
    int generations = 40;
    double mutation_sigma = 0.05;  // fraction of each bound range
    int tournament_size = 2;
    double blend_alpha = 0.5;
    std::uint64_t seed = 0;

    void validate() const;
};

inline constexpr double kDuplicateDistance = 1e-9;

/// Elitist (mu + lambda) real-coded GA maximizing `score`. Returns up to
/// `count` distinct individuals, best first. `initial` individuals are
/// injected into generation 0; candidates within kDuplicateDistance of an
/// `exclude` point are never returned.
std::vector<Eigen::VectorXd> ga_propose(const ScoreFn& score, const Bounds& bounds, const GaConfig& cfg, int count,
                                        std::span<const Eigen::VectorXd> initial = {},
                                        std::span<const Eigen::VectorXd> exclude = {}, int jobs = 1);

/// Projected gradient descent on -sign(dir) * mean(z) + lambda * r_aux(z),
/// taken in unit-box coordinates with steps capped at max_step.
Eigen::VectorXd gradient_propose(const Eigen::VectorXd& z0, const LatentModel& model, Direction dir,
                                 const Bounds& bounds, int steps, double step_size, double lambda,
                                 std::span<const Eigen::VectorXd> training_z, int k = 5, double max_step = 0.05);

/// n stratified samples, one per row-interval in every coordinate.
std::vector<Eigen::VectorXd> latin_hypercube(int n, const Bounds& bounds, std::mt19937_64& rng);
std::vector<Eigen::VectorXd> uniform_samples(int n, const Bounds& bounds, std::mt19937_64& rng);

// ---------------------------------------------------------------------------
// the outer loop

/// An optimization problem: shape map, simulator and objective sense.
/// `param` may be null for problems the surrogate methods cannot handle.
struct Problem {
    std::string name;
    std::shared_ptr<const Parameterizer> param;
    Bounds bounds;
    TaskSpec task;
    Direction direction = Direction::maximize;
    /// Simulates one latent; the sample's mesh is what the surrogate sees.
    std::function<FieldSample(const Eigen::VectorXd&)> simulate;
};

struct GradientConfig {
    bool enabled = false;
    int steps = 30;
    double step_size = 0.05;
    int starts = 10;  // GA candidates refined by descent
};

struct BOConfig {
    int init_size = 40;
    int iterations = 8;
    int proposals = 30;
    int retained = 10;
    GaConfig ga;
    GradientConfig gradient;
    double lambda = 0.0;   // r_aux weight
    int k_aux = 5;
    double epsilon = -1.0; // < 0: 0.01 * range of the dataset's r
    std::uint64_t seed = 0;
    std::optional<double> target;
    uncertainty::PredictorConfig predictor;
    int jobs = 1;

    void validate() const;
};

struct Failure {
    int iteration = 0;
    Eigen::VectorXd z;
    std::string message;
};

struct IterationRecord {
    int iteration = 0;
    int sim_calls = 0;              // cumulative successful simulations
    double best_r = 0.0;            // best so far, native convention
    double mean_acquisition = 0.0;  // mean acquisition of the retained set
    double wall_ms = 0.0;
    std::vector<Eigen::VectorXd> retained_z;
    std::vector<double> retained_r;        // NaN for failed simulations
    std::vector<double> acquisition;
};

struct RunHistory {
    std::string method;
    Direction direction = Direction::maximize;
    std::vector<IterationRecord> records;
    std::vector<Failure> failures;
    std::vector<Eigen::VectorXd> z;        // every simulated latent, in order
    std::vector<double> r;
    std::vector<FieldSample> samples;
    Eigen::VectorXd best_z;
    double best_r = 0.0;
    int sim_calls() const { return static_cast<int>(r.size()); }
};

/// How a method turns the data gathered so far into a latent predictor.
struct Strategy {
    std::string method;
    /// Called once per iteration on the full dataset.
    std::function<std::unique_ptr<LatentModel>(const RunHistory& data, int iteration)> fit;
    bool use_ei = true;  // false ranks candidates by predicted mean only
};

/// Ranks candidates best first by (acquisition, predicted value). Returns
/// the permutation and writes each candidate's score.
std::vector<std::size_t> rank_candidates(std::span<const Eigen::VectorXd> candidates, const LatentModel& model,
                                         bool use_ei, const AcquisitionParams& params, std::vector<Score>* scores,
                                         int jobs = 1);

/// Shared loop: initial LHS design, then per iteration fit -> propose ->
/// rank -> simulate the retained set. Failed simulations are dropped and logged.
RunHistory run_loop(const BOConfig& cfg, const Problem& problem, const Strategy& strategy);

/// Deep-ensemble or MC-dropout BO according to cfg.predictor.mode.
RunHistory bo_run(const BOConfig& cfg, const Problem& problem);

}  // namespace surfopt::optimizer
