#pragma once

#include <filesystem>
#include <functional>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "surfopt/geometry.hpp"
#include "surfopt/physics.hpp"
#include "surfopt/surrogate.hpp"

namespace surfopt::uncertainty {

enum class Mode { ensemble, mc_dropout };

std::string_view to_string(Mode mode);
Mode mode_from_string(std::string_view name);

struct PredictorConfig {
    Mode mode = Mode::ensemble;
    int members = 5;             // ensemble size N
    int passes = 20;             // stochastic passes T (mc_dropout)
    double dropout_rate = 0.1;   // mc_dropout only; ensemble members use train.model.dropout_rate
    surrogate::TrainConfig train;
    TaskSpec task;
    int jobs = 1;                // concurrent trainings / inferences

    void validate() const;
};

/// Mean and unbiased variance of a set of scalar estimates.
struct Stats {
    double mu = 0.0;
    double sigma2 = 0.0;
    Eigen::VectorXd field_mean;  // per-node mean prediction (empty from estimate_stats)
};

/// Welford accumulation in the given order. Needs at least two estimates.
Stats estimate_stats(std::span<const double> estimates);

class UncertainPredictor {
public:
    UncertainPredictor() = default;
    UncertainPredictor(Mode mode, std::vector<surrogate::SurrogateModel> members, int passes, TaskSpec task);

    Mode mode() const { return mode_; }
    int passes() const { return passes_; }
    const TaskSpec& task() const { return task_; }
    const std::vector<surrogate::SurrogateModel>& members() const { return members_; }

    /// Per-member (ensemble) or per-pass (mc_dropout) performance estimates
    /// R(forward(., mesh)). MC-dropout masks are seeded from the model seed
    /// and the mesh coordinates, so equal meshes give equal estimates.
    std::vector<double> estimates(const Mesh& mesh, Eigen::VectorXd* field_mean = nullptr) const;

    Stats predict_mesh(const Mesh& mesh) const;
    Stats predict_stats(const Eigen::VectorXd& z, const Parameterizer& param) const;

    /// Deterministic mean prediction and its gradient with respect to z. For
    /// mc_dropout this uses the network with dropout switched off.
    double mean_gradient(const Eigen::VectorXd& z, const Parameterizer& param, Eigen::VectorXd& grad) const;

private:
    Mode mode_ = Mode::ensemble;
    std::vector<surrogate::SurrogateModel> members_;
    int passes_ = 0;
    TaskSpec task_;
};

/// Ensemble: N trainings on the full dataset with seeds base + i.
/// MC-dropout: one training with dropout active.
/// A diverging member is reported as DivergenceError naming its index.
UncertainPredictor fit(std::span<const FieldSample> dataset, const PredictorConfig& cfg);

/// Gradient of R(forward(model, mesh)) with respect to the vertex coordinates
/// (3|V|), including R's explicit coordinate dependence.
Eigen::VectorXd performance_coord_gradient(const surrogate::SurrogateModel& model, const Mesh& mesh,
                                           const TaskSpec& task, double* value = nullptr);

/// Runs fn(i) for i in [0, count) on up to `jobs` threads. Exceptions are
/// rethrown for the lowest failing index.
void parallel_for(int count, int jobs, const std::function<void(int)>& fn);

/// Directory with manifest.json and member_<i>.bin files.
void save_predictor(const UncertainPredictor& p, const std::filesystem::path& dir);
UncertainPredictor load_predictor(const std::filesystem::path& dir);

}  // namespace surfopt::uncertainty
