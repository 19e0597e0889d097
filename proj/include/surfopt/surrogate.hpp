#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "surfopt/geometry.hpp"
#include "surfopt/physics.hpp"

namespace surfopt::surrogate {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline constexpr int kEdgeDim = 3;

/// One Gaussian-mixture graph convolution:
///   out_j = 1/|N(j)| sum_{n in N(j)} 1/K sum_k w_k(v_{n->j}) Theta_k u_n
///   w_k(e) = exp(-1/2 sum_l (e_l - mu_kl)^2 / sigma_kl)
/// N(j) includes a self-loop with zero edge attribute. There is no bias.
struct GmmConvLayer {
    std::vector<Eigen::MatrixXd> theta;  // K matrices, out_dim x in_dim
    Eigen::MatrixXd mu;                  // K x 3
    Eigen::MatrixXd sigma;               // K x 3, strictly positive

    int kernels() const { return static_cast<int>(theta.size()); }
    int in_dim() const { return theta.empty() ? 0 : static_cast<int>(theta.front().cols()); }
    int out_dim() const { return theta.empty() ? 0 : static_cast<int>(theta.front().rows()); }
};

/// Gaussian edge weight w_k(e). Throws InvariantError on non-positive sigma.
double gmm_weight(const GmmConvLayer& layer, int k, const Eigen::Vector3d& edge_attr);

/// Direct evaluation of one layer on a featured mesh; `center_transform`
/// applies Theta_k to the centre node instead of the neighbour.
Eigen::MatrixXd gmm_conv_forward(const GmmConvLayer& layer, const Mesh& mesh, const Eigen::MatrixXd& features,
                                 bool center_transform = false);

struct ModelConfig {
    int sinusoids = geometry::kDefaultSinusoids;
    int hidden_dim = 32;
    int depth = 6;
    int kernels = 3;
    double dropout_rate = 0.0;
    std::uint64_t seed = 0;
    bool center_transform = false;

    int input_dim() const { return geometry::node_feature_dim(sinusoids); }
    void validate() const;
};

/// Stack of GMM-conv layers with ELU between layers and identity skips where
/// consecutive widths match. Parameters live in one flat vector so the
/// optimizer, serializer and gradient checks share a single layout:
/// per layer [Theta (K*out x in, row-major) | mu (K x 3) | log sigma (K x 3)].
/// The scalar output is affinely mapped: y = shift + scale * net(x).
class SurrogateModel {
public:
    SurrogateModel() = default;
    explicit SurrogateModel(const ModelConfig& config);

    const ModelConfig& config() const { return config_; }
    int depth() const { return static_cast<int>(layout_.size()); }
    int layer_in_dim(int l) const { return layout_[static_cast<std::size_t>(l)].in_dim; }
    int layer_out_dim(int l) const { return layout_[static_cast<std::size_t>(l)].out_dim; }
    bool layer_has_skip(int l) const;

    GmmConvLayer layer(int l) const;
    void set_layer(int l, const GmmConvLayer& layer);

    Eigen::VectorXd& parameters() { return params_; }
    const Eigen::VectorXd& parameters() const { return params_; }

    double output_shift() const { return shift_; }
    double output_scale() const { return scale_; }
    void set_output_transform(double shift, double scale);

    // Inputs are standardized before the first layer:
    // u <- (u - feature_shift) / feature_scale, v <- v / edge_scale.
    // Empty vectors mean the identity.
    const Eigen::VectorXd& feature_shift() const { return feature_shift_; }
    const Eigen::VectorXd& feature_scale() const { return feature_scale_; }
    double edge_scale() const { return edge_scale_; }
    void set_input_transform(Eigen::VectorXd shift, Eigen::VectorXd scale, double edge_scale);

    // Views used by the batched engine.
    struct LayerLayout {
        int in_dim = 0;
        int out_dim = 0;
        Eigen::Index theta_offset = 0;
        Eigen::Index mu_offset = 0;
        Eigen::Index log_sigma_offset = 0;
    };
    const LayerLayout& layout(int l) const { return layout_[static_cast<std::size_t>(l)]; }

private:
    ModelConfig config_;
    std::vector<LayerLayout> layout_;
    Eigen::VectorXd params_;
    double shift_ = 0.0;
    double scale_ = 1.0;
    Eigen::VectorXd feature_shift_;
    Eigen::VectorXd feature_scale_;
    double edge_scale_ = 1.0;
};

/// Draws initial weights: Theta ~ U(-1/sqrt(in), 1/sqrt(in)), mu ~ N(0, 0.1^2), sigma = 1.
SurrogateModel initialize(const ModelConfig& config);

/// Predicted per-vertex field. Features must already be built with the
/// model's sinusoid count. With dropout_active every hidden activation is
/// dropped with probability dropout_rate (inverted scaling).
Eigen::VectorXd forward(const SurrogateModel& model, const Mesh& mesh, bool dropout_active = false,
                        std::mt19937_64* rng = nullptr);

/// Mean squared error over every vertex of every sample.
double loss(const SurrogateModel& model, std::span<const FieldSample> batch);

/// Loss and exact gradient with respect to parameters() (dropout inactive).
struct LossGradient {
    double loss = 0.0;
    Eigen::VectorXd gradient;
};
LossGradient backward(const SurrogateModel& model, std::span<const FieldSample> batch);

/// Vector-Jacobian product of forward() with respect to the node and edge
/// attributes of `mesh` (dropout inactive).
struct InputGradient {
    Eigen::VectorXd field;
    Eigen::MatrixXd d_node;  // |V| x M
    Eigen::MatrixXd d_edge;  // |E| x 3, mesh edge order
};
InputGradient input_gradient(const SurrogateModel& model, const Mesh& mesh, const Eigen::VectorXd& d_field);

struct TrainConfig {
    ModelConfig model;
    int epochs = 200;
    double learning_rate = 3e-3;
    double final_lr_fraction = 0.1;  // cosine decay floor
    int batch_size = 8;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_epsilon = 1e-8;
    bool normalize_inputs = true;  // standardize features / edge attributes from the dataset

    void validate() const;
};

struct TrainResult {
    SurrogateModel model;
    double final_loss = 0.0;
    std::vector<double> epoch_loss;
};

/// Model the trainer starts from: initialize(cfg.model) with the output
/// transform set to the mean / spread of the dataset targets and, when
/// cfg.normalize_inputs, the input transform set from the dataset meshes.
SurrogateModel initial_model(std::span<const FieldSample> dataset, const TrainConfig& cfg);

/// Adam on minibatches of whole meshes, reshuffled each epoch. Deterministic
/// for a given dataset order and config. Throws DivergenceError on NaN loss.
TrainResult train(std::span<const FieldSample> dataset, const TrainConfig& cfg);

inline constexpr int kModelFormatVersion = 1;

void save_model(const SurrogateModel& model, const std::filesystem::path& path);
SurrogateModel load_model(const std::filesystem::path& path);

}  // namespace surfopt::surrogate
