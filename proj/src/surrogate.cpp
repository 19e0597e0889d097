#include "surfopt/surrogate.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <numeric>
#include <sstream>

#include "json.hpp"

#include "surfopt/errors.hpp"

namespace surfopt::surrogate {

namespace {

using ConstRowMap = Eigen::Map<const RowMatrix>;

double elu(double x) { return x > 0.0 ? x : std::expm1(x); }

// Flattened graph with self-loops appended after the mesh edges.
struct Graph {
    int nodes = 0;
    int mesh_edges = 0;
    std::vector<int> src;
    std::vector<int> dst;
    RowMatrix attr;         // E' x 3
    Eigen::VectorXd coef;   // 1 / (|N(dst)| K)
    RowMatrix features;     // N x M
    Eigen::VectorXd target; // empty unless built from a sample
};

Graph make_graph(const Mesh& mesh, const SurrogateModel& model) {
    const ModelConfig& cfg = model.config();
    Mesh featured;
    const Mesh* m = &mesh;
    if (mesh.sinusoids != cfg.sinusoids) {
        featured = mesh;
        geometry::build_features(featured, cfg.sinusoids);
        m = &featured;
    }
    Graph g;
    g.nodes = static_cast<int>(m->vertices.size());
    g.mesh_edges = static_cast<int>(m->edges.size());
    const int total = g.mesh_edges + g.nodes;
    g.src.resize(static_cast<std::size_t>(total));
    g.dst.resize(static_cast<std::size_t>(total));
    g.attr = RowMatrix::Zero(total, kEdgeDim);
    std::vector<int> degree(static_cast<std::size_t>(g.nodes), 1);
    for (int e = 0; e < g.mesh_edges; ++e) {
        const auto [s, d] = m->edges[static_cast<std::size_t>(e)];
        if (s < 0 || d < 0 || s >= g.nodes || d >= g.nodes) throw ShapeError("edge index out of range");
        g.src[static_cast<std::size_t>(e)] = s;
        g.dst[static_cast<std::size_t>(e)] = d;
        g.attr.row(e) = m->edge_attrs.row(e);
        ++degree[static_cast<std::size_t>(d)];
    }
    for (int v = 0; v < g.nodes; ++v) {
        g.src[static_cast<std::size_t>(g.mesh_edges + v)] = v;
        g.dst[static_cast<std::size_t>(g.mesh_edges + v)] = v;
    }
    g.coef.resize(total);
    for (int e = 0; e < total; ++e) {
        g.coef[e] = 1.0 / (degree[static_cast<std::size_t>(g.dst[static_cast<std::size_t>(e)])] * cfg.kernels);
    }
    if (m->node_attrs.cols() != cfg.input_dim()) {
        std::ostringstream msg;
        msg << "mesh features have " << m->node_attrs.cols() << " columns, model expects " << cfg.input_dim();
        throw ShapeError(msg.str());
    }
    g.features = m->node_attrs;
    if (model.feature_shift().size() > 0) {
        g.features.rowwise() -= model.feature_shift().transpose();
        g.features.array().rowwise() /= model.feature_scale().transpose().array();
    }
    if (model.edge_scale() != 1.0) g.attr /= model.edge_scale();
    return g;
}

Graph make_graph(const FieldSample& sample, const SurrogateModel& model) {
    Graph g = make_graph(sample.mesh, model);
    if (sample.field.size() != g.nodes) throw ShapeError("sample field length differs from its vertex count");
    g.target = sample.field;
    return g;
}

Graph concat(std::span<const Graph* const> parts) {
    Graph out;
    int edges = 0;
    for (const Graph* p : parts) {
        out.nodes += p->nodes;
        edges += static_cast<int>(p->src.size());
    }
    const int m = parts.empty() ? 0 : static_cast<int>(parts.front()->features.cols());
    out.src.reserve(static_cast<std::size_t>(edges));
    out.dst.reserve(static_cast<std::size_t>(edges));
    out.attr.resize(edges, kEdgeDim);
    out.coef.resize(edges);
    out.features.resize(out.nodes, m);
    out.target.resize(out.nodes);
    int node_off = 0;
    int edge_off = 0;
    for (const Graph* p : parts) {
        const auto ne = static_cast<int>(p->src.size());
        for (int e = 0; e < ne; ++e) {
            out.src.push_back(p->src[static_cast<std::size_t>(e)] + node_off);
            out.dst.push_back(p->dst[static_cast<std::size_t>(e)] + node_off);
        }
        out.attr.middleRows(edge_off, ne) = p->attr;
        out.coef.segment(edge_off, ne) = p->coef;
        out.features.middleRows(node_off, p->nodes) = p->features;
        if (p->target.size() == p->nodes) out.target.segment(node_off, p->nodes) = p->target;
        node_off += p->nodes;
        edge_off += ne;
    }
    out.mesh_edges = edges;
    return out;
}

struct Pass {
    std::vector<RowMatrix> h;     // input of each layer
    std::vector<RowMatrix> pre;   // pre-activation of each layer
    std::vector<RowMatrix> t;     // Theta-transformed features, N x K*out
    std::vector<RowMatrix> w;     // Gaussian weights, E' x K
    std::vector<RowMatrix> mask;  // scaled dropout masks, empty when inactive
    Eigen::VectorXd out;          // raw network output before the affine map
};

void edge_weights(const SurrogateModel& model, int l, const Graph& g, RowMatrix& w) {
    const auto& lay = model.layout(l);
    const int k_count = model.config().kernels;
    const double* mu = model.parameters().data() + lay.mu_offset;
    const double* ls = model.parameters().data() + lay.log_sigma_offset;
    double inv[32 * kEdgeDim];
    for (int i = 0; i < k_count * kEdgeDim; ++i) inv[i] = std::exp(-ls[i]);
    const auto ne = static_cast<Eigen::Index>(g.src.size());
    w.resize(ne, k_count);
    for (Eigen::Index e = 0; e < ne; ++e) {
        const double* a = g.attr.data() + e * kEdgeDim;
        for (int k = 0; k < k_count; ++k) {
            double q = 0.0;
            for (int c = 0; c < kEdgeDim; ++c) {
                const double d = a[c] - mu[k * kEdgeDim + c];
                q += d * d * inv[k * kEdgeDim + c];
            }
            w(e, k) = std::exp(-0.5 * q);
        }
    }
}

void run_forward(const SurrogateModel& model, const Graph& g, Pass& pass, bool dropout, std::mt19937_64* rng) {
    const int depth = model.depth();
    const int k_count = model.config().kernels;
    const bool center = model.config().center_transform;
    const double rate = model.config().dropout_rate;
    const bool use_dropout = dropout && rate > 0.0;
    if (use_dropout && rng == nullptr) throw ConfigError("dropout inference needs a random stream");

    pass.h.resize(static_cast<std::size_t>(depth));
    pass.pre.resize(static_cast<std::size_t>(depth));
    pass.t.resize(static_cast<std::size_t>(depth));
    pass.w.resize(static_cast<std::size_t>(depth));
    pass.mask.assign(static_cast<std::size_t>(depth), RowMatrix());
    pass.h[0] = g.features;
    std::uniform_real_distribution<double> unif(0.0, 1.0);

    for (int l = 0; l < depth; ++l) {
        const auto li = static_cast<std::size_t>(l);
        const auto& lay = model.layout(l);
        const int out = lay.out_dim;
        ConstRowMap theta(model.parameters().data() + lay.theta_offset, k_count * out, lay.in_dim);
        pass.t[li].noalias() = pass.h[li] * theta.transpose();
        edge_weights(model, l, g, pass.w[li]);

        RowMatrix& a = pass.pre[li];
        a = RowMatrix::Zero(g.nodes, out);
        const RowMatrix& t = pass.t[li];
        const RowMatrix& w = pass.w[li];
        const auto ne = static_cast<Eigen::Index>(g.src.size());
        for (Eigen::Index e = 0; e < ne; ++e) {
            const int d = g.dst[static_cast<std::size_t>(e)];
            const int s = center ? d : g.src[static_cast<std::size_t>(e)];
            double* arow = a.data() + static_cast<Eigen::Index>(d) * out;
            const double* trow = t.data() + static_cast<Eigen::Index>(s) * k_count * out;
            for (int k = 0; k < k_count; ++k) {
                const double c = g.coef[e] * w(e, k);
                const double* tk = trow + k * out;
                for (int o = 0; o < out; ++o) arow[o] += c * tk[o];
            }
        }

        if (l + 1 == depth) {
            pass.out = a.col(0);
            break;
        }
        RowMatrix next = a.unaryExpr([](double x) { return elu(x); });
        if (model.layer_has_skip(l)) next += pass.h[li];
        if (use_dropout) {
            RowMatrix& mask = pass.mask[li];
            mask.resize(next.rows(), next.cols());
            const double keep = 1.0 / (1.0 - rate);
            for (Eigen::Index i = 0; i < mask.size(); ++i) mask.data()[i] = unif(*rng) < rate ? 0.0 : keep;
            next.array() *= mask.array();
        }
        pass.h[li + 1] = std::move(next);
    }
}

struct BackwardResult {
    Eigen::VectorXd params;
    RowMatrix d_features;
    RowMatrix d_attr;
};

// d_out is the gradient with respect to the raw (pre-affine) output.
BackwardResult run_backward(const SurrogateModel& model, const Graph& g, const Pass& pass,
                            const Eigen::VectorXd& d_out, bool want_inputs) {
    const int depth = model.depth();
    const int k_count = model.config().kernels;
    const bool center = model.config().center_transform;
    BackwardResult res;
    res.params = Eigen::VectorXd::Zero(model.parameters().size());
    if (want_inputs) res.d_attr = RowMatrix::Zero(static_cast<Eigen::Index>(g.src.size()), kEdgeDim);

    RowMatrix grad_h;  // gradient w.r.t. the output of the current layer
    for (int l = depth - 1; l >= 0; --l) {
        const auto li = static_cast<std::size_t>(l);
        const auto& lay = model.layout(l);
        const int out = lay.out_dim;
        RowMatrix ga;
        if (l + 1 == depth) {
            ga = d_out;
        } else {
            if (pass.mask[li].size() > 0) grad_h.array() *= pass.mask[li].array();
            ga = grad_h.array() * pass.pre[li].unaryExpr([](double x) { return x > 0.0 ? 1.0 : std::exp(x); }).array();
        }

        const RowMatrix& t = pass.t[li];
        const RowMatrix& w = pass.w[li];
        RowMatrix dt = RowMatrix::Zero(t.rows(), t.cols());
        RowMatrix dw(w.rows(), w.cols());
        const auto ne = static_cast<Eigen::Index>(g.src.size());
        for (Eigen::Index e = 0; e < ne; ++e) {
            const int d = g.dst[static_cast<std::size_t>(e)];
            const int s = center ? d : g.src[static_cast<std::size_t>(e)];
            const double* gd = ga.data() + static_cast<Eigen::Index>(d) * out;
            const double* trow = t.data() + static_cast<Eigen::Index>(s) * k_count * out;
            double* dtrow = dt.data() + static_cast<Eigen::Index>(s) * k_count * out;
            for (int k = 0; k < k_count; ++k) {
                const double c = g.coef[e];
                const double cw = c * w(e, k);
                const double* tk = trow + k * out;
                double* dtk = dtrow + k * out;
                double dot = 0.0;
                for (int o = 0; o < out; ++o) {
                    dtk[o] += cw * gd[o];
                    dot += gd[o] * tk[o];
                }
                dw(e, k) = c * dot;
            }
        }

        Eigen::Map<RowMatrix> dtheta(res.params.data() + lay.theta_offset, k_count * out, lay.in_dim);
        dtheta.noalias() = dt.transpose() * pass.h[li];

        const double* mu = model.parameters().data() + lay.mu_offset;
        const double* ls = model.parameters().data() + lay.log_sigma_offset;
        double* dmu = res.params.data() + lay.mu_offset;
        double* dls = res.params.data() + lay.log_sigma_offset;
        double inv[32 * kEdgeDim];
        for (int i = 0; i < k_count * kEdgeDim; ++i) inv[i] = std::exp(-ls[i]);
        for (Eigen::Index e = 0; e < ne; ++e) {
            const double* a = g.attr.data() + e * kEdgeDim;
            for (int k = 0; k < k_count; ++k) {
                const double q = dw(e, k) * w(e, k);
                if (q == 0.0) continue;
                for (int c = 0; c < kEdgeDim; ++c) {
                    const int idx = k * kEdgeDim + c;
                    const double diff = a[c] - mu[idx];
                    dmu[idx] += q * diff * inv[idx];
                    dls[idx] += q * 0.5 * diff * diff * inv[idx];
                    if (want_inputs) res.d_attr(e, c) -= q * diff * inv[idx];
                }
            }
        }

        if (l == 0 && !want_inputs) break;
        ConstRowMap theta(model.parameters().data() + lay.theta_offset, k_count * out, lay.in_dim);
        RowMatrix below = dt * theta;
        if (model.layer_has_skip(l)) below += grad_h;
        grad_h = std::move(below);
    }
    if (want_inputs) res.d_features = std::move(grad_h);
    return res;
}

Graph graph_for_batch(std::span<const FieldSample> batch, const SurrogateModel& model, std::vector<Graph>& storage) {
    storage.clear();
    storage.reserve(batch.size());
    for (const auto& s : batch) storage.push_back(make_graph(s, model));
    std::vector<const Graph*> parts;
    for (const auto& g : storage) parts.push_back(&g);
    return concat(parts);
}

double batch_loss_and_grad(const SurrogateModel& model, const Graph& g, Pass& pass, bool dropout,
                           std::mt19937_64* rng, Eigen::VectorXd* grad) {
    run_forward(model, g, pass, dropout, rng);
    const Eigen::VectorXd resid = (model.output_shift() + model.output_scale() * pass.out.array()).matrix() - g.target;
    const double n = static_cast<double>(g.nodes);
    const double value = resid.squaredNorm() / n;
    if (grad != nullptr) {
        const Eigen::VectorXd d_out = resid * (2.0 * model.output_scale() / n);
        *grad = run_backward(model, g, pass, d_out, false).params;
    }
    return value;
}

}  // namespace

// ---------------------------------------------------------------------------
// single layer reference path

double gmm_weight(const GmmConvLayer& layer, int k, const Eigen::Vector3d& edge_attr) {
    if (k < 0 || k >= layer.kernels()) throw ShapeError("kernel index out of range");
    double q = 0.0;
    for (int c = 0; c < kEdgeDim; ++c) {
        const double s = layer.sigma(k, c);
        if (!(s > 0.0)) throw InvariantError("GMM kernel sigma must be positive");
        const double d = edge_attr[c] - layer.mu(k, c);
        q += d * d / s;
    }
    return std::exp(-0.5 * q);
}

Eigen::MatrixXd gmm_conv_forward(const GmmConvLayer& layer, const Mesh& mesh, const Eigen::MatrixXd& features,
                                 bool center_transform) {
    const auto n = static_cast<Eigen::Index>(mesh.vertices.size());
    if (features.rows() != n || features.cols() != layer.in_dim()) {
        std::ostringstream msg;
        msg << "features are " << features.rows() << "x" << features.cols() << ", layer expects " << n << "x"
            << layer.in_dim();
        throw ShapeError(msg.str());
    }
    if (mesh.edge_attrs.rows() != static_cast<Eigen::Index>(mesh.edges.size())) {
        throw ShapeError("mesh edge attributes are not built");
    }
    const int k_count = layer.kernels();
    Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(n, layer.out_dim());
    Eigen::VectorXi degree = Eigen::VectorXi::Ones(n);
    auto message = [&](int src, int dst, const Eigen::Vector3d& e) {
        const int from = center_transform ? dst : src;
        for (int k = 0; k < k_count; ++k) {
            acc.row(dst) += gmm_weight(layer, k, e) / k_count *
                            (layer.theta[static_cast<std::size_t>(k)] * features.row(from).transpose()).transpose();
        }
    };
    for (Eigen::Index v = 0; v < n; ++v) message(static_cast<int>(v), static_cast<int>(v), Eigen::Vector3d::Zero());
    for (std::size_t e = 0; e < mesh.edges.size(); ++e) {
        const auto [s, d] = mesh.edges[e];
        message(s, d, mesh.edge_attrs.row(static_cast<Eigen::Index>(e)).transpose());
        ++degree[d];
    }
    for (Eigen::Index v = 0; v < n; ++v) acc.row(v) /= degree[v];
    return acc;
}

// ---------------------------------------------------------------------------
// model

void ModelConfig::validate() const {
    if (sinusoids < 0) throw ConfigError("sinusoid count must be >= 0");
    if (hidden_dim < 1) throw ConfigError("hidden width must be >= 1");
    if (depth < 1) throw ConfigError("depth must be >= 1");
    if (kernels < 1 || kernels > 32) throw ConfigError("kernel count must lie in [1, 32]");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout rate must lie in [0, 1)");
}

SurrogateModel::SurrogateModel(const ModelConfig& config) : config_(config) {
    config_.validate();
    Eigen::Index offset = 0;
    for (int l = 0; l < config_.depth; ++l) {
        LayerLayout lay;
        lay.in_dim = l == 0 ? config_.input_dim() : config_.hidden_dim;
        lay.out_dim = l + 1 == config_.depth ? 1 : config_.hidden_dim;
        lay.theta_offset = offset;
        offset += static_cast<Eigen::Index>(config_.kernels) * lay.out_dim * lay.in_dim;
        lay.mu_offset = offset;
        offset += config_.kernels * kEdgeDim;
        lay.log_sigma_offset = offset;
        offset += config_.kernels * kEdgeDim;
        layout_.push_back(lay);
    }
    params_ = Eigen::VectorXd::Zero(offset);
}

bool SurrogateModel::layer_has_skip(int l) const {
    const auto& lay = layout(l);
    return l + 1 < depth() && lay.in_dim == lay.out_dim;
}

GmmConvLayer SurrogateModel::layer(int l) const {
    const auto& lay = layout(l);
    const int k_count = config_.kernels;
    GmmConvLayer out;
    ConstRowMap theta(params_.data() + lay.theta_offset, k_count * lay.out_dim, lay.in_dim);
    for (int k = 0; k < k_count; ++k) out.theta.emplace_back(theta.middleRows(k * lay.out_dim, lay.out_dim));
    out.mu = ConstRowMap(params_.data() + lay.mu_offset, k_count, kEdgeDim);
    out.sigma = ConstRowMap(params_.data() + lay.log_sigma_offset, k_count, kEdgeDim).array().exp();
    return out;
}

void SurrogateModel::set_layer(int l, const GmmConvLayer& layer) {
    const auto& lay = layout(l);
    const int k_count = config_.kernels;
    if (layer.kernels() != k_count || layer.in_dim() != lay.in_dim || layer.out_dim() != lay.out_dim) {
        throw ShapeError("layer shape does not match the model layout");
    }
    if ((layer.sigma.array() <= 0.0).any()) throw InvariantError("GMM kernel sigma must be positive");
    Eigen::Map<RowMatrix> theta(params_.data() + lay.theta_offset, k_count * lay.out_dim, lay.in_dim);
    for (int k = 0; k < k_count; ++k) theta.middleRows(k * lay.out_dim, lay.out_dim) = layer.theta[static_cast<std::size_t>(k)];
    Eigen::Map<RowMatrix>(params_.data() + lay.mu_offset, k_count, kEdgeDim) = layer.mu;
    Eigen::Map<RowMatrix>(params_.data() + lay.log_sigma_offset, k_count, kEdgeDim) = layer.sigma.array().log().matrix();
}

void SurrogateModel::set_input_transform(Eigen::VectorXd shift, Eigen::VectorXd scale, double edge_scale) {
    if (shift.size() != scale.size() || (shift.size() != 0 && shift.size() != config_.input_dim())) {
        throw ShapeError("input transform has the wrong length");
    }
    if ((scale.array() <= 0.0).any() || !scale.allFinite() || !shift.allFinite()) {
        throw ConfigError("input transform needs finite shifts and positive scales");
    }
    if (!(edge_scale > 0.0) || !std::isfinite(edge_scale)) throw ConfigError("edge scale must be positive");
    feature_shift_ = std::move(shift);
    feature_scale_ = std::move(scale);
    edge_scale_ = edge_scale;
}

void SurrogateModel::set_output_transform(double shift, double scale) {
    if (!std::isfinite(shift) || !(scale > 0.0) || !std::isfinite(scale)) {
        throw ConfigError("output transform needs a finite shift and positive scale");
    }
    shift_ = shift;
    scale_ = scale;
}

SurrogateModel initialize(const ModelConfig& config) {
    SurrogateModel model(config);
    std::mt19937_64 rng(config.seed);
    std::normal_distribution<double> mu_dist(0.0, 0.1);
    Eigen::VectorXd& p = model.parameters();
    for (int l = 0; l < model.depth(); ++l) {
        const auto& lay = model.layout(l);
        const double bound = 1.0 / std::sqrt(static_cast<double>(lay.in_dim));
        std::uniform_real_distribution<double> theta_dist(-bound, bound);
        for (Eigen::Index i = lay.theta_offset; i < lay.mu_offset; ++i) p[i] = theta_dist(rng);
        for (Eigen::Index i = lay.mu_offset; i < lay.log_sigma_offset; ++i) p[i] = mu_dist(rng);
        // log sigma stays 0, i.e. sigma = 1
    }
    return model;
}

Eigen::VectorXd forward(const SurrogateModel& model, const Mesh& mesh, bool dropout_active, std::mt19937_64* rng) {
    const Graph g = make_graph(mesh, model);
    Pass pass;
    run_forward(model, g, pass, dropout_active, rng);
    return (model.output_shift() + model.output_scale() * pass.out.array()).matrix();
}

double loss(const SurrogateModel& model, std::span<const FieldSample> batch) {
    if (batch.empty()) return 0.0;
    std::vector<Graph> storage;
    const Graph g = graph_for_batch(batch, model, storage);
    Pass pass;
    return batch_loss_and_grad(model, g, pass, false, nullptr, nullptr);
}

LossGradient backward(const SurrogateModel& model, std::span<const FieldSample> batch) {
    LossGradient out;
    if (batch.empty()) {
        out.gradient = Eigen::VectorXd::Zero(model.parameters().size());
        return out;
    }
    std::vector<Graph> storage;
    const Graph g = graph_for_batch(batch, model, storage);
    Pass pass;
    out.loss = batch_loss_and_grad(model, g, pass, false, nullptr, &out.gradient);
    return out;
}

InputGradient input_gradient(const SurrogateModel& model, const Mesh& mesh, const Eigen::VectorXd& d_field) {
    const Graph g = make_graph(mesh, model);
    if (d_field.size() != g.nodes) throw ShapeError("upstream gradient length differs from vertex count");
    Pass pass;
    run_forward(model, g, pass, false, nullptr);
    const BackwardResult res = run_backward(model, g, pass, d_field * model.output_scale(), true);
    InputGradient out;
    out.field = (model.output_shift() + model.output_scale() * pass.out.array()).matrix();
    out.d_node = res.d_features;
    if (model.feature_scale().size() > 0) out.d_node.array().rowwise() /= model.feature_scale().transpose().array();
    out.d_edge = res.d_attr.topRows(g.mesh_edges) / model.edge_scale();
    return out;
}

// ---------------------------------------------------------------------------
// training

void TrainConfig::validate() const {
    model.validate();
    if (epochs < 0) throw ConfigError("epochs must be >= 0");
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (batch_size < 1) throw ConfigError("batch size must be >= 1");
    if (!(final_lr_fraction > 0.0 && final_lr_fraction <= 1.0)) throw ConfigError("final_lr_fraction must lie in (0, 1]");
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ConfigError("Adam betas must lie in [0, 1)");
}

SurrogateModel initial_model(std::span<const FieldSample> dataset, const TrainConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw InsufficientDataError("cannot train on an empty dataset");
    SurrogateModel model = initialize(cfg.model);
    double sum = 0.0;
    double sum_sq = 0.0;
    double count = 0.0;
    for (const auto& s : dataset) {
        sum += s.field.sum();
        sum_sq += s.field.squaredNorm();
        count += static_cast<double>(s.field.size());
    }
    const double mean = sum / count;
    const double var = std::max(sum_sq / count - mean * mean, 0.0);
    model.set_output_transform(mean, std::max(std::sqrt(var), 1e-8));
    if (cfg.normalize_inputs) {
        const int m = cfg.model.input_dim();
        Eigen::VectorXd fsum = Eigen::VectorXd::Zero(m);
        Eigen::VectorXd fsq = Eigen::VectorXd::Zero(m);
        double nodes = 0.0;
        double esq = 0.0;
        double edges = 0.0;
        for (const auto& s : dataset) {
            Mesh tmp;
            const Mesh* mesh = &s.mesh;
            if (mesh->sinusoids != cfg.model.sinusoids) {
                tmp = s.mesh;
                geometry::build_features(tmp, cfg.model.sinusoids);
                mesh = &tmp;
            }
            fsum += mesh->node_attrs.colwise().sum().transpose();
            fsq += mesh->node_attrs.colwise().squaredNorm().transpose();
            nodes += static_cast<double>(mesh->node_attrs.rows());
            esq += mesh->edge_attrs.squaredNorm();
            edges += static_cast<double>(mesh->edge_attrs.size());
        }
        const Eigen::VectorXd fmean = fsum / nodes;
        Eigen::VectorXd fsd = (fsq / nodes - fmean.cwiseAbs2()).cwiseMax(0.0).cwiseSqrt();
        for (Eigen::Index i = 0; i < fsd.size(); ++i) {
            if (!(fsd[i] > 1e-12)) fsd[i] = 1.0;
        }
        const double rms = edges > 0.0 ? std::sqrt(esq / edges) : 1.0;
        model.set_input_transform(fmean, fsd, rms > 1e-12 ? rms : 1.0);
    }
    return model;
}

TrainResult train(std::span<const FieldSample> dataset, const TrainConfig& cfg) {
    TrainResult result;
    result.model = initial_model(dataset, cfg);
    SurrogateModel& model = result.model;

    std::vector<Graph> graphs;
    graphs.reserve(dataset.size());
    for (const auto& s : dataset) graphs.push_back(make_graph(s, model));

    std::mt19937_64 rng(cfg.model.seed ^ 0x9e3779b97f4a7c15ULL);
    const Eigen::Index np = model.parameters().size();
    Eigen::VectorXd m1 = Eigen::VectorXd::Zero(np);
    Eigen::VectorXd m2 = Eigen::VectorXd::Zero(np);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    const bool dropout = cfg.model.dropout_rate > 0.0;
    Pass pass;
    Eigen::VectorXd grad;
    long step = 0;

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        const double progress = cfg.epochs > 1 ? static_cast<double>(epoch) / (cfg.epochs - 1) : 0.0;
        const double lr = cfg.learning_rate * (cfg.final_lr_fraction + (1.0 - cfg.final_lr_fraction) * 0.5 *
                                                                           (1.0 + std::cos(std::numbers::pi * progress)));
        double epoch_sum = 0.0;
        double epoch_nodes = 0.0;
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t stop = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
            std::vector<const Graph*> parts;
            for (std::size_t i = start; i < stop; ++i) parts.push_back(&graphs[order[i]]);
            const Graph batch = concat(parts);
            const double value = batch_loss_and_grad(model, batch, pass, dropout, &rng, &grad);
            if (!std::isfinite(value) || !grad.allFinite()) {
                throw DivergenceError("training diverged (non-finite loss) in epoch " + std::to_string(epoch), epoch);
            }
            epoch_sum += value * batch.nodes;
            epoch_nodes += batch.nodes;

            ++step;
            m1 = cfg.beta1 * m1 + (1.0 - cfg.beta1) * grad;
            m2 = cfg.beta2 * m2 + (1.0 - cfg.beta2) * grad.cwiseAbs2();
            const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step));
            const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step));
            model.parameters().array() -=
                lr * (m1.array() / c1) / ((m2.array() / c2).sqrt() + cfg.adam_epsilon);
        }
        result.epoch_loss.push_back(epoch_sum / epoch_nodes);
    }

    std::vector<const Graph*> all;
    for (const auto& g : graphs) all.push_back(&g);
    const Graph full = concat(all);
    result.final_loss = batch_loss_and_grad(model, full, pass, false, nullptr, nullptr);
    if (!std::isfinite(result.final_loss)) throw DivergenceError("training diverged (non-finite final loss)", cfg.epochs);
    return result;
}

// ---------------------------------------------------------------------------
// persistence

namespace {

constexpr const char* kModelFormat = "surfopt-gcnn";

void write_f64(std::ostream& os, double v) {
    std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
    unsigned char bytes[8];
    for (int i = 0; i < 8; ++i) bytes[i] = static_cast<unsigned char>((bits >> (8 * i)) & 0xffU);
    os.write(reinterpret_cast<const char*>(bytes), 8);
}

double read_f64(const unsigned char* bytes) {
    std::uint64_t bits = 0;
    for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
    return std::bit_cast<double>(bits);
}

}  // namespace

void save_model(const SurrogateModel& model, const std::filesystem::path& path) {
    const ModelConfig& c = model.config();
    nlohmann::json header = {
        {"format", kModelFormat},
        {"version", kModelFormatVersion},
        {"input_dim", c.input_dim()},
        {"hidden_dim", c.hidden_dim},
        {"depth", c.depth},
        {"kernels", c.kernels},
        {"sinusoids", c.sinusoids},
        {"dropout_rate", c.dropout_rate},
        {"seed", c.seed},
        {"center_transform", c.center_transform},
        {"input_transform", model.feature_shift().size() > 0},
        {"payload_count", model.parameters().size() + 3 + 2 * model.feature_shift().size()},
    };
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + path.string() + "' for writing");
    os << header.dump() << '\n';
    write_f64(os, model.output_shift());
    write_f64(os, model.output_scale());
    write_f64(os, model.edge_scale());
    for (Eigen::Index i = 0; i < model.feature_shift().size(); ++i) write_f64(os, model.feature_shift()[i]);
    for (Eigen::Index i = 0; i < model.feature_scale().size(); ++i) write_f64(os, model.feature_scale()[i]);
    for (Eigen::Index i = 0; i < model.parameters().size(); ++i) write_f64(os, model.parameters()[i]);
    if (!os) throw Error("failed writing model file '" + path.string() + "'");
}

SurrogateModel load_model(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open model file '" + path.string() + "'");
    std::string line;
    if (!std::getline(is, line)) throw CorruptFileError("model file has no header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("model header is not valid JSON: ") + e.what());
    }
    try {
        if (header.at("format").get<std::string>() != kModelFormat) throw CorruptFileError("not a surfopt model file");
        const int version = header.at("version").get<int>();
        if (version != kModelFormatVersion) {
            throw VersionError("unsupported model format version " + std::to_string(version));
        }
        ModelConfig cfg;
        cfg.hidden_dim = header.at("hidden_dim").get<int>();
        cfg.depth = header.at("depth").get<int>();
        cfg.kernels = header.at("kernels").get<int>();
        cfg.sinusoids = header.at("sinusoids").get<int>();
        cfg.dropout_rate = header.at("dropout_rate").get<double>();
        cfg.seed = header.at("seed").get<std::uint64_t>();
        cfg.center_transform = header.at("center_transform").get<bool>();
        SurrogateModel model(cfg);
        const Eigen::Index m = header.at("input_transform").get<bool>() ? cfg.input_dim() : 0;
        const auto expected = static_cast<std::size_t>(model.parameters().size() + 3 + 2 * m);
        if (header.at("payload_count").get<std::size_t>() != expected) {
            throw CorruptFileError("model payload count disagrees with its dimensions");
        }
        std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        if (bytes.size() != 8 * expected) {
            std::ostringstream msg;
            msg << "model payload has " << bytes.size() << " bytes, expected " << 8 * expected;
            throw CorruptFileError(msg.str());
        }
        const unsigned char* p = bytes.data();
        auto next = [&p] {
            const double v = read_f64(p);
            p += 8;
            return v;
        };
        const double shift = next();
        const double scale = next();
        model.set_output_transform(shift, scale);
        const double edge_scale = next();
        Eigen::VectorXd fshift(m);
        Eigen::VectorXd fscale(m);
        for (Eigen::Index i = 0; i < m; ++i) fshift[i] = next();
        for (Eigen::Index i = 0; i < m; ++i) fscale[i] = next();
        model.set_input_transform(std::move(fshift), std::move(fscale), edge_scale);
        for (Eigen::Index i = 0; i < model.parameters().size(); ++i) model.parameters()[i] = next();
        return model;
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("model header is missing fields: ") + e.what());
    } catch (const ConfigError& e) {
        throw CorruptFileError(std::string("model file is inconsistent: ") + e.what());
    } catch (const ShapeError& e) {
        throw CorruptFileError(std::string("model file is inconsistent: ") + e.what());
    }
}

}  // namespace surfopt::surrogate
