#include "surfopt/geometry.hpp"

#include <algorithm>
#include <limits>
#include <cmath>
#include <numbers>
#include <set>
#include <sstream>

#include "surfopt/errors.hpp"

namespace surfopt {

void check_bounds(const Bounds& bounds) {
    if (bounds.empty()) throw ConfigError("latent box must have at least one dimension");
    for (std::size_t i = 0; i < bounds.size(); ++i) {
        if (!(bounds[i].lo <= bounds[i].hi)) {
            std::ostringstream msg;
            msg << "infeasible bounds in dimension " << i << ": lo=" << bounds[i].lo
                << " > hi=" << bounds[i].hi;
            throw ConfigError(msg.str());
        }
    }
}

void check_in_bounds(const Eigen::VectorXd& z, const Bounds& bounds) {
    if (z.size() < 1 || static_cast<std::size_t>(z.size()) != bounds.size()) {
        std::ostringstream msg;
        msg << "latent has " << z.size() << " entries, box has " << bounds.size();
        throw BoundsError(msg.str());
    }
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const Bound& b = bounds[static_cast<std::size_t>(i)];
        if (!(z[i] >= b.lo && z[i] <= b.hi)) {
            std::ostringstream msg;
            msg << "latent entry " << i << " = " << z[i] << " outside [" << b.lo << ", " << b.hi << "]";
            throw BoundsError(msg.str());
        }
    }
}

void LatentVector::validate() const { check_in_bounds(values, bounds); }

Eigen::VectorXd clip_to_bounds(Eigen::VectorXd z, const Bounds& bounds) {
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const Bound& b = bounds[static_cast<std::size_t>(i)];
        z[i] = std::clamp(z[i], b.lo, b.hi);
    }
    return z;
}

namespace geometry {

// ---------------------------------------------------------------------------
// NACA 4-digit

const Bounds& naca_bounds() {
    static const Bounds bounds{{0.0, 0.09}, {0.1, 0.9}, {0.06, 0.30}};
    return bounds;
}

namespace {

// Thickness polynomial per unit thickness, closed trailing edge (-0.1036).
double thickness_shape(double x) {
    return 5.0 * (0.2969 * std::sqrt(x) - 0.1260 * x - 0.3516 * x * x + 0.2843 * x * x * x -
                  0.1036 * x * x * x * x);
}

struct CamberDerivatives {
    double height = 0.0;
    double slope = 0.0;
    double height_dm = 0.0;
    double slope_dm = 0.0;
    double height_dp = 0.0;
    double slope_dp = 0.0;
};

CamberDerivatives camber_with_derivatives(double m, double p, double x) {
    CamberDerivatives c;
    if (x < p) {
        const double p2 = p * p;
        const double p3 = p2 * p;
        c.height_dm = (2.0 * p * x - x * x) / p2;
        c.slope_dm = 2.0 * (p - x) / p2;
        c.height_dp = m * (-2.0 * x / p2 + 2.0 * x * x / p3);
        c.slope_dp = 2.0 * m * (-1.0 / p2 + 2.0 * x / p3);
    } else {
        const double q = 1.0 - p;
        const double q2 = q * q;
        const double q3 = q2 * q;
        const double num = 1.0 - 2.0 * p + 2.0 * p * x - x * x;
        c.height_dm = num / q2;
        c.slope_dm = 2.0 * (p - x) / q2;
        c.height_dp = m * ((-2.0 + 2.0 * x) / q2 + 2.0 * num / q3);
        c.slope_dp = 2.0 * m * (1.0 / q2 + 2.0 * (p - x) / q3);
    }
    c.height = m * c.height_dm;
    c.slope = m * c.slope_dm;
    return c;
}

// Chord station of contour vertex i; mirrored indices share the exact value.
double chord_station(int i, int n) {
    const int j = (i <= n / 2) ? i : n - i;
    return 0.5 * (1.0 + std::cos(2.0 * std::numbers::pi * j / n));
}

void check_panel_count(int n_panels) {
    if (n_panels < 16 || n_panels % 2 != 0) {
        std::ostringstream msg;
        msg << "n_panels must be even and >= 16, got " << n_panels;
        throw ConfigError(msg.str());
    }
}

}  // namespace

double naca_half_thickness(double thickness, double x) { return thickness * thickness_shape(x); }

CamberPoint naca_camber(double max_camber, double position, double x) {
    const CamberDerivatives c = camber_with_derivatives(max_camber, position, x);
    return {c.height, c.slope};
}

Mesh naca_contour(const Eigen::VectorXd& z, int n_panels) {
    check_panel_count(n_panels);
    check_in_bounds(z, naca_bounds());
    const double m = z[0], p = z[1], t = z[2];

    Mesh mesh;
    mesh.vertices.resize(static_cast<std::size_t>(n_panels));
    for (int i = 0; i < n_panels; ++i) {
        const double x = chord_station(i, n_panels);
        const double yt = naca_half_thickness(t, x);
        const CamberDerivatives c = camber_with_derivatives(m, p, x);
        const double norm = std::sqrt(1.0 + c.slope * c.slope);
        const double s = c.slope / norm;
        const double co = 1.0 / norm;
        const double side = (i > 0 && i < n_panels / 2) ? 1.0 : -1.0;  // upper : lower
        mesh.vertices[static_cast<std::size_t>(i)] =
            Eigen::Vector3d(x - side * yt * s, c.height + side * yt * co, 0.0);
    }
    mesh.edges = cycle_edges(n_panels);
    return mesh;
}

NacaParameterizer::NacaParameterizer(int n_panels) : n_panels_(n_panels) { check_panel_count(n_panels); }

Mesh NacaParameterizer::mesh(const Eigen::VectorXd& z) const { return naca_contour(z, n_panels_); }

Eigen::MatrixXd NacaParameterizer::jacobian(const Eigen::VectorXd& z) const {
    check_in_bounds(z, naca_bounds());
    const double m = z[0], p = z[1], t = z[2];
    const int n = n_panels_;
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * n, 3);
    for (int i = 0; i < n; ++i) {
        const double x = chord_station(i, n);
        const double shape = thickness_shape(x);
        const double yt = t * shape;
        const CamberDerivatives c = camber_with_derivatives(m, p, x);
        const double g = c.slope;
        const double norm2 = 1.0 + g * g;
        const double norm = std::sqrt(norm2);
        const double s = g / norm;
        const double co = 1.0 / norm;
        const double ds_dg = 1.0 / (norm2 * norm);
        const double dc_dg = -g / (norm2 * norm);
        const double side = (i > 0 && i < n / 2) ? 1.0 : -1.0;

        // X = x - side*yt*s, Y = yc + side*yt*c
        const double dg[3] = {c.slope_dm, c.slope_dp, 0.0};
        const double dyc[3] = {c.height_dm, c.height_dp, 0.0};
        const double dyt[3] = {0.0, 0.0, shape};
        for (int q = 0; q < 3; ++q) {
            jac(3 * i + 0, q) = -side * (dyt[q] * s + yt * ds_dg * dg[q]);
            jac(3 * i + 1, q) = dyc[q] + side * (dyt[q] * co + yt * dc_dg * dg[q]);
        }
    }
    return jac;
}

// ---------------------------------------------------------------------------
// RBF deformation

std::vector<RbfControl> planar_controls(std::span<const Eigen::Vector3d> positions) {
    std::vector<RbfControl> controls;
    controls.reserve(positions.size());
    for (const auto& pos : positions) {
        controls.push_back({pos, {Eigen::Vector3d::UnitX(), Eigen::Vector3d::UnitY()}});
    }
    return controls;
}

std::size_t rbf_dof_count(std::span<const RbfControl> controls) {
    std::size_t n = 0;
    for (const auto& c : controls) n += c.directions.size();
    return n;
}

double rbf_kernel(double r, double width) { return std::exp(-(r * r) / (width * width)); }

namespace {

Eigen::MatrixXd control_kernel_matrix(std::span<const RbfControl> controls, double width) {
    const auto n = static_cast<Eigen::Index>(controls.size());
    Eigen::MatrixXd phi(n, n);
    for (Eigen::Index a = 0; a < n; ++a) {
        for (Eigen::Index b = 0; b < n; ++b) {
            const double r = (controls[a].position - controls[b].position).norm();
            if (a != b && r <= 1e-12 * std::max(1.0, width)) {
                std::ostringstream msg;
                msg << "RBF control points " << a << " and " << b << " coincide";
                throw SingularSystemError(msg.str());
            }
            phi(a, b) = rbf_kernel(r, width);
        }
    }
    return phi;
}

}  // namespace

RbfParameterizer::RbfParameterizer(Mesh base, std::vector<RbfControl> controls, double width,
                                   Bounds bounds)
    : base_(std::move(base)), controls_(std::move(controls)), width_(width), bounds_(std::move(bounds)) {
    if (!(width_ > 0.0)) throw ConfigError("RBF width must be positive");
    if (controls_.empty()) throw ConfigError("RBF parameterizer needs at least one control point");
    check_bounds(bounds_);
    if (rbf_dof_count(controls_) != bounds_.size()) {
        std::ostringstream msg;
        msg << "RBF controls carry " << rbf_dof_count(controls_) << " dofs but the latent box has "
            << bounds_.size() << " dimensions";
        throw ConfigError(msg.str());
    }
    for (std::size_t c = 0; c < controls_.size(); ++c) {
        for (std::size_t k = 0; k < controls_[c].directions.size(); ++k) {
            dof_owner_.push_back(static_cast<int>(c));
        }
    }

    const Eigen::MatrixXd phi = control_kernel_matrix(controls_, width_);
    kernel_factor_.compute(phi);
    if (kernel_factor_.info() != Eigen::Success) {
        throw SingularSystemError("RBF control kernel matrix is not positive definite");
    }
    const auto nv = static_cast<Eigen::Index>(base_.vertices.size());
    const auto nc = static_cast<Eigen::Index>(controls_.size());
    Eigen::MatrixXd rows(nc, nv);
    for (Eigen::Index v = 0; v < nv; ++v) {
        for (Eigen::Index c = 0; c < nc; ++c) {
            rows(c, v) = rbf_kernel((base_.vertices[v] - controls_[c].position).norm(), width_);
        }
    }
    // W = K_vc * Phi^-1 ; Phi is symmetric so W^T = Phi^-1 * K_cv.
    vertex_weights_ = kernel_factor_.solve(rows).transpose();
}

Eigen::MatrixXd RbfParameterizer::control_displacements(const Eigen::VectorXd& z) const {
    Eigen::MatrixXd disp = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(controls_.size()), 3);
    std::size_t dof = 0;
    for (std::size_t c = 0; c < controls_.size(); ++c) {
        for (const auto& dir : controls_[c].directions) {
            disp.row(static_cast<Eigen::Index>(c)) += z[static_cast<Eigen::Index>(dof++)] * dir.transpose();
        }
    }
    return disp;
}

Mesh RbfParameterizer::mesh(const Eigen::VectorXd& z) const {
    check_in_bounds(z, bounds_);
    const Eigen::MatrixXd disp = vertex_weights_ * control_displacements(z);
    Mesh out = base_;
    out.node_attrs.resize(0, 0);
    out.edge_attrs.resize(0, 0);
    out.sinusoids = -1;
    for (std::size_t v = 0; v < out.vertices.size(); ++v) {
        out.vertices[v] += disp.row(static_cast<Eigen::Index>(v)).transpose();
    }
    return out;
}

Eigen::Vector3d RbfParameterizer::displacement(const Eigen::Vector3d& point, const Eigen::VectorXd& z) const {
    const auto nc = static_cast<Eigen::Index>(controls_.size());
    Eigen::VectorXd k(nc);
    for (Eigen::Index c = 0; c < nc; ++c) k[c] = rbf_kernel((point - controls_[c].position).norm(), width_);
    const Eigen::MatrixXd coeff = kernel_factor_.solve(control_displacements(z));
    return (k.transpose() * coeff).transpose();
}

Eigen::MatrixXd RbfParameterizer::jacobian(const Eigen::VectorXd& z) const {
    check_in_bounds(z, bounds_);
    const auto nv = static_cast<Eigen::Index>(base_.vertices.size());
    const auto d = static_cast<Eigen::Index>(bounds_.size());
    Eigen::MatrixXd jac = Eigen::MatrixXd::Zero(3 * nv, d);
    std::size_t dof = 0;
    for (std::size_t c = 0; c < controls_.size(); ++c) {
        for (const auto& dir : controls_[c].directions) {
            const auto col = static_cast<Eigen::Index>(dof++);
            for (Eigen::Index v = 0; v < nv; ++v) {
                const double w = vertex_weights_(v, static_cast<Eigen::Index>(c));
                for (int k = 0; k < 3; ++k) jac(3 * v + k, col) = w * dir[k];
            }
        }
    }
    return jac;
}

Mesh rbf_deform(const Mesh& base, const Eigen::VectorXd& z, std::span<const RbfControl> controls,
                double width) {
    Bounds unbounded(rbf_dof_count(controls), Bound{-std::numeric_limits<double>::infinity(),
                                                    std::numeric_limits<double>::infinity()});
    RbfParameterizer param(base, {controls.begin(), controls.end()}, width, std::move(unbounded));
    return param.mesh(z);
}

// ---------------------------------------------------------------------------
// features

void build_features(Mesh& mesh, int sinusoids) {
    if (sinusoids < 0) throw ConfigError("sinusoid count must be non-negative");
    const auto nv = static_cast<Eigen::Index>(mesh.vertices.size());
    mesh.node_attrs.resize(nv, node_feature_dim(sinusoids));
    for (Eigen::Index v = 0; v < nv; ++v) {
        const Eigen::Vector3d& p = mesh.vertices[static_cast<std::size_t>(v)];
        for (int k = 0; k < 3; ++k) mesh.node_attrs(v, k) = p[k];
        for (int a = 1; a <= sinusoids; ++a) {
            for (int k = 0; k < 3; ++k) mesh.node_attrs(v, 3 * a + k) = std::sin(a * p[k]);
        }
    }
    const auto ne = static_cast<Eigen::Index>(mesh.edges.size());
    mesh.edge_attrs.resize(ne, 3);
    for (Eigen::Index e = 0; e < ne; ++e) {
        const auto [src, dst] = mesh.edges[static_cast<std::size_t>(e)];
        mesh.edge_attrs.row(e) = (mesh.vertices[static_cast<std::size_t>(dst)] -
                                  mesh.vertices[static_cast<std::size_t>(src)]).transpose();
    }
    mesh.sinusoids = sinusoids;
}

Eigen::VectorXd feature_vjp(const Mesh& mesh, const Eigen::MatrixXd& d_node, const Eigen::MatrixXd& d_edge) {
    const auto nv = static_cast<Eigen::Index>(mesh.vertices.size());
    const int a_max = mesh.sinusoids;
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(3 * nv);
    for (Eigen::Index v = 0; v < nv; ++v) {
        const Eigen::Vector3d& p = mesh.vertices[static_cast<std::size_t>(v)];
        for (int k = 0; k < 3; ++k) {
            double g = d_node(v, k);
            for (int a = 1; a <= a_max; ++a) g += d_node(v, 3 * a + k) * a * std::cos(a * p[k]);
            grad[3 * v + k] = g;
        }
    }
    for (std::size_t e = 0; e < mesh.edges.size(); ++e) {
        const auto [src, dst] = mesh.edges[e];
        for (int k = 0; k < 3; ++k) {
            const double g = d_edge(static_cast<Eigen::Index>(e), k);
            grad[3 * dst + k] += g;
            grad[3 * src + k] -= g;
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// topology

std::vector<std::array<int, 2>> cycle_edges(int n) {
    std::vector<std::array<int, 2>> edges;
    edges.reserve(static_cast<std::size_t>(2 * n));
    for (int i = 0; i < n; ++i) {
        const int j = (i + 1) % n;
        edges.push_back({i, j});
        edges.push_back({j, i});
    }
    return edges;
}

std::vector<std::array<int, 2>> edges_from_faces(std::span<const std::array<int, 3>> faces,
                                                 std::size_t vertex_count) {
    std::set<std::pair<int, int>> unique;
    for (const auto& f : faces) {
        for (int k = 0; k < 3; ++k) {
            const int a = f[static_cast<std::size_t>(k)];
            const int b = f[static_cast<std::size_t>((k + 1) % 3)];
            if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= vertex_count ||
                static_cast<std::size_t>(b) >= vertex_count) {
                throw GeometryError("face references a vertex out of range");
            }
            unique.insert({std::min(a, b), std::max(a, b)});
        }
    }
    std::vector<std::array<int, 2>> edges;
    edges.reserve(2 * unique.size());
    for (const auto& [a, b] : unique) {
        edges.push_back({a, b});
        edges.push_back({b, a});
    }
    return edges;
}

double signed_area(const Mesh& mesh, std::span<const int> order) {
    double area = 0.0;
    const std::size_t n = order.size();
    for (std::size_t i = 0; i < n; ++i) {
        const Eigen::Vector3d& a = mesh.vertices[static_cast<std::size_t>(order[i])];
        const Eigen::Vector3d& b = mesh.vertices[static_cast<std::size_t>(order[(i + 1) % n])];
        area += a.x() * b.y() - b.x() * a.y();
    }
    return 0.5 * area;
}

std::vector<int> contour_cycle(const Mesh& mesh) {
    const std::size_t n = mesh.vertices.size();
    if (n < 3) throw GeometryError("contour needs at least three vertices");
    std::vector<std::vector<int>> nbrs(n);
    for (const auto& [a, b] : mesh.edges) {
        if (a < 0 || b < 0 || static_cast<std::size_t>(a) >= n || static_cast<std::size_t>(b) >= n) {
            throw GeometryError("edge references a vertex out of range");
        }
        if (a == b) continue;
        auto& list = nbrs[static_cast<std::size_t>(a)];
        if (std::find(list.begin(), list.end(), b) == list.end()) list.push_back(b);
        auto& back = nbrs[static_cast<std::size_t>(b)];
        if (std::find(back.begin(), back.end(), a) == back.end()) back.push_back(a);
    }
    for (std::size_t v = 0; v < n; ++v) {
        if (nbrs[v].size() != 2) {
            std::ostringstream msg;
            msg << "open or branching contour: vertex " << v << " has " << nbrs[v].size() << " neighbours";
            throw GeometryError(msg.str());
        }
    }
    std::vector<int> order;
    order.reserve(n);
    int prev = -1;
    int cur = 0;
    do {
        order.push_back(cur);
        const auto& nb = nbrs[static_cast<std::size_t>(cur)];
        const int next = (prev == -1) ? std::min(nb[0], nb[1]) : (nb[0] == prev ? nb[1] : nb[0]);
        prev = cur;
        cur = next;
    } while (cur != 0 && order.size() <= n);
    if (order.size() != n) throw GeometryError("contour edges form more than one cycle");
    if (signed_area(mesh, order) < 0.0) std::reverse(order.begin() + 1, order.end());
    return order;
}

void check_mesh(const Mesh& mesh) {
    const auto n = static_cast<int>(mesh.vertices.size());
    std::set<std::pair<int, int>> present;
    for (const auto& [a, b] : mesh.edges) {
        if (a < 0 || b < 0 || a >= n || b >= n) throw GeometryError("edge index out of range");
        present.insert({a, b});
    }
    for (const auto& [a, b] : present) {
        if (!present.count({b, a})) {
            std::ostringstream msg;
            msg << "edge set is not symmetric: (" << a << ", " << b << ") has no reverse";
            throw GeometryError(msg.str());
        }
    }
    for (const auto& f : mesh.faces) {
        for (int v : f) {
            if (v < 0 || v >= n) throw GeometryError("face index out of range");
        }
    }
    if (mesh.has_features()) {
        if (mesh.node_attrs.rows() != n || mesh.node_attrs.cols() != node_feature_dim(mesh.sinusoids)) {
            throw GeometryError("node attribute block has the wrong shape");
        }
        if (mesh.edge_attrs.rows() != static_cast<Eigen::Index>(mesh.edges.size()) || mesh.edge_attrs.cols() != 3) {
            throw GeometryError("edge attribute block has the wrong shape");
        }
    }
}

}  // namespace geometry
}  // namespace surfopt
