#include "surfopt/physics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include "surfopt/errors.hpp"

namespace surfopt {

std::string_view to_string(Task task) {
    switch (task) {
        case Task::airfoil_lift: return "airfoil_lift";
        case Task::max_stress: return "max_stress";
        case Task::drag: return "drag";
    }
    return "unknown";
}

Task task_from_string(std::string_view name) {
    if (name == "airfoil_lift") return Task::airfoil_lift;
    if (name == "max_stress") return Task::max_stress;
    if (name == "drag") return Task::drag;
    throw ConfigError("unknown task '" + std::string(name) + "'");
}

void LoadCase::validate(std::size_t vertex_count) const {
    if (!(youngs_modulus > 0.0)) throw ConfigError("Young's modulus must be positive");
    if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5)) throw ConfigError("Poisson ratio must lie in [0, 0.5)");
    if (!(thickness > 0.0)) throw ConfigError("plate thickness must be positive");
    auto check_ids = [&](const std::vector<int>& ids) {
        for (int v : ids) {
            if (v < 0 || static_cast<std::size_t>(v) >= vertex_count) {
                throw ConfigError("load case references vertex " + std::to_string(v) + " out of range");
            }
        }
    };
    check_ids(fixed_vertex_ids);
    check_ids(fixed_x_ids);
    check_ids(fixed_y_ids);
    for (const auto& l : loads) {
        if (l.vertex < 0 || static_cast<std::size_t>(l.vertex) >= vertex_count) {
            throw ConfigError("load applied to vertex " + std::to_string(l.vertex) + " out of range");
        }
        if (!std::isfinite(l.fx) || !std::isfinite(l.fy)) throw ConfigError("non-finite load");
    }
    if (2 * fixed_vertex_ids.size() + fixed_x_ids.size() + fixed_y_ids.size() < 3) {
        throw ConstraintError("fewer than 3 constrained degrees of freedom");
    }
}

LoadCase LoadCase::scaled(double factor) const {
    LoadCase out = *this;
    for (auto& l : out.loads) {
        l.fx *= factor;
        l.fy *= factor;
    }
    return out;
}

namespace physics {

namespace {

constexpr double kPi = std::numbers::pi;

const Eigen::Vector3d& vertex(const Mesh& mesh, int i) { return mesh.vertices[static_cast<std::size_t>(i)]; }

double cross2(const Eigen::Vector3d& a, const Eigen::Vector3d& b) { return a.x() * b.y() - a.y() * b.x(); }

bool segments_cross(const Eigen::Vector3d& p1, const Eigen::Vector3d& p2, const Eigen::Vector3d& q1,
                    const Eigen::Vector3d& q2) {
    const double d1 = cross2(q2 - q1, p1 - q1);
    const double d2 = cross2(q2 - q1, p2 - q1);
    const double d3 = cross2(p2 - p1, q1 - p1);
    const double d4 = cross2(p2 - p1, q2 - p1);
    return ((d1 > 0 && d2 < 0) || (d1 < 0 && d2 > 0)) && ((d3 > 0 && d4 < 0) || (d3 < 0 && d4 > 0));
}

// Trailing edge = the most downstream vertex; ties resolved by lowest index.
int trailing_edge(const Mesh& mesh) {
    int best = 0;
    for (std::size_t i = 1; i < mesh.vertices.size(); ++i) {
        if (mesh.vertices[i].x() > mesh.vertices[static_cast<std::size_t>(best)].x()) best = static_cast<int>(i);
    }
    return best;
}

// Sum over CCW panels of mean(field) * (outward normal * length) . w.
double normal_integral(const Mesh& contour, std::span<const int> order, const Eigen::VectorXd& field,
                       double wx, double wy) {
    double total = 0.0;
    const std::size_t n = order.size();
    for (std::size_t i = 0; i < n; ++i) {
        const int a = order[i];
        const int b = order[(i + 1) % n];
        const double dx = vertex(contour, b).x() - vertex(contour, a).x();
        const double dy = vertex(contour, b).y() - vertex(contour, a).y();
        // outward normal * length of a CCW edge is (dy, -dx)
        total += 0.5 * (field[a] + field[b]) * (dy * wx - dx * wy);
    }
    return total;
}

void normal_integral_gradient(const Mesh& contour, std::span<const int> order, const Eigen::VectorXd& field,
                              double wx, double wy, double scale, PerformanceGradient& grad) {
    const std::size_t n = order.size();
    for (std::size_t i = 0; i < n; ++i) {
        const int a = order[i];
        const int b = order[(i + 1) % n];
        const double dx = vertex(contour, b).x() - vertex(contour, a).x();
        const double dy = vertex(contour, b).y() - vertex(contour, a).y();
        const double f = dy * wx - dx * wy;
        const double mean = 0.5 * (field[a] + field[b]);
        grad.d_field[a] += scale * 0.5 * f;
        grad.d_field[b] += scale * 0.5 * f;
        // df/dxa = wy, df/dxb = -wy, df/dya = -wx, df/dyb = wx
        grad.d_coords[3 * a + 0] += scale * mean * wy;
        grad.d_coords[3 * b + 0] -= scale * mean * wy;
        grad.d_coords[3 * a + 1] -= scale * mean * wx;
        grad.d_coords[3 * b + 1] += scale * mean * wx;
    }
}

void check_field(const Mesh& mesh, const Eigen::VectorXd& field) {
    if (field.size() == 0) throw ShapeError("empty field");
    if (static_cast<std::size_t>(field.size()) != mesh.vertices.size()) {
        std::ostringstream msg;
        msg << "field has " << field.size() << " values for " << mesh.vertices.size() << " vertices";
        throw ShapeError(msg.str());
    }
}

}  // namespace

// ---------------------------------------------------------------------------
// vortex panel method

void check_simple_contour(const Mesh& contour, std::span<const int> order) {
    const std::size_t n = order.size();
    for (std::size_t i = 0; i < n; ++i) {
        const auto& p1 = vertex(contour, order[i]);
        const auto& p2 = vertex(contour, order[(i + 1) % n]);
        for (std::size_t j = i + 2; j < n; ++j) {
            if (i == 0 && j == n - 1) continue;
            const auto& q1 = vertex(contour, order[j]);
            const auto& q2 = vertex(contour, order[(j + 1) % n]);
            if (segments_cross(p1, p2, q1, q2)) {
                std::ostringstream msg;
                msg << "self-intersecting contour: panels " << i << " and " << j << " cross";
                throw GeometryError(msg.str());
            }
        }
    }
}

PanelSolution vortex_panels(const Mesh& contour, double alpha) {
    if (contour.vertices.size() < 16) throw GeometryError("panel method needs at least 16 panels");
    const std::vector<int> ccw = geometry::contour_cycle(contour);
    check_simple_contour(contour, ccw);

    // Clockwise traversal from the trailing edge, closing back on it.
    const int te = trailing_edge(contour);
    const auto start = std::find(ccw.begin(), ccw.end(), te) - ccw.begin();
    const auto n = static_cast<int>(ccw.size());
    std::vector<int> order(static_cast<std::size_t>(n) + 1);
    for (int k = 0; k <= n; ++k) {
        order[static_cast<std::size_t>(k)] = ccw[static_cast<std::size_t>(((start - k) % n + n) % n)];
    }

    Eigen::VectorXd px(n), py(n), len(n), theta(n), mx(n), my(n);
    for (int j = 0; j < n; ++j) {
        const auto& a = vertex(contour, order[static_cast<std::size_t>(j)]);
        const auto& b = vertex(contour, order[static_cast<std::size_t>(j) + 1]);
        px[j] = a.x();
        py[j] = a.y();
        const double dx = b.x() - a.x();
        const double dy = b.y() - a.y();
        len[j] = std::hypot(dx, dy);
        if (!(len[j] > 1e-12)) {
            throw SolverError("degenerate panel " + std::to_string(j) + " has zero length");
        }
        theta[j] = std::atan2(dy, dx);
        mx[j] = 0.5 * (a.x() + b.x());
        my[j] = 0.5 * (a.y() + b.y());
    }

    Eigen::MatrixXd cn1(n, n), cn2(n, n), ct1(n, n), ct2(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            if (i == j) {
                cn1(i, j) = -1.0;
                cn2(i, j) = 1.0;
                ct1(i, j) = 0.5 * kPi;
                ct2(i, j) = 0.5 * kPi;
                continue;
            }
            const double rx = mx[i] - px[j];
            const double ry = my[i] - py[j];
            const double ct = std::cos(theta[j]);
            const double st = std::sin(theta[j]);
            const double A = -rx * ct - ry * st;
            const double B = rx * rx + ry * ry;
            const double C = std::sin(theta[i] - theta[j]);
            const double D = std::cos(theta[i] - theta[j]);
            const double E = rx * st - ry * ct;
            const double S = len[j];
            const double F = std::log(1.0 + S * (S + 2.0 * A) / B);
            const double G = std::atan2(E * S, B + A * S);
            const double P = rx * std::sin(theta[i] - 2.0 * theta[j]) + ry * std::cos(theta[i] - 2.0 * theta[j]);
            const double Q = rx * std::cos(theta[i] - 2.0 * theta[j]) - ry * std::sin(theta[i] - 2.0 * theta[j]);
            cn2(i, j) = D + 0.5 * Q * F / S - (A * C + D * E) * G / S;
            cn1(i, j) = 0.5 * D * F + C * G - cn2(i, j);
            ct2(i, j) = C + 0.5 * P * F / S + (A * D - C * E) * G / S;
            ct1(i, j) = 0.5 * C * F - D * G - ct2(i, j);
        }
    }

    Eigen::MatrixXd an = Eigen::MatrixXd::Zero(n + 1, n + 1);
    Eigen::MatrixXd at = Eigen::MatrixXd::Zero(n, n + 1);
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(n + 1);
    for (int i = 0; i < n; ++i) {
        an(i, 0) = cn1(i, 0);
        an(i, n) = cn2(i, n - 1);
        at(i, 0) = ct1(i, 0);
        at(i, n) = ct2(i, n - 1);
        for (int j = 1; j < n; ++j) {
            an(i, j) = cn1(i, j) + cn2(i, j - 1);
            at(i, j) = ct1(i, j) + ct2(i, j - 1);
        }
        rhs[i] = std::sin(theta[i] - alpha);
    }
    // Kutta condition: equal and opposite strengths at the trailing edge.
    an(n, 0) = 1.0;
    an(n, n) = 1.0;

    Eigen::FullPivLU<Eigen::MatrixXd> lu(an);
    if (!lu.isInvertible()) throw SolverError("singular panel influence matrix");
    PanelSolution sol;
    sol.gamma = lu.solve(rhs);
    if (!sol.gamma.allFinite()) throw SolverError("panel solve produced non-finite strengths");

    sol.panel_cp.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double vt = std::cos(theta[i] - alpha) + at.row(i).dot(sol.gamma);
        sol.panel_cp[static_cast<std::size_t>(i)] = 1.0 - vt * vt;
    }
    sol.node_cp.assign(contour.vertices.size(), 0.0);
    for (int k = 0; k < n; ++k) {
        const int prev_panel = (k - 1 + n) % n;
        sol.node_cp[static_cast<std::size_t>(order[static_cast<std::size_t>(k)])] =
            0.5 * (sol.panel_cp[static_cast<std::size_t>(prev_panel)] + sol.panel_cp[static_cast<std::size_t>(k)]);
    }
    double circulation = 0.0;
    for (int j = 0; j < n; ++j) circulation += 0.5 * (sol.gamma[j] + sol.gamma[j + 1]) * len[j];
    // gamma is scaled by 2 pi V; Cl = 2 Gamma / (V c), clockwise circulation positive.
    sol.circulation_lift = 2.0 * 2.0 * kPi * circulation;
    order.pop_back();
    sol.order = std::move(order);
    return sol;
}

FieldSample panel_solve(const Mesh& contour, double alpha, double v_inf) {
    if (!(v_inf > 0.0)) throw ConfigError("free-stream speed must be positive");
    const PanelSolution sol = vortex_panels(contour, alpha);
    FieldSample sample;
    sample.mesh = contour;
    sample.field = Eigen::Map<const Eigen::VectorXd>(sol.node_cp.data(), static_cast<Eigen::Index>(sol.node_cp.size()));
    sample.task = {Task::airfoil_lift, alpha};
    sample.performance = lift_coefficient(contour, sample.field, alpha);
    return sample;
}

double lift_coefficient(const Mesh& contour, const Eigen::VectorXd& cp, double alpha) {
    check_field(contour, cp);
    const std::vector<int> order = geometry::contour_cycle(contour);
    return -normal_integral(contour, order, cp, -std::sin(alpha), std::cos(alpha));
}

double drag_integral(const Mesh& contour, const Eigen::VectorXd& field, const Eigen::Vector3d& flow_dir) {
    check_field(contour, field);
    const std::vector<int> order = geometry::contour_cycle(contour);
    return normal_integral(contour, order, field, flow_dir.x(), flow_dir.y());
}

double drag_integral(const FieldSample& sample, const Eigen::Vector3d& flow_dir) {
    return drag_integral(sample.mesh, sample.field, flow_dir);
}

// ---------------------------------------------------------------------------
// plane-stress FEM

double von_mises(double sxx, double syy, double txy) {
    return std::sqrt(sxx * sxx - sxx * syy + syy * syy + 3.0 * txy * txy);
}

FemSolution fem_solve(const Mesh& mesh, const LoadCase& load_case) {
    const auto nv = static_cast<Eigen::Index>(mesh.vertices.size());
    if (mesh.faces.empty()) throw GeometryError("FEM mesh has no triangles");
    load_case.validate(mesh.vertices.size());

    const double e = load_case.youngs_modulus;
    const double nu = load_case.poisson_ratio;
    Eigen::Matrix3d dmat;
    dmat << 1.0, nu, 0.0, nu, 1.0, 0.0, 0.0, 0.0, 0.5 * (1.0 - nu);
    dmat *= e / (1.0 - nu * nu);

    const auto nf = static_cast<Eigen::Index>(mesh.faces.size());
    std::vector<Eigen::Matrix<double, 3, 6>> bmats(static_cast<std::size_t>(nf));
    Eigen::VectorXd areas(nf);
    std::vector<Eigen::Triplet<double>> triplets;
    triplets.reserve(static_cast<std::size_t>(36 * nf));
    for (Eigen::Index f = 0; f < nf; ++f) {
        const auto& tri = mesh.faces[static_cast<std::size_t>(f)];
        const auto& p1 = vertex(mesh, tri[0]);
        const auto& p2 = vertex(mesh, tri[1]);
        const auto& p3 = vertex(mesh, tri[2]);
        const double two_a = (p2.x() - p1.x()) * (p3.y() - p1.y()) - (p3.x() - p1.x()) * (p2.y() - p1.y());
        if (!(two_a > 0.0)) {
            throw GeometryError("triangle " + std::to_string(f) + " is inverted or degenerate");
        }
        const double b[3] = {p2.y() - p3.y(), p3.y() - p1.y(), p1.y() - p2.y()};
        const double c[3] = {p3.x() - p2.x(), p1.x() - p3.x(), p2.x() - p1.x()};
        Eigen::Matrix<double, 3, 6> bm = Eigen::Matrix<double, 3, 6>::Zero();
        for (int k = 0; k < 3; ++k) {
            bm(0, 2 * k) = b[k];
            bm(1, 2 * k + 1) = c[k];
            bm(2, 2 * k) = c[k];
            bm(2, 2 * k + 1) = b[k];
        }
        bm /= two_a;
        bmats[static_cast<std::size_t>(f)] = bm;
        areas[f] = 0.5 * two_a;
        const Eigen::Matrix<double, 6, 6> ke = load_case.thickness * areas[f] * bm.transpose() * dmat * bm;
        for (int r = 0; r < 6; ++r) {
            for (int s = 0; s < 6; ++s) {
                triplets.emplace_back(2 * tri[static_cast<std::size_t>(r / 2)] + r % 2,
                                      2 * tri[static_cast<std::size_t>(s / 2)] + s % 2, ke(r, s));
            }
        }
    }

    std::vector<char> constrained(static_cast<std::size_t>(2 * nv), 0);
    for (int v : load_case.fixed_vertex_ids) constrained[2 * v] = constrained[2 * v + 1] = 1;
    for (int v : load_case.fixed_x_ids) constrained[2 * v] = 1;
    for (int v : load_case.fixed_y_ids) constrained[2 * v + 1] = 1;

    // Constraints must remove the three in-plane rigid-body modes.
    {
        std::vector<Eigen::RowVector3d> rows;
        for (Eigen::Index v = 0; v < nv; ++v) {
            const auto& p = mesh.vertices[static_cast<std::size_t>(v)];
            if (constrained[2 * v]) rows.emplace_back(1.0, 0.0, -p.y());
            if (constrained[2 * v + 1]) rows.emplace_back(0.0, 1.0, p.x());
        }
        Eigen::MatrixXd modes(static_cast<Eigen::Index>(rows.size()), 3);
        for (std::size_t r = 0; r < rows.size(); ++r) modes.row(static_cast<Eigen::Index>(r)) = rows[r];
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(modes);
        qr.setThreshold(1e-10);
        if (qr.rank() < 3) throw ConstraintError("constraints leave a rigid-body mode free");
    }

    std::vector<int> map(static_cast<std::size_t>(2 * nv), -1);
    int nfree = 0;
    for (Eigen::Index d = 0; d < 2 * nv; ++d) {
        if (!constrained[static_cast<std::size_t>(d)]) map[static_cast<std::size_t>(d)] = nfree++;
    }
    std::vector<Eigen::Triplet<double>> reduced;
    reduced.reserve(triplets.size());
    for (const auto& t : triplets) {
        const int r = map[static_cast<std::size_t>(t.row())];
        const int c = map[static_cast<std::size_t>(t.col())];
        if (r >= 0 && c >= 0) reduced.emplace_back(r, c, t.value());
    }
    Eigen::SparseMatrix<double> k(nfree, nfree);
    k.setFromTriplets(reduced.begin(), reduced.end());
    Eigen::VectorXd f = Eigen::VectorXd::Zero(nfree);
    for (const auto& l : load_case.loads) {
        if (map[static_cast<std::size_t>(2 * l.vertex)] >= 0) f[map[static_cast<std::size_t>(2 * l.vertex)]] += l.fx;
        if (map[static_cast<std::size_t>(2 * l.vertex + 1)] >= 0) {
            f[map[static_cast<std::size_t>(2 * l.vertex + 1)]] += l.fy;
        }
    }

    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>> solver(k);
    if (solver.info() != Eigen::Success) throw ConstraintError("stiffness matrix is singular (under-constrained)");
    const Eigen::VectorXd u_free = solver.solve(f);
    if (solver.info() != Eigen::Success || !u_free.allFinite()) throw SolverError("stiffness solve failed");

    FemSolution sol;
    sol.displacement = Eigen::VectorXd::Zero(2 * nv);
    for (Eigen::Index d = 0; d < 2 * nv; ++d) {
        const int m = map[static_cast<std::size_t>(d)];
        if (m >= 0) sol.displacement[d] = u_free[m];
    }

    sol.element_stress.resize(nf, 3);
    sol.element_von_mises.resize(nf);
    Eigen::VectorXd weighted = Eigen::VectorXd::Zero(nv);
    Eigen::VectorXd area_sum = Eigen::VectorXd::Zero(nv);
    for (Eigen::Index fi = 0; fi < nf; ++fi) {
        const auto& tri = mesh.faces[static_cast<std::size_t>(fi)];
        Eigen::Matrix<double, 6, 1> ue;
        for (int k2 = 0; k2 < 3; ++k2) {
            ue[2 * k2] = sol.displacement[2 * tri[static_cast<std::size_t>(k2)]];
            ue[2 * k2 + 1] = sol.displacement[2 * tri[static_cast<std::size_t>(k2)] + 1];
        }
        const Eigen::Vector3d stress = dmat * (bmats[static_cast<std::size_t>(fi)] * ue);
        sol.element_stress.row(fi) = stress.transpose();
        sol.element_von_mises[fi] = von_mises(stress[0], stress[1], stress[2]);
        for (int v : tri) {
            weighted[v] += areas[fi] * sol.element_von_mises[fi];
            area_sum[v] += areas[fi];
        }
    }
    sol.nodal_von_mises = Eigen::VectorXd::Zero(nv);
    for (Eigen::Index v = 0; v < nv; ++v) {
        if (area_sum[v] > 0.0) sol.nodal_von_mises[v] = weighted[v] / area_sum[v];
    }
    return sol;
}

FieldSample fem_plane_stress(const Mesh& mesh, const LoadCase& load_case) {
    FemSolution sol = fem_solve(mesh, load_case);
    FieldSample sample;
    sample.mesh = mesh;
    sample.field = std::move(sol.nodal_von_mises);
    sample.task = {Task::max_stress, 0.0};
    sample.performance = sample.field.maxCoeff();
    return sample;
}

// ---------------------------------------------------------------------------
// performance

double performance(const Mesh& mesh, const Eigen::VectorXd& field, const TaskSpec& task) {
    check_field(mesh, field);
    switch (task.kind) {
        case Task::airfoil_lift: return lift_coefficient(mesh, field, task.alpha);
        case Task::max_stress: return field.maxCoeff();
        case Task::drag: return drag_integral(mesh, field, Eigen::Vector3d::UnitX());
    }
    throw ConfigError("unknown task");
}

double performance(const FieldSample& sample, const TaskSpec& task) {
    return performance(sample.mesh, sample.field, task);
}

PerformanceGradient performance_gradient(const Mesh& mesh, const Eigen::VectorXd& field, const TaskSpec& task) {
    check_field(mesh, field);
    PerformanceGradient grad;
    grad.d_field = Eigen::VectorXd::Zero(field.size());
    grad.d_coords = Eigen::VectorXd::Zero(3 * field.size());
    switch (task.kind) {
        case Task::airfoil_lift: {
            const std::vector<int> order = geometry::contour_cycle(mesh);
            normal_integral_gradient(mesh, order, field, -std::sin(task.alpha), std::cos(task.alpha), -1.0, grad);
            break;
        }
        case Task::drag: {
            const std::vector<int> order = geometry::contour_cycle(mesh);
            normal_integral_gradient(mesh, order, field, 1.0, 0.0, 1.0, grad);
            break;
        }
        case Task::max_stress: {
            Eigen::Index arg = 0;
            field.maxCoeff(&arg);
            grad.d_field[arg] = 1.0;
            break;
        }
    }
    return grad;
}

// ---------------------------------------------------------------------------
// latent-space penalty

namespace {

std::vector<std::pair<double, std::size_t>> nearest(const Eigen::VectorXd& z,
                                                    std::span<const Eigen::VectorXd> training_z, int k) {
    if (k < 1) throw ConfigError("r_aux needs k >= 1");
    if (training_z.size() < static_cast<std::size_t>(k)) {
        std::ostringstream msg;
        msg << "r_aux needs at least " << k << " training latents, got " << training_z.size();
        throw InsufficientDataError(msg.str());
    }
    std::vector<std::pair<double, std::size_t>> dist(training_z.size());
    for (std::size_t i = 0; i < training_z.size(); ++i) dist[i] = {(z - training_z[i]).norm(), i};
    std::partial_sort(dist.begin(), dist.begin() + k, dist.end());
    dist.resize(static_cast<std::size_t>(k));
    return dist;
}

}  // namespace

double r_aux(const Eigen::VectorXd& z, std::span<const Eigen::VectorXd> training_z, int k) {
    const auto dist = nearest(z, training_z, k);
    double sum = 0.0;
    for (const auto& [d, i] : dist) sum += d;
    return sum / k;
}

Eigen::VectorXd r_aux_gradient(const Eigen::VectorXd& z, std::span<const Eigen::VectorXd> training_z, int k) {
    const auto dist = nearest(z, training_z, k);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(z.size());
    for (const auto& [d, i] : dist) {
        if (d > 0.0) grad += (z - training_z[i]) / d;
    }
    return grad / k;
}

}  // namespace physics
}  // namespace surfopt
