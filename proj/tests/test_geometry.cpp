#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>

#include "support.hpp"
#include "surfopt/errors.hpp"
#include "surfopt/geometry.hpp"

using namespace surfopt;
using Eigen::Vector3d;
using Eigen::VectorXd;

namespace {

VectorXd random_naca(std::mt19937_64& rng) {
    VectorXd z(3);
    const auto& b = geometry::naca_bounds();
    for (int i = 0; i < 3; ++i) z[i] = std::uniform_real_distribution<double>(b[i].lo, b[i].hi)(rng);
    return z;
}

// Published 4-digit thickness distribution, open trailing edge.
double naca_thickness_oracle(double t, double x) {
    const double a[5] = {0.2969, -0.1260, -0.3516, 0.2843, -0.1015};
    return t / 0.2 * (a[0] * std::sqrt(x) + a[1] * x + a[2] * x * x + a[3] * x * x * x + a[4] * x * x * x * x);
}

}  // namespace

TEST_CASE("latent bounds checks") {
    LatentVector ok{VectorXd::Constant(2, 0.5), {{0, 1}, {0, 1}}};
    CHECK_NOTHROW(ok.validate());
    LatentVector out{VectorXd::Constant(2, 1.5), {{0, 1}, {0, 1}}};
    CHECK_THROWS_AS(out.validate(), BoundsError);
    LatentVector empty{VectorXd(0), {}};
    CHECK_THROWS(empty.validate());
    CHECK_THROWS_AS(check_bounds({{1.0, 0.0}}), ConfigError);
    const VectorXd c = clip_to_bounds(VectorXd::Constant(2, 3.0), {{0, 1}, {-5, 2}});
    CHECK(c[0] == 1.0);
    CHECK(c[1] == 2.0);
}

TEST_CASE("naca contour is mirror symmetric without camber") {
    for (double p : {0.2, 0.4, 0.7}) {
        VectorXd z(3);
        z << 0.0, p, 0.12;
        const Mesh m = geometry::naca_contour(z, 64);
        const int n = 64;
        for (int i = 1; i < n; ++i) {
            CHECK(m.vertices[i].x() == m.vertices[n - i].x());
            CHECK(m.vertices[i].y() == -m.vertices[n - i].y());
        }
    }
}

TEST_CASE("naca half thickness against the published polynomial") {
    const double x = 0.3;
    const double ours = geometry::naca_half_thickness(0.12, x);
    const double open_te = naca_thickness_oracle(0.12, x);
    // closed and open trailing-edge forms differ by 0.0021 * x^4 * 5t
    CHECK(ours == doctest::Approx(open_te - 0.6 * 0.0021 * std::pow(x, 4)).epsilon(1e-12));
    CHECK(std::abs(ours - open_te) < 2e-5);
    CHECK(std::abs(geometry::naca_half_thickness(0.12, 1.0)) < 1e-12);
    CHECK(geometry::naca_half_thickness(0.12, 0.0) == 0.0);
}

TEST_CASE("naca camber line") {
    const auto c0 = geometry::naca_camber(0.02, 0.4, 0.4);
    CHECK(c0.height == doctest::Approx(0.02));
    CHECK(std::abs(c0.slope) < 1e-15);
    const auto c1 = geometry::naca_camber(0.02, 0.4, 0.2);
    CHECK(c1.height == doctest::Approx(0.02 / 0.16 * (0.8 * 0.2 - 0.04)));
}

TEST_CASE("naca closure and fixed topology") {
    std::mt19937_64 rng(3);
    const Mesh ref = geometry::naca_contour(random_naca(rng), 48);
    for (int trial = 0; trial < 5; ++trial) {
        const Mesh m = geometry::naca_contour(random_naca(rng), 48);
        CHECK(m.vertices.size() == 48);
        CHECK(m.edges == ref.edges);
        const auto cycle = geometry::contour_cycle(m);
        CHECK(cycle.size() == 48);
        CHECK(cycle.front() == 0);
        CHECK(m.vertices[0].x() == doctest::Approx(1.0));
        CHECK(std::abs(m.vertices[0].y()) < 1e-12);
        CHECK(geometry::signed_area(m, cycle) > 0.0);
        for (const auto& v : m.vertices) CHECK(v.z() == 0.0);
    }
}

TEST_CASE("naca input validation") {
    VectorXd z(3);
    z << 0.02, 0.4, 0.12;
    CHECK_THROWS_AS(geometry::naca_contour(z, 63), ConfigError);
    CHECK_THROWS_AS(geometry::naca_contour(z, 14), ConfigError);
    z[2] = 0.5;
    CHECK_THROWS_AS(geometry::naca_contour(z, 64), BoundsError);
}

TEST_CASE("parameterizers are deterministic") {
    std::mt19937_64 rng(5);
    const geometry::NacaParameterizer naca(64);
    const VectorXd z = random_naca(rng);
    const Mesh a = naca.mesh(z);
    const Mesh b = naca.mesh(z);
    for (std::size_t i = 0; i < a.vertices.size(); ++i) CHECK(a.vertices[i] == b.vertices[i]);
    CHECK(a.node_attrs == b.node_attrs);
}

TEST_CASE("naca jacobian matches central differences") {
    std::mt19937_64 rng(7);
    const geometry::NacaParameterizer naca(40);
    const double h = 1e-6;
    for (int trial = 0; trial < 5; ++trial) {
        VectorXd z = random_naca(rng);
        z[1] = std::clamp(z[1], 0.15, 0.85);
        z[0] = std::clamp(z[0], 0.005, 0.085);
        z[2] = std::clamp(z[2], 0.07, 0.29);
        const Eigen::MatrixXd J = naca.jacobian(z);
        REQUIRE(J.rows() == 3 * 40);
        REQUIRE(J.cols() == 3);
        for (int c = 0; c < 3; ++c) {
            VectorXd zp = z, zm = z;
            zp[c] += h;
            zm[c] -= h;
            const Mesh mp = naca.mesh(zp);
            const Mesh mm = naca.mesh(zm);
            VectorXd fd(3 * 40);
            for (int v = 0; v < 40; ++v) fd.segment<3>(3 * v) = (mp.vertices[v] - mm.vertices[v]) / (2 * h);
            CHECK((fd - J.col(c)).norm() / std::max(fd.norm(), 1e-12) < 1e-5);
            CHECK(J.col(c).norm() > 0.0);
        }
    }
}

TEST_CASE("rbf deformation") {
    Mesh base;
    base.vertices = {Vector3d(0, 0, 0), Vector3d(1, 0, 0), Vector3d(0.3, 0.7, 0), Vector3d(40, 40, 0)};
    base.edges = geometry::cycle_edges(4);
    std::vector<Vector3d> pos = {Vector3d(0, 0, 0), Vector3d(1, 0, 0)};
    const auto controls = geometry::planar_controls(pos);
    CHECK(geometry::rbf_dof_count(controls) == 4);
    const double width = 0.8;

    SUBCASE("zero displacement") {
        const Mesh m = geometry::rbf_deform(base, VectorXd::Zero(4), controls, width);
        for (std::size_t i = 0; i < m.vertices.size(); ++i) CHECK(m.vertices[i] == base.vertices[i]);
        CHECK(m.edges == base.edges);
    }
    SUBCASE("interpolates the control displacement") {
        VectorXd z(4);
        z << 0.1, -0.2, 0.05, 0.3;
        const Mesh m = geometry::rbf_deform(base, z, controls, width);
        CHECK((m.vertices[0] - base.vertices[0] - Vector3d(0.1, -0.2, 0)).norm() < 1e-12);
        CHECK((m.vertices[1] - base.vertices[1] - Vector3d(0.05, 0.3, 0)).norm() < 1e-12);

        // direct solve of the interpolation system
        Eigen::Matrix2d K;
        for (int i = 0; i < 2; ++i)
            for (int j = 0; j < 2; ++j) K(i, j) = std::exp(-(pos[i] - pos[j]).squaredNorm() / (width * width));
        Eigen::Matrix<double, 2, 2> d;
        d << 0.1, -0.2, 0.05, 0.3;
        const Eigen::Matrix2d w = K.fullPivLu().solve(d);
        const Vector3d q = base.vertices[2];
        Eigen::RowVector2d k;
        for (int j = 0; j < 2; ++j) k[j] = std::exp(-(q - pos[j]).squaredNorm() / (width * width));
        const Eigen::RowVector2d disp = k * w;
        CHECK(m.vertices[2].x() - q.x() == doctest::Approx(disp[0]).epsilon(1e-12));
        CHECK(m.vertices[2].y() - q.y() == doctest::Approx(disp[1]).epsilon(1e-12));
        CHECK((m.vertices[3] - base.vertices[3]).norm() < 1e-6 * 0.3);
    }
    SUBCASE("single control") {
        const auto one = geometry::planar_controls(std::vector<Vector3d>{Vector3d(0.3, 0.7, 0)});
        VectorXd z(2);
        z << 0.2, -0.1;
        const Mesh m = geometry::rbf_deform(base, z, one, width);
        CHECK((m.vertices[2] - base.vertices[2] - Vector3d(0.2, -0.1, 0)).norm() < 1e-14);
    }
    SUBCASE("coincident controls are singular") {
        std::vector<Vector3d> twice = {Vector3d(0, 0, 0), Vector3d(0, 0, 0)};
        CHECK_THROWS_AS(geometry::rbf_deform(base, VectorXd::Zero(4), geometry::planar_controls(twice), width),
                        SingularSystemError);
        CHECK_THROWS_AS(geometry::RbfParameterizer(base, geometry::planar_controls(twice), width,
                                                   Bounds(4, Bound{-1, 1})),
                        SingularSystemError);
    }
    SUBCASE("jacobian is constant and matches differences") {
        const geometry::RbfParameterizer p(base, controls, width, Bounds(4, Bound{-0.5, 0.5}));
        std::mt19937_64 rng(1);
        std::uniform_real_distribution<double> u(-0.5, 0.5);
        VectorXd z1(4), z2(4);
        for (int i = 0; i < 4; ++i) {
            z1[i] = u(rng);
            z2[i] = u(rng);
        }
        const Eigen::MatrixXd J1 = p.jacobian(z1);
        CHECK(J1 == p.jacobian(z2));
        const double h = 1e-6;
        for (int c = 0; c < 4; ++c) {
            VectorXd zp = z1, zm = z1;
            zp[c] += h;
            zm[c] -= h;
            const Mesh a = p.mesh(zp), b = p.mesh(zm);
            VectorXd fd(12);
            for (int v = 0; v < 4; ++v) fd.segment<3>(3 * v) = (a.vertices[v] - b.vertices[v]) / (2 * h);
            CHECK((fd - J1.col(c)).norm() <= 1e-5 * std::max(fd.norm(), 1e-12));
        }
        CHECK((p.displacement(base.vertices[2], z1) - (p.mesh(z1).vertices[2] - base.vertices[2])).norm() < 1e-12);
    }
}

TEST_CASE("graph features") {
    Mesh m;
    m.vertices = {Vector3d(0, 0, 0), Vector3d(1, 0.5, 0), Vector3d(-0.3, 2, 0)};
    m.edges = geometry::cycle_edges(3);

    SUBCASE("A = 0 gives coordinates") {
        geometry::build_features(m, 0);
        CHECK(m.node_attrs.cols() == 3);
        for (int i = 0; i < 3; ++i) CHECK(m.node_attrs.row(i).transpose() == m.vertices[i]);
    }
    SUBCASE("sinusoids") {
        geometry::build_features(m, 4);
        CHECK(m.node_attrs.cols() == geometry::node_feature_dim(4));
        CHECK(m.node_attrs.cols() == 15);
        CHECK(m.node_attrs.row(0).norm() == 0.0);
        for (int a = 1; a <= 4; ++a) {
            CHECK(m.node_attrs(1, 3 * a) == doctest::Approx(std::sin(a * 1.0)));
            CHECK(m.node_attrs(2, 3 * a + 1) == doctest::Approx(std::sin(a * 2.0)));
        }
    }
    SUBCASE("edge attributes are antisymmetric differences") {
        geometry::build_features(m, 2);
        REQUIRE(m.edge_attrs.rows() == static_cast<Eigen::Index>(m.edges.size()));
        for (std::size_t e = 0; e < m.edges.size(); ++e) {
            const auto [i, j] = m.edges[e];
            CHECK(m.edge_attrs.row(static_cast<Eigen::Index>(e)).transpose() == m.vertices[j] - m.vertices[i]);
            for (std::size_t f = 0; f < m.edges.size(); ++f) {
                if (m.edges[f][0] == j && m.edges[f][1] == i) {
                    CHECK(m.edge_attrs.row(static_cast<Eigen::Index>(e)) ==
                          -m.edge_attrs.row(static_cast<Eigen::Index>(f)));
                }
            }
        }
    }
    SUBCASE("idempotent") {
        geometry::build_features(m, 3);
        const Eigen::MatrixXd n1 = m.node_attrs, e1 = m.edge_attrs;
        geometry::build_features(m, 3);
        CHECK(m.node_attrs == n1);
        CHECK(m.edge_attrs == e1);
    }
    CHECK_THROWS_AS(geometry::build_features(m, -1), ConfigError);
}

TEST_CASE("feature vjp matches differences") {
    std::mt19937_64 rng(11);
    Mesh m = testing::random_graph(8, rng, 2);
    std::normal_distribution<double> g(0.0, 1.0);
    Eigen::MatrixXd dn(m.node_attrs.rows(), m.node_attrs.cols()), de(m.edge_attrs.rows(), 3);
    for (Eigen::Index i = 0; i < dn.size(); ++i) dn.data()[i] = g(rng);
    for (Eigen::Index i = 0; i < de.size(); ++i) de.data()[i] = g(rng);
    const VectorXd grad = geometry::feature_vjp(m, dn, de);
    auto objective = [&](const Mesh& mm) {
        return (mm.node_attrs.array() * dn.array()).sum() + (mm.edge_attrs.array() * de.array()).sum();
    };
    const double h = 1e-6;
    for (int v = 0; v < 8; ++v) {
        for (int c = 0; c < 3; ++c) {
            Mesh p = m, q = m;
            p.vertices[v][c] += h;
            q.vertices[v][c] -= h;
            geometry::build_features(p, 2);
            geometry::build_features(q, 2);
            const double fd = (objective(p) - objective(q)) / (2 * h);
            CHECK(grad[3 * v + c] == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("topology helpers") {
    const auto cyc = geometry::cycle_edges(5);
    CHECK(cyc.size() == 10);
    const Mesh r = testing::rectangle(1, 1, 2, 1);
    CHECK(r.faces.size() == 4);
    // 6 vertices, 9 undirected edges
    CHECK(r.edges.size() == 18);
    CHECK_NOTHROW(geometry::check_mesh(r));
    Mesh bad = r;
    bad.edges.push_back({0, 5});
    CHECK_THROWS_AS(geometry::check_mesh(bad), GeometryError);
    Mesh open;
    open.vertices = {Vector3d(0, 0, 0), Vector3d(1, 0, 0), Vector3d(1, 1, 0), Vector3d(0, 1, 0)};
    open.edges = {{0, 1}, {1, 0}, {1, 2}, {2, 1}, {2, 3}, {3, 2}};
    CHECK_THROWS_AS(geometry::contour_cycle(open), GeometryError);
}
