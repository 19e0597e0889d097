#include "surfopt/knuckle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "surfopt/errors.hpp"

namespace surfopt::knuckle {

namespace {

double tri_area(const Mesh& mesh, const std::array<int, 3>& f) {
    const auto& a = mesh.vertices[static_cast<std::size_t>(f[0])];
    const auto& b = mesh.vertices[static_cast<std::size_t>(f[1])];
    const auto& c = mesh.vertices[static_cast<std::size_t>(f[2])];
    return 0.5 * ((b.x() - a.x()) * (c.y() - a.y()) - (c.x() - a.x()) * (b.y() - a.y()));
}

void add_quad(Mesh& mesh, int a, int b, int c, int d) {
    for (std::array<int, 3> f : {std::array<int, 3>{a, b, c}, std::array<int, 3>{a, c, d}}) {
        if (tri_area(mesh, f) < 0.0) std::swap(f[1], f[2]);
        mesh.faces.push_back(f);
    }
}

}  // namespace

Mesh submesh(const Mesh& mesh, const std::vector<int>& keep) {
    std::vector<int> remap(mesh.vertices.size(), -1);
    for (int v : keep) remap[static_cast<std::size_t>(v)] = 0;
    Mesh out;
    std::vector<std::array<int, 3>> faces;
    for (const auto& f : mesh.faces) {
        if (remap[static_cast<std::size_t>(f[0])] >= 0 && remap[static_cast<std::size_t>(f[1])] >= 0 &&
            remap[static_cast<std::size_t>(f[2])] >= 0) {
            faces.push_back(f);
        }
    }
    int next = 0;
    for (int v : keep) {
        remap[static_cast<std::size_t>(v)] = next++;
        out.vertices.push_back(mesh.vertices[static_cast<std::size_t>(v)]);
    }
    for (auto f : faces) {
        for (int& v : f) v = remap[static_cast<std::size_t>(v)];
        out.faces.push_back(f);
    }
    out.edges = geometry::edges_from_faces(out.faces, out.vertices.size());
    return out;
}

KnuckleModel make_knuckle(const KnuckleOptions& opt) {
    const int sectors = opt.ring_sectors;
    const int layers = opt.ring_layers;
    const int hs = opt.handle_sectors;
    const int rows = opt.handle_rows;
    if (sectors % 4 != 0 || hs % 2 != 0 || hs <= 0 || hs >= sectors / 2 || layers < 1 || rows < 5) {
        throw ConfigError("knuckle discretisation: need sectors % 4 == 0, even handle sectors, >= 5 rows");
    }
    if (!(opt.inner_radius > 0.0 && opt.outer_radius > opt.inner_radius)) {
        throw ConfigError("knuckle ring radii must satisfy 0 < inner < outer");
    }
    const double dtheta = 2.0 * std::numbers::pi / sectors;
    const int j0 = sectors / 4 - hs / 2;  // right base corner sector
    const double theta_c = j0 * dtheta;
    const double half_width = opt.outer_radius * std::cos(theta_c);
    const double base_y = opt.outer_radius * std::sin(theta_c);
    if (!(opt.handle_tip > base_y + 0.5)) throw ConfigError("handle tip must lie above the ring");

    KnuckleModel model;
    Mesh& mesh = model.mesh;
    auto ring = [&](int l, int j) { return l * sectors + ((j % sectors) + sectors) % sectors; };
    for (int l = 0; l <= layers; ++l) {
        const double r = opt.inner_radius + (opt.outer_radius - opt.inner_radius) * l / layers;
        for (int j = 0; j < sectors; ++j) {
            mesh.vertices.emplace_back(r * std::cos(j * dtheta), r * std::sin(j * dtheta), 0.0);
        }
    }
    const int handle_base = static_cast<int>(mesh.vertices.size());
    auto handle = [&](int c, int row) {
        return row == 0 ? ring(layers, j0 + c) : handle_base + (row - 1) * (hs + 1) + c;
    };
    for (int row = 1; row <= rows; ++row) {
        const double s = static_cast<double>(row) / rows;
        for (int c = 0; c <= hs; ++c) {
            const Eigen::Vector3d& base = mesh.vertices[static_cast<std::size_t>(ring(layers, j0 + c))];
            const Eigen::Vector3d tip(half_width - 2.0 * half_width * c / hs, opt.handle_tip, 0.0);
            mesh.vertices.push_back((1.0 - s) * base + s * tip);
        }
    }

    for (int l = 0; l < layers; ++l) {
        for (int j = 0; j < sectors; ++j) add_quad(mesh, ring(l, j), ring(l + 1, j), ring(l + 1, j + 1), ring(l, j + 1));
    }
    for (int row = 0; row < rows; ++row) {
        for (int c = 0; c < hs; ++c) {
            add_quad(mesh, handle(c, row), handle(c + 1, row), handle(c + 1, row + 1), handle(c, row + 1));
        }
    }
    mesh.edges = geometry::edges_from_faces(mesh.faces, mesh.vertices.size());

    LoadCase& lc = model.load_case;
    lc.youngs_modulus = opt.youngs_modulus;
    lc.poisson_ratio = opt.poisson_ratio;
    for (int j = 0; j < sectors; ++j) lc.fixed_vertex_ids.push_back(ring(0, j));
    for (int c = 0; c <= hs; ++c) {
        const double weight = (c == 0 || c == hs) ? 0.5 : 1.0;
        lc.loads.push_back({handle(c, rows), opt.tip_force * weight / hs, 0.0});
    }

    model.right_corner = mesh.vertices[static_cast<std::size_t>(handle(0, 0))];
    model.left_corner = mesh.vertices[static_cast<std::size_t>(handle(hs, 0))];

    auto pos = [&](int v) { return mesh.vertices[static_cast<std::size_t>(v)]; };
    auto radial = [&](int v) {
        Eigen::Vector3d d = pos(v);
        d.z() = 0.0;
        return Eigen::Vector3d(d.normalized());
    };
    auto control = [&](int v, const Eigen::Vector3d& dir) {
        model.controls.push_back({pos(v), {dir.normalized()}});
    };
    const Eigen::Vector3d ex = Eigen::Vector3d::UnitX();
    // loaded side (+x corner): five dofs
    control(ring(layers, j0 - 2), radial(ring(layers, j0 - 2)));
    control(handle(0, 0), radial(handle(0, 0)) + ex);
    control(handle(0, 2), ex);
    control(handle(0, 4), ex);
    control(handle(0, 6), ex);
    // opposite corner: four dofs
    control(ring(layers, j0 + hs + 2), radial(ring(layers, j0 + hs + 2)));
    control(handle(hs, 0), radial(handle(hs, 0)) - ex);
    control(handle(hs, 2), -ex);
    control(handle(hs, 4), -ex);
    model.bounds.assign(model.controls.size(), Bound{opt.displacement_lo, opt.displacement_hi});
    model.rbf_width = opt.rbf_width;

    std::vector<char> near(mesh.vertices.size(), 0);
    for (std::size_t v = 0; v < mesh.vertices.size(); ++v) {
        const double d = std::min((mesh.vertices[v] - model.right_corner).norm(),
                                  (mesh.vertices[v] - model.left_corner).norm());
        near[v] = d <= opt.joint_radius;
    }
    std::vector<char> used(mesh.vertices.size(), 0);
    for (const auto& f : mesh.faces) {
        if (near[static_cast<std::size_t>(f[0])] && near[static_cast<std::size_t>(f[1])] &&
            near[static_cast<std::size_t>(f[2])]) {
            for (int v : f) used[static_cast<std::size_t>(v)] = 1;
        }
    }
    for (std::size_t v = 0; v < used.size(); ++v) {
        if (used[v]) model.joint_vertices.push_back(static_cast<int>(v));
    }
    model.joint_mesh = submesh(mesh, model.joint_vertices);
    return model;
}

}  // namespace surfopt::knuckle
