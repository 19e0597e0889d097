#pragma once

#include <vector>

#include "surfopt/geometry.hpp"
#include "surfopt/physics.hpp"

namespace surfopt::knuckle {

/// Ring with a straight handle along +y. The inner circle is clamped and a
/// horizontal force acts on the handle tip.
struct KnuckleOptions {
    double inner_radius = 1.0;
    double outer_radius = 2.0;
    double handle_tip = 6.0;        // y of the tip edge
    int ring_sectors = 72;          // angular divisions of the ring
    int ring_layers = 6;            // radial divisions of the ring
    int handle_sectors = 6;         // ring sectors covered by the handle base
    int handle_rows = 16;           // divisions from handle base to tip
    double tip_force = 1.0;         // total horizontal force on the tip
    double youngs_modulus = 1.0;
    double poisson_ratio = 0.3;
    double joint_radius = 0.9;      // vertices this close to a base corner form the joint
    double rbf_width = 0.45;
    double displacement_lo = -0.1;
    double displacement_hi = 0.25;
};

struct KnuckleModel {
    Mesh mesh;                        // full triangulation
    LoadCase load_case;
    std::vector<int> joint_vertices;  // full-mesh ids of the joint submesh vertices
    Mesh joint_mesh;                  // joint triangles, vertices renumbered
    std::vector<geometry::RbfControl> controls;
    Bounds bounds;
    double rbf_width = 0.0;
    Eigen::Vector3d right_corner = Eigen::Vector3d::Zero();
    Eigen::Vector3d left_corner = Eigen::Vector3d::Zero();
};

/// Builds the base geometry with nine single-dof controls around the two
/// handle-base corners, each moving along the local outward normal.
KnuckleModel make_knuckle(const KnuckleOptions& options = {});

/// Triangles whose vertices all lie in `keep`, renumbered, with edges rebuilt.
Mesh submesh(const Mesh& mesh, const std::vector<int>& keep);

}  // namespace surfopt::knuckle
