#pragma once

#include <numbers>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "surfopt/geometry.hpp"

namespace surfopt {

/// Performance functional R applied to a simulated or predicted field.
enum class Task { airfoil_lift, max_stress, drag };

std::string_view to_string(Task task);
/// Throws ConfigError on an unknown name.
Task task_from_string(std::string_view name);

inline constexpr double kDefaultAlpha = 4.0 * std::numbers::pi / 180.0;

struct TaskSpec {
    Task kind = Task::airfoil_lift;
    double alpha = kDefaultAlpha;  // radians, airfoil_lift only
};

/// A mesh with a per-vertex physics field and the derived performance value.
struct FieldSample {
    Mesh mesh;
    Eigen::VectorXd field;
    double performance = 0.0;
    TaskSpec task;
};

struct PointLoad {
    int vertex = 0;
    double fx = 0.0;
    double fy = 0.0;
};

/// Boundary conditions of a plane-stress problem. `fixed_vertex_ids` clamps
/// both displacement components; `fixed_x_ids` / `fixed_y_ids` are rollers.
struct LoadCase {
    std::vector<int> fixed_vertex_ids;
    std::vector<int> fixed_x_ids;
    std::vector<int> fixed_y_ids;
    std::vector<PointLoad> loads;
    double youngs_modulus = 1.0;
    double poisson_ratio = 0.3;
    double thickness = 1.0;

    /// Throws ConfigError on invalid material data or fewer than 3 constrained dofs.
    void validate(std::size_t vertex_count) const;
    LoadCase scaled(double factor) const;
};

namespace physics {

// --- potential flow ---------------------------------------------------------

/// Panel-level result of the linear-strength vortex panel method.
struct PanelSolution {
    std::vector<int> order;           // clockwise vertex traversal starting at the trailing edge
    std::vector<double> panel_cp;     // Cp at panel midpoints, panel i spans order[i] -> order[i+1]
    std::vector<double> node_cp;      // indexed by mesh vertex
    Eigen::VectorXd gamma;            // nodal vortex strengths / (2 pi V), size n + 1
    double circulation_lift = 0.0;    // Kutta-Joukowski lift coefficient from total circulation
};

PanelSolution vortex_panels(const Mesh& contour, double alpha);

/// Inviscid surface pressure on a closed contour; performance is the lift
/// coefficient obtained by integrating the nodal Cp field.
FieldSample panel_solve(const Mesh& contour, double alpha, double v_inf = 1.0);

/// Throws GeometryError if two non-adjacent panels cross.
void check_simple_contour(const Mesh& contour, std::span<const int> order);

/// Lift coefficient (unit reference chord) from a nodal pressure field.
double lift_coefficient(const Mesh& contour, const Eigen::VectorXd& cp, double alpha);

/// Midpoint-rule sum of field * (outward normal . flow_dir) * panel length.
double drag_integral(const Mesh& contour, const Eigen::VectorXd& field, const Eigen::Vector3d& flow_dir);
double drag_integral(const FieldSample& sample, const Eigen::Vector3d& flow_dir);

// --- plane stress -----------------------------------------------------------

/// von Mises equivalent stress of a plane-stress state.
double von_mises(double sxx, double syy, double txy);

struct FemSolution {
    Eigen::VectorXd displacement;            // 2|V|, (ux, uy) interleaved
    Eigen::MatrixXd element_stress;          // |F| x 3 (sxx, syy, txy)
    Eigen::VectorXd element_von_mises;       // |F|
    Eigen::VectorXd nodal_von_mises;         // |V|, area-weighted element average
};

/// Linear elasticity with constant-strain triangles.
FemSolution fem_solve(const Mesh& mesh, const LoadCase& load_case);

/// fem_solve packaged as a max-stress sample.
FieldSample fem_plane_stress(const Mesh& mesh, const LoadCase& load_case);

// --- performance functionals ------------------------------------------------

double performance(const Mesh& mesh, const Eigen::VectorXd& field, const TaskSpec& task);
double performance(const FieldSample& sample, const TaskSpec& task);

/// Gradient of performance() with respect to the field and the vertex
/// coordinates (3|V|, same layout as Parameterizer::jacobian rows).
struct PerformanceGradient {
    Eigen::VectorXd d_field;
    Eigen::VectorXd d_coords;
};
PerformanceGradient performance_gradient(const Mesh& mesh, const Eigen::VectorXd& field,
                                         const TaskSpec& task);

/// Mean Euclidean distance from z to its k nearest training latents.
double r_aux(const Eigen::VectorXd& z, std::span<const Eigen::VectorXd> training_z, int k = 5);
/// Subgradient of r_aux with respect to z.
Eigen::VectorXd r_aux_gradient(const Eigen::VectorXd& z, std::span<const Eigen::VectorXd> training_z,
                               int k = 5);

}  // namespace physics
}  // namespace surfopt
