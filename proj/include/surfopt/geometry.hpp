#pragma once

#include <array>
#include <memory>
#include <span>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

namespace surfopt {

/// Shape discretization shared by contour (2D panel) and triangulated (FEM)
/// meshes. 2D shapes live in the z = 0 plane.
///
/// `edges` holds directed pairs and is kept symmetric: (i, j) present implies
/// (j, i) present. `node_attrs` / `edge_attrs` are empty until
/// geometry::build_features() fills them.
struct Mesh {
    std::vector<Eigen::Vector3d> vertices;
    std::vector<std::array<int, 2>> edges;
    std::vector<std::array<int, 3>> faces;
    Eigen::MatrixXd node_attrs;  // |V| x (3 + 3A)
    Eigen::MatrixXd edge_attrs;  // |E| x 3
    int sinusoids = -1;          // A used for node_attrs, -1 when not built

    std::size_t vertex_count() const { return vertices.size(); }
    bool has_features() const { return sinusoids >= 0; }
};

struct Bound {
    double lo = 0.0;
    double hi = 0.0;
    double width() const { return hi - lo; }
};
using Bounds = std::vector<Bound>;

/// A latent shape code together with the box it must live in.
struct LatentVector {
    Eigen::VectorXd values;
    Bounds bounds;

    /// Throws BoundsError when a coordinate is outside its box or d < 1.
    void validate() const;
};

/// Throws BoundsError unless lo <= z_i <= hi for every coordinate.
void check_in_bounds(const Eigen::VectorXd& z, const Bounds& bounds);
/// Throws ConfigError when any lo > hi or the box is empty.
void check_bounds(const Bounds& bounds);
Eigen::VectorXd clip_to_bounds(Eigen::VectorXd z, const Bounds& bounds);

/// Differentiable shape map z -> mesh. Implementations are deterministic and
/// immutable, so one instance may be shared across threads.
class Parameterizer {
public:
    virtual ~Parameterizer() = default;

    virtual std::string_view kind() const = 0;
    virtual const Bounds& bounds() const = 0;
    std::size_t dim() const { return bounds().size(); }

    /// Mesh for latent z (connectivity is independent of z).
    virtual Mesh mesh(const Eigen::VectorXd& z) const = 0;

    /// d(vertex coordinates)/dz, rows laid out as 3*v + axis.
    virtual Eigen::MatrixXd jacobian(const Eigen::VectorXd& z) const = 0;
};

namespace geometry {

// --- NACA 4-digit -----------------------------------------------------------

/// z = (max camber m, camber position p, thickness t).
const Bounds& naca_bounds();

/// Half thickness of the closed-trailing-edge 4-digit section at chord station x.
double naca_half_thickness(double thickness, double x);

/// Mean camber line height and slope at chord station x.
struct CamberPoint {
    double height = 0.0;
    double slope = 0.0;
};
CamberPoint naca_camber(double max_camber, double position, double x);

/// Closed counter-clockwise contour with n_panels vertices starting at the
/// trailing edge (vertex 0), upper surface first, cosine-spaced along the chord.
Mesh naca_contour(const Eigen::VectorXd& z, int n_panels);

class NacaParameterizer final : public Parameterizer {
public:
    explicit NacaParameterizer(int n_panels);

    std::string_view kind() const override { return "naca4"; }
    const Bounds& bounds() const override { return naca_bounds(); }
    Mesh mesh(const Eigen::VectorXd& z) const override;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& z) const override;

    int panel_count() const { return n_panels_; }

private:
    int n_panels_;
};

// --- RBF deformation --------------------------------------------------------

/// One interpolation centre. Each entry of `directions` is one latent degree
/// of freedom moving the centre along that direction; a centre with no
/// directions is an anchor held at zero displacement.
struct RbfControl {
    Eigen::Vector3d position = Eigen::Vector3d::Zero();
    std::vector<Eigen::Vector3d> directions;
};

/// Controls with two in-plane dofs each (x then y), i.e. d = 2 * count.
std::vector<RbfControl> planar_controls(std::span<const Eigen::Vector3d> positions);

std::size_t rbf_dof_count(std::span<const RbfControl> controls);

/// Gaussian kernel exp(-r^2 / width^2).
double rbf_kernel(double r, double width);

/// Deforms `base` by the Gaussian-RBF interpolant of the control displacements
/// packed in z. Connectivity is copied unchanged; features are not rebuilt.
Mesh rbf_deform(const Mesh& base, const Eigen::VectorXd& z,
                std::span<const RbfControl> controls, double width);

class RbfParameterizer final : public Parameterizer {
public:
    RbfParameterizer(Mesh base, std::vector<RbfControl> controls, double width, Bounds bounds);

    std::string_view kind() const override { return "rbf_deform"; }
    const Bounds& bounds() const override { return bounds_; }
    Mesh mesh(const Eigen::VectorXd& z) const override;
    Eigen::MatrixXd jacobian(const Eigen::VectorXd& z) const override;

    const Mesh& base_mesh() const { return base_; }
    const std::vector<RbfControl>& controls() const { return controls_; }
    double width() const { return width_; }

    /// Displacement of an arbitrary point (used to deform companion meshes
    /// consistently with the parameterized one).
    Eigen::Vector3d displacement(const Eigen::Vector3d& point, const Eigen::VectorXd& z) const;

private:
    Eigen::MatrixXd control_displacements(const Eigen::VectorXd& z) const;

    Mesh base_;
    std::vector<RbfControl> controls_;
    double width_;
    Bounds bounds_;
    Eigen::LLT<Eigen::MatrixXd> kernel_factor_;
    Eigen::MatrixXd vertex_weights_;  // |V| x C, kernel rows times inverse control matrix
    std::vector<int> dof_owner_;
};

// --- graph features ---------------------------------------------------------

inline constexpr int kDefaultSinusoids = 4;

inline int node_feature_dim(int sinusoids) { return 3 + 3 * sinusoids; }

/// Fills node_attrs with (x, y, z, sin(a x), sin(a y), sin(a z))_{a=1..A} and
/// edge_attrs with coords(dst) - coords(src).
void build_features(Mesh& mesh, int sinusoids);

/// Pulls gradients on node/edge attributes back to the vertex coordinates.
/// Returns a 3|V| vector laid out like Parameterizer::jacobian rows.
Eigen::VectorXd feature_vjp(const Mesh& mesh, const Eigen::MatrixXd& d_node,
                            const Eigen::MatrixXd& d_edge);

// --- topology helpers -------------------------------------------------------

/// Symmetric edge list of the closed cycle 0 -> 1 -> ... -> n-1 -> 0.
std::vector<std::array<int, 2>> cycle_edges(int n);

/// Symmetric, de-duplicated edge list of a triangulation.
std::vector<std::array<int, 2>> edges_from_faces(std::span<const std::array<int, 3>> faces,
                                                 std::size_t vertex_count);

/// Vertex order of a contour mesh traversed counter-clockwise.
/// Throws GeometryError unless the edges form one closed cycle.
std::vector<int> contour_cycle(const Mesh& mesh);

double signed_area(const Mesh& mesh, std::span<const int> order);

/// Throws GeometryError on out-of-range indices or a non-symmetric edge set.
void check_mesh(const Mesh& mesh);

}  // namespace geometry
}  // namespace surfopt
