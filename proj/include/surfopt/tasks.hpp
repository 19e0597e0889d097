#pragma once

#include <string_view>

#include "surfopt/knuckle.hpp"
#include "surfopt/optimizer.hpp"

namespace surfopt::tasks {

struct AirfoilOptions {
    int n_panels = 64;
    double alpha = kDefaultAlpha;
};

/// NACA 4-digit latent, panel-method pressure field, maximize Cl.
optimizer::Problem make_airfoil_problem(const AirfoilOptions& options = {});

/// Nine RBF dofs around the handle base. The surrogate sees the joint
/// submesh; the simulator solves the whole deformed part and reports the
/// von Mises field on the joint vertices. Minimize its maximum.
optimizer::Problem make_knuckle_problem(const knuckle::KnuckleOptions& options = {});

/// "airfoil" or "knuckle2d"; throws ConfigError otherwise.
optimizer::Problem make_problem(std::string_view name);

/// Loop and network settings tuned for each task at desk scale.
optimizer::BOConfig default_config(std::string_view name);

}  // namespace surfopt::tasks
