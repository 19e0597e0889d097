#include "surfopt/tasks.hpp"

#include <memory>

#include "surfopt/errors.hpp"

namespace surfopt::tasks {

optimizer::Problem make_airfoil_problem(const AirfoilOptions& options) {
    auto param = std::make_shared<const geometry::NacaParameterizer>(options.n_panels);
    optimizer::Problem p;
    p.name = "airfoil";
    p.param = param;
    p.bounds = param->bounds();
    p.task = {Task::airfoil_lift, options.alpha};
    p.direction = optimizer::Direction::maximize;
    p.simulate = [param, alpha = options.alpha](const Eigen::VectorXd& z) {
        return physics::panel_solve(param->mesh(z), alpha);
    };
    return p;
}

optimizer::Problem make_knuckle_problem(const knuckle::KnuckleOptions& options) {
    const knuckle::KnuckleModel km = knuckle::make_knuckle(options);
    auto joint = std::make_shared<const geometry::RbfParameterizer>(km.joint_mesh, km.controls, km.rbf_width, km.bounds);
    auto full = std::make_shared<const geometry::RbfParameterizer>(km.mesh, km.controls, km.rbf_width, km.bounds);
    optimizer::Problem p;
    p.name = "knuckle2d";
    p.param = joint;
    p.bounds = km.bounds;
    p.task = {Task::max_stress, 0.0};
    p.direction = optimizer::Direction::minimize;
    p.simulate = [joint, full, load_case = km.load_case, ids = km.joint_vertices](const Eigen::VectorXd& z) {
        const physics::FemSolution sol = physics::fem_solve(full->mesh(z), load_case);
        FieldSample s;
        s.mesh = joint->mesh(z);
        s.field.resize(static_cast<Eigen::Index>(ids.size()));
        for (std::size_t i = 0; i < ids.size(); ++i) {
            s.field[static_cast<Eigen::Index>(i)] = sol.nodal_von_mises[ids[i]];
        }
        s.task = {Task::max_stress, 0.0};
        s.performance = physics::performance(s.mesh, s.field, s.task);
        return s;
    };
    return p;
}

optimizer::Problem make_problem(std::string_view name) {
    if (name == "airfoil") return make_airfoil_problem();
    if (name == "knuckle2d" || name == "knuckle") return make_knuckle_problem();
    throw ConfigError("unknown task '" + std::string(name) + "' (expected airfoil or knuckle2d)");
}

optimizer::BOConfig default_config(std::string_view name) {
    optimizer::BOConfig c;
    c.proposals = 30;
    c.retained = 10;
    c.ga.population = 64;
    c.ga.generations = 40;
    auto& t = c.predictor.train;
    t.model.depth = 4;
    t.model.hidden_dim = 16;
    t.model.kernels = 2;
    t.learning_rate = 5e-2;
    if (name == "airfoil") {
        c.init_size = 40;
        c.iterations = 8;
        t.epochs = 150;
        t.batch_size = 4;
    } else if (name == "knuckle2d" || name == "knuckle") {
        c.init_size = 200;
        c.iterations = 10;
        t.epochs = 40;
        t.batch_size = 8;
    } else {
        throw ConfigError("unknown task '" + std::string(name) + "' (expected airfoil or knuckle2d)");
    }
    return c;
}

}  // namespace surfopt::tasks
