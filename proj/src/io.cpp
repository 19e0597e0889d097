#include "surfopt/io.hpp"

#include <charconv>
#include <chrono>
#include <ctime>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "surfopt/errors.hpp"

namespace surfopt::io {

namespace {

json matrix_rows(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index k = 0; k < m.cols(); ++k) row.push_back(m(i, k));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd rows_matrix(const json& rows, const char* what) {
    if (!rows.is_array()) throw CorruptFileError(std::string(what) + " must be an array of rows");
    if (rows.empty()) return {};
    const std::size_t cols = rows.front().size();
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (!rows[i].is_array() || rows[i].size() != cols) throw CorruptFileError(std::string(what) + " rows differ in length");
        for (std::size_t k = 0; k < cols; ++k) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k].get<double>();
    }
    return m;
}

// Reads keys from an object, rejecting unknown ones.
class Reader {
public:
    Reader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw ConfigError(where_ + " must be an object");
    }
    template <class T>
    void get(const char* key, T& out) {
        seen_.insert(key);
        if (!j_.contains(key)) return;
        try {
            out = j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(where_ + "." + key + ": " + e.what());
        }
    }
    const json* sub(const char* key) {
        seen_.insert(key);
        return j_.contains(key) ? &j_.at(key) : nullptr;
    }
    void finish() const {
        for (const auto& item : j_.items()) {
            if (!seen_.count(item.key())) throw ConfigError("unknown config key " + where_ + "." + item.key());
        }
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> seen_;
};

std::string timestamp() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    std::ostringstream os;
    os << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return os.str();
}

json vec(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

}  // namespace

json mesh_to_json(const Mesh& mesh) {
    json j;
    json verts = json::array();
    for (const auto& v : mesh.vertices) verts.push_back({v.x(), v.y(), v.z()});
    j["vertices"] = std::move(verts);
    j["edges"] = mesh.edges;
    if (!mesh.faces.empty()) j["faces"] = mesh.faces;
    if (mesh.has_features()) {
        j["sinusoids"] = mesh.sinusoids;
        j["node_attrs"] = matrix_rows(mesh.node_attrs);
        j["edge_attrs"] = matrix_rows(mesh.edge_attrs);
    }
    return j;
}

Mesh mesh_from_json(const json& j) {
    Mesh m;
    try {
        for (const auto& v : j.at("vertices")) {
            if (v.size() != 3) throw CorruptFileError("vertex needs 3 coordinates");
            m.vertices.emplace_back(v[0].get<double>(), v[1].get<double>(), v[2].get<double>());
        }
        m.edges = j.at("edges").get<std::vector<std::array<int, 2>>>();
        if (j.contains("faces")) m.faces = j.at("faces").get<std::vector<std::array<int, 3>>>();
        if (j.contains("node_attrs")) {
            m.node_attrs = rows_matrix(j.at("node_attrs"), "node_attrs");
            m.edge_attrs = rows_matrix(j.at("edge_attrs"), "edge_attrs");
            m.sinusoids = j.contains("sinusoids") ? j.at("sinusoids").get<int>()
                                                  : static_cast<int>((m.node_attrs.cols() - 3) / 3);
            if (m.node_attrs.rows() != static_cast<Eigen::Index>(m.vertices.size()) ||
                m.edge_attrs.rows() != static_cast<Eigen::Index>(m.edges.size()) ||
                m.node_attrs.cols() != geometry::node_feature_dim(m.sinusoids)) {
                throw CorruptFileError("mesh attributes do not match the mesh");
            }
        }
    } catch (const json::exception& e) {
        throw CorruptFileError(std::string("malformed mesh JSON: ") + e.what());
    }
    try {
        geometry::check_mesh(m);
    } catch (const GeometryError& e) {
        throw CorruptFileError(std::string("invalid mesh: ") + e.what());
    }
    return m;
}

json sample_to_json(const FieldSample& s) {
    json j = mesh_to_json(s.mesh);
    j["field"] = vec(s.field);
    j["performance"] = s.performance;
    j["task"] = std::string(to_string(s.task.kind));
    if (s.task.kind == Task::airfoil_lift) j["alpha"] = s.task.alpha;
    return j;
}

FieldSample sample_from_json(const json& j) {
    FieldSample s;
    s.mesh = mesh_from_json(j);
    try {
        const auto f = j.at("field").get<std::vector<double>>();
        s.field = Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size()));
        s.performance = j.at("performance").get<double>();
        s.task.kind = task_from_string(j.at("task").get<std::string>());
        if (j.contains("alpha")) s.task.alpha = j.at("alpha").get<double>();
    } catch (const json::exception& e) {
        throw CorruptFileError(std::string("malformed sample JSON: ") + e.what());
    } catch (const ConfigError& e) {
        throw CorruptFileError(std::string("malformed sample JSON: ") + e.what());
    }
    if (s.field.size() != static_cast<Eigen::Index>(s.mesh.vertices.size())) {
        throw CorruptFileError("sample field length differs from its vertex count");
    }
    return s;
}

json load_case_to_json(const LoadCase& lc) {
    json loads = json::array();
    for (const auto& l : lc.loads) loads.push_back({{"vertex", l.vertex}, {"force", {l.fx, l.fy}}});
    return {{"fixed_vertex_ids", lc.fixed_vertex_ids},
            {"fixed_x_ids", lc.fixed_x_ids},
            {"fixed_y_ids", lc.fixed_y_ids},
            {"loads", loads},
            {"youngs_modulus", lc.youngs_modulus},
            {"poisson_ratio", lc.poisson_ratio},
            {"thickness", lc.thickness}};
}

LoadCase load_case_from_json(const json& j) {
    LoadCase lc;
    try {
        lc.fixed_vertex_ids = j.at("fixed_vertex_ids").get<std::vector<int>>();
        if (j.contains("fixed_x_ids")) lc.fixed_x_ids = j.at("fixed_x_ids").get<std::vector<int>>();
        if (j.contains("fixed_y_ids")) lc.fixed_y_ids = j.at("fixed_y_ids").get<std::vector<int>>();
        for (const auto& l : j.at("loads")) {
            const auto f = l.at("force").get<std::array<double, 2>>();
            lc.loads.push_back({l.at("vertex").get<int>(), f[0], f[1]});
        }
        lc.youngs_modulus = j.at("youngs_modulus").get<double>();
        lc.poisson_ratio = j.at("poisson_ratio").get<double>();
        if (j.contains("thickness")) lc.thickness = j.at("thickness").get<double>();
    } catch (const json::exception& e) {
        throw CorruptFileError(std::string("malformed load case JSON: ") + e.what());
    }
    return lc;
}

json read_json(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open '" + path.string() + "'");
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw CorruptFileError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot open '" + path.string() + "' for writing");
    os << text;
    if (!os) throw Error("failed writing '" + path.string() + "'");
}

void write_json(const std::filesystem::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

std::string format_double(double x) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, x);
    return std::string(buf, res.ptr);
}

// ---------------------------------------------------------------------------
// BOConfig

json bo_config_to_json(const optimizer::BOConfig& c) {
    const auto& t = c.predictor.train;
    const auto& m = t.model;
    return {
        {"init_size", c.init_size},
        {"iterations", c.iterations},
        {"proposals", c.proposals},
        {"retained", c.retained},
        {"ga",
         {{"population", c.ga.population},
          {"generations", c.ga.generations},
          {"mutation_sigma", c.ga.mutation_sigma},
          {"tournament_size", c.ga.tournament_size},
          {"blend_alpha", c.ga.blend_alpha},
          {"seed", c.ga.seed}}},
        {"gradient",
         {{"enabled", c.gradient.enabled},
          {"steps", c.gradient.steps},
          {"step_size", c.gradient.step_size},
          {"starts", c.gradient.starts}}},
        {"lambda", c.lambda},
        {"k_aux", c.k_aux},
        {"epsilon", c.epsilon},
        {"seed", c.seed},
        {"target", c.target ? json(*c.target) : json(nullptr)},
        {"jobs", c.jobs},
        {"predictor",
         {{"mode", std::string(uncertainty::to_string(c.predictor.mode))},
          {"members", c.predictor.members},
          {"passes", c.predictor.passes},
          {"dropout_rate", c.predictor.dropout_rate},
          {"train",
           {{"epochs", t.epochs},
            {"learning_rate", t.learning_rate},
            {"final_lr_fraction", t.final_lr_fraction},
            {"batch_size", t.batch_size},
            {"beta1", t.beta1},
            {"beta2", t.beta2},
            {"adam_epsilon", t.adam_epsilon},
            {"normalize_inputs", t.normalize_inputs},
            {"model",
             {{"sinusoids", m.sinusoids},
              {"hidden_dim", m.hidden_dim},
              {"depth", m.depth},
              {"kernels", m.kernels},
              {"dropout_rate", m.dropout_rate},
              {"seed", m.seed},
              {"center_transform", m.center_transform}}}}}}},
    };
}

optimizer::BOConfig bo_config_from_json(const json& j, optimizer::BOConfig c) {
    Reader r(j, "config");
    r.get("init_size", c.init_size);
    r.get("iterations", c.iterations);
    r.get("proposals", c.proposals);
    r.get("retained", c.retained);
    if (const json* ga = r.sub("ga")) {
        Reader g(*ga, "config.ga");
        g.get("population", c.ga.population);
        g.get("generations", c.ga.generations);
        g.get("mutation_sigma", c.ga.mutation_sigma);
        g.get("tournament_size", c.ga.tournament_size);
        g.get("blend_alpha", c.ga.blend_alpha);
        g.get("seed", c.ga.seed);
        g.finish();
    }
    if (const json* gr = r.sub("gradient")) {
        Reader g(*gr, "config.gradient");
        g.get("enabled", c.gradient.enabled);
        g.get("steps", c.gradient.steps);
        g.get("step_size", c.gradient.step_size);
        g.get("starts", c.gradient.starts);
        g.finish();
    }
    r.get("lambda", c.lambda);
    r.get("k_aux", c.k_aux);
    r.get("epsilon", c.epsilon);
    r.get("seed", c.seed);
    if (const json* t = r.sub("target")) {
        if (t->is_null()) {
            c.target.reset();
        } else if (t->is_number()) {
            c.target = t->get<double>();
        } else {
            throw ConfigError("config.target must be a number or null");
        }
    }
    r.get("jobs", c.jobs);
    if (const json* p = r.sub("predictor")) {
        Reader pr(*p, "config.predictor");
        std::string mode(uncertainty::to_string(c.predictor.mode));
        pr.get("mode", mode);
        c.predictor.mode = uncertainty::mode_from_string(mode);
        pr.get("members", c.predictor.members);
        pr.get("passes", c.predictor.passes);
        pr.get("dropout_rate", c.predictor.dropout_rate);
        if (const json* t = pr.sub("train")) {
            auto& tc = c.predictor.train;
            Reader tr(*t, "config.predictor.train");
            tr.get("epochs", tc.epochs);
            tr.get("learning_rate", tc.learning_rate);
            tr.get("final_lr_fraction", tc.final_lr_fraction);
            tr.get("batch_size", tc.batch_size);
            tr.get("beta1", tc.beta1);
            tr.get("beta2", tc.beta2);
            tr.get("adam_epsilon", tc.adam_epsilon);
            tr.get("normalize_inputs", tc.normalize_inputs);
            if (const json* m = tr.sub("model")) {
                Reader mr(*m, "config.predictor.train.model");
                mr.get("sinusoids", tc.model.sinusoids);
                mr.get("hidden_dim", tc.model.hidden_dim);
                mr.get("depth", tc.model.depth);
                mr.get("kernels", tc.model.kernels);
                mr.get("dropout_rate", tc.model.dropout_rate);
                mr.get("seed", tc.model.seed);
                mr.get("center_transform", tc.model.center_transform);
                mr.finish();
            }
            tr.finish();
        }
        pr.finish();
    }
    r.finish();
    return c;
}

// ---------------------------------------------------------------------------
// run artifacts

std::string metrics_csv(const optimizer::RunHistory& h, bool wall_clock) {
    std::string out = "iteration,sim_calls,best_r,mean_EI_retained,wall_ms\n";
    for (const auto& rec : h.records) {
        out += std::to_string(rec.iteration) + "," + std::to_string(rec.sim_calls) + "," + format_double(rec.best_r) +
               "," + format_double(rec.mean_acquisition) + "," + (wall_clock ? format_double(rec.wall_ms) : "0") + "\n";
    }
    return out;
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw Error("cannot open '" + path.string() + "'");
    std::string line;
    if (!std::getline(is, line) || line.rfind("iteration,sim_calls,best_r", 0) != 0) {
        throw CorruptFileError("'" + path.string() + "' is not a metrics file");
    }
    std::vector<MetricsRow> rows;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        std::vector<std::string> cells;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (cells.size() != 5) throw CorruptFileError("bad metrics row: " + line);
        MetricsRow row;
        try {
            row.iteration = std::stoi(cells[0]);
            row.sim_calls = std::stoi(cells[1]);
            row.best_r = std::stod(cells[2]);
            row.mean_ei = std::stod(cells[3]);
            row.wall_ms = std::stod(cells[4]);
        } catch (const std::exception&) {
            throw CorruptFileError("bad metrics row: " + line);
        }
        rows.push_back(row);
    }
    if (rows.empty()) throw CorruptFileError("'" + path.string() + "' has no rows");
    return rows;
}

void write_run(const std::filesystem::path& dir, const optimizer::RunHistory& h, const optimizer::BOConfig& cfg,
               const optimizer::Problem& problem, bool wall_clock) {
    std::filesystem::create_directories(dir);
    write_text(dir / "metrics.csv", metrics_csv(h, wall_clock));

    json iterations = json::array();
    for (const auto& rec : h.records) {
        json retained = json::array();
        for (std::size_t i = 0; i < rec.retained_z.size(); ++i) {
            json item = {{"z", vec(rec.retained_z[i])}};
            item["r"] = std::isfinite(rec.retained_r[i]) ? json(rec.retained_r[i]) : json(nullptr);
            if (i < rec.acquisition.size()) item["acquisition"] = rec.acquisition[i];
            retained.push_back(std::move(item));
        }
        iterations.push_back({{"iteration", rec.iteration},
                              {"sim_calls", rec.sim_calls},
                              {"best_r", rec.best_r},
                              {"wall_ms", rec.wall_ms},
                              {"retained", std::move(retained)}});
    }
    json failures = json::array();
    for (const auto& f : h.failures) {
        failures.push_back({{"iteration", f.iteration}, {"z", vec(f.z)}, {"error", f.message}});
    }
    json bounds = json::array();
    for (const auto& b : problem.bounds) bounds.push_back({b.lo, b.hi});
    const json manifest = {
        {"version", kVersion},
        {"created", timestamp()},
        {"method", h.method},
        {"task", problem.name},
        {"direction", std::string(optimizer::to_string(problem.direction))},
        {"bounds", bounds},
        {"seed", cfg.seed},
        {"config", bo_config_to_json(cfg)},
        {"sim_calls", h.sim_calls()},
        {"best_r", h.best_r},
        {"best_z", vec(h.best_z)},
        {"iterations", std::move(iterations)},
        {"failures", std::move(failures)},
    };
    write_json(dir / "manifest.json", manifest);

    if (problem.param) {
        for (const auto& rec : h.records) {
            std::ostringstream name;
            name << "iter_" << std::setw(3) << std::setfill('0') << rec.iteration;
            const auto sub = dir / "shapes" / name.str();
            for (std::size_t i = 0; i < rec.retained_z.size(); ++i) {
                std::ostringstream file;
                file << "shape_" << std::setw(2) << std::setfill('0') << i << ".json";
                write_text(sub / file.str(), mesh_to_json(problem.param->mesh(rec.retained_z[i])).dump() + "\n");
            }
        }
    }
}

}  // namespace surfopt::io
