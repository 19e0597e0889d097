#include "surfopt/uncertainty.hpp"

#include <cstring>
#include <exception>
#include <fstream>
#include <mutex>
#include <thread>

#include "json.hpp"

#include "surfopt/errors.hpp"

namespace surfopt::uncertainty {

namespace {

std::uint64_t mesh_hash(const Mesh& mesh, std::uint64_t seed) {
    std::uint64_t h = 1469598103934665603ULL ^ seed;
    for (const auto& v : mesh.vertices) {
        for (int k = 0; k < 3; ++k) {
            std::uint64_t bits = 0;
            const double x = v[k] == 0.0 ? 0.0 : v[k];  // fold -0
            std::memcpy(&bits, &x, sizeof bits);
            for (int b = 0; b < 8; ++b) {
                h ^= (bits >> (8 * b)) & 0xffU;
                h *= 1099511628211ULL;
            }
        }
    }
    return h;
}

Mesh featured(const Mesh& mesh, int sinusoids) {
    Mesh m = mesh;
    if (m.sinusoids != sinusoids) geometry::build_features(m, sinusoids);
    return m;
}

}  // namespace

std::string_view to_string(Mode mode) { return mode == Mode::ensemble ? "ensemble" : "mc_dropout"; }

Mode mode_from_string(std::string_view name) {
    if (name == "ensemble" || name == "ens") return Mode::ensemble;
    if (name == "mc_dropout" || name == "mcd") return Mode::mc_dropout;
    throw ConfigError("unknown predictor mode '" + std::string(name) + "'");
}

void PredictorConfig::validate() const {
    train.validate();
    if (jobs < 1) throw ConfigError("jobs must be >= 1");
    if (mode == Mode::ensemble) {
        if (members < 2) throw ConfigError("an ensemble needs at least 2 members");
    } else {
        if (passes < 2) throw ConfigError("MC-dropout needs at least 2 passes");
        if (!(dropout_rate > 0.0 && dropout_rate < 1.0)) throw ConfigError("MC-dropout needs a dropout rate in (0, 1)");
    }
}

Stats estimate_stats(std::span<const double> estimates) {
    if (estimates.size() < 2) throw ConfigError("variance needs at least two estimates");
    double mean = 0.0;
    double m2 = 0.0;
    double n = 0.0;
    for (double x : estimates) {
        n += 1.0;
        const double delta = x - mean;
        mean += delta / n;
        m2 += delta * (x - mean);
    }
    Stats s;
    s.mu = mean;
    s.sigma2 = std::max(m2 / (n - 1.0), 0.0);
    return s;
}

void parallel_for(int count, int jobs, const std::function<void(int)>& fn) {
    if (count <= 0) return;
    const int workers = std::max(1, std::min(jobs, count));
    std::vector<std::exception_ptr> errors(static_cast<std::size_t>(count));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) {
            try {
                fn(i);
            } catch (...) {
                errors[static_cast<std::size_t>(i)] = std::current_exception();
            }
        }
    } else {
        std::mutex mu;
        int next = 0;
        auto worker = [&] {
            for (;;) {
                int i = 0;
                {
                    std::lock_guard lock(mu);
                    if (next >= count) return;
                    i = next++;
                }
                try {
                    fn(i);
                } catch (...) {
                    errors[static_cast<std::size_t>(i)] = std::current_exception();
                }
            }
        };
        std::vector<std::thread> pool;
        for (int w = 0; w < workers; ++w) pool.emplace_back(worker);
        for (auto& t : pool) t.join();
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
}

UncertainPredictor::UncertainPredictor(Mode mode, std::vector<surrogate::SurrogateModel> members, int passes,
                                       TaskSpec task)
    : mode_(mode), members_(std::move(members)), passes_(passes), task_(task) {
    if (mode_ == Mode::ensemble && members_.size() < 2) throw ConfigError("an ensemble needs at least 2 members");
    if (mode_ == Mode::mc_dropout) {
        if (members_.size() != 1) throw ConfigError("MC-dropout predictor holds exactly one model");
        if (passes_ < 2) throw ConfigError("MC-dropout needs at least 2 passes");
        if (!(members_.front().config().dropout_rate > 0.0)) throw ConfigError("MC-dropout model has dropout rate 0");
    }
}

std::vector<double> UncertainPredictor::estimates(const Mesh& mesh, Eigen::VectorXd* field_mean) const {
    if (members_.empty()) throw ConfigError("predictor has no members");
    const Mesh m = featured(mesh, members_.front().config().sinusoids);
    std::vector<double> out;
    Eigen::VectorXd sum = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(m.vertices.size()));
    auto add = [&](const Eigen::VectorXd& field) {
        out.push_back(physics::performance(m, field, task_));
        sum += field;
    };
    if (mode_ == Mode::ensemble) {
        for (const auto& model : members_) add(surrogate::forward(model, m));
    } else {
        const auto& model = members_.front();
        std::mt19937_64 rng(mesh_hash(m, model.config().seed));
        for (int t = 0; t < passes_; ++t) add(surrogate::forward(model, m, true, &rng));
    }
    if (field_mean != nullptr) *field_mean = sum / static_cast<double>(out.size());
    return out;
}

Stats UncertainPredictor::predict_mesh(const Mesh& mesh) const {
    Eigen::VectorXd field;
    const std::vector<double> est = estimates(mesh, &field);
    Stats s = estimate_stats(est);
    s.field_mean = std::move(field);
    return s;
}

Stats UncertainPredictor::predict_stats(const Eigen::VectorXd& z, const Parameterizer& param) const {
    check_in_bounds(z, param.bounds());
    return predict_mesh(param.mesh(z));
}

Eigen::VectorXd performance_coord_gradient(const surrogate::SurrogateModel& model, const Mesh& mesh,
                                           const TaskSpec& task, double* value) {
    const Mesh m = featured(mesh, model.config().sinusoids);
    const Eigen::VectorXd field = surrogate::forward(model, m);
    const physics::PerformanceGradient pg = physics::performance_gradient(m, field, task);
    const surrogate::InputGradient ig = surrogate::input_gradient(model, m, pg.d_field);
    if (value != nullptr) *value = physics::performance(m, field, task);
    return geometry::feature_vjp(m, ig.d_node, ig.d_edge) + pg.d_coords;
}

double UncertainPredictor::mean_gradient(const Eigen::VectorXd& z, const Parameterizer& param,
                                         Eigen::VectorXd& grad) const {
    const Mesh mesh = param.mesh(z);
    const Eigen::MatrixXd jac = param.jacobian(z);
    grad = Eigen::VectorXd::Zero(z.size());
    double mean = 0.0;
    for (const auto& model : members_) {
        double v = 0.0;
        const Eigen::VectorXd g = performance_coord_gradient(model, mesh, task_, &v);
        grad += jac.transpose() * g;
        mean += v;
    }
    grad /= static_cast<double>(members_.size());
    return mean / static_cast<double>(members_.size());
}

UncertainPredictor fit(std::span<const FieldSample> dataset, const PredictorConfig& cfg) {
    cfg.validate();
    if (dataset.empty()) throw InsufficientDataError("cannot fit a predictor on an empty dataset");
    if (cfg.mode == Mode::mc_dropout) {
        surrogate::TrainConfig tc = cfg.train;
        tc.model.dropout_rate = cfg.dropout_rate;
        std::vector<surrogate::SurrogateModel> one;
        one.push_back(surrogate::train(dataset, tc).model);
        return UncertainPredictor(Mode::mc_dropout, std::move(one), cfg.passes, cfg.task);
    }
    std::vector<surrogate::SurrogateModel> members(static_cast<std::size_t>(cfg.members));
    parallel_for(cfg.members, cfg.jobs, [&](int i) {
        surrogate::TrainConfig tc = cfg.train;
        tc.model.seed = cfg.train.model.seed + static_cast<std::uint64_t>(i);
        try {
            members[static_cast<std::size_t>(i)] = surrogate::train(dataset, tc).model;
        } catch (const DivergenceError& e) {
            throw DivergenceError("ensemble member " + std::to_string(i) + ": " + e.what(), e.epoch());
        }
    });
    return UncertainPredictor(Mode::ensemble, std::move(members), 0, cfg.task);
}

void save_predictor(const UncertainPredictor& p, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    nlohmann::json manifest = {
        {"format", "surfopt-predictor"},
        {"version", 1},
        {"mode", to_string(p.mode())},
        {"members", p.members().size()},
        {"passes", p.passes()},
        {"task", to_string(p.task().kind)},
        {"alpha", p.task().alpha},
    };
    for (std::size_t i = 0; i < p.members().size(); ++i) {
        surrogate::save_model(p.members()[i], dir / ("member_" + std::to_string(i) + ".bin"));
    }
    std::ofstream os(dir / "manifest.json");
    os << manifest.dump(2) << '\n';
    if (!os) throw Error("failed writing predictor manifest in '" + dir.string() + "'");
}

UncertainPredictor load_predictor(const std::filesystem::path& dir) {
    std::ifstream is(dir / "manifest.json");
    if (!is) throw Error("no manifest.json in '" + dir.string() + "'");
    nlohmann::json manifest;
    try {
        is >> manifest;
        if (manifest.at("format").get<std::string>() != "surfopt-predictor") {
            throw CorruptFileError("not a predictor manifest");
        }
        if (manifest.at("version").get<int>() != 1) throw VersionError("unsupported predictor manifest version");
        const Mode mode = mode_from_string(manifest.at("mode").get<std::string>());
        const auto count = manifest.at("members").get<std::size_t>();
        std::vector<surrogate::SurrogateModel> members;
        for (std::size_t i = 0; i < count; ++i) {
            members.push_back(surrogate::load_model(dir / ("member_" + std::to_string(i) + ".bin")));
        }
        TaskSpec task;
        task.kind = task_from_string(manifest.at("task").get<std::string>());
        task.alpha = manifest.at("alpha").get<double>();
        return UncertainPredictor(mode, std::move(members), manifest.at("passes").get<int>(), task);
    } catch (const nlohmann::json::exception& e) {
        throw CorruptFileError(std::string("bad predictor manifest: ") + e.what());
    }
}

}  // namespace surfopt::uncertainty
