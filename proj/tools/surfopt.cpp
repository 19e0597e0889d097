// surfopt command-line front end.
#include <algorithm>
#include <cmath>
#include <filesystem>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "surfopt/baselines.hpp"
#include "surfopt/errors.hpp"
#include "surfopt/io.hpp"
#include "surfopt/log.hpp"
#include "surfopt/tasks.hpp"
#include "surfopt/uncertainty.hpp"

namespace fs = std::filesystem;
using namespace surfopt;
using io::json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 2;
constexpr int kExitUsage = 64;
constexpr int kExitInternal = 70;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const std::vector<std::string> kTasks = {"airfoil", "knuckle2d"};
const std::vector<std::string> kMethods = {"ens", "mcd", "krig", "gnn", "random"};

void check_choice(const std::string& value, const std::vector<std::string>& allowed, const char* what) {
    if (std::find(allowed.begin(), allowed.end(), value) == allowed.end()) {
        std::string msg = std::string("invalid ") + what + " '" + value + "' (expected one of";
        for (const auto& a : allowed) msg += " " + a;
        throw UsageError(msg + ")");
    }
}

optimizer::BOConfig load_config(const std::string& task, const std::string& path) {
    optimizer::BOConfig cfg = tasks::default_config(task);
    if (!path.empty()) cfg = io::bo_config_from_json(io::read_json(path), cfg);
    return cfg;
}

// ---------------------------------------------------------------------------

struct GenDataArgs {
    std::string task;
    int n = 200;
    std::uint64_t seed = 0;
    std::string out;
    int jobs = 1;
};

int cmd_gen_data(const GenDataArgs& a) {
    check_choice(a.task, kTasks, "task");
    if (a.n < 1) throw UsageError("--n must be >= 1");
    const optimizer::Problem problem = tasks::make_problem(a.task);
    std::mt19937_64 rng(a.seed);
    const auto zs = optimizer::latin_hypercube(a.n, problem.bounds, rng);
    std::vector<FieldSample> samples(zs.size());
    std::vector<std::string> errors(zs.size());
    uncertainty::parallel_for(a.n, a.jobs, [&](int i) {
        const auto k = static_cast<std::size_t>(i);
        try {
            samples[k] = problem.simulate(zs[k]);
        } catch (const std::exception& e) {
            errors[k] = e.what();
            if (errors[k].empty()) errors[k] = "simulation failed";
        }
    });

    const fs::path out(a.out);
    fs::create_directories(out);
    json index = {{"task", a.task}, {"n", a.n}, {"seed", a.seed}, {"samples", json::array()}};
    json failures = json::array();
    int ok = 0;
    for (std::size_t i = 0; i < zs.size(); ++i) {
        const std::vector<double> z(zs[i].data(), zs[i].data() + zs[i].size());
        if (!errors[i].empty()) {
            failures.push_back({{"index", i}, {"z", z}, {"error", errors[i]}});
            continue;
        }
        std::ostringstream name;
        name << "sample_" << std::setw(4) << std::setfill('0') << i << ".json";
        io::write_text(out / name.str(), io::sample_to_json(samples[i]).dump() + "\n");
        index["samples"].push_back({{"file", name.str()}, {"z", z}, {"performance", samples[i].performance}});
        ++ok;
    }
    io::write_json(out / "index.json", index);
    io::write_json(out / "failures.json", failures);
    std::cout << "wrote " << ok << " of " << a.n << " samples to " << out.string() << "\n";
    return 10 * ok >= 9 * a.n ? kExitOk : kExitPartial;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
    std::string dataset;
    std::string config;
    std::string out;
    std::string method = "ens";
    std::optional<std::uint64_t> seed;
    int jobs = 1;
};

int cmd_train(const TrainArgs& a) {
    check_choice(a.method, {"ens", "mcd", "gnn"}, "method");
    const fs::path dir(a.dataset);
    const json index = io::read_json(dir / "index.json");
    std::string task;
    try {
        task = index.at("task").get<std::string>();
    } catch (const json::exception& e) {
        throw CorruptFileError(std::string("index.json: ") + e.what());
    }
    check_choice(task, kTasks, "task");
    std::vector<FieldSample> data;
    for (const auto& item : index.at("samples")) {
        data.push_back(io::sample_from_json(io::read_json(dir / item.at("file").get<std::string>())));
    }
    if (data.empty()) throw InsufficientDataError("dataset is empty");

    optimizer::BOConfig cfg = load_config(task, a.config);
    if (a.seed) cfg.predictor.train.model.seed = *a.seed;
    const optimizer::Problem problem = tasks::make_problem(task);
    const fs::path out(a.out);
    fs::create_directories(out);
    if (a.method == "gnn") {
        const auto res = surrogate::train(data, cfg.predictor.train);
        surrogate::save_model(res.model, out / "model.bin");
        std::cout << "final train loss " << io::format_double(res.final_loss) << "\n";
        return kExitOk;
    }
    uncertainty::PredictorConfig pc = cfg.predictor;
    pc.mode = a.method == "ens" ? uncertainty::Mode::ensemble : uncertainty::Mode::mc_dropout;
    pc.task = problem.task;
    pc.jobs = a.jobs;
    const auto predictor = uncertainty::fit(data, pc);
    uncertainty::save_predictor(predictor, out);
    std::cout << "saved " << uncertainty::to_string(pc.mode) << " predictor to " << out.string() << "\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct OptimizeArgs {
    std::string task;
    std::string method;
    std::string config;
    std::string out;
    std::optional<std::uint64_t> seed;
    std::optional<int> jobs;
    std::optional<int> iterations;
    std::optional<int> budget;
    bool wall_clock = false;
};

int cmd_optimize(const OptimizeArgs& a) {
    check_choice(a.task, kTasks, "task");
    check_choice(a.method, kMethods, "method");
    optimizer::BOConfig cfg = load_config(a.task, a.config);
    if (a.seed) cfg.seed = *a.seed;
    if (a.jobs) cfg.jobs = *a.jobs;
    if (a.iterations) cfg.iterations = *a.iterations;
    if (a.budget) {
        if (*a.budget < cfg.init_size) throw UsageError("--budget is smaller than the initial design");
        cfg.iterations = (*a.budget - cfg.init_size) / cfg.retained;
    }
    if (a.method == "mcd") cfg.predictor.mode = uncertainty::Mode::mc_dropout;
    if (a.method == "ens") cfg.predictor.mode = uncertainty::Mode::ensemble;
    cfg.validate();

    const optimizer::Problem problem = tasks::make_problem(a.task);
    optimizer::RunHistory h;
    if (a.method == "ens" || a.method == "mcd") {
        h = optimizer::bo_run(cfg, problem);
    } else if (a.method == "krig") {
        h = baselines::kriging_bo_run(cfg, problem);
    } else if (a.method == "gnn") {
        h = baselines::deterministic_gnn_run(cfg, problem);
    } else {
        h = baselines::random_search_run(cfg, problem);
    }
    io::write_run(a.out, h, cfg, problem, a.wall_clock);
    std::cout << a.method << " on " << a.task << ": best r = " << io::format_double(h.best_r) << " after "
              << h.sim_calls() << " simulations\n";
    return kExitOk;
}

// ---------------------------------------------------------------------------

struct RunSummary {
    std::string dir;
    std::string method;
    std::string task;
    std::vector<io::MetricsRow> rows;
};

RunSummary load_summary(const std::string& dir) {
    RunSummary s;
    s.dir = dir;
    const json manifest = io::read_json(fs::path(dir) / "manifest.json");
    try {
        s.method = manifest.at("method").get<std::string>();
        s.task = manifest.at("task").get<std::string>();
    } catch (const json::exception& e) {
        throw CorruptFileError(dir + "/manifest.json: " + e.what());
    }
    s.rows = io::read_metrics(fs::path(dir) / "metrics.csv");
    return s;
}

struct ReportArgs {
    std::vector<std::string> runs;
    std::string out;
};

int cmd_report(const ReportArgs& a) {
    std::vector<RunSummary> runs;
    for (const auto& d : a.runs) runs.push_back(load_summary(d));
    std::string csv = "run,method,task,best_r,sim_calls,iterations\n";
    std::cout << std::left << std::setw(10) << "method" << std::setw(11) << "task" << std::setw(24) << "best_r"
              << std::setw(10) << "sim_calls" << "run\n";
    for (const auto& r : runs) {
        const auto& last = r.rows.back();
        const std::string best = io::format_double(last.best_r);
        std::cout << std::left << std::setw(10) << r.method << std::setw(11) << r.task << std::setw(24) << best
                  << std::setw(10) << last.sim_calls << r.dir << "\n";
        csv += r.dir + "," + r.method + "," + r.task + "," + best + "," + std::to_string(last.sim_calls) + "," +
               std::to_string(last.iteration) + "\n";
    }
    if (!a.out.empty()) io::write_text(a.out, csv);
    return kExitOk;
}

// ---------------------------------------------------------------------------
// SVG convergence plot

std::string svg_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&': out += "&amp;"; break;
            case '<': out += "&lt;"; break;
            case '>': out += "&gt;"; break;
            case '"': out += "&quot;"; break;
            default: out += c;
        }
    }
    return out;
}

std::string fmt(double v) {
    std::ostringstream os;
    os << std::setprecision(6) << v;
    return os.str();
}

struct PlotArgs {
    std::vector<std::string> runs;
    std::string out;
};

int cmd_plot(const PlotArgs& a) {
    std::vector<RunSummary> runs;
    for (const auto& d : a.runs) runs.push_back(load_summary(d));
    double xmax = 1.0;
    double ymin = std::numeric_limits<double>::infinity();
    double ymax = -ymin;
    for (const auto& r : runs) {
        for (const auto& row : r.rows) {
            xmax = std::max(xmax, static_cast<double>(row.iteration));
            ymin = std::min(ymin, row.best_r);
            ymax = std::max(ymax, row.best_r);
        }
    }
    if (!(ymax > ymin)) {
        ymin -= 0.5;
        ymax += 0.5;
    }
    const double pad = 0.05 * (ymax - ymin);
    ymin -= pad;
    ymax += pad;

    const double w = 640, h = 400, left = 70, right = 160, top = 30, bottom = 50;
    const double pw = w - left - right, ph = h - top - bottom;
    auto px = [&](double x) { return left + pw * x / xmax; };
    auto py = [&](double y) { return top + ph * (1.0 - (y - ymin) / (ymax - ymin)); };
    const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};

    std::ostringstream s;
    s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top + ph << "\" x2=\"" << left + pw << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    s << "<line x1=\"" << left << "\" y1=\"" << top << "\" x2=\"" << left << "\" y2=\"" << top + ph << "\" stroke=\"black\"/>\n";
    for (int i = 0; i <= 4; ++i) {
        const double x = xmax * i / 4.0;
        const double y = ymin + (ymax - ymin) * i / 4.0;
        s << "<text x=\"" << fmt(px(x)) << "\" y=\"" << top + ph + 18 << "\" text-anchor=\"middle\">" << fmt(x) << "</text>\n";
        s << "<text x=\"" << left - 6 << "\" y=\"" << fmt(py(y) + 4) << "\" text-anchor=\"end\">" << fmt(y) << "</text>\n";
    }
    s << "<text x=\"" << left + pw / 2 << "\" y=\"" << h - 10 << "\" text-anchor=\"middle\">iteration</text>\n";
    s << "<text x=\"16\" y=\"" << top + ph / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << top + ph / 2
      << ")\">best r</text>\n";
    for (std::size_t i = 0; i < runs.size(); ++i) {
        const char* color = colors[i % 8];
        s << "<polyline class=\"run\" data-run=\"" << svg_escape(runs[i].dir) << "\" fill=\"none\" stroke=\"" << color
          << "\" stroke-width=\"2\" points=\"";
        for (std::size_t k = 0; k < runs[i].rows.size(); ++k) {
            if (k) s << ' ';
            s << fmt(px(runs[i].rows[k].iteration)) << ',' << fmt(py(runs[i].rows[k].best_r));
        }
        s << "\"/>\n";
        const double ly = top + 10 + 18.0 * static_cast<double>(i);
        s << "<line x1=\"" << left + pw + 12 << "\" y1=\"" << ly << "\" x2=\"" << left + pw + 32 << "\" y2=\"" << ly
          << "\" stroke=\"" << color << "\" stroke-width=\"2\"/>\n";
        s << "<text class=\"legend\" x=\"" << left + pw + 38 << "\" y=\"" << ly + 4 << "\">" << svg_escape(runs[i].method)
          << "</text>\n";
    }
    s << "</svg>\n";
    io::write_text(a.out, s.str());
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Uncertainty-aware Bayesian shape optimization with graph-network surrogates"};
    app.require_subcommand(1);

    GenDataArgs gen;
    auto* g = app.add_subcommand("gen-data", "Sample latents, simulate them and write a dataset");
    g->add_option("--task", gen.task, "airfoil | knuckle2d")->required();
    g->add_option("--n", gen.n, "number of samples");
    g->add_option("--seed", gen.seed, "sampling seed");
    g->add_option("--out", gen.out, "output directory")->required();
    g->add_option("--jobs", gen.jobs, "concurrent simulations")->check(CLI::PositiveNumber);

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a predictor on a dataset directory");
    t->add_option("--dataset", tr.dataset, "directory written by gen-data")->required();
    t->add_option("--config", tr.config, "JSON config (predictor section is used)");
    t->add_option("--out", tr.out, "output directory")->required();
    t->add_option("--method", tr.method, "ens | mcd | gnn");
    t->add_option("--seed", tr.seed, "base model seed");
    t->add_option("--jobs", tr.jobs, "concurrent trainings")->check(CLI::PositiveNumber);

    OptimizeArgs opt;
    auto* o = app.add_subcommand("optimize", "Run one optimization and write its artifacts");
    o->add_option("--task", opt.task, "airfoil | knuckle2d")->required();
    o->add_option("--method", opt.method, "ens | mcd | krig | gnn | random")->required();
    o->add_option("--config", opt.config, "JSON config overriding the task defaults");
    o->add_option("--out", opt.out, "run directory")->required();
    o->add_option("--seed", opt.seed, "run seed");
    o->add_option("--jobs", opt.jobs, "concurrent simulations / trainings")->check(CLI::PositiveNumber);
    o->add_option("--iterations", opt.iterations, "BO iterations")->check(CLI::NonNegativeNumber);
    o->add_option("--budget", opt.budget, "total simulator calls (sets iterations)")->check(CLI::PositiveNumber);
    o->add_flag("--wall-clock", opt.wall_clock, "write measured wall_ms to metrics.csv");

    ReportArgs rep;
    auto* r = app.add_subcommand("report", "Best result per run as a table");
    r->add_option("runs", rep.runs, "run directories")->required();
    r->add_option("--out", rep.out, "also write the table as CSV");

    PlotArgs plot;
    auto* p = app.add_subcommand("plot", "Convergence plot (best r per iteration) as SVG");
    p->add_option("runs", plot.runs, "run directories")->required();
    p->add_option("--out", plot.out, "SVG file")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*g) return cmd_gen_data(gen);
        if (*t) return cmd_train(tr);
        if (*o) return cmd_optimize(opt);
        if (*r) return cmd_report(rep);
        if (*p) return cmd_plot(plot);
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const std::exception& e) {
        log::error(e.what());
        std::cerr << "error: " << e.what() << "\n";
        return kExitInternal;
    }
    return kExitInternal;
}
