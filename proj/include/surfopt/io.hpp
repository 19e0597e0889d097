#pragma once

#include <filesystem>
#include <string>

#include "json.hpp"

#include "surfopt/optimizer.hpp"
#include "surfopt/physics.hpp"

namespace surfopt::io {

using json = nlohmann::json;

inline constexpr const char* kVersion = "surfopt 0.1.0";

json mesh_to_json(const Mesh& mesh);
/// Throws CorruptFileError on malformed input; check_mesh() is applied.
Mesh mesh_from_json(const json& j);

json sample_to_json(const FieldSample& sample);
FieldSample sample_from_json(const json& j);

json load_case_to_json(const LoadCase& lc);
LoadCase load_case_from_json(const json& j);

json read_json(const std::filesystem::path& path);
void write_json(const std::filesystem::path& path, const json& j);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Shortest decimal form that round-trips the double exactly.
std::string format_double(double x);

/// Every BOConfig field; missing keys keep their defaults, unknown keys
/// raise ConfigError.
json bo_config_to_json(const optimizer::BOConfig& cfg);
optimizer::BOConfig bo_config_from_json(const json& j, optimizer::BOConfig base = {});

/// iteration,sim_calls,best_r,mean_EI_retained,wall_ms. wall_ms is written
/// as 0 unless `wall_clock` so that reruns are byte-identical.
std::string metrics_csv(const optimizer::RunHistory& h, bool wall_clock = false);

struct MetricsRow {
    int iteration = 0;
    int sim_calls = 0;
    double best_r = 0.0;
    double mean_ei = 0.0;
    double wall_ms = 0.0;
};
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

/// metrics.csv, manifest.json and shapes/iter_<k>/shape_<i>.json (the
/// retained meshes, when the problem has a parameterizer).
void write_run(const std::filesystem::path& dir, const optimizer::RunHistory& h, const optimizer::BOConfig& cfg,
               const optimizer::Problem& problem, bool wall_clock = false);

}  // namespace surfopt::io
