#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "marginflow/analysis.hpp"
#include "marginflow/datasets.hpp"

namespace mf {

using Json = nlohmann::json;

InitScheme init_scheme_from_string(const std::string& s);
std::string to_string(InitScheme s);

struct ModelSpec {
    std::vector<int> dims;  // layer widths [d, h_1, ..., 1]
    double init_scale = 1.0;
    InitScheme init_scheme = InitScheme::Gaussian;
    std::optional<std::uint64_t> seed;  // defaults to the experiment seed
};

// One post-run analysis; `params` keeps the type-specific fields. Analyses
// with a gate parameter (min_r2, max_spread, ...) contribute to the run's
// overall pass flag; analyses without one are informational.
struct AnalysisSpec {
    std::string type;
    Json params;
};

struct OutputSpec {
    std::string series_csv = "series.csv";
    std::string summary_json = "summary.json";
    std::optional<std::string> dataset_csv;
};

struct ExperimentConfig {
    std::string name = "run";
    std::uint64_t seed = 0;
    DataSpec data;
    ModelSpec model;
    FlowKind flow;
    StepPolicy policy;
    std::vector<AnalysisSpec> analyses;
    OutputSpec outputs;
};

// Strict parse: unknown keys, wrong types, and missing required fields raise
// ConfigError naming the offending field path. parse_config(config_to_json(c))
// reproduces c.
ExperimentConfig parse_config(const Json& j);
ExperimentConfig load_config(const std::string& path);  // ParseError on unreadable/invalid JSON
Json config_to_json(const ExperimentConfig& c);

// Standalone dataset spec (same schema as the config's "data" section).
DataSpec parse_data_spec(const Json& j);

// ParseError on an unreadable file or malformed JSON.
Json read_json_file(const std::string& path);

struct RunResult {
    ExperimentConfig config;
    Dataset dataset;
    Trajectory trajectory;
    Json summary;
    std::vector<std::pair<std::string, std::string>> extra_files;  // name -> contents
    bool passed = true;  // every gated analysis passed
};

RunResult run_experiment(const ExperimentConfig& cfg);

// Writes the series CSV, summary JSON, and optional dataset CSV under dir
// (created if needed). File contents carry no timestamps or machine state;
// rerunning a config reproduces them byte for byte.
void write_outputs(const RunResult& r, const std::string& dir);

// $MARGINFLOW_OUT when set, "." otherwise.
std::string output_root();

// Self-check suites: "structural" (identities and gradients), "projector"
// (constraint algebra), "equivalence" (flow-field agreements), "rates"
// (fit recovery), or "all". Prints one [PASS]/[FAIL] line per check.
bool verify_suite(const std::string& suite, std::ostream& os);

struct CompareResult {
    double max_abs = 0.0;
    double rms = 0.0;
    size_t points = 0;
};

// Compares one numeric column of two series CSVs over their overlapping time
// window; b is linearly interpolated onto a's grid.
CompareResult compare_series(const std::string& path_a, const std::string& path_b,
                             const std::string& metric);

// Runs two configs and aligns one metric over the overlapping time window.
// Requires identical datasets and layer dims; throws ShapeError otherwise.
struct RunComparison {
    std::vector<double> t;   // alignment grid (first run's records)
    std::vector<double> va;  // metric of the first run
    std::vector<double> vb;  // metric of the second, interpolated onto t
    double max_abs = 0.0;
    double rms = 0.0;
};
RunComparison compare_runs(const ExperimentConfig& a, const ExperimentConfig& b,
                           const std::string& metric);

// Checks a summary document against the required-field contract mirrored in
// docs/summary.schema.json. Returns human-readable problems; empty means ok.
std::vector<std::string> validate_summary(const Json& j);

}  // namespace mf
