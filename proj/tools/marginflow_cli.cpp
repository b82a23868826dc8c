// Command-line front door: run experiment configs, execute the verification
// suites, compare runs metric-by-metric, and generate datasets. All numeric
// output is printed with 17 significant digits so runs can be diffed exactly.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "marginflow/experiment.hpp"

namespace {

std::string g17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

int do_run(const std::string& config_path, bool has_seed, std::uint64_t seed,
           std::string out_dir) {
    mf::Json j = mf::read_json_file(config_path);
    if (has_seed) {
        if (!j.is_object()) throw mf::ParseError(config_path + ": config must be an object");
        j["seed"] = seed;
    }
    const mf::ExperimentConfig cfg = mf::parse_config(j);
    const mf::RunResult r = mf::run_experiment(cfg);
    if (out_dir.empty()) out_dir = mf::output_root() + "/" + cfg.name;
    mf::write_outputs(r, out_dir);

    std::cout << "name " << cfg.name << "\n"
              << "stop " << to_string(r.trajectory.stop_reason) << "\n"
              << "steps " << r.trajectory.steps_taken << "\n"
              << "t_final " << g17(r.trajectory.t_final) << "\n"
              << "loss " << g17(std::exp(r.trajectory.log_loss.back())) << "\n"
              << "margin " << g17(r.trajectory.margin.back()) << "\n"
              << "stationarity " << g17(r.trajectory.stationarity.back()) << "\n";
    for (const mf::Json& a : r.summary.at("analyses")) {
        const std::string type = a.value("type", "?");
        if (a.contains("error"))
            std::cout << "[FAIL] " << type << ": " << a.at("error").get<std::string>() << "\n";
        else if (a.contains("pass"))
            std::cout << (a.at("pass").get<bool>() ? "[PASS] " : "[FAIL] ") << type << "\n";
        else
            std::cout << "[INFO] " << type << "\n";
    }
    std::cout << "wrote " << out_dir << "\n";
    return r.passed ? 0 : 2;
}

int do_compare(const std::string& path_a, const std::string& path_b, const std::string& metric,
               std::string out_csv) {
    const mf::ExperimentConfig ca = mf::load_config(path_a);
    const mf::ExperimentConfig cb = mf::load_config(path_b);
    const mf::RunComparison r = mf::compare_runs(ca, cb, metric);
    std::cout << "metric " << metric << "\n"
              << "points " << r.t.size() << "\n"
              << "max_abs " << g17(r.max_abs) << "\n"
              << "rms " << g17(r.rms) << "\n";
    if (out_csv.empty()) out_csv = mf::output_root() + "/compare_" + metric + ".csv";
    std::ofstream os(out_csv);
    if (!os) throw mf::Error("cannot write " + out_csv);
    os << "t,a_" << metric << ",b_" << metric << ",abs_diff\n";
    for (size_t i = 0; i < r.t.size(); ++i)
        os << g17(r.t[i]) << ',' << g17(r.va[i]) << ',' << g17(r.vb[i]) << ','
           << g17(std::abs(r.va[i] - r.vb[i])) << "\n";
    std::cout << "wrote " << out_csv << "\n";
    return 0;
}

int do_gen_data(const std::string& spec_path, const std::string& out_csv) {
    const mf::DataSpec spec = mf::parse_data_spec(mf::read_json_file(spec_path));
    const mf::Dataset data = mf::make_dataset(spec);
    mf::write_dataset_csv(data, out_csv);
    std::cout << "n " << data.n() << "\n"
              << "d " << data.dim() << "\n"
              << "wrote " << out_csv << "\n";
    return 0;
}

int do_validate_summary(const std::string& path) {
    const std::vector<std::string> problems = mf::validate_summary(mf::read_json_file(path));
    for (const std::string& p : problems) std::cout << "[FAIL] " << p << "\n";
    if (problems.empty()) std::cout << "[PASS] summary has the required shape\n";
    return problems.empty() ? 0 : 2;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"gradient-flow dynamics of deep ReLU networks under exponential loss"};
    app.require_subcommand(1);

    std::string config_path, out_dir;
    std::uint64_t seed = 0;
    auto* run = app.add_subcommand("run", "run one experiment config and write its artifacts");
    run->add_option("config", config_path, "JSON experiment config")->required();
    auto* seed_opt = run->add_option("--seed", seed, "override the experiment seed");
    run->add_option("--out", out_dir,
                    "output directory (default: $MARGINFLOW_OUT/<name>, else ./<name>)");

    std::string suite;
    auto* verify = app.add_subcommand("verify", "run a self-check suite");
    verify->add_option("suite", suite, "structural | projector | equivalence | rates | all")
        ->required();

    std::string cmp_a, cmp_b, metric, cmp_csv;
    auto* cmp = app.add_subcommand("compare", "run two configs and align one metric");
    cmp->add_option("a", cmp_a, "first JSON config")->required();
    cmp->add_option("b", cmp_b, "second JSON config")->required();
    cmp->add_option("--metric", metric, "loss | log_loss | margin | rho_product | stationarity")
        ->required();
    cmp->add_option("-o,--out", cmp_csv, "aligned-series CSV path");

    std::string spec_path, data_csv;
    auto* gen = app.add_subcommand("gen-data", "materialize a dataset spec as CSV");
    gen->add_option("spec", spec_path, "JSON dataset spec")->required();
    gen->add_option("-o,--out", data_csv, "CSV output path")->required();

    std::string summary_path;
    auto* vs = app.add_subcommand("validate-summary", "check a summary JSON's shape");
    vs->add_option("summary", summary_path, "summary JSON path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 1;
    }

    try {
        if (run->parsed()) return do_run(config_path, seed_opt->count() > 0, seed, out_dir);
        if (verify->parsed()) return mf::verify_suite(suite, std::cout) ? 0 : 2;
        if (cmp->parsed()) return do_compare(cmp_a, cmp_b, metric, cmp_csv);
        if (gen->parsed()) return do_gen_data(spec_path, data_csv);
        if (vs->parsed()) return do_validate_summary(summary_path);
    } catch (const mf::Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 1;
}
