// rmp: simulate benchmark data, run inference on it, and time configuration grids.
//
// Exit codes: 0 success, 2 configuration fault, 3 wiring or missing-rule fault,
// 1 anything else.

#include "rmp/bench.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <fmt/format.h>

#include <fstream>
#include <iostream>
#include <optional>

namespace {

using nlohmann::json;

struct ConfigFault : std::runtime_error {
    using std::runtime_error::runtime_error;
};

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigFault("cannot open '" + path + "'");
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigFault(path + ": " + e.what());
    }
}

void write_text(const std::string& path, const std::string& text) {
    if (path == "-") {
        std::cout << text;
        return;
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write '" + path + "'");
    out << text;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Reactive message passing benchmarks"};
    app.require_subcommand(1);

    std::string model, out = "-", config_path;
    int n = 0;
    std::uint64_t seed = 0;
    auto* sim = app.add_subcommand("simulate", "Sample a synthetic dataset");
    sim->add_option("--model", model, "lgssm, hmm or hgf")->required();
    sim->add_option("--n", n, "Number of time steps")->required();
    sim->add_option("--seed", seed, "Generator seed");
    sim->add_option("--config", config_path, "JSON file with further model parameters")->check(CLI::ExistingFile);
    sim->add_option("--out", out, "Output file ('-' for stdout)");

    std::string data_path, trace_path;
    int iterations = 0;
    bool no_posteriors = false;
    auto* inf = app.add_subcommand("infer", "Run inference on a dataset and write a JSON report");
    inf->add_option("--model", model, "Expected model of the dataset");
    inf->add_option("--data", data_path, "Dataset from 'simulate'")->required();
    inf->add_option("--iterations", iterations, "VMP iterations (default: from the dataset config)")->check(CLI::PositiveNumber);
    inf->add_option("--out", out, "Output file ('-' for stdout)");
    inf->add_option("--trace", trace_path, "Write a JSON-lines emission trace here");
    inf->add_flag("--no-posteriors", no_posteriors, "Omit posterior marginals from the report");

    std::string grid_path;
    int reps = 1;
    auto* ben = app.add_subcommand("benchmark", "Time every cell of a configuration grid");
    ben->add_option("--grid", grid_path, "Grid JSON: {\"base\": {...}, \"vary\": {key: [...]}}")->required();
    ben->add_option("--reps", reps, "Repetitions per cell (minimum time is kept)");
    ben->add_option("--out", out, "CSV output file ('-' for stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (*sim) {
            json cfg = config_path.empty() ? json::object() : read_json(config_path);
            cfg["model"] = model;
            cfg["n"] = n;
            cfg["seed"] = seed;
            write_text(out, rmp::bench::simulate(cfg).to_json().dump() + "\n");
        } else if (*inf) {
            const auto ds = rmp::bench::Dataset::from_json(read_json(data_path));
            if (!model.empty() && model != ds.config.model) {
                throw rmp::ConfigError("/model", fmt::format("--model {} but the dataset is {}", model, ds.config.model));
            }
            std::optional<std::ofstream> trace;
            rmp::bench::InferOptions opts;
            opts.iterations = iterations;
            if (!trace_path.empty()) {
                trace.emplace(trace_path);
                if (!*trace) throw std::runtime_error("cannot write '" + trace_path + "'");
                opts.trace = rmp::json_lines_sink(*trace);
            }
            const auto report = rmp::bench::infer(ds, opts);
            write_text(out, report.to_json(!no_posteriors).dump(2) + "\n");
        } else if (*ben) {
            write_text(out, rmp::bench::benchmark(read_json(grid_path), reps).to_csv());
        }
    } catch (const ConfigFault& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const rmp::ConfigError& e) {
        std::cerr << "config error at " << e.path() << ": " << e.what() << "\n";
        return 2;
    } catch (const rmp::WiringError& e) {
        std::cerr << "wiring error: " << e.what() << "\n";
        return 3;
    } catch (const rmp::NoRuleError& e) {
        std::cerr << "no rule: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
