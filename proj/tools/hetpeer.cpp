// Command-line front end: simulate, pipeline, montecarlo.
#include "hetpeer/error.hpp"
#include "hetpeer/model_selection.hpp"
#include "hetpeer/panel_io.hpp"
#include "hetpeer/pipeline.hpp"
#include "hetpeer/simulation.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

namespace fs = std::filesystem;
using namespace hetpeer;

namespace {

enum ExitCode { kOk = 0, kValidation = 2, kConvergence = 3, kIo = 4 };

std::optional<double> parse_auto(const std::string& text, const char* flag) {
    if (text == "auto") return std::nullopt;
    try {
        std::size_t used = 0;
        const double v = std::stod(text, &used);
        if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    throw ValidationError(std::string("--") + flag + " expects a number or 'auto', got '" + text + "'");
}

std::ofstream open_out(const fs::path& path) {
    if (path.has_parent_path()) {
        std::error_code ec;
        fs::create_directories(path.parent_path(), ec);
        if (ec) throw IoError("cannot create directory " + path.parent_path().string());
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

void finish(std::ofstream& out, const fs::path& path) {
    out.flush();
    if (!out) throw IoError("failed writing " + path.string());
}

// Flags shared by the estimation commands.
struct EstimationFlags {
    std::string rho = "auto";
    std::string lambda = "auto";
    std::optional<int> boot_reps;

    void add(CLI::App& app, PipelineConfig& c) {
        app.add_option("--k-max", c.k_max, "largest number of clusters considered")->capture_default_str();
        app.add_option("--rho", rho, "C-Lasso penalty level or 'auto'")->capture_default_str();
        app.add_option("--rho-scale", c.rho_scale, "scale of the automatic penalty level")->capture_default_str();
        app.add_option("--lambda", lambda, "IC penalty weight or 'auto'")->capture_default_str();
        app.add_option("--ccp-tol", c.ccp_tol, "NPL belief tolerance")->capture_default_str();
        app.add_option("--eq-tol", c.eq_tol, "equilibrium tolerance")->capture_default_str();
        app.add_option("--max-outer", c.max_outer, "NPL outer iteration cap")->capture_default_str();
        app.add_option("--boot-reps", boot_reps, "bootstrap replications (0 skips inference)");
        app.add_option("--alpha", c.alpha, "CI level is 1 - alpha")->capture_default_str();
        app.add_option("--mu-bound", c.mu_bound, "fixed effects live in [-bound, bound]")->capture_default_str();
        app.add_option("--seed", c.seed, "random seed")->capture_default_str();
        app.add_option("--threads", c.threads, "worker threads")->capture_default_str();
    }

    void apply(PipelineConfig& c, int default_boot) const {
        c.rho = parse_auto(rho, "rho");
        c.lambda = parse_auto(lambda, "lambda");
        c.boot_reps = boot_reps ? *boot_reps : default_boot;
    }
};

int cmd_simulate(int groups, int n, int max_friends, double eq_tol, std::uint64_t seed,
                 int threads, const fs::path& out_dir) {
    DgpConfig dgp;
    dgp.groups = groups;
    dgp.group_size = n;
    dgp.max_friends = max_friends;
    dgp.eq_tol = eq_tol;
    dgp.seed = seed;
    if (threads < 1) throw ValidationError("threads must be at least 1");
    const auto sim = generate_panel(dgp, seed, threads);
    auto nodes = open_out(out_dir / "nodes.csv");
    auto edges = open_out(out_dir / "edges.csv");
    save_panel(sim.panel, nodes, edges);
    finish(nodes, out_dir / "nodes.csv");
    finish(edges, out_dir / "edges.csv");
    auto truth = open_out(out_dir / "truth.json");
    write_truth_json(truth, sim.panel, sim.truth, dgp, seed);
    finish(truth, out_dir / "truth.json");
    std::cout << "wrote " << sim.panel.size() << " groups to " << out_dir.string() << '\n';
    return kOk;
}

int cmd_pipeline(const fs::path& nodes, const fs::path& edges, const fs::path& out,
                 const std::string& ic_csv, const std::string& text, const PipelineConfig& config) {
    const auto panel = load_panel(nodes, edges);
    const auto report = run_pipeline(panel, config);
    auto json_out = open_out(out);
    json_out << report_to_json(panel, report, config).dump(2) << '\n';
    finish(json_out, out);
    if (!ic_csv.empty()) {
        auto csv = open_out(ic_csv);
        write_ic_csv(csv, report.ic);
        finish(csv, ic_csv);
    }
    if (!text.empty()) {
        auto txt = open_out(text);
        write_text_report(txt, panel, report);
        finish(txt, text);
    }
    write_text_report(std::cout, panel, report);
    return kOk;
}

int cmd_montecarlo(const std::string& preset, int reps, int groups, int n, std::uint64_t seed,
                   int threads, const std::string& out_prefix, PipelineConfig pipeline) {
    McConfig mc;
    mc.study = preset;
    mc.replications = reps;
    mc.dgp.groups = groups;
    mc.dgp.group_size = n;
    mc.dgp.seed = seed;
    mc.dgp.eq_tol = pipeline.eq_tol;
    mc.threads = threads;
    pipeline.threads = 1;
    mc.pipeline = pipeline;
    McSummary summary;
    if (preset == "table1") {
        summary = run_monte_carlo(mc);
    } else if (preset == "table2-oracle") {
        summary = run_oracle_study(mc);
    } else {
        throw ValidationError("unknown preset '" + preset + "'");
    }
    const fs::path prefix(out_prefix);
    auto json_out = open_out(prefix.string() + ".json");
    json_out << summary_to_json(summary).dump(2) << '\n';
    finish(json_out, prefix.string() + ".json");
    auto sel = open_out(prefix.string() + "_selection.csv");
    write_selection_csv(sel, summary);
    finish(sel, prefix.string() + "_selection.csv");
    auto est = open_out(prefix.string() + "_estimates.csv");
    write_estimates_csv(est, summary);
    finish(est, prefix.string() + "_estimates.csv");
    write_selection_csv(std::cout, summary);
    write_estimates_csv(std::cout, summary);
    return kOk;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Heterogeneous peer effects: NPL estimation, C-Lasso classification, bootstrap"};
    app.require_subcommand(1);

    auto* sim = app.add_subcommand("simulate", "draw a panel from the three-cluster design");
    int sim_groups = 100, sim_n = 100, sim_friends = 5, sim_threads = 1;
    double sim_eq_tol = 1e-10;
    std::uint64_t sim_seed = 0;
    std::string sim_out = ".";
    sim->add_option("--G", sim_groups, "number of groups")->capture_default_str();
    sim->add_option("--n", sim_n, "individuals per group")->capture_default_str();
    sim->add_option("--max-friends", sim_friends, "largest influencer count")->capture_default_str();
    sim->add_option("--eq-tol", sim_eq_tol, "equilibrium tolerance")->capture_default_str();
    sim->add_option("--seed", sim_seed, "random seed")->capture_default_str();
    sim->add_option("--threads", sim_threads, "worker threads")->capture_default_str();
    sim->add_option("--out", sim_out, "output directory for nodes.csv, edges.csv, truth.json")->capture_default_str();

    auto* pipe = app.add_subcommand("pipeline", "estimate, classify, select K and bootstrap");
    PipelineConfig pipe_config;
    EstimationFlags pipe_flags;
    std::string pipe_nodes, pipe_edges, pipe_out = "report.json", pipe_ic, pipe_text;
    std::optional<int> pipe_fixed_k;
    pipe->add_option("--nodes", pipe_nodes, "nodes CSV")->required();
    pipe->add_option("--edges", pipe_edges, "edges CSV")->required();
    pipe->add_option("--out", pipe_out, "report JSON path")->capture_default_str();
    pipe->add_option("--ic-csv", pipe_ic, "also write the IC table as CSV");
    pipe->add_option("--text", pipe_text, "also write the text report");
    pipe->add_option("--k", pipe_fixed_k, "use this K instead of selecting it");
    pipe_flags.add(*pipe, pipe_config);

    auto* mc = app.add_subcommand("montecarlo", "replication study on simulated panels");
    PipelineConfig mc_config;
    EstimationFlags mc_flags;
    std::string mc_preset = "table1", mc_out = "montecarlo";
    int mc_reps = 100, mc_groups = 100, mc_n = 100, mc_threads = 1;
    mc->add_option("--preset", mc_preset, "table1 (selection and classification) or table2-oracle")
        ->check(CLI::IsMember({"table1", "table2-oracle"}))
        ->capture_default_str();
    mc->add_option("--reps", mc_reps, "replications")->capture_default_str();
    mc->add_option("--G", mc_groups, "number of groups")->capture_default_str();
    mc->add_option("--n", mc_n, "individuals per group")->capture_default_str();
    mc->add_option("--out", mc_out, "output prefix")->capture_default_str();
    mc_flags.add(*mc, mc_config);
    mc->get_option("--threads")->description("worker threads across replications");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kValidation;
    }

    try {
        if (*sim) {
            return cmd_simulate(sim_groups, sim_n, sim_friends, sim_eq_tol, sim_seed, sim_threads, sim_out);
        }
        if (*pipe) {
            pipe_flags.apply(pipe_config, 500);
            pipe_config.fixed_k = pipe_fixed_k;
            return cmd_pipeline(pipe_nodes, pipe_edges, pipe_out, pipe_ic, pipe_text, pipe_config);
        }
        if (*mc) {
            mc_flags.apply(mc_config, mc_preset == "table1" ? 0 : 200);
            mc_threads = mc_config.threads;
            return cmd_montecarlo(mc_preset, mc_reps, mc_groups, mc_n, mc_config.seed, mc_threads,
                                  mc_out, mc_config);
        }
    } catch (const ValidationError& e) {
        std::cerr << "validation error: " << e.what() << '\n';
        return kValidation;
    } catch (const ConvergenceError& e) {
        std::cerr << "convergence error: " << e.what() << '\n';
        return kConvergence;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return kIo;
    }
    return kOk;
}
