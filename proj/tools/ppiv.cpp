#include <iostream>

#include "CLI11.hpp"
#include "ppiv/cli.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"Preference-based instrumental variable estimation and simulation"};
    app.set_version_flag("--version", std::string(ppiv::cli::kVersion));
    app.require_subcommand(1);

    ppiv::cli::SimulateOptions sim;
    auto* s = app.add_subcommand("simulate", "Run a Monte-Carlo scenario grid");
    s->add_option("config", sim.config_path, "Scenario configuration file")->required();
    s->add_option("--out", sim.out_dir, "Output directory")->capture_default_str();
    s->add_option("--seed", sim.seed, "Master seed (overrides the config)");
    s->add_option("--reps", sim.reps, "Replications per cell (overrides the config)");
    s->add_option("--methods", sim.methods, "Comma-separated construction methods, 'all' or 'none'");
    s->add_option("--link", sim.link, "Treatment link: logit or linear");
    s->add_option("--se", sim.se, "Standard error: naive or corrected");
    s->add_option("--workers", sim.workers, "Worker threads (results do not depend on it)");
    s->add_flag("--calibrate", sim.calibrate, "Calibrate free intercepts and sigma before simulating");
    s->add_flag("--quiet", sim.quiet, "Suppress progress output");

    ppiv::cli::GenerateOptions gen;
    auto* g = app.add_subcommand("generate", "Export one simulated dataset as CSV");
    g->add_option("config", gen.config_path, "Scenario configuration file")->required();
    g->add_option("--out", gen.out_csv, "Output CSV path")->required();
    g->add_option("--rep", gen.rep, "Replication index")->capture_default_str();
    g->add_option("--n", gen.n_per_provider, "Patients per provider (overrides the config)");
    g->add_option("--missingness", gen.missingness, "none, mcar or mnar (overrides the config)");
    g->add_option("--seed", gen.seed, "Master seed (overrides the config)");

    ppiv::cli::AnalyzeOptions an;
    auto* a = app.add_subcommand("analyze", "Estimate treatment effects on a panel CSV");
    a->add_option("csv", an.csv_path, "Input CSV")->required();
    a->add_option("--spec", an.spec_path, "Analysis spec naming the column roles");
    a->add_option("--methods", an.methods, "Comma-separated construction methods or 'all'")->capture_default_str();
    a->add_option("--se", an.se, "Standard error: naive or corrected")->capture_default_str();
    a->add_option("--out", an.out_dir, "Output directory")->capture_default_str();
    a->add_flag("--quiet", an.quiet, "Suppress per-method messages");

    ppiv::cli::DescribeOptions de;
    auto* d = app.add_subcommand("describe", "Summarize prescribing and missingness in a panel CSV");
    d->add_option("csv", de.csv_path, "Input CSV")->required();
    d->add_option("--spec", de.spec_path, "Analysis spec naming the column roles");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : ppiv::cli::config_error;
    }

    if (*s) return ppiv::cli::cmd_simulate(sim);
    if (*g) return ppiv::cli::cmd_generate(gen);
    if (*a) return ppiv::cli::cmd_analyze(an);
    return ppiv::cli::cmd_describe(de);
}
