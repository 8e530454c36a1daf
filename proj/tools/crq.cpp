#include "crq/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iostream>

int main(int argc, char** argv) {
    using namespace crq::cli;
    CLI::App app{"crq: audits and reports for quadric CR manifolds"};
    RunConfig config;
    std::string command;
    app.add_option("--model", config.model, "bundled model name or model file")->capture_default_str();
    app.add_option("--cmd", command, "command to run")->required()->check(CLI::IsMember(command_names()));
    app.add_option("--eps", config.eps, "eps ladder, strictly decreasing")->capture_default_str();
    app.add_option("--budget", config.budgets, "node budget per rung, strictly increasing")->capture_default_str();
    app.add_option("--seed", config.seeds, "one seed, or one per rung")->capture_default_str();
    app.add_option("--out", config.out_dir, "report directory")->capture_default_str();
    app.add_option("--baseline", config.baseline, "run_homotopy: baseline file to compare against");
    app.add_option("--write-baseline", config.write_baseline, "run_homotopy: record the ladder as a baseline");
    app.add_option("--shear", config.shear, "run_homotopy: shear of the second extension rule (0 skips)");
    app.add_flag("--corroborate", config.corroborate, "index_audit: integrate kernels along the eps ladder");
    for (auto& [name, value] : config.tolerances) {
        std::string flag = "--tol-" + name;
        std::replace(flag.begin(), flag.end(), '_', '-');
        app.add_option(flag, value)->capture_default_str();
    }
    CLI11_PARSE(app, argc, argv);

    try {
        config.command = parse_command(command);
        CommandResult result = run(config);
        write_outputs(result, config.out_dir);
        std::cout << to_string(config.command) << ": " << (result.pass ? "PASS" : "FAIL") << " ("
                  << config.out_dir << "/" << result.files.front().name << ")\n";
        return result.pass ? 0 : 1;
    } catch (const crq::Error& e) {
        std::cerr << "crq: " << e.what() << "\n";
        return 2;
    }
}
