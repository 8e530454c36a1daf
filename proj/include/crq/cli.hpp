#pragma once

// Batch commands behind the crq executable. Each command runs its module
// audits and returns the report files it would write; nothing here reads the
// clock, so identical configs give byte-identical reports.

#include "crq/common.hpp"

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace crq::cli {

inline constexpr const char* kReportSchema = "crq-report/1";

enum class Command { check_geometry, audit_barrier, audit_kernels, run_homotopy, index_audit, estimate_norms };
const char* to_string(Command c);
// Error("config") for an unknown name.
Command parse_command(const std::string& name);
std::vector<std::string> command_names();

// Tolerance names accepted as --tol-<name> (underscores become dashes).
std::map<std::string, double> default_tolerances();

struct RunConfig {
    std::string model = "sig22_n5";  // bundled name or model file path
    Command command = Command::check_geometry;
    std::vector<double> eps{0.1};          // strictly decreasing
    std::vector<long> budgets{10000};      // strictly increasing, one per eps
    std::vector<std::uint64_t> seeds{1};   // one for all rungs or one per rung
    std::map<std::string, double> tolerances = default_tolerances();
    std::string out_dir = "reports";
    std::string baseline;        // run_homotopy: compare against this baseline file
    std::string write_baseline;  // run_homotopy: record the final rung here
    double shear = 0;            // run_homotopy: > 0 adds the extension comparison
    bool corroborate = false;    // index_audit: integrate kernels along the eps ladder
};

// Error("config") when an invariant fails.
void validate(const RunConfig& config);
std::uint64_t rung_seed(const RunConfig& config, std::size_t rung);

// Canonical JSON of everything that affects the results (out_dir excluded).
std::string config_json(const RunConfig& config);
std::string config_hash(const RunConfig& config);

struct OutputFile {
    std::string name;  // relative to out_dir
    std::string content;
};

struct CommandResult {
    bool pass = false;
    std::vector<OutputFile> files;  // the JSON report comes first
};

// Reads prerequisites from out_dir: run_homotopy needs the geometry
// certificate, estimate_norms needs the grid cache. Error("missing-cache")
// names the command to run first.
CommandResult run(const RunConfig& config);
void write_outputs(const CommandResult& result, const std::string& out_dir);

std::string grid_cache_name(const std::string& model_name);

}  // namespace crq::cli
