#pragma once

#include "crq/common.hpp"

#include <string>
#include <vector>

namespace crq {

// Graph quadric rho_k(z) = Im z_{n-m+k} - <H_k z', z'>,  z' = (z_1..z_{n-m}).
struct ManifoldModel {
    std::string name;
    int n = 0;
    int m = 0;
    int q = 0;
    double radius = 1.0;
    std::vector<MatC> H;  // m Hermitian (n-m)x(n-m) blocks

    int nz() const { return n - m; }
    int frame_count() const { return n - q - m; }
};

// Throws Error("validation", ...) on dimension or symmetry violations.
void validate(const ManifoldModel& model);

// Parse the key-value / matrix-block text format (docs/model_format.md).
// Errors are Error("parse", "<source>:<line>: ...").
ManifoldModel parse_model(const std::string& text, const std::string& source = "<string>");
ManifoldModel load_model_file(const std::string& path);

// Canonical serialization; round-trips exactly and feeds model_hash.
std::string to_text(const ManifoldModel& model);
std::string model_hash(const ManifoldModel& model);

// Bundled models: "sig22_n5" (n=5,m=1,q=2) and "sig22_m2_n6" (n=6,m=2,q=2).
std::vector<std::string> bundled_model_names();
ManifoldModel bundled_model(const std::string& name);

// A bundled name or a path to a model file.
ManifoldModel resolve_model(const std::string& name_or_path);

}  // namespace crq
