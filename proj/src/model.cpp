#include "crq/model.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace crq {

namespace {

const char* kSig22N5 = R"(# n=5, m=1: Im w = |z1|^2 + |z2|^2 - |z3|^2 - |z4|^2
name = sig22_n5
n = 5
m = 1
q = 2
radius = 1
H 1
1,0 0,0 0,0 0,0
0,0 1,0 0,0 0,0
0,0 0,0 -1,0 0,0
0,0 0,0 0,0 -1,0
end
)";

// theta1*H1 + theta2*H2 has eigenvalues +-|theta|, each twice, for every theta.
const char* kSig22M2N6 = R"(# n=6, m=2: signature (2,2) in every normal direction
name = sig22_m2_n6
n = 6
m = 2
q = 2
radius = 1
H 1
1,0 0,0 0,0 0,0
0,0 1,0 0,0 0,0
0,0 0,0 -1,0 0,0
0,0 0,0 0,0 -1,0
end
H 2
0,0 0,0 1,0 0,0
0,0 0,0 0,0 1,0
1,0 0,0 0,0 0,0
0,0 1,0 0,0 0,0
end
)";

std::string trim(const std::string& s) {
    auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& source, int line, const std::string& msg) {
    throw Error("parse", source + ":" + std::to_string(line) + ": " + msg);
}

bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e;
}

bool parse_int(const std::string& s, int& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e;
}

std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

}  // namespace

void validate(const ManifoldModel& M) {
    if (M.n < 2) throw Error("validation", "n must be >= 2");
    if (M.m < 1 || M.m >= M.n) throw Error("validation", "m must satisfy 1 <= m < n");
    if (M.q < 0) throw Error("validation", "q must be >= 0");
    if (M.q > M.n - M.m)
        throw Error("validation", "q = " + std::to_string(M.q) + " exceeds n-m = " + std::to_string(M.n - M.m));
    if (!(M.radius > 0)) throw Error("validation", "radius must be > 0");
    if (static_cast<int>(M.H.size()) != M.m)
        throw Error("validation", "expected " + std::to_string(M.m) + " H blocks, got " + std::to_string(M.H.size()));
    for (int k = 0; k < M.m; ++k) {
        const MatC& H = M.H[k];
        if (H.rows() != M.nz() || H.cols() != M.nz())
            throw Error("validation", "H " + std::to_string(k + 1) + " must be (n-m)x(n-m)");
        if ((H - H.adjoint()).cwiseAbs().maxCoeff() > 1e-12)
            throw Error("validation", "H " + std::to_string(k + 1) + " is not Hermitian");
    }
}

ManifoldModel parse_model(const std::string& text, const std::string& source) {
    ManifoldModel M;
    bool have_n = false, have_m = false, have_q = false;
    std::istringstream in(text);
    std::string raw;
    int line = 0;
    std::vector<std::pair<int, MatC>> blocks;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = trim(raw.substr(0, raw.find('#')));
        if (s.empty()) continue;
        if (s.rfind("H ", 0) == 0 || s == "H") {
            int k = 0;
            if (!parse_int(trim(s.substr(1)), k) || k < 1) fail(source, line, "matrix header must be 'H <k>' with k >= 1");
            if (!have_n || !have_m) fail(source, line, "n and m must precede matrix blocks");
            const int d = M.n - M.m;
            if (d < 1) fail(source, line, "n-m must be >= 1");
            MatC H(d, d);
            int row = 0;
            while (row <= d) {
                if (!std::getline(in, raw)) fail(source, line, "unterminated matrix block H " + std::to_string(k));
                ++line;
                std::string r = trim(raw.substr(0, raw.find('#')));
                if (r.empty()) continue;
                if (r == "end") {
                    if (row != d)
                        fail(source, line, "matrix H " + std::to_string(k) + " has " + std::to_string(row) + " rows, expected " + std::to_string(d));
                    break;
                }
                if (row == d) fail(source, line, "matrix H " + std::to_string(k) + " row " + std::to_string(row + 1) + ": too many rows (missing 'end'?)");
                std::istringstream rs(r);
                std::string tok;
                int col = 0;
                while (rs >> tok) {
                    auto comma = tok.find(',');
                    double re = 0, im = 0;
                    if (comma == std::string::npos || !parse_double(tok.substr(0, comma), re) ||
                        !parse_double(tok.substr(comma + 1), im))
                        fail(source, line, "matrix H " + std::to_string(k) + " row " + std::to_string(row + 1) + ": bad entry '" + tok + "', expected re,im");
                    if (col >= d) fail(source, line, "matrix H " + std::to_string(k) + " row " + std::to_string(row + 1) + ": too many entries");
                    H(row, col++) = cd(re, im);
                }
                if (col != d)
                    fail(source, line, "matrix H " + std::to_string(k) + " row " + std::to_string(row + 1) + ": " + std::to_string(col) + " entries, expected " + std::to_string(d));
                ++row;
            }
            blocks.emplace_back(k, H);
            continue;
        }
        auto eq = s.find('=');
        if (eq == std::string::npos) fail(source, line, "expected 'key = value' or 'H <k>'");
        std::string key = trim(s.substr(0, eq));
        std::string val = trim(s.substr(eq + 1));
        if (key == "name") {
            M.name = val;
        } else if (key == "n" || key == "m" || key == "q") {
            int v = 0;
            if (!parse_int(val, v)) fail(source, line, "integer expected for '" + key + "'");
            if (key == "n") { M.n = v; have_n = true; }
            if (key == "m") { M.m = v; have_m = true; }
            if (key == "q") { M.q = v; have_q = true; }
        } else if (key == "radius") {
            if (!parse_double(val, M.radius)) fail(source, line, "number expected for 'radius'");
        } else {
            fail(source, line, "unknown key '" + key + "'");
        }
    }
    if (!have_n || !have_m || !have_q) fail(source, line, "missing one of n, m, q");
    M.H.assign(M.m, MatC());
    std::vector<bool> seen(M.m, false);
    for (auto& [k, H] : blocks) {
        if (k > M.m) throw Error("parse", source + ": matrix H " + std::to_string(k) + " exceeds m = " + std::to_string(M.m));
        if (seen[k - 1]) throw Error("parse", source + ": duplicate matrix H " + std::to_string(k));
        seen[k - 1] = true;
        M.H[k - 1] = H;
    }
    for (int k = 0; k < M.m; ++k)
        if (!seen[k]) throw Error("parse", source + ": missing matrix H " + std::to_string(k + 1));
    validate(M);
    return M;
}

ManifoldModel load_model_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw Error("io", "cannot open model file " + path);
    std::stringstream ss;
    ss << f.rdbuf();
    return parse_model(ss.str(), path);
}

std::string to_text(const ManifoldModel& M) {
    std::string out;
    out += "name = " + M.name + "\n";
    out += "n = " + std::to_string(M.n) + "\n";
    out += "m = " + std::to_string(M.m) + "\n";
    out += "q = " + std::to_string(M.q) + "\n";
    out += "radius = " + fmt(M.radius) + "\n";
    for (int k = 0; k < M.m; ++k) {
        out += "H " + std::to_string(k + 1) + "\n";
        for (int i = 0; i < M.nz(); ++i) {
            for (int j = 0; j < M.nz(); ++j) {
                if (j) out += ' ';
                out += fmt(M.H[k](i, j).real()) + "," + fmt(M.H[k](i, j).imag());
            }
            out += '\n';
        }
        out += "end\n";
    }
    return out;
}

std::string model_hash(const ManifoldModel& M) { return hex64(fnv1a(to_text(M))); }

std::vector<std::string> bundled_model_names() { return {"sig22_n5", "sig22_m2_n6"}; }

ManifoldModel bundled_model(const std::string& name) {
    if (name == "sig22_n5") return parse_model(kSig22N5, "bundled:sig22_n5");
    if (name == "sig22_m2_n6") return parse_model(kSig22M2N6, "bundled:sig22_m2_n6");
    throw Error("io", "unknown bundled model '" + name + "'");
}

ManifoldModel resolve_model(const std::string& s) {
    for (const auto& b : bundled_model_names())
        if (s == b) return bundled_model(s);
    return load_model_file(s);
}

}  // namespace crq
