#pragma once

// Anisotropic function-space machinery on a quadric M: the frame flow e_z,
// the complex-tangential projection pi_z, admissible curves
// (|x'| <= 1, |x''| <= 1, x' in T^c M) and sampled lower bounds for the
// Gamma^beta and Pi^a norms.
//
// Frames at zeta on M, as displacement vectors in C^n:
//   U_j = e_j + sum_k 2i conj((H_k z')_j) e_{w_k},  V_j = i U_j,
//   Y_k = e_{w_k} (d / d Re w_k),  d/d rho_k = i e_{w_k}.

#include "crq/homotopy_ops.hpp"

#include <functional>
#include <string>
#include <vector>

namespace crq {

// Coordinates of T_z G in the basis (d/drho, Y, U, V).
struct ExpControls {
    VecR x, y, u, v;  // sizes m, m, n-m, n-m
    static ExpControls zero(const ManifoldModel& model);
    VecR flat() const;
    static ExpControls from_flat(const ManifoldModel& model, const VecR& flat);
};

enum class FrameKind { U, V, Y };
struct FrameField {
    FrameKind kind = FrameKind::U;
    int index = 0;
};
VecC frame_vector(const ManifoldModel& model, const VecC& zeta, const FrameField& field);
std::string to_string(const FrameField& field);

// Classic fourth-order Runge-Kutta on [0, 1]; returns steps + 1 states.
std::vector<VecC> rk4_path(const std::function<VecC(double, const VecC&)>& rhs, const VecC& y0, int steps);

struct ExpPath {
    VecC end;
    std::vector<VecC> path;  // states at t = i / steps
    int steps = 0;
    double halving_change = 0;  // |endpoint(steps) - endpoint(steps / 2)|
};

// Steps double from 8 until halving changes the endpoint by < 1e-9.
// Error("chart-exit") when the path leaves |zeta| <= model.radius.
ExpPath exp_map(const ManifoldModel& model, const VecC& z, const ExpControls& controls);

// e_z^{-1} by damped Newton (tolerance 1e-9); Error("inversion") with the residual.
ExpControls exp_inverse(const ManifoldModel& model, const VecC& z, const VecC& zeta);

struct TangentCurve {
    std::vector<double> s;
    std::vector<VecC> x, velocity, acceleration;
    std::vector<VecC> generator;  // polynomial control coefficients in the (U, V) frame, c(s) = sum_p g_p s^p
};

struct CurveAudit {
    double max_speed = 0, max_acceleration = 0;
    double max_normal = 0;  // |d rho_k(x')| over samples
    double max_rho = 0;     // distance of the samples from M
    bool pass = false;
};
// Bounds 1 + slack for speed and acceleration, 1e-8 for the normal part.
CurveAudit audit_curve(const ManifoldModel& model, const TangentCurve& curve, double slack = 0.05);

// Random cubic controls in the (U, V) frame from `start`, rescaled until
// speed and acceleration stay below 0.9.
TangentCurve random_curve(const ManifoldModel& model, Rng& rng, const VecC& start, int samples);

struct PiProjection {
    VecC point;
    ExpControls controls;   // e_z^{-1}(zeta)
    ExpControls projected;  // p^c_z of the controls
    TangentCurve curve;     // x(zeta, z, s) = e_z(s * projected)
};
PiProjection pi_c_projection(const ManifoldModel& model, const VecC& z, const VecC& zeta, int samples = 50);

using ScalarField = std::function<cd(const VecC&)>;

enum class HolderRegime { ambient, tangential };
const char* to_string(HolderRegime r);

// Sampled sup of difference quotients. First differences for exponents
// <= 1, symmetric second differences above 1. A lower bound on the norm.
struct HolderEstimate {
    double beta = 0;
    double quotient_sup = 0;
    long pair_count = 0;
    HolderRegime regime = HolderRegime::ambient;
    std::vector<double> quotients;  // per pair (ambient) or per curve (tangential)
};

struct NormSampling {
    long pair_budget = 2000;
    long curve_budget = 16;
    int curve_samples = 33;
    std::uint64_t seed = 1;
    double region = 0.3;  // sample points within this parameter radius of the origin
};

struct GammaEstimate {
    HolderEstimate ambient;     // Lambda^{beta/2} with chart Euclidean distance
    HolderEstimate tangential;  // Lambda^beta along admissible curves
    double total = 0;
    bool lower_bound = true;
};

HolderEstimate ambient_holder(const ManifoldModel& model, const ScalarField& h, double exponent, const NormSampling& s);
HolderEstimate tangential_holder(const ManifoldModel& model, const ScalarField& h, double beta, const NormSampling& s);
GammaEstimate gamma_norm_estimate(const ManifoldModel& model, const ScalarField& h, double beta, const NormSampling& s);

// h moved along a frame field on M, by central differences through the graph projection.
ScalarField derivative_along(const ManifoldModel& model, const ScalarField& h, const FrameField& field, double step = 1e-4);

// D^c_1 ... D^c_s D_1 ... D_k with D^c in {U, V} and D in {Y, U, V}.
struct DerivativeWord {
    std::vector<FrameField> D;   // applied first
    std::vector<FrameField> Dc;  // applied after D
    int k() const { return static_cast<int>(D.size()); }
    int s() const { return static_cast<int>(Dc.size()); }
    int weight() const { return 2 * k() + s(); }
};
// All words with 2k + s <= max_weight, shortest first.
std::vector<DerivativeWord> derivative_words(const ManifoldModel& model, int max_weight);
ScalarField apply_word(const ManifoldModel& model, const ScalarField& h, const DerivativeWord& word);

struct PiEstimate {
    int p = 0;
    double alpha = 0;
    double gamma_alpha_sup = 0;          // over words with 2k + s <= p
    double gamma_one_plus_alpha_sup = 0; // over words with 2k + s <= p - 1
    double total = 0;
    long words = 0;
    bool lower_bound = true;
};
// a = p + alpha with p <= 2; Error("order") beyond. `word_budget` keeps the
// first words of each weight class in the deterministic enumeration order.
PiEstimate pi_norm_estimate(const ManifoldModel& model, const ScalarField& h, double a, const NormSampling& s,
                            int word_budget = 12);

struct RegularityRow {
    std::string quantity;  // "f" or "R_1 f"
    int coefficient = 0;   // tangential index
    std::string norm;      // "Pi^alpha" or "Pi^{1+alpha}"
    double gamma_alpha = 0, gamma_one_plus_alpha = 0, total = 0;
    long words = 0;
};
struct RegularityReport {
    double alpha = 0;
    double epsilon = 0;
    long budget = 0;
    std::uint64_t seed = 0;
    std::vector<RegularityRow> rows;
    std::string note;
    std::string to_json() const;
};
// Gamma^alpha quotients of the coefficients of f against Pi^{1+alpha}
// quotients of R_1 f on matched samples. R_1 f uses one grid centred at the
// support centre so that it is smooth in z. Demonstrative only.
RegularityReport regularity_gain_report(const DefiningSystem& D, const FormField& f, const CutoffPair& support,
                                        double alpha, double epsilon, long budget, std::uint64_t seed,
                                        const NormSampling& s);

}  // namespace crq
