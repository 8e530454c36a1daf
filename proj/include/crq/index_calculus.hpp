#pragma once

// Bookkeeping of singular kernels
//   K^I_{d,h} = rho^{I1} (zeta-z)^{I2} (zetabar-zbar)^{I3} drho^{I4} dtheta^{I5} dsigma / (|zeta-z|^d Phi^h)
// by multiindex cardinalities only. h may be a half-integer and is stored doubled.

#include "crq/common.hpp"

#include <string>
#include <vector>

namespace crq {

struct KernelTerm {
    int I1 = 0, I2 = 0, I3 = 0, I4 = 0, I5 = 0;
    int d = 0;
    int h2 = 0;  // 2h

    int k() const { return d - I2 - I3; }
    int l() const { return I1 + I4; }
    double h() const { return 0.5 * h2; }
    // 2(k + h - l) and k + 2h - 2l, both integers.
    int khl2() const { return 2 * k() + h2 - 2 * l(); }
    int k2hl() const { return k() + h2 - 2 * l(); }
    bool operator==(const KernelTerm&) const = default;
};

// Error("invalid-term") unless all cardinalities are >= 0 and I4 + I5 = m - 1.
void check_invariants(const KernelTerm& t, int m);
std::string to_string(const KernelTerm& t);

enum class TermKind { lambda, gamma, phi, psi };
const char* to_string(TermKind k);

// Cardinalities |J_1|..|J_8| (lambda/gamma) or |J_1|..|J_6| (phi/psi).
struct LambdaGammaTerm {
    TermKind kind = TermKind::lambda;
    std::vector<int> J;
    int r = 1;
    int n = 0, m = 0, q = 0;
};

// Error("invalid-term") when the column counts or the theta-rank bound fail.
void check_invariants(const LambdaGammaTerm& t);

// All lambda/gamma terms of R_r. Gamma terms need at least one frame a_i.
std::vector<LambdaGammaTerm> enumerate_lambda_gamma(int n, int m, int q, int r);

struct KernelExpansion {
    bool feasible = true;
    std::string reason;             // set when infeasible
    std::vector<KernelTerm> terms;  // one per split of |I2| + |I3|, with |I1| = 0
};
KernelExpansion to_kernel_terms(const LambdaGammaTerm& term);

enum class EstimateTag {
    eps_power_log2,
    eps_halfpower_log,
    O_delta,
    O_delta_alpha,
    O_one,
    O_log_delta,
    O_delta_alpha_minus_1,
    O_delta_alpha_minus_2,
    vanishing_sqrt_eps_log,
    unclassified,
};
const char* to_string(EstimateTag t);

struct EstimateClass {
    EstimateTag tag = EstimateTag::unclassified;
    double exponent = 0;     // eps exponent for the eps rows
    std::string row;         // the matching condition, for reports
    bool boundary = false;   // sits on a half-integer row boundary
};

// Decision tables for the integrals over V(delta) and B(1)\V(delta);
// dim = 2n - m. Unmatched parameters return `unclassified`.
EstimateClass classify_I1(double alpha, int k, int h2, int dim);
EstimateClass classify_I2(double alpha, int k, int h2, int dim);

enum class DiffKind { D, Dc };

struct DerivedTerm {
    KernelTerm term;
    bool carries_Y = false;  // coefficient hit by Y_zeta(z)
    std::string rule;
    KernelTerm reference;    // term the index inequality is measured against
    int depth = 0;
};

// One D or Dc differentiation per unit of budget, closed under the rewrite
// rules. Every output is checked against its inequality; a violation throws
// Error("rewrite-soundness") with the offending pair.
std::vector<DerivedTerm> differentiate_term(const KernelTerm& term, DiffKind kind, int budget);

// Pass-through inequality and its Y-carrying counterpart.
bool satisfies_22(const KernelTerm& out, const KernelTerm& ref);
bool satisfies_23(const KernelTerm& out, const KernelTerm& ref);

bool admissible_42(const KernelTerm& t, int n, int m);
bool vanishing_39(const KernelTerm& t, int n, int m);

// Phi/psi terms of H_r surviving the frame bound |J_3| <= n - q - m.
std::vector<LambdaGammaTerm> hr_vanishing(int n, int m, int q, int r);

struct Corroboration {
    std::vector<double> eps;
    std::vector<double> integral;
    double slope = 0;
};

// eps^l * integral over V(1) of the reduced kernel (alpha = 0), fitted
// against log eps.
double realized_integral(const KernelTerm& t, int n, int m, double eps);
Corroboration numeric_corroboration(const KernelTerm& t, int n, int m, const std::vector<double>& ladder);

struct DichotomyAudit {
    long terms = 0;
    long admissible = 0;
    long vanishing = 0;
    long unclassified = 0;
    long infeasible = 0;
    long vanishing_shape_violations = 0;  // vanishing terms without k+h-l = 2n-m-1 or l >= m-1
    long classification_gaps = 0;         // table returned unclassified
};
DichotomyAudit dichotomy_audit(int n_max);

struct RewriteAudit {
    long inputs = 0;
    long outputs = 0;
    long violations = 0;
    long admissibility_lost = 0;  // admissible input with a non-admissible descendant
};
RewriteAudit rewrite_audit(int n_max, int budget);

struct HrSweep {
    long cases = 0;      // (n, m, q, r) with r < q
    long survivors = 0;  // must be zero
};
HrSweep hr_sweep(int n_max, int m_max);

// JSON certificate listing every enumerated term, its indices, its
// classification and the rule that discharged it.
std::string index_certificate_json(int n, int m, int q);

}  // namespace crq
