#pragma once

#include "crq/barrier.hpp"
#include "crq/form_tensor.hpp"

#include <functional>

namespace crq {

// eta(zeta, z, t) with its antiholomorphic and t derivatives.
struct SectionJet {
    VecC value;
    MatC d_zbar;    // (k, l) = d eta_k / d zbar_l
    MatC d_zetabar; // (k, l) = d eta_k / d zetabar_l
    VecC d_t;
    bool analytic = true;
};

// Bochner-Martinelli section (zetabar - zbar)/|zeta - z|^2.
SectionJet bm_section(const VecC& zeta, const VecC& z);

// P/Phi of the strong barrier. Analytic jets for quadric systems (A = 0),
// central differences otherwise (analytic = false). Error("near-singular-phase")
// if |Phi| < tol_phi.
SectionJet barrier_section(const DefiningSystem& D, const VecC& zeta, const VecC& z,
                           const BarrierOptions& opt = {}, double tol_phi = 1e-14);

SectionJet combined_section(const SectionJet& s1, const SectionJet& s2, double t);

// sum_k eta_k (zeta_k - z_k)
cd section_normalization(const SectionJet& s, const VecC& zeta, const VecC& z);

// Column determinant expanded over row permutations:
// 1/((n-r-1)! r!) Det[eta, (dbar_z eta)^r, (dbar_{zeta,t} eta)^(n-r-1)].
FormTensor omega_prime_r(const SectionJet& jet, int r);

// Full omega'(eta) from minors: the coefficient on a generator set S of size
// n-1 is det[eta | M_S] with M the n x (2n+1) matrix of one-form coefficients.
FormTensor omega_prime_minors(const SectionJet& jet);

using SectionFamily = std::function<SectionJet(const VecC& zeta, const VecC& z, double t)>;

struct ClosednessResult {
    double residual = 0;  // max-norm of the closedness form
    FormTensor form;
};

// d_t w'_r + dbar_zeta w'_r + dbar_z w'_{r-1} by central differences of step `step`.
ClosednessResult closedness_check(const SectionFamily& family, int r, const VecC& zeta, const VecC& z,
                                  double t, double step);

struct ClosednessStudy {
    double residual_h = 0;
    double residual_h2 = 0;
    double order = 0;
    double richardson = 0; // max-norm of (4 E(h/2) - E(h)) / 3
    bool pass = false;     // order >= 1.7 and Richardson shrinks the residual
};

ClosednessStudy closedness_study(const SectionFamily& family, int r, const VecC& zeta, const VecC& z,
                                 double t, double step);

}  // namespace crq
