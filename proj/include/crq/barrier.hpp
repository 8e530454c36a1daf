#pragma once

#include "crq/geometry.hpp"

#include <string>
#include <vector>

namespace crq {

struct BarrierOptions {
    bool frozen_theta = false;
    VecR theta;                   // used when frozen_theta
    bool include_script_A = true; // false only for negative controls
};

struct BarrierEval {
    VecC zeta, z;
    VecR theta;
    std::vector<VecC> Q; // Q^(k), k = 1..m
    VecC F;              // F^(k) = sum_i Q^(k)_i (zeta_i - z_i)
    MatC a;              // n x (n-q-m), columns a_j
    VecC A;              // A_j = sum_i a_ji (zeta_i - z_i)
    double script_A = 0; // sum |A_j|^2
    VecC P;
    cd Phi;
};

// theta(zeta) = -rho(zeta)/|rho(zeta)|, Error("theta-undefined") on M.
VecR theta_of(const DefiningSystem& D, const VecC& zeta);

// Analytic d theta_k / d zetabar_l, (m x n).
MatC dtheta_dzetabar(const DefiningSystem& D, const VecC& zeta);

VecC q_section(const DefiningSystem& D, int k, const VecC& zeta, const VecC& z);

BarrierEval barrier_eval(const DefiningSystem& D, const VecC& zeta, const VecC& z,
                         const BarrierOptions& opt = {});

// Orthogonal projector onto E_perp(theta) in C^n; smooth in theta away from crossings.
MatC eperp_projector(const ManifoldModel& model, const VecR& theta);

// d Pi / d theta_k by central differences on the sphere, step 1e-5.
std::vector<MatC> eperp_projector_dtheta(const ManifoldModel& model, const VecR& theta);

// Basis of E_perp(theta) aligned with `reference` (Lowdin orthonormalisation of
// the projected reference); smooth in theta near the reference direction.
MatC aligned_frame(const ManifoldModel& model, const VecR& theta, const MatC& reference);

struct PositivityAudit {
    double C_hat = 0;      // min Re Phi / (rho + |zeta - z|^2)
    double C_hat_abs = 0;  // min |Phi| / (rho + |zeta - z|^2)
    VecC argmin_zeta, argmin_z;
    int samples = 0;
    bool pass = false;
    std::vector<double> quotients; // per sample, Re Phi quotient
};

// z on M sampled within `z_scale` of the origin, zeta - z within `neighborhood_scale`.
PositivityAudit barrier_positivity_audit(const DefiningSystem& D, int sample_count,
                                         double neighborhood_scale, std::uint64_t seed,
                                         const BarrierOptions& opt = {}, double z_scale = 0.3);

// Re Phi - rho(zeta)/2 - L rho_theta(zeta - z)/2 - script_A: exact zero for quadrics.
double taylor_remainder(const DefiningSystem& D, const VecC& zeta, const VecC& z,
                        const BarrierOptions& opt = {});

struct TaylorAudit {
    std::vector<double> scales;
    std::vector<double> remainders;
    double slope = 0;
    bool exact = false; // every remainder at roundoff level
    bool pass = false;
};

TaylorAudit taylor_order_audit(const DefiningSystem& D, const VecC& z, const VecC& direction,
                               const std::vector<double>& scales, const BarrierOptions& opt = {});

struct MuDecomposition {
    MatC mu_tau;       // (n-q-m) x n, coefficient of dzetabar_i: conj(a_ji)
    MatC mu_nu;        // (n-q-m) x n: sum_l conj(zeta_l - z_l) d conj(a_jl)/d zetabar_i
    MatC total_fd;     // central differences of conj(A_j) in zetabar
    MatC mu_nu_theta;  // (n-q-m) x m: coefficients against d theta_k
};

MuDecomposition mu_decompose(const DefiningSystem& D, const VecC& zeta, const VecC& z, double step,
                             const BarrierOptions& opt = {});

}  // namespace crq
