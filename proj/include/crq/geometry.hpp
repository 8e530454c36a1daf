#pragma once

#include "crq/model.hpp"

#include <string>
#include <vector>

namespace crq {

inline constexpr double kTolEig = 1e-9;
inline constexpr double kCrossingGap = 1e-6;

struct RhoValue {
    VecR comps;   // rho_1..rho_m
    double norm;  // (sum rho_k^2)^(1/2)
};

RhoValue rho(const ManifoldModel& model, const VecC& z);

// h_k(z') = <H_k z', z'>, the graph height of sheet k.
VecR graph_height(const ManifoldModel& model, const VecC& zp);

// Graph coordinates: z = (x, u + i(h(x) + r)).
VecC point_from_params(const ManifoldModel& model, const VecC& x, const VecR& u, const VecR& r);
VecC point_on_M(const ManifoldModel& model, const VecC& x, const VecR& u);

struct Direction {
    VecR theta;
};

// Throws Error("invalid-direction") unless |theta| = 1 within 1e-12.
Direction make_direction(const VecR& theta);

// sum_k theta_k H_k on the z' block.
MatC theta_H(const ManifoldModel& model, const VecR& theta);

struct LeviData {
    Direction theta;
    MatC matrix;       // -sum theta_k H_k, the Levi matrix of rho_theta
    VecR eigenvalues;  // ascending
    MatC eigenvectors; // columns matching eigenvalues, phase-fixed
    int neg_count = 0;
    MatC E_basis;      // E_q on the z' block: columns where -matrix is most negative
    MatC E_qm_basis;   // E_{q+m} in C^n: E_q plus the w-directions
};

LeviData levi_direction(const ManifoldModel& model, const VecC& z, const Direction& theta);

// Largest-magnitude entry made real and positive; first index wins ties.
void fix_phase(VecC& v);

struct CertificationReport {
    bool pass = false;
    int min_neg_count = 0;
    VecR worst_theta;
    int directions_sampled = 0;
    double min_selection_gap = 0;  // gap at the E_perp / E_q boundary
    std::vector<VecR> crossings;   // directions where that gap < 1e-6
};

// m = 1 samples theta = +-1; m >= 2 uses `resolution` points per angle.
CertificationReport check_q_pseudoconcave(const ManifoldModel& model, int theta_grid_resolution);

// Directions used by certification sweeps, deterministic order.
std::vector<VecR> theta_grid(int m, int resolution);

// rho~_k = rho_k + A sum_i rho_i^2 with analytic derivatives.
class DefiningSystem {
public:
    explicit DefiningSystem(ManifoldModel model, double A = 0.0);

    const ManifoldModel& model() const { return model_; }
    double A() const { return A_; }

    VecR values(const VecC& z) const;
    // (m x n): d rho~_k / d z_i
    MatC grad(const VecC& z) const;
    // (n x n): d^2 rho~_k / dz_i dz_j
    MatC hess_holo(const VecC& z, int k) const;
    // (n x n): d^2 rho~_k / dz_i dzbar_j
    MatC hess_mixed(const VecC& z, int k) const;

private:
    ManifoldModel model_;
    double A_;
    MatC grad_plain(const VecC& z) const;
};

DefiningSystem kohn_modify(const ManifoldModel& model, double A);

struct KohnSearchResult {
    bool found = false;
    double A = 0;
    double worst_value = 0;  // max eigenvalue of -L rho~_theta on E_{q+m} at the best A tried
    VecR worst_theta;
    std::vector<double> tried;
};

// Smallest A on `grid` with -L rho~_theta <= c < 0 on E_{q+m}(theta, z) for all
// sampled theta and z on M within `z_scale`.
KohnSearchResult kohn_search(const ManifoldModel& model, const std::vector<double>& grid, double c,
                             int z_samples, double z_scale, std::uint64_t seed);

struct EperpFrame {
    MatC a;                  // n x (n-q-m), orthonormal columns, zero w-components
    double boundary_gap = 0; // eigen-gap at the selection boundary
    bool degenerate = false; // boundary_gap < 1e-6
};

EperpFrame eperp_frame(const ManifoldModel& model, const Direction& theta, const VecC& z);

struct TangentialFrame {
    VecC point;
    MatC W;      // n x (n-m), holomorphic tangent fields
    MatC Wbar;   // conjugates
    MatC Y;      // n x m, real vectors d/dRe w_k
    MatR normal; // 2n x m, real gradients of rho_k in (Re z, Im z) layout
    int rank = 0;
};

TangentialFrame tangential_frame(const ManifoldModel& model, const VecC& z);

// Realification: v in C^n -> (Re v, Im v) in R^{2n}.
VecR realify(const VecC& v);
VecC complexify(const VecR& v);

}  // namespace crq
