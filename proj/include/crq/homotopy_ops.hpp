#pragma once

// Local operators R_r(eps), H_r(eps) as quadratures over M_eps x [0,1],
// the extension E_U, the projection pr_M, dbar_M and partition-of-unity gluing.
//
// Forms are (0,r) forms with ambient coefficients on dzbar_J, J in
// combinations(n, r). Tangential forms are stored by their values on the
// frame Wbar_1..Wbar_{n-m}; those coefficients sit on dzbar'_J, J in
// combinations(n-m, r).

#include "crq/barrier.hpp"

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace crq {

// c * z'^a * zbar'^b * (Re w)^c
struct Monomial {
    cd coef;
    std::vector<int> z, zbar, u;
};
using Polynomial = std::vector<Monomial>;

// Value and first derivatives in ambient coordinates. Rows follow the
// coefficient index, columns the coordinate.
struct FormJet {
    VecC value;
    MatC d_z;
    MatC d_zbar;
};

struct FormField {
    int n = 0;
    int r = 0;
    std::function<FormJet(const VecC& z, bool derivatives)> eval;
    bool analytic = false;  // false: derivatives by central differences
    std::string support = "global";
};

// Jet of g at z; central differences of step 1e-5 when g is not analytic.
FormJet form_jet(const FormField& g, const VecC& z);

// Smooth radial bumps in the graph parameters (z', Re w):
// theta = 1 for d <= inner, 0 for d >= outer; theta' = 1 for d <= outer,
// 0 for d >= 2 outer - inner. Hence theta' * theta = theta.
struct CutoffPair {
    VecC center_x;
    VecR center_u;
    double radius_inner = 0.25;
    double radius_outer = 0.6;
    std::string id = "cutoff";
};

CutoffPair centered_cutoff(const ManifoldModel& model, double inner, double outer, const std::string& id = "cutoff");

// Scalar bump as a (0,0) form field with analytic jets.
FormField cutoff_field(const ManifoldModel& model, const CutoffPair& c, bool prime);

// sum_J p_J(z', zbar', Re w) dzbar_J with analytic jets, one polynomial per
// J in combinations(n, r).
FormField polynomial_form(const ManifoldModel& model, int r, const std::vector<Polynomial>& coeffs);

FormField scale(const FormField& a, const FormField& function);  // function * a
FormField wedge(const FormField& a, const FormField& b);
FormField sum(const FormField& a, const FormField& b, cd beta = 1.0);  // a + beta b
FormField zero_form(const ManifoldModel& model, int r);

// The bundled (0,1) test form on the primary model: polynomial coefficients on
// dzbar' times the cutoff; and the bundled scalar used for calibration.
FormField bundled_test_form(const ManifoldModel& model, const CutoffPair& c);
FormField bundled_test_function(const ManifoldModel& model, const CutoffPair& c);

// E_U: coefficients constant along the rho-coordinates. `shear` = 0 is the
// graph rule; otherwise coefficients are constant along
// (z', Re w + shear * rho, rho), the rule after a linear reparameterization.
struct Extension {
    double shear = 0.0;
};

// Point of M reached from zeta along the extension fibre.
VecC fibre_projection(const ManifoldModel& model, const VecC& zeta, const Extension& ext);
FormField extend(const ManifoldModel& model, const FormField& g, const Extension& ext = {});

// Values of an ambient (0,r) form at z on M on the Wbar frame.
VecC pr_M(const ManifoldModel& model, const VecC& ambient, int r, const VecC& z);
// Tangential coefficients as an ambient form supported on dzbar'.
VecC tangential_to_ambient(const ManifoldModel& model, const VecC& tangential, int r);
// dbar of ambient coefficients from a jet: (0,r) -> (0,r+1).
VecC ambient_dbar(const FormJet& jet, int n, int r);

// pr_M o dbar o E_U as a (0,r+1) field, graph-constant off M.
FormField dbar_M(const ManifoldModel& model, const FormField& g);

enum class GridMode { tensor, monte_carlo };

struct GridNode {
    VecC zeta;
    VecC x;
    VecR u;
    VecR theta;             // rho(zeta) = eps * theta
    double weight = 0;      // parameter-space quadrature weight; 0 outside the box
    double surface_factor = 0;  // area element over the parameter element
    VecC pullback;          // n entries: (dzetabar_[n]\j ^ omega)(T) with boundary orientation
};

// M_eps over the box |x - c_x|_inf, |u - c_u|_inf <= radius_outer of the cutoff.
// Monte Carlo nodes mix equal shares of uniform, Euclidean-shell and
// parabolic-shell samples centred at `center` (an evaluation point), with
// shells stratified by index. Node i is a pure function of (seed, i).
struct QuadratureGrid {
    const ManifoldModel* model = nullptr;
    CutoffPair support;
    double epsilon = 0;
    long budget = 0;
    GridMode mode = GridMode::monte_carlo;
    std::uint64_t seed = 0;
    VecC center;
    GaussRule t_rule;

    std::shared_ptr<const std::vector<GridNode>> cached;  // set by cache_nodes()

    GridNode node(long i) const;
    std::vector<GridNode> materialize() const;
    void cache_nodes();  // keeps all nodes in memory for repeated sweeps
    double box_volume() const;  // parameter volume times the number of sheets
};

inline constexpr double kTolPhi = 1e-12;
double tube_radius(const ManifoldModel& model);

QuadratureGrid build_grid(const ManifoldModel& model, const CutoffPair& support, double epsilon, long node_budget,
                          GridMode mode, std::uint64_t seed, const std::optional<VecC>& center = std::nullopt);

struct OperatorResult {
    VecC value;       // tangential coefficients
    VecC std_error;   // Monte Carlo standard error per coefficient
    long nodes = 0;
    long rejected = 0;
};

// Orientation of [0,1] x M_eps relative to the t-first product; fixed once by
// the (0,0) calibration f = R_1(dbar_M f).
inline constexpr double kTimeOrientation = 1.0;

OperatorResult R_r_eps(const DefiningSystem& D, const FormField& g, const VecC& z, const QuadratureGrid& grid,
                       const Extension& ext = {});
OperatorResult H_r_eps(const DefiningSystem& D, const FormField& g, const VecC& z, const QuadratureGrid& grid,
                       const Extension& ext = {});
// (n-1)!/(2 pi i)^n * integral over M_eps of g~ omega'_0(BM) ^ omega: the
// Bochner-Martinelli reproduction of a function, up to the volume term.
OperatorResult bm_reproduction(const DefiningSystem& D, const FormField& g, const VecC& z, const QuadratureGrid& grid,
                               const Extension& ext = {});

struct KernelVanishing {
    int nodes = 0;
    double max_ratio = 0;  // max coefficient of omega'_r(P/Phi) over its Hadamard scale
};
// Pointwise omega'_r(P/Phi) on the first `count` grid nodes for a fixed z.
KernelVanishing kernel_vanishing(const DefiningSystem& D, int r, const VecC& z, const QuadratureGrid& grid, int count);

struct HomotopyPoint {
    VecC f;           // tangential f(z)
    VecC dbar_R;      // dbar_M R_r f (zero for r = 0)
    VecC R_next;      // R_{r+1} dbar_M f
    VecC H;           // H_r f
    VecC residual;    // f - dbar_R - R_next
    double residual_norm = 0;
    double std_error = 0;  // Monte Carlo standard error of the residual norm
    double R_std_error = 0;  // standard error of R_r f (r >= 1)
    VecC R;           // R_r f (r >= 1)
};

struct HomotopyRung {
    double epsilon = 0;
    long budget = 0;
    std::uint64_t seed = 0;
    std::vector<HomotopyPoint> points;
    double max_residual = 0;
    double max_std_error = 0;
    long rejected = 0;
};

struct HomotopyOptions {
    Extension extension;
    double fd_step = 0.02;  // relative to eps, for dbar_M R_r f
    bool with_H = true;
};

// f - dbar_M R_r f - R_{r+1} dbar_M f at each test point, one grid per point
// centred there (seed mixed with the point index).
HomotopyRung homotopy_rung(const DefiningSystem& D, const FormField& f, const CutoffPair& support,
                           const std::vector<VecC>& test_points, double epsilon, long budget, std::uint64_t seed,
                           const HomotopyOptions& opt = {});

std::vector<VecC> bundled_test_points(const ManifoldModel& model);

// Partition of unity: theta_i = b_i / sum b_k, theta'_i = b'_i.
struct GlueResult {
    VecC R;  // tangential (0, r-1)
    VecC H;  // tangential (0, r)
    VecC H_cutoff;  // - dbar_M theta'_i ^ R_r(theta_i g) summed
    VecC H_dbar_theta;  // theta'_i R_{r+1}(dbar_M theta_i ^ g) summed
    VecC H_local;   // theta'_i H_r(theta_i g) summed
};

// Error("cover") if |sum theta_i - 1| > 1e-8 on a sample of supp g.
GlueResult glue(const DefiningSystem& D, const std::vector<CutoffPair>& covers, const FormField& g, const VecC& z,
                const QuadratureGrid& grid);

// Partition function theta_i of the cover list as a scalar field.
FormField partition_function(const ManifoldModel& model, const std::vector<CutoffPair>& covers, int i);

struct ExtensionComparison {
    std::vector<VecC> R_graph, R_sheared;
    double max_difference = 0;
    double tolerance = 0;  // 2 x max Monte Carlo standard error of R_1 f
    bool pass = false;
};

ExtensionComparison extension_independence(const DefiningSystem& D, const FormField& f, const CutoffPair& support,
                                           const std::vector<VecC>& test_points, double epsilon, long budget,
                                           std::uint64_t seed, double shear);

// Versioned grid descriptor with a checksum of the first nodes; load verifies
// the model hash and regenerates the nodes to compare checksums.
void save_grid_cache(const QuadratureGrid& grid, const std::string& path);
QuadratureGrid load_grid_cache(const ManifoldModel& model, const std::string& path);

}  // namespace crq
