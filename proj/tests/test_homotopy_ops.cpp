#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crq/cf_kernels.hpp"
#include "crq/homotopy_ops.hpp"
#include "support/oracles.hpp"

#include <Eigen/LU>

#include <cstdio>
#include <fstream>

using namespace crq;

namespace {

const ManifoldModel& primary() {
    static const ManifoldModel M = bundled_model("sig22_n5");
    return M;
}

std::string error_kind(const std::function<void()>& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.kind();
    }
    return "";
}

VecC random_point_on_M(const ManifoldModel& M, Rng& rng, double scale) {
    VecC x = oracle::random_vec(rng, M.nz()) * scale;
    VecR u(M.m);
    for (int k = 0; k < M.m; ++k) u(k) = rng.uniform(-scale, scale);
    return point_on_M(M, x, u);
}

// Central-difference jet of any field, independent of its analytic flag.
FormJet fd_jet(const FormField& g, const VecC& z, double h = 1e-6) {
    FormField copy = g;
    copy.analytic = false;
    FormJet j = g.eval(z, false);
    j.d_z = MatC::Zero(j.value.size(), g.n);
    j.d_zbar = MatC::Zero(j.value.size(), g.n);
    for (int l = 0; l < g.n; ++l) {
        VecC e = VecC::Zero(g.n);
        e(l) = h;
        VecC dx = (g.eval(z + e, false).value - g.eval(z - e, false).value) / (2 * h);
        VecC dy = (g.eval(z + kI * e, false).value - g.eval(z - kI * e, false).value) / (2 * h);
        j.d_z.col(l) = 0.5 * (dx - kI * dy);
        j.d_zbar.col(l) = 0.5 * (dx + kI * dy);
    }
    return j;
}

// w restricted to M as a polynomial in (z', zbar', Re w): u + i z'^* H z'.
FormField w_function(const ManifoldModel& M) {
    const int d = M.nz();
    Polynomial p;
    std::vector<int> u1(M.m, 0);
    u1[0] = 1;
    p.push_back({cd(1.0), {}, {}, u1});
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) {
            if (M.H[0](a, b) == 0.0) continue;
            std::vector<int> za(d, 0), zb(d, 0);
            za[b] = 1;
            zb[a] = 1;
            p.push_back({kI * M.H[0](a, b), za, zb, {}});
        }
    return polynomial_form(M, 0, {p});
}

// Reference R_1 at one node through the library sections and the minor
// expansion of omega', with an independent t-rule.
cd reference_R1_node(const DefiningSystem& D, const FormField& gt, const GridNode& nd, const VecC& z) {
    const int n = D.model().n;
    SectionJet s0 = bm_section(nd.zeta, z);
    SectionJet s1 = barrier_section(D, nd.zeta, z);
    s0.d_t = VecC::Zero(n);
    s1.d_t = VecC::Zero(n);
    VecC gv = gt.eval(nd.zeta, false).value;
    FormTensor g1 = FormTensor::one_form(n, VecC::Zero(n), gv, 0.0);
    GaussRule tr = gauss_legendre(7, 0.0, 1.0);
    cd total = 0;
    for (int q = 0; q < tr.nodes.size(); ++q) {
        FormTensor w = wedge(g1, omega_prime_minors(combined_section(s0, s1, tr.nodes(q))));
        for (int j = 0; j < n; ++j) {
            MultiIndex L;
            for (int l = 0; l < n; ++l)
                if (l != j) L.push_back(l);
            // dzetabar_L ^ dt ^ omega integrates as (-1)^{n-1} dt ^ dzetabar_L ^ omega.
            const double s = (n - 1) % 2 == 0 ? 1.0 : -1.0;
            total += tr.weights(q) * s * w.coeff({}, L, 1) * nd.pullback(j);
        }
    }
    return nd.weight * total;
}

}  // namespace

TEST_CASE("polynomial and cutoff jets match central differences") {
    const ManifoldModel& M = primary();
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    Rng rng(5);
    FormField f = bundled_test_form(M, c);
    FormField fn = bundled_test_function(M, c);
    for (int s = 0; s < 20; ++s) {
        VecC z = oracle::random_vec(rng, M.n) * 0.25;
        for (const FormField* g : {&f, &fn}) {
            FormJet a = form_jet(*g, z), b = fd_jet(*g, z);
            CHECK((a.value - b.value).norm() < 1e-14);
            CHECK((a.d_z - b.d_z).norm() < 1e-6);
            CHECK((a.d_zbar - b.d_zbar).norm() < 1e-6);
        }
    }
    // A zero coordinate takes the direct derivative branch.
    VecC z0 = VecC::Zero(M.n);
    z0(1) = 0.1;
    FormJet a = form_jet(f, z0), b = fd_jet(f, z0);
    CHECK((a.d_zbar - b.d_zbar).norm() < 1e-6);
    CHECK((a.d_z - b.d_z).norm() < 1e-6);
}

TEST_CASE("cutoff pair: theta is 1 inside, 0 outside, and theta' theta = theta") {
    const ManifoldModel& M = primary();
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    FormField th = cutoff_field(M, c, false), thp = cutoff_field(M, c, true);
    Rng rng(9);
    for (int s = 0; s < 500; ++s) {
        VecC z = oracle::random_vec(rng, M.n) * rng.uniform(0.0, 0.5);
        const double a = th.eval(z, false).value(0).real(), b = thp.eval(z, false).value(0).real();
        CHECK(a >= 0.0);
        CHECK(a <= 1.0);
        CHECK(a * b == doctest::Approx(a).epsilon(1e-14));
    }
    VecC in = VecC::Zero(M.n), out = VecC::Zero(M.n);
    in(0) = 0.2;
    out(0) = 0.61;
    CHECK(th.eval(in, false).value(0) == cd(1.0));
    CHECK(th.eval(out, false).value(0) == cd(0.0));
    CHECK_THROWS_AS(centered_cutoff(M, 0.5, 0.4), Error);
}

TEST_CASE("extension: restriction to M is g, graph rule constant along rho") {
    const ManifoldModel& M = primary();
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    FormField f = bundled_test_form(M, c);
    FormField eg = extend(M, f), es = extend(M, f, {0.7});
    Rng rng(21);
    for (int s = 0; s < 20; ++s) {
        VecC z = random_point_on_M(M, rng, 0.3);
        CHECK((eg.eval(z, false).value - f.eval(z, false).value).norm() < 1e-14);
        CHECK((es.eval(z, false).value - f.eval(z, false).value).norm() < 1e-12);
        VecC zeta = z;
        zeta(M.n - 1) += kI * 0.03;  // moves rho, keeps z' and Re w
        CHECK((eg.eval(zeta, false).value - f.eval(z, false).value).norm() < 1e-14);
        // Chain-rule jets of both rules against central differences.
        for (const FormField* e : {&eg, &es}) {
            FormJet a = form_jet(*e, zeta), b = fd_jet(*e, zeta);
            CHECK((a.d_zbar - b.d_zbar).norm() < 1e-6);
            CHECK((a.d_z - b.d_z).norm() < 1e-6);
        }
    }
}

TEST_CASE("pr_M is idempotent and annihilates dbar rho") {
    const ManifoldModel& M = primary();
    DefiningSystem D(M);
    Rng rng(33);
    for (int s = 0; s < 10; ++s) {
        VecC z = random_point_on_M(M, rng, 0.4);
        for (int r = 1; r <= 3; ++r) {
            VecC a = oracle::random_vec(rng, static_cast<int>(combinations(M.n, r).size()));
            VecC p = pr_M(M, a, r, z);
            CHECK((pr_M(M, tangential_to_ambient(M, p, r), r, z) - p).norm() < 1e-12 * (1 + p.norm()));
        }
        // dbar rho has coefficients conj(d rho / d z).
        VecC drho = D.grad(z).row(0).conjugate().transpose();
        CHECK(pr_M(M, drho, 1, z).norm() < 1e-12);
        // dbar rho ^ alpha for a random (0,1) form alpha.
        VecC alpha = oracle::random_vec(rng, M.n);
        auto C2 = combinations(M.n, 2);
        VecC wedge2 = VecC::Zero(C2.size());
        for (std::size_t K = 0; K < C2.size(); ++K) {
            const int i = C2[K][0], j = C2[K][1];
            wedge2(K) = drho(i) * alpha(j) - drho(j) * alpha(i);
        }
        CHECK(pr_M(M, wedge2, 2, z).norm() < 1e-12);
    }
}

TEST_CASE("dbar_M: CR functions are annihilated, zbar_1 maps to dzbar'_1, and dbar_M^2 = 0") {
    const ManifoldModel& M = primary();
    const int d = M.nz();
    std::vector<int> z1(d, 0);
    z1[0] = 1;
    FormField hol = polynomial_form(M, 0, {Polynomial{{cd(1.0), z1, {}, {}}}});
    FormField antihol = polynomial_form(M, 0, {Polynomial{{cd(1.0), {}, z1, {}}}});
    FormField w = w_function(M);
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    FormField fn = bundled_test_function(M, c);
    Rng rng(41);
    for (int s = 0; s < 10; ++s) {
        VecC z = random_point_on_M(M, rng, 0.3);
        CHECK(dbar_M(M, hol).eval(z, false).value.norm() < 1e-12);
        CHECK(dbar_M(M, w).eval(z, false).value.norm() < 1e-12);
        VecC v = dbar_M(M, antihol).eval(z, false).value;
        CHECK(std::abs(v(0) - 1.0) < 1e-12);
        CHECK(v.tail(M.n - 1).norm() < 1e-12);
        CHECK(dbar_M(M, dbar_M(M, fn)).eval(z, false).value.norm() < 1e-6);
    }
}

TEST_CASE("grid: nodes lie on M_eps, weights integrate the box, nodes are pure functions of (seed, i)") {
    const ManifoldModel& M = primary();
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    auto pts = bundled_test_points(M);
    QuadratureGrid g = build_grid(M, c, 0.05, 100000, GridMode::monte_carlo, 3, pts[1]);
    Kahan<double> total;
    long outside = 0;
    for (long i = 0; i < g.budget; ++i) {
        GridNode nd = g.node(i);
        total.add(nd.weight);
        if (nd.weight == 0.0) ++outside;
        if (i % 97 == 0) {
            RhoValue r = rho(M, nd.zeta);
            CHECK(std::abs(r.comps(0) - 0.05 * nd.theta(0)) < 1e-12);
        }
    }
    CHECK(total.sum() == doctest::Approx(g.box_volume()).epsilon(0.01));
    CHECK(outside > 0);
    QuadratureGrid g2 = build_grid(M, c, 0.05, 100000, GridMode::monte_carlo, 3, pts[1]);
    QuadratureGrid g3 = build_grid(M, c, 0.05, 100000, GridMode::monte_carlo, 4, pts[1]);
    for (long i : {0L, 1L, 2L, 777L, 99999L}) {
        CHECK(g.node(i).zeta == g2.node(i).zeta);
        CHECK(g.node(i).weight == g2.node(i).weight);
        CHECK(g.node(i).zeta != g3.node(i).zeta);
    }
    // Tensor grids integrate the box exactly.
    QuadratureGrid t = build_grid(M, c, 0.05, 2000, GridMode::tensor, 0);
    double tw = 0;
    for (const GridNode& nd : t.materialize()) tw += nd.weight;
    CHECK(tw == doctest::Approx(t.box_volume()).epsilon(1e-12));
    CHECK(error_kind([&] { build_grid(M, c, 0.6, 2000, GridMode::monte_carlo, 0); }) == "outside-tube");
    CHECK(error_kind([&] { build_grid(M, c, 0.05, 10, GridMode::monte_carlo, 0); }) == "invalid-argument");
}

TEST_CASE("grid: pullback determinants and orientation against finite differences of the parameterization") {
    const ManifoldModel& M = primary();
    const int n = M.n, d = M.nz(), dim = 2 * n - 1;
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    const double eps = 0.05, h = 1e-6;
    QuadratureGrid g = build_grid(M, c, eps, 3000, GridMode::monte_carlo, 12);
    for (long i = 0; i < 40; ++i) {
        GridNode nd = g.node(i);
        auto at = [&](const VecR& p, double e) {
            VecC x(d);
            for (int a = 0; a < d; ++a) x(a) = cd(p(a), p(d + a));
            return point_from_params(M, x, p.tail(M.m), e * nd.theta);
        };
        VecR p(dim);
        for (int a = 0; a < d; ++a) {
            p(a) = nd.x(a).real();
            p(d + a) = nd.x(a).imag();
        }
        p.tail(M.m) = nd.u;
        MatC T(n, dim);
        for (int k = 0; k < dim; ++k) {
            VecR e = VecR::Zero(dim);
            e(k) = h;
            T.col(k) = (at(p + e, eps) - at(p - e, eps)) / (2 * h);
        }
        VecC N = (at(p, eps + h) - at(p, eps - h)) / (2 * h);
        MatR R(2 * n, 2 * n);
        for (int i2 = 0; i2 < n; ++i2) {
            R(2 * i2, 0) = N(i2).real();
            R(2 * i2 + 1, 0) = N(i2).imag();
            for (int k = 0; k < dim; ++k) {
                R(2 * i2, k + 1) = T(i2, k).real();
                R(2 * i2 + 1, k + 1) = T(i2, k).imag();
            }
        }
        const double o = R.determinant() > 0 ? 1.0 : -1.0;
        for (int j = 0; j < n; ++j) {
            MatC A(dim, dim);
            int row = 0;
            for (int l = 0; l < n; ++l)
                if (l != j) A.row(row++) = T.row(l).conjugate();
            for (int l = 0; l < n; ++l) A.row(row++) = T.row(l);
            const cd ref = o * A.determinant();
            CHECK(std::abs(nd.pullback(j) - ref) < 1e-6 * (1 + std::abs(ref)));
        }
    }
}

TEST_CASE("R_1: quadrature assembly agrees with the library sections and the minor expansion") {
    const ManifoldModel& M = primary();
    DefiningSystem D(M);
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    FormField f = bundled_test_form(M, c);
    FormField ft = extend(M, f);
    auto pts = bundled_test_points(M);
    for (int p : {0, 3}) {
        QuadratureGrid g = build_grid(M, c, 0.05, 1500, GridMode::monte_carlo, 77, pts[p]);
        OperatorResult R = R_r_eps(D, f, pts[p], g);
        Kahan<cd> ref;
        for (long i = 0; i < g.budget; ++i) {
            GridNode nd = g.node(i);
            if (nd.weight == 0.0) continue;
            ref.add(reference_R1_node(D, ft, nd, pts[p]));
        }
        const cd C = kTimeOrientation * -factorial(M.n - 1) / std::pow(2.0 * kPi * kI, M.n);
        CHECK(std::abs(R.value(0) - C * ref.sum()) < 1e-10 * (1e-3 + std::abs(R.value(0))));
        CHECK(R.rejected == 0);
    }
}

TEST_CASE("R_r and H_r are linear; zero input gives zero") {
    const ManifoldModel& M = primary();
    DefiningSystem D(M);
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    FormField f = bundled_test_form(M, c);
    FormField g = scale(wedge(dbar_M(M, bundled_test_function(M, c)), bundled_test_function(M, c)), cutoff_field(M, c, false));
    VecC z = bundled_test_points(M)[2];
    QuadratureGrid grid = build_grid(M, c, 0.05, 1200, GridMode::monte_carlo, 5, z);
    OperatorResult a = R_r_eps(D, f, z, grid), b = R_r_eps(D, g, z, grid);
    OperatorResult ab = R_r_eps(D, sum(f, g, cd(2.0, -1.0)), z, grid);
    CHECK(std::abs(ab.value(0) - a.value(0) - cd(2.0, -1.0) * b.value(0)) < 1e-12 * (1 + std::abs(ab.value(0))));
    CHECK(R_r_eps(D, zero_form(M, 1), z, grid).value.norm() == 0.0);
    CHECK(H_r_eps(D, zero_form(M, 1), z, grid).value.norm() == 0.0);
    CHECK_THROWS_AS(R_r_eps(D, zero_form(M, 0), z, grid), Error);
}

TEST_CASE("H_1 kernel vanishes pointwise on the primary model (r = 1 < q = 2)") {
    const ManifoldModel& M = primary();
    DefiningSystem D(M);
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    VecC z = bundled_test_points(M)[1];
    QuadratureGrid grid = build_grid(M, c, 0.05, 2000, GridMode::monte_carlo, 8, z);
    KernelVanishing kv = kernel_vanishing(D, 1, z, grid, 1000);
    CHECK(kv.nodes == 1000);
    CHECK(kv.max_ratio < 1e-10);
    // r = q is not covered: omega'_2 has a nonzero coefficient somewhere.
    CHECK(kernel_vanishing(D, 2, z, grid, 50).max_ratio > 1e-6);
    FormField f = bundled_test_form(M, c);
    OperatorResult H = H_r_eps(D, f, z, grid);
    OperatorResult R = R_r_eps(D, f, z, grid);
    CHECK(H.value.norm() < 1e-10 * (1e-3 + std::abs(R.value(0))));
}

TEST_CASE("Bochner-Martinelli reproduction and the (0,0) identity f = R_1 dbar_M f") {
    const ManifoldModel& M = primary();
    DefiningSystem D(M);
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    FormField fn = bundled_test_function(M, c);
    FormField dfn = dbar_M(M, fn);
    auto pts = bundled_test_points(M);
    for (int p : {0, 1}) {
        QuadratureGrid g = build_grid(M, c, 0.01, 20000, GridMode::monte_carlo, 7 + p, pts[p]);
        const cd f = fn.eval(pts[p], false).value(0);
        OperatorResult bm = bm_reproduction(D, fn, pts[p], g);
        OperatorResult R = R_r_eps(D, dfn, pts[p], g);
        // Volume term of order eps over the cutoff scale plus sampling noise.
        CHECK(std::abs(bm.value(0) - f) < 0.15);
        CHECK(std::abs(R.value(0) - f) < 0.15);
        CHECK(std::abs(R.value(0) - bm.value(0)) < 0.06);
    }
}

TEST_CASE("homotopy rung: deterministic, H_1 = 0, residual reported with its standard error") {
    const ManifoldModel& M = primary();
    DefiningSystem D(M);
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    FormField f = bundled_test_form(M, c);
    std::vector<VecC> pts = {bundled_test_points(M)[0]};
    HomotopyRung a = homotopy_rung(D, f, c, pts, 0.1, 3000, 11);
    HomotopyRung b = homotopy_rung(D, f, c, pts, 0.1, 3000, 11);
    REQUIRE(a.points.size() == 1);
    CHECK(a.points[0].residual == b.points[0].residual);
    CHECK(a.points[0].H.norm() < 1e-12);
    CHECK(a.points[0].std_error > 0);
    VecC recon = a.points[0].dbar_R + a.points[0].R_next;
    CHECK((a.points[0].residual - (a.points[0].f - recon)).norm() < 1e-12);
    // The reconstruction points along f: the O(eps) deficit scales it, it does not rotate it.
    const cd proj = a.points[0].f.dot(recon) / a.points[0].f.squaredNorm();
    CHECK(proj.real() > 0.3);
    CHECK(proj.real() < 1.1);
}

TEST_CASE("glue: partition of unity reproduces the local operator and detects deficient covers") {
    const ManifoldModel& M = primary();
    DefiningSystem D(M);
    CutoffPair c = centered_cutoff(M, 0.25, 0.6, "main");
    FormField f = bundled_test_form(M, c);
    VecC z = bundled_test_points(M)[0];
    QuadratureGrid grid = build_grid(M, c, 0.05, 1200, GridMode::monte_carlo, 4, z);
    CutoffPair shifted = c;
    shifted.id = "shifted";
    shifted.center_x(0) = 0.3;
    std::vector<CutoffPair> covers = {c, shifted};
    Rng rng(2);
    for (int s = 0; s < 50; ++s) {
        VecC p = random_point_on_M(M, rng, 0.08);  // inside supp b_main
        const double tot = partition_function(M, covers, 0).eval(p, false).value(0).real() +
                           partition_function(M, covers, 1).eval(p, false).value(0).real();
        CHECK(tot == doctest::Approx(1.0).epsilon(1e-12));
    }
    GlueResult gr = glue(D, covers, f, z, grid);
    OperatorResult R = R_r_eps(D, f, z, grid);
    CHECK(std::abs(gr.R(0) - R.value(0)) < 1e-10 * (1e-3 + std::abs(R.value(0))));
    CHECK(gr.H_cutoff.norm() < 1e-12);  // theta' = 1 near z
    CHECK(gr.H_local.norm() < 1e-10);
    CutoffPair small = centered_cutoff(M, 0.05, 0.1, "small");
    CHECK(error_kind([&] { glue(D, {small}, f, z, grid); }) == "cover");
}

TEST_CASE("extension independence: identical rules agree exactly") {
    const ManifoldModel& M = primary();
    DefiningSystem D(M);
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    FormField f = bundled_test_form(M, c);
    std::vector<VecC> pts = {bundled_test_points(M)[4]};
    ExtensionComparison same = extension_independence(D, f, c, pts, 0.05, 1500, 3, 0.0);
    CHECK(same.max_difference == 0.0);
    CHECK(same.pass);
    CHECK(same.tolerance > 0);
}

TEST_CASE("grid cache: round trip, model mismatch, missing file") {
    const ManifoldModel& M = primary();
    CutoffPair c = centered_cutoff(M, 0.25, 0.6);
    QuadratureGrid g = build_grid(M, c, 0.05, 1500, GridMode::monte_carlo, 19, bundled_test_points(M)[3]);
    const std::string path = "test_grid_cache.txt";
    save_grid_cache(g, path);
    QuadratureGrid h = load_grid_cache(M, path);
    CHECK(h.budget == g.budget);
    CHECK(h.node(1234).zeta == g.node(1234).zeta);
    ManifoldModel other = M;
    other.H[0](0, 0) = 2.0;
    CHECK(error_kind([&] { load_grid_cache(other, path); }) == "cache-mismatch");
    std::remove(path.c_str());
    CHECK(error_kind([&] { load_grid_cache(M, path); }) == "missing-cache");
}
