#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crq/barrier.hpp"
#include "support/oracles.hpp"

using namespace crq;

namespace {

std::pair<VecC, VecC> sample_pair(const ManifoldModel& M, Rng& rng, double scale) {
    VecC x = oracle::random_vec(rng, M.nz()) * 0.2;
    VecR u(M.m);
    for (int k = 0; k < M.m; ++k) u(k) = rng.uniform(-0.2, 0.2);
    VecC z = point_on_M(M, x, u);
    return {z + oracle::random_vec(rng, M.n) * scale, z};
}

// -theta . rho(zeta) + Delta'^* (-theta H) Delta' from the polynomial directly.
double re_phi_oracle(const ManifoldModel& M, const VecC& zeta, const VecC& z, const VecR& theta, double script_A) {
    VecR r = oracle::rho_loops(M, zeta);
    VecC d = (zeta - z).head(M.nz());
    cd levi = 0;
    for (int k = 0; k < M.m; ++k) levi -= theta(k) * d.dot(M.H[k] * d);
    return -0.5 * theta.dot(r) + 0.5 * levi.real() + script_A;
}

ManifoldModel positive_model() {
    ManifoldModel M;
    M.name = "positive";
    M.n = 5;
    M.m = 1;
    M.q = 1;
    M.H = {MatC::Identity(4, 4)};
    validate(M);
    return M;
}

}  // namespace

TEST_CASE("theta is the unit vector opposite to rho and undefined on M") {
    DefiningSystem D(bundled_model("sig22_m2_n6"));
    Rng rng(1);
    auto [zeta, z] = sample_pair(D.model(), rng, 0.3);
    VecR r = oracle::rho_loops(D.model(), zeta);
    CHECK((theta_of(D, zeta) + r / r.norm()).norm() < 1e-13);
    CHECK_THROWS_AS(theta_of(D, z), Error);
}

TEST_CASE("dtheta/dzetabar matches central differences") {
    DefiningSystem D(bundled_model("sig22_m2_n6"));
    Rng rng(2);
    const double h = 1e-6;
    for (int s = 0; s < 10; ++s) {
        VecC zeta = sample_pair(D.model(), rng, 0.3).first;
        MatC g = dtheta_dzetabar(D, zeta);
        for (int l = 0; l < 6; ++l) {
            VecC e = VecC::Zero(6);
            e(l) = h;
            VecR dx = (theta_of(D, zeta + e) - theta_of(D, zeta - e)) / (2 * h);
            VecR dy = (theta_of(D, zeta + kI * e) - theta_of(D, zeta - kI * e)) / (2 * h);
            VecC fd = 0.5 * (dx.cast<cd>() + kI * dy.cast<cd>());
            CHECK((fd - g.col(l)).norm() < 1e-6 * (1 + g.col(l).norm()));
        }
    }
}

TEST_CASE("barrier algebra: F, P and Phi fit together") {
    Rng rng(3);
    for (const auto& name : bundled_model_names()) {
        DefiningSystem D(bundled_model(name));
        for (int s = 0; s < 30; ++s) {
            auto [zeta, z] = sample_pair(D.model(), rng, 0.3);
            BarrierEval e = barrier_eval(D, zeta, z);
            VecC d = zeta - z;
            VecC P = e.a * e.A.conjugate();
            for (int k = 0; k < D.model().m; ++k) {
                CHECK(std::abs(e.F(k) - e.Q[k].cwiseProduct(d).sum()) < 1e-13);
                P += e.theta(k) * e.Q[k];
            }
            CHECK((P - e.P).norm() < 1e-13);
            CHECK(std::abs(e.Phi - e.P.cwiseProduct(d).sum()) < 1e-13);
            CHECK(std::abs(e.script_A - e.A.squaredNorm()) < 1e-14);
        }
    }
}

TEST_CASE("Q is minus the holomorphic gradient at z for quadrics") {
    DefiningSystem D(bundled_model("sig22_n5"));
    Rng rng(4);
    auto [zeta, z] = sample_pair(D.model(), rng, 0.3);
    const double h = 1e-6;
    VecC g(5);
    for (int i = 0; i < 5; ++i) {
        VecC e = VecC::Zero(5);
        e(i) = h;
        double fx = (oracle::rho_loops(D.model(), z + e)(0) - oracle::rho_loops(D.model(), z - e)(0)) / (2 * h);
        double fy = (oracle::rho_loops(D.model(), z + kI * e)(0) - oracle::rho_loops(D.model(), z - kI * e)(0)) / (2 * h);
        g(i) = 0.5 * cd(fx, -fy);
    }
    CHECK((q_section(D, 0, zeta, z) + g).norm() < 1e-8);
}

TEST_CASE("Re Phi is the exact quadratic expansion") {
    Rng rng(5);
    for (const auto& name : bundled_model_names()) {
        DefiningSystem D(bundled_model(name));
        for (int s = 0; s < 100; ++s) {
            auto [zeta, z] = sample_pair(D.model(), rng, 0.5);
            BarrierEval e = barrier_eval(D, zeta, z);
            CHECK(std::abs(e.Phi.real() - re_phi_oracle(D.model(), zeta, z, e.theta, e.script_A)) < 1e-12);
            CHECK(std::abs(taylor_remainder(D, zeta, z)) < 1e-12);
        }
    }
}

TEST_CASE("along the normal the Re Phi quotient tends to one half") {
    DefiningSystem D(bundled_model("sig22_n5"));
    VecC z = VecC::Zero(5);
    for (double s : {1e-2, 1e-4, 1e-6}) {
        VecC zeta = z;
        zeta(4) = cd(0, s);
        BarrierEval e = barrier_eval(D, zeta, z);
        double quotient = e.Phi.real() / (s + s * s);
        CHECK(quotient == doctest::Approx(0.5 / (1 + s)).epsilon(1e-10));
    }
}

TEST_CASE("positivity audit on certified models and on a negative control") {
    for (const auto& name : bundled_model_names()) {
        DefiningSystem D(bundled_model(name));
        PositivityAudit a = barrier_positivity_audit(D, 2000, 0.3, 17);
        CHECK(a.pass);
        CHECK(a.C_hat > 0);
        CHECK(a.C_hat_abs > 0.05);
        CHECK(a.samples == 2000);
    }
    BarrierOptions off;
    off.include_script_A = false;
    PositivityAudit neg = barrier_positivity_audit(DefiningSystem(positive_model()), 2000, 0.3, 17, off);
    CHECK_FALSE(neg.pass);
    CHECK(neg.C_hat < 0);
}

TEST_CASE("positivity audit is reproducible for a fixed seed") {
    DefiningSystem D(bundled_model("sig22_n5"));
    PositivityAudit a = barrier_positivity_audit(D, 300, 0.3, 99);
    PositivityAudit b = barrier_positivity_audit(D, 300, 0.3, 99);
    CHECK(a.quotients == b.quotients);
}

TEST_CASE("Taylor remainder: exact for quadrics, cubic after modification") {
    ManifoldModel M = bundled_model("sig22_n5");
    VecC z = VecC::Zero(5);
    VecC dir(5);
    dir << cd(0.3, 0.1), cd(-0.2, 0.4), cd(0.5, 0), cd(0, -0.3), cd(0.1, 0.6);
    std::vector<double> scales = {0.08, 0.04, 0.02, 0.01, 0.005};
    TaylorAudit exact = taylor_order_audit(DefiningSystem(M), z, dir, scales);
    CHECK(exact.exact);
    CHECK(exact.pass);
    TaylorAudit cubic = taylor_order_audit(kohn_modify(M, 1.0), z, dir, scales);
    CHECK_FALSE(cubic.exact);
    CHECK(cubic.slope >= 2.8);
    CHECK(cubic.slope <= 3.3);
}

TEST_CASE("E_perp projector is an orthogonal projector of rank n-q-m") {
    for (const auto& name : bundled_model_names()) {
        ManifoldModel M = bundled_model(name);
        for (const VecR& t : theta_grid(M.m, 12)) {
            MatC Pi = eperp_projector(M, t);
            CHECK((Pi * Pi - Pi).cwiseAbs().maxCoeff() < 1e-10);
            CHECK((Pi.adjoint() - Pi).cwiseAbs().maxCoeff() < 1e-12);
            CHECK(std::abs(Pi.trace() - double(M.frame_count())) < 1e-10);
        }
    }
}

TEST_CASE("mu decomposition sums to the total derivative of conj(A)") {
    Rng rng(6);
    for (const auto& name : bundled_model_names()) {
        DefiningSystem D(bundled_model(name));
        auto [zeta, z] = sample_pair(D.model(), rng, 0.2);
        MuDecomposition mu = mu_decompose(D, zeta, z, 1e-6);
        CHECK((mu.mu_tau + mu.mu_nu - mu.total_fd).cwiseAbs().maxCoeff() < 1e-6);
        if (D.model().m == 1) CHECK(mu.mu_nu.cwiseAbs().maxCoeff() < 1e-8);
    }
}

TEST_CASE("mu_nu vanishes when theta is frozen") {
    DefiningSystem D(bundled_model("sig22_m2_n6"));
    Rng rng(7);
    auto [zeta, z] = sample_pair(D.model(), rng, 0.2);
    BarrierOptions opt;
    opt.frozen_theta = true;
    opt.theta = theta_of(D, zeta);
    MuDecomposition mu = mu_decompose(D, zeta, z, 1e-6, opt);
    CHECK(mu.mu_nu.cwiseAbs().maxCoeff() < 1e-8);
    CHECK(mu.mu_nu_theta.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("mu_nu theta coefficients shrink linearly with |zeta - z|") {
    DefiningSystem D(bundled_model("sig22_m2_n6"));
    VecC z = VecC::Zero(6);
    VecC dir(6);
    dir << cd(0.3, 0.1), cd(-0.2, 0.4), cd(0.5, 0), cd(0, -0.3), cd(0.1, 0.6), cd(0.2, -0.5);
    std::vector<double> xs, ys;
    for (double s : {0.1, 0.05, 0.025, 0.0125}) {
        MuDecomposition mu = mu_decompose(D, z + s * dir, z, 1e-6);
        xs.push_back(std::log(s));
        ys.push_back(std::log(mu.mu_nu_theta.cwiseAbs().maxCoeff()));
    }
    CHECK(fit_slope(xs, ys) == doctest::Approx(1.0).epsilon(0.05));
}
