#include "crq/barrier.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace crq {

VecR theta_of(const DefiningSystem& D, const VecC& zeta) {
    VecR r = D.values(zeta);
    double nr = r.norm();
    if (!(nr > 0)) throw Error("theta-undefined", "rho(zeta) = 0");
    return -r / nr;
}

MatC dtheta_dzetabar(const DefiningSystem& D, const VecC& zeta) {
    const int m = D.model().m, n = D.model().n;
    VecR r = D.values(zeta);
    double nr = r.norm();
    if (!(nr > 0)) throw Error("theta-undefined", "rho(zeta) = 0");
    MatC gbar = D.grad(zeta).conjugate(); // d rho_k / d zetabar_l
    MatC out(m, n);
    Eigen::RowVectorXcd s = (r.transpose().cast<cd>() * gbar);
    for (int k = 0; k < m; ++k)
        out.row(k) = -gbar.row(k) / nr + r(k) * s / (nr * nr * nr);
    return out;
}

VecC q_section(const DefiningSystem& D, int k, const VecC& zeta, const VecC& z) {
    VecC g = D.grad(z).row(k).transpose();
    VecC Q = -g;
    if (D.A() != 0) Q -= 0.5 * D.hess_holo(z, k) * (zeta - z);
    return Q;
}

BarrierEval barrier_eval(const DefiningSystem& D, const VecC& zeta, const VecC& z, const BarrierOptions& opt) {
    const ManifoldModel& M = D.model();
    BarrierEval e;
    e.zeta = zeta;
    e.z = z;
    e.theta = opt.frozen_theta ? opt.theta : theta_of(D, zeta);
    VecC dz = zeta - z;
    e.F.resize(M.m);
    e.P = VecC::Zero(M.n);
    for (int k = 0; k < M.m; ++k) {
        e.Q.push_back(q_section(D, k, zeta, z));
        e.F(k) = (e.Q[k].array() * dz.array()).sum();
        e.P += e.theta(k) * e.Q[k];
    }
    if (opt.include_script_A) e.a = eperp_frame(M, Direction{e.theta / e.theta.norm()}, z).a;
    else e.a = MatC::Zero(M.n, 0);
    e.A = e.a.transpose() * dz;
    e.script_A = e.A.squaredNorm();
    e.P += e.a * e.A.conjugate();
    e.Phi = (e.P.array() * dz.array()).sum();
    return e;
}

MatC eperp_projector(const ManifoldModel& M, const VecR& theta) {
    MatC a = eperp_frame(M, Direction{theta / theta.norm()}, VecC::Zero(M.n)).a;
    return a * a.adjoint();
}

std::vector<MatC> eperp_projector_dtheta(const ManifoldModel& M, const VecR& theta) {
    const double h = 1e-5;
    std::vector<MatC> out;
    for (int k = 0; k < M.m; ++k) {
        VecR tp = theta, tm = theta;
        tp(k) += h;
        tm(k) -= h;
        out.push_back((eperp_projector(M, tp) - eperp_projector(M, tm)) / (2 * h));
    }
    return out;
}

MatC aligned_frame(const ManifoldModel& M, const VecR& theta, const MatC& reference) {
    if (reference.cols() == 0) return reference;
    MatC B = eperp_projector(M, theta) * reference;
    MatC S = B.adjoint() * B;
    Eigen::SelfAdjointEigenSolver<MatC> es(S);
    return B * es.operatorInverseSqrt();
}

namespace {

VecC random_unit(Rng& rng, int n) {
    VecC v(n);
    for (int i = 0; i < n; ++i) v(i) = cd(rng.normal(), rng.normal());
    return v / v.norm();
}

}  // namespace

PositivityAudit barrier_positivity_audit(const DefiningSystem& D, int sample_count, double scale,
                                         std::uint64_t seed, const BarrierOptions& opt, double z_scale) {
    const ManifoldModel& M = D.model();
    Rng rng(seed);
    PositivityAudit out;
    out.C_hat = INFINITY;
    out.C_hat_abs = INFINITY;
    out.quotients.reserve(sample_count);
    for (int s = 0; s < sample_count; ++s) {
        VecC x = random_unit(rng, M.nz()) * (z_scale * M.radius * std::pow(rng.uniform(), 1.0 / (2 * M.nz())));
        VecR u(M.m);
        for (int k = 0; k < M.m; ++k) u(k) = rng.uniform(-z_scale, z_scale) * M.radius;
        VecC z = point_on_M(M, x, u);
        double len = (s % 2 == 0) ? scale * M.radius * std::pow(rng.uniform(), 1.0 / (2 * M.n))
                                  : scale * M.radius * std::pow(1e-3, rng.uniform());
        VecC zeta = z + random_unit(rng, M.n) * len;
        double r = D.values(zeta).norm();
        if (!(r > 0)) continue;
        BarrierEval e = barrier_eval(D, zeta, z, opt);
        double denom = r + (zeta - z).squaredNorm();
        double qre = e.Phi.real() / denom;
        double qabs = std::abs(e.Phi) / denom;
        out.quotients.push_back(qre);
        ++out.samples;
        if (qre < out.C_hat) {
            out.C_hat = qre;
            out.argmin_zeta = zeta;
            out.argmin_z = z;
        }
        out.C_hat_abs = std::min(out.C_hat_abs, qabs);
    }
    out.pass = out.C_hat > 0;
    return out;
}

double taylor_remainder(const DefiningSystem& D, const VecC& zeta, const VecC& z, const BarrierOptions& opt) {
    const ManifoldModel& M = D.model();
    BarrierEval e = barrier_eval(D, zeta, z, opt);
    VecC dz = zeta - z;
    VecR rz = D.values(zeta);
    double rho_theta = -e.theta.dot(rz);
    double levi = 0;
    for (int k = 0; k < M.m; ++k) levi += e.theta(k) * (dz.transpose() * D.hess_mixed(z, k) * dz.conjugate())(0, 0).real();
    return e.Phi.real() - 0.5 * rho_theta - 0.5 * levi - e.script_A;
}

TaylorAudit taylor_order_audit(const DefiningSystem& D, const VecC& z, const VecC& direction,
                               const std::vector<double>& scales, const BarrierOptions& opt) {
    if (scales.size() < 4) throw Error("invalid-argument", "taylor_order_audit needs >= 4 scales");
    TaylorAudit out;
    out.scales = scales;
    VecC d = direction / direction.norm();
    std::vector<double> lx, ly;
    double ref = 0;
    bool any_zero = false;
    for (double s : scales) {
        VecC zeta = z + s * d;
        double R = taylor_remainder(D, zeta, z, opt);
        out.remainders.push_back(R);
        ref = std::max(ref, std::abs(barrier_eval(D, zeta, z, opt).Phi));
        if (R == 0) any_zero = true;
        else {
            lx.push_back(std::log(s));
            ly.push_back(std::log(std::abs(R)));
        }
    }
    double worst = 0;
    for (double R : out.remainders) worst = std::max(worst, std::abs(R));
    out.exact = any_zero || worst <= 1e-13 * ref;
    out.slope = lx.size() >= 2 ? fit_slope(lx, ly) : 0.0;
    out.pass = out.exact || out.slope >= 2.8;
    return out;
}

MuDecomposition mu_decompose(const DefiningSystem& D, const VecC& zeta, const VecC& z, double step,
                             const BarrierOptions& opt) {
    if (!(step > 0)) throw Error("invalid-argument", "step must be > 0");
    const ManifoldModel& M = D.model();
    const int n = M.n;
    VecR th0 = opt.frozen_theta ? opt.theta : theta_of(D, zeta);
    MatC a0 = eperp_frame(M, Direction{th0 / th0.norm()}, z).a;
    const int f = static_cast<int>(a0.cols());
    MuDecomposition out;
    out.mu_tau = a0.transpose().conjugate();
    out.mu_nu = MatC::Zero(f, n);
    out.total_fd = MatC::Zero(f, n);
    out.mu_nu_theta = MatC::Zero(f, M.m);
    if (f == 0) return out;
    VecC dzbar = (zeta - z).conjugate();

    auto abar_at = [&](const VecC& zp) -> MatC {
        VecR th = opt.frozen_theta ? opt.theta : theta_of(D, zp);
        return aligned_frame(M, th, a0).transpose().conjugate();
    };
    for (int i = 0; i < n; ++i) {
        VecC e = VecC::Zero(n);
        e(i) = step;
        MatC ax_p = abar_at(zeta + e), ax_m = abar_at(zeta - e);
        MatC ay_p = abar_at(zeta + kI * e), ay_m = abar_at(zeta - kI * e);
        MatC dabar = 0.5 * ((ax_p - ax_m) / (2 * step) + kI * (ay_p - ay_m) / (2 * step));
        out.mu_nu.col(i) = dabar * dzbar;
        auto Abar = [&](const MatC& ab, const VecC& zp) -> VecC { return ab * (zp - z).conjugate(); };
        VecC tx = (Abar(ax_p, zeta + e) - Abar(ax_m, zeta - e)) / (2 * step);
        VecC ty = (Abar(ay_p, zeta + kI * e) - Abar(ay_m, zeta - kI * e)) / (2 * step);
        out.total_fd.col(i) = 0.5 * (tx + kI * ty);
    }
    if (!opt.frozen_theta) {
        const double h = 1e-5;
        for (int k = 0; k < M.m; ++k) {
            VecR tp = th0, tm = th0;
            tp(k) += h;
            tm(k) -= h;
            MatC dab = (aligned_frame(M, tp / tp.norm(), a0) - aligned_frame(M, tm / tm.norm(), a0)).transpose().conjugate() / (2 * h);
            out.mu_nu_theta.col(k) = dab * dzbar;
        }
    }
    return out;
}

}  // namespace crq
