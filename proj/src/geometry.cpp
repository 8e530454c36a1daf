#include "crq/geometry.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>

#include <cmath>

namespace crq {

RhoValue rho(const ManifoldModel& M, const VecC& z) {
    const int d = M.nz();
    VecC zp = z.head(d);
    RhoValue r;
    r.comps.resize(M.m);
    for (int k = 0; k < M.m; ++k)
        r.comps(k) = z(d + k).imag() - zp.dot(M.H[k] * zp).real();
    r.norm = r.comps.norm();
    return r;
}

VecR graph_height(const ManifoldModel& M, const VecC& zp) {
    VecR h(M.m);
    for (int k = 0; k < M.m; ++k) h(k) = zp.dot(M.H[k] * zp).real();
    return h;
}

VecC point_from_params(const ManifoldModel& M, const VecC& x, const VecR& u, const VecR& r) {
    VecC z(M.n);
    z.head(M.nz()) = x;
    VecR h = graph_height(M, x);
    for (int k = 0; k < M.m; ++k) z(M.nz() + k) = cd(u(k), h(k) + r(k));
    return z;
}

VecC point_on_M(const ManifoldModel& M, const VecC& x, const VecR& u) {
    return point_from_params(M, x, u, VecR::Zero(M.m));
}

Direction make_direction(const VecR& theta) {
    if (std::abs(theta.norm() - 1.0) > 1e-12)
        throw Error("invalid-direction", "theta must have unit norm");
    return Direction{theta};
}

MatC theta_H(const ManifoldModel& M, const VecR& theta) {
    MatC S = MatC::Zero(M.nz(), M.nz());
    for (int k = 0; k < M.m; ++k) S += theta(k) * M.H[k];
    return S;
}

void fix_phase(VecC& v) {
    int best = 0;
    double mag = -1;
    for (int i = 0; i < v.size(); ++i) {
        double a = std::abs(v(i));
        if (a > mag + 1e-12) {
            mag = a;
            best = i;
        }
    }
    if (mag <= 0) return;
    v *= std::conj(v(best)) / mag;
    v(best) = cd(v(best).real(), 0.0);
}

LeviData levi_direction(const ManifoldModel& M, const VecC&, const Direction& dir) {
    if (dir.theta.size() != M.m || std::abs(dir.theta.norm() - 1.0) > 1e-12)
        throw Error("invalid-direction", "theta must be a unit m-vector");
    LeviData L;
    L.theta = dir;
    L.matrix = -theta_H(M, dir.theta);
    Eigen::SelfAdjointEigenSolver<MatC> es(L.matrix);
    L.eigenvalues = es.eigenvalues();
    L.eigenvectors = es.eigenvectors();
    for (int j = 0; j < L.eigenvectors.cols(); ++j) {
        VecC v = L.eigenvectors.col(j);
        fix_phase(v);
        L.eigenvectors.col(j) = v;
    }
    L.neg_count = 0;
    for (int i = 0; i < L.eigenvalues.size(); ++i)
        if (L.eigenvalues(i) < -kTolEig) ++L.neg_count;
    const int d = M.nz();
    const int q = std::min(M.q, d);
    // E_q: the top-q eigenvectors of -theta H, where the Levi form of rho_theta is positive.
    L.E_basis = L.eigenvectors.rightCols(q);
    L.E_qm_basis = MatC::Zero(M.n, q + M.m);
    L.E_qm_basis.topLeftCorner(d, q) = L.E_basis;
    for (int k = 0; k < M.m; ++k) L.E_qm_basis(d + k, q + k) = 1.0;
    return L;
}

namespace {

void grid_rec(int m, int resolution, std::vector<double>& angles, std::vector<VecR>& out) {
    const int depth = static_cast<int>(angles.size());
    if (depth == m - 1) {
        VecR t(m);
        double s = 1.0;
        for (int i = 0; i < m - 1; ++i) {
            t(i) = s * std::cos(angles[i]);
            s *= std::sin(angles[i]);
        }
        t(m - 1) = s;
        out.push_back(t / t.norm());
        return;
    }
    const bool last = depth == m - 2;
    const int count = last ? resolution : resolution + 1;
    for (int i = 0; i < count; ++i) {
        double a = last ? 2.0 * kPi * i / resolution : kPi * i / resolution;
        angles.push_back(a);
        grid_rec(m, resolution, angles, out);
        angles.pop_back();
    }
}

}  // namespace

std::vector<VecR> theta_grid(int m, int resolution) {
    std::vector<VecR> out;
    if (m == 1) {
        out.push_back(VecR::Constant(1, 1.0));
        out.push_back(VecR::Constant(1, -1.0));
        return out;
    }
    std::vector<double> angles;
    grid_rec(m, resolution, angles, out);
    return out;
}

CertificationReport check_q_pseudoconcave(const ManifoldModel& M, int resolution) {
    if (resolution < 8) throw Error("invalid-argument", "theta_grid_resolution must be >= 8");
    CertificationReport rep;
    rep.min_neg_count = M.nz() + 1;
    rep.min_selection_gap = INFINITY;
    const int f = M.frame_count();
    VecC origin = VecC::Zero(M.n);
    for (const VecR& t : theta_grid(M.m, resolution)) {
        LeviData L = levi_direction(M, origin, Direction{t});
        ++rep.directions_sampled;
        if (L.neg_count < rep.min_neg_count) {
            rep.min_neg_count = L.neg_count;
            rep.worst_theta = t;
        }
        if (f > 0 && f < M.nz()) {
            double gap = L.eigenvalues(f) - L.eigenvalues(f - 1);
            rep.min_selection_gap = std::min(rep.min_selection_gap, gap);
            if (gap < kCrossingGap) rep.crossings.push_back(t);
        }
    }
    rep.pass = rep.min_neg_count >= M.q;
    return rep;
}

DefiningSystem::DefiningSystem(ManifoldModel model, double A) : model_(std::move(model)), A_(A) {
    if (A < 0) throw Error("invalid-argument", "Kohn parameter A must be >= 0");
}

MatC DefiningSystem::grad_plain(const VecC& z) const {
    const ManifoldModel& M = model_;
    const int d = M.nz();
    MatC g = MatC::Zero(M.m, M.n);
    VecC zbar = z.head(d).conjugate();
    for (int k = 0; k < M.m; ++k) {
        g.row(k).head(d) = -(M.H[k].transpose() * zbar).transpose();
        g(k, d + k) = cd(0.0, -0.5);
    }
    return g;
}

VecR DefiningSystem::values(const VecC& z) const {
    VecR r = rho(model_, z).comps;
    return (r.array() + A_ * r.squaredNorm()).matrix();
}

MatC DefiningSystem::grad(const VecC& z) const {
    MatC g = grad_plain(z);
    if (A_ == 0) return g;
    VecR r = rho(model_, z).comps;
    Eigen::RowVectorXcd s = Eigen::RowVectorXcd::Zero(model_.n);
    for (int i = 0; i < model_.m; ++i) s += r(i) * g.row(i);
    for (int k = 0; k < model_.m; ++k) g.row(k) += 2.0 * A_ * s;
    return g;
}

MatC DefiningSystem::hess_holo(const VecC& z, int) const {
    MatC out = MatC::Zero(model_.n, model_.n);
    if (A_ == 0) return out;
    MatC g = grad_plain(z);
    for (int i = 0; i < model_.m; ++i) out += 2.0 * A_ * g.row(i).transpose() * g.row(i);
    return out;
}

MatC DefiningSystem::hess_mixed(const VecC& z, int k) const {
    const ManifoldModel& M = model_;
    const int d = M.nz();
    auto plain = [&](int i) {
        MatC h = MatC::Zero(M.n, M.n);
        h.topLeftCorner(d, d) = -M.H[i].transpose();
        return h;
    };
    MatC out = plain(k);
    if (A_ == 0) return out;
    MatC g = grad_plain(z);
    VecR r = rho(M, z).comps;
    for (int i = 0; i < M.m; ++i)
        out += 2.0 * A_ * (g.row(i).transpose() * g.row(i).conjugate() + r(i) * plain(i));
    return out;
}

DefiningSystem kohn_modify(const ManifoldModel& model, double A) { return DefiningSystem(model, A); }

KohnSearchResult kohn_search(const ManifoldModel& M, const std::vector<double>& grid, double c,
                             int z_samples, double z_scale, std::uint64_t seed) {
    KohnSearchResult res;
    res.worst_value = INFINITY;
    std::vector<VecC> zs;
    Rng rng(seed);
    zs.push_back(VecC::Zero(M.n));
    for (int s = 1; s < z_samples; ++s) {
        VecC x(M.nz());
        for (int i = 0; i < M.nz(); ++i) x(i) = cd(rng.normal(), rng.normal());
        x *= z_scale * rng.uniform() / x.norm();
        VecR u(M.m);
        for (int k = 0; k < M.m; ++k) u(k) = rng.uniform(-z_scale, z_scale);
        zs.push_back(point_on_M(M, x, u));
    }
    const auto thetas = theta_grid(M.m, 16);
    for (double A : grid) {
        res.tried.push_back(A);
        DefiningSystem D(M, A);
        double worst = -INFINITY;
        VecR worst_theta;
        for (const VecC& z : zs) {
            for (const VecR& t : thetas) {
                MatC G = MatC::Zero(M.n, M.n);
                for (int k = 0; k < M.m; ++k) G += t(k) * D.hess_mixed(z, k).transpose();
                MatC B = levi_direction(M, z, Direction{t}).E_qm_basis;
                MatC R = B.adjoint() * (-G) * B;
                R = 0.5 * (R + R.adjoint());
                double top = Eigen::SelfAdjointEigenSolver<MatC>(R).eigenvalues().maxCoeff();
                if (top > worst) {
                    worst = top;
                    worst_theta = t;
                }
            }
        }
        if (worst < res.worst_value || res.worst_theta.size() == 0) {
            res.worst_value = worst;
            res.worst_theta = worst_theta;
        }
        if (worst <= c) {
            res.found = true;
            res.A = A;
            res.worst_value = worst;
            res.worst_theta = worst_theta;
            return res;
        }
    }
    return res;
}

EperpFrame eperp_frame(const ManifoldModel& M, const Direction& dir, const VecC& z) {
    const int f = M.frame_count();
    if (f < 0) throw Error("validation", "n-q-m must be >= 0");
    EperpFrame E;
    E.a = MatC::Zero(M.n, f);
    if (f == 0) return E;
    LeviData L = levi_direction(M, z, dir);
    // Bottom of -theta H is the top of theta H: the directions the Levi form cannot control.
    E.a.topRows(M.nz()) = L.eigenvectors.leftCols(f);
    E.boundary_gap = f < M.nz() ? L.eigenvalues(f) - L.eigenvalues(f - 1) : INFINITY;
    E.degenerate = E.boundary_gap < kCrossingGap;
    return E;
}

VecR realify(const VecC& v) {
    VecR r(2 * v.size());
    r.head(v.size()) = v.real();
    r.tail(v.size()) = v.imag();
    return r;
}

VecC complexify(const VecR& r) {
    const int n = static_cast<int>(r.size() / 2);
    VecC v(n);
    for (int i = 0; i < n; ++i) v(i) = cd(r(i), r(n + i));
    return v;
}

TangentialFrame tangential_frame(const ManifoldModel& M, const VecC& z) {
    if (rho(M, z).norm >= 1e-9 * M.radius)
        throw Error("off-manifold", "tangential_frame needs a point on M");
    const int d = M.nz();
    TangentialFrame F;
    F.point = z;
    F.W = MatC::Zero(M.n, d);
    VecC zp = z.head(d);
    for (int k = 0; k < M.m; ++k) {
        VecC Hz = M.H[k] * zp;
        for (int i = 0; i < d; ++i) F.W(d + k, i) = 2.0 * kI * std::conj(Hz(i));
    }
    for (int i = 0; i < d; ++i) F.W(i, i) = 1.0;
    F.Wbar = F.W.conjugate();
    F.Y = MatC::Zero(M.n, M.m);
    for (int k = 0; k < M.m; ++k) F.Y(d + k, k) = 1.0;
    MatC g = DefiningSystem(M).grad(z);
    F.normal.resize(2 * M.n, M.m);
    for (int k = 0; k < M.m; ++k) {
        VecC gk = g.row(k).transpose();
        F.normal.col(k).head(M.n) = 2.0 * gk.real();
        F.normal.col(k).tail(M.n) = -2.0 * gk.imag();
    }
    MatR R(2 * M.n, 2 * d + M.m);
    for (int i = 0; i < d; ++i) {
        R.col(2 * i) = realify(F.W.col(i));
        R.col(2 * i + 1) = realify(kI * F.W.col(i));
    }
    for (int k = 0; k < M.m; ++k) R.col(2 * d + k) = realify(F.Y.col(k));
    VecR sv = Eigen::JacobiSVD<MatR>(R).singularValues();
    F.rank = 0;
    for (int i = 0; i < sv.size(); ++i)
        if (sv(i) > 1e-10 * sv(0)) ++F.rank;
    if (F.rank != 2 * M.n - M.m) throw Error("degenerate-point", "tangential frame is rank deficient");
    return F;
}

}  // namespace crq
