#include "crq/cf_kernels.hpp"

#include <bit>
#include <cmath>

namespace crq {

SectionJet bm_section(const VecC& zeta, const VecC& z) {
    const int n = static_cast<int>(zeta.size());
    VecC d = zeta - z;
    double s = d.squaredNorm();
    if (!(s > 0)) throw Error("singularity", "bm_section needs zeta != z");
    SectionJet j;
    j.value = d.conjugate() / s;
    j.d_zetabar = MatC::Identity(n, n) / s - d.conjugate() * d.transpose() / (s * s);
    j.d_zbar = -j.d_zetabar;
    j.d_t = VecC::Zero(n);
    return j;
}

namespace {

struct PhaseData {
    VecC P;
    cd Phi;
};

PhaseData phase(const DefiningSystem& D, const VecC& zeta, const VecC& z, const BarrierOptions& opt) {
    BarrierEval e = barrier_eval(D, zeta, z, opt);
    return {e.P, e.Phi};
}

}  // namespace

SectionJet barrier_section(const DefiningSystem& D, const VecC& zeta, const VecC& z, const BarrierOptions& opt,
                           double tol_phi) {
    const ManifoldModel& M = D.model();
    const int n = M.n;
    BarrierEval e = barrier_eval(D, zeta, z, opt);
    if (!(std::abs(e.Phi) >= tol_phi)) throw Error("near-singular-phase", "|Phi| below tol_phi");
    SectionJet j;
    j.value = e.P / e.Phi;
    j.d_t = VecC::Zero(n);
    VecC dz = zeta - z;
    MatC dP_zetabar = MatC::Zero(n, n), dP_zbar = MatC::Zero(n, n);
    if (D.A() == 0) {
        MatC Pi = e.a * e.a.adjoint();
        dP_zetabar += Pi;
        dP_zbar -= Pi;
        for (int k = 0; k < M.m; ++k) dP_zbar -= e.theta(k) * D.hess_mixed(z, k);
        if (!opt.frozen_theta && M.m > 1) {
            MatC dth = dtheta_dzetabar(D, zeta);
            std::vector<MatC> dPi = eperp_projector_dtheta(M, e.theta);
            VecC dzbar = dz.conjugate();
            for (int k = 0; k < M.m; ++k)
                dP_zetabar += (e.Q[k] + dPi[k] * dzbar) * dth.row(k);
        }
        VecC dPhi_zetabar = dP_zetabar.transpose() * dz;
        VecC dPhi_zbar = dP_zbar.transpose() * dz;
        j.d_zetabar = dP_zetabar / e.Phi - e.P * dPhi_zetabar.transpose() / (e.Phi * e.Phi);
        j.d_zbar = dP_zbar / e.Phi - e.P * dPhi_zbar.transpose() / (e.Phi * e.Phi);
        return j;
    }
    j.analytic = false;
    const double h = 1e-6 * M.radius;
    j.d_zetabar.resize(n, n);
    j.d_zbar.resize(n, n);
    auto eta = [&](const VecC& zt, const VecC& zz) {
        PhaseData p = phase(D, zt, zz, opt);
        return VecC(p.P / p.Phi);
    };
    for (int l = 0; l < n; ++l) {
        VecC el = VecC::Zero(n);
        el(l) = h;
        VecC ex = (eta(zeta + el, z) - eta(zeta - el, z)) / (2 * h);
        VecC ey = (eta(zeta + kI * el, z) - eta(zeta - kI * el, z)) / (2 * h);
        j.d_zetabar.col(l) = 0.5 * (ex + kI * ey);
        ex = (eta(zeta, z + el) - eta(zeta, z - el)) / (2 * h);
        ey = (eta(zeta, z + kI * el) - eta(zeta, z - kI * el)) / (2 * h);
        j.d_zbar.col(l) = 0.5 * (ex + kI * ey);
    }
    return j;
}

SectionJet combined_section(const SectionJet& s1, const SectionJet& s2, double t) {
    SectionJet j;
    j.value = (1 - t) * s1.value + t * s2.value;
    j.d_zbar = (1 - t) * s1.d_zbar + t * s2.d_zbar;
    j.d_zetabar = (1 - t) * s1.d_zetabar + t * s2.d_zetabar;
    j.d_t = s2.value - s1.value + (1 - t) * s1.d_t + t * s2.d_t;
    j.analytic = s1.analytic && s2.analytic;
    return j;
}

cd section_normalization(const SectionJet& s, const VecC& zeta, const VecC& z) {
    return (s.value.array() * (zeta - z).array()).sum();
}

namespace {

using Mask = FormTensor::Mask;

struct PermExpansion {
    int n, r;
    const SectionJet* jet;
    std::vector<cd> acc;       // dense result over masks
    std::vector<std::vector<cd>> scratch;
    std::vector<std::vector<Mask>> touched;
    std::vector<std::vector<char>> mark;

    void reset(int depth) {
        for (Mask m : touched[depth]) {
            scratch[depth][m] = 0;
            mark[depth][m] = 0;
        }
        touched[depth].clear();
    }

    void column_form(int c, int row, std::vector<std::pair<Mask, cd>>& out) const {
        out.clear();
        if (c <= r) {
            for (int l = 0; l < n; ++l) out.emplace_back(Mask(1) << l, jet->d_zbar(row, l));
        } else {
            for (int l = 0; l < n; ++l) out.emplace_back(Mask(1) << (n + l), jet->d_zetabar(row, l));
            out.emplace_back(Mask(1) << (2 * n), jet->d_t(row));
        }
    }

    // Partial exterior product after `depth` columns is in scratch[depth] / touched[depth].
    void dfs(int depth, unsigned used, int sign, int first_row) {
        if (depth == n) {
            cd eta = jet->value(first_row);
            for (Mask m : touched[depth]) acc[m] += double(sign) * eta * scratch[depth][m];
            return;
        }
        std::vector<std::pair<Mask, cd>> form;
        for (int row = 0; row < n; ++row) {
            if (used & (1u << row)) continue;
            int inv = std::popcount(used >> (row + 1));
            int s = (inv & 1) ? -sign : sign;
            if (depth == 0) {
                reset(1);
                touched[1].push_back(0);
                mark[1][0] = 1;
                scratch[1][0] = 1.0;
                dfs(1, used | (1u << row), s, row);
                continue;
            }
            column_form(depth, row, form);
            auto& cur = scratch[depth];
            reset(depth + 1);
            auto& nxt = scratch[depth + 1];
            auto& mk = mark[depth + 1];
            for (Mask m : touched[depth]) {
                cd v = cur[m];
                if (v == cd(0.0)) continue;
                for (const auto& [bit, c] : form) {
                    if ((m & bit) || c == cd(0.0)) continue;
                    Mask nm = m | bit;
                    int b = std::countr_zero(bit);
                    double sg = (std::popcount(m >> (b + 1)) & 1) ? -1.0 : 1.0;
                    if (!mk[nm]) {
                        mk[nm] = 1;
                        touched[depth + 1].push_back(nm);
                    }
                    nxt[nm] += sg * v * c;
                }
            }
            dfs(depth + 1, used | (1u << row), s, first_row);
        }
    }
};

}  // namespace

FormTensor omega_prime_r(const SectionJet& jet, int r) {
    const int n = static_cast<int>(jet.value.size());
    if (r < 0 || r > n - 1) throw Error("invalid-argument", "omega_prime_r needs 0 <= r <= n-1");
    PermExpansion pe{n, r, &jet, {}, {}, {}, {}};
    const std::size_t size = std::size_t(1) << (2 * n + 1);
    pe.acc.assign(size, 0.0);
    pe.scratch.assign(n + 1, std::vector<cd>(size, 0.0));
    pe.touched.assign(n + 1, {});
    pe.mark.assign(n + 1, std::vector<char>(size, 0));
    pe.dfs(0, 0u, 1, -1);
    const double norm = 1.0 / (factorial(n - r - 1) * factorial(r));
    FormTensor out(n);
    for (std::size_t m = 0; m < size; ++m)
        if (pe.acc[m] != cd(0.0)) out.add(static_cast<Mask>(m), norm * pe.acc[m]);
    return out;
}

FormTensor omega_prime_minors(const SectionJet& jet) {
    const int n = static_cast<int>(jet.value.size());
    MatC Mx(n, 2 * n + 1);
    Mx.leftCols(n) = jet.d_zbar;
    Mx.middleCols(n, n) = jet.d_zetabar;
    Mx.col(2 * n) = jet.d_t;
    FormTensor out(n);
    MatC A(n, n);
    A.col(0) = jet.value;
    for (const MultiIndex& S : combinations(2 * n + 1, n - 1)) {
        Mask mask = 0;
        for (int c = 0; c < n - 1; ++c) {
            A.col(c + 1) = Mx.col(S[c]);
            mask |= Mask(1) << S[c];
        }
        out.add(mask, n == 1 ? A(0, 0) : A.determinant());
    }
    return out;
}

ClosednessResult closedness_check(const SectionFamily& family, int r, const VecC& zeta, const VecC& z,
                                  double t, double h) {
    const int n = static_cast<int>(zeta.size());
    if (r < 0 || r > n - 1) throw Error("invalid-argument", "closedness_check needs 0 <= r <= n-1");
    auto W = [&](const VecC& zt, const VecC& zz, double tt, int deg) {
        try {
            return omega_prime_r(family(zt, zz, tt), deg);
        } catch (const Error& e) {
            throw Error("stencil", std::string("stencil left the admissible domain: ") + e.what());
        }
    };
    ClosednessResult res;
    res.form = FormTensor(n);
    FormTensor probe(n);
    {
        FormTensor d = (1.0 / (2 * h)) * (W(zeta, z, t + h, r) - W(zeta, z, t - h, r));
        res.form += wedge(FormTensor::one_form(n, VecC::Zero(n), VecC::Zero(n), 1.0), d);
    }
    for (int l = 0; l < n; ++l) {
        VecC e = VecC::Zero(n);
        e(l) = h;
        VecC unit = VecC::Zero(n);
        unit(l) = 1.0;
        FormTensor dx = W(zeta + e, z, t, r) - W(zeta - e, z, t, r);
        FormTensor dy = W(zeta + kI * e, z, t, r) - W(zeta - kI * e, z, t, r);
        FormTensor d = (0.5 / (2 * h)) * (dx + kI * dy);
        res.form += wedge(FormTensor::one_form(n, VecC::Zero(n), unit, 0.0), d);
        if (r >= 1) {
            FormTensor zx = W(zeta, z + e, t, r - 1) - W(zeta, z - e, t, r - 1);
            FormTensor zy = W(zeta, z + kI * e, t, r - 1) - W(zeta, z - kI * e, t, r - 1);
            FormTensor dz = (0.5 / (2 * h)) * (zx + kI * zy);
            res.form += wedge(FormTensor::one_form(n, unit, VecC::Zero(n), 0.0), dz);
        }
    }
    res.residual = res.form.max_abs();
    return res;
}

ClosednessStudy closedness_study(const SectionFamily& family, int r, const VecC& zeta, const VecC& z, double t,
                                 double step) {
    ClosednessResult a = closedness_check(family, r, zeta, z, t, step);
    ClosednessResult b = closedness_check(family, r, zeta, z, t, step / 2);
    ClosednessStudy s;
    s.residual_h = a.residual;
    s.residual_h2 = b.residual;
    s.order = std::log2(a.residual / b.residual);
    s.richardson = ((4.0 / 3.0) * b.form - (1.0 / 3.0) * a.form).max_abs();
    s.pass = s.order >= 1.7 && s.richardson < s.residual_h2;
    return s;
}

}  // namespace crq
