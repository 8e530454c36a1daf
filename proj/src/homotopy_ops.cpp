#include "crq/homotopy_ops.hpp"

#include "crq/cf_kernels.hpp"

#include <Eigen/LU>

#include <cmath>
#include <fstream>
#include <sstream>

namespace crq {

namespace {

using SVec = Eigen::Matrix<cd, Eigen::Dynamic, 1, 0, 8, 1>;
using SMat = Eigen::Matrix<cd, Eigen::Dynamic, Eigen::Dynamic, 0, 8, 8>;

// Determinant of a column-major k x k array, destroyed in place.
// Pivots on |re| + |im| and multiplies by reciprocals to stay off hypot and
// complex division.
cd det_inplace(cd* a, int k) {
    cd det = 1.0;
    for (int c = 0; c < k; ++c) {
        int piv = c;
        double best = std::abs(a[c * k + c].real()) + std::abs(a[c * k + c].imag());
        for (int r = c + 1; r < k; ++r) {
            double v = std::abs(a[c * k + r].real()) + std::abs(a[c * k + r].imag());
            if (v > best) {
                best = v;
                piv = r;
            }
        }
        if (best == 0.0) return 0.0;
        if (piv != c) {
            for (int cc = c; cc < k; ++cc) std::swap(a[cc * k + c], a[cc * k + piv]);
            det = -det;
        }
        const cd p = a[c * k + c];
        const double pn = p.real() * p.real() + p.imag() * p.imag();
        const cd inv(p.real() / pn, -p.imag() / pn);
        det *= p;
        for (int r = c + 1; r < k; ++r) {
            const cd f = a[c * k + r] * inv;
            for (int cc = c + 1; cc < k; ++cc) a[cc * k + r] -= f * a[cc * k + c];
        }
    }
    return det;
}

int index_of(const std::vector<MultiIndex>& list, const MultiIndex& I) {
    for (std::size_t i = 0; i < list.size(); ++i)
        if (list[i] == I) return static_cast<int>(i);
    return -1;
}

// Sign of dzbar_A ^ dzbar_B = sign * dzbar_{A u B}; 0 if they overlap.
int merge_sign(const MultiIndex& A, const MultiIndex& B, MultiIndex& out) {
    out = A;
    out.insert(out.end(), B.begin(), B.end());
    return sort_sign(out);
}

double smooth_step(double tau, double* deriv) {
    if (tau <= 0) {
        *deriv = 0;
        return 0;
    }
    if (tau >= 1) {
        *deriv = 0;
        return 1;
    }
    const double a = std::exp(-1.0 / tau), b = std::exp(-1.0 / (1.0 - tau));
    const double da = a / (tau * tau), db = -b / ((1.0 - tau) * (1.0 - tau));
    *deriv = (da * b - a * db) / ((a + b) * (a + b));
    return a / (a + b);
}

cd ipow(cd x, int p) {
    cd r = 1.0;
    for (int i = 0; i < p; ++i) r *= x;
    return r;
}

FormJet empty_jet(int count, int n) {
    FormJet j;
    j.value = VecC::Zero(count);
    j.d_z = MatC::Zero(count, n);
    j.d_zbar = MatC::Zero(count, n);
    return j;
}

int binom(int n, int k) {
    if (k < 0 || k > n) return 0;
    return static_cast<int>(combinations(n, k).size());
}

double ball_volume(int d) { return std::pow(kPi, 0.5 * d) / std::tgamma(0.5 * d + 1.0); }

// Volume of {|xi|^4 + |ups|^2 < 1} in R^dx x R^m, m in {1, 2}.
double gauge_ball_volume(int dx, int m) {
    const double a = 0.25 * dx;
    const double inner = m == 1 ? std::sqrt(kPi) * std::tgamma(a + 1.0) / std::tgamma(a + 1.5) : kPi / (a + 1.0);
    return ball_volume(dx) * inner;
}

VecR unit_ball_point(Rng& rng, int d) {
    VecR v(d);
    for (int i = 0; i < d; ++i) v(i) = rng.normal();
    return v / v.norm() * std::pow(rng.uniform(), 1.0 / d);
}

// Parameter layout: Re x (d), Im x (d), u (m).
VecR params_of(const VecC& x, const VecR& u) {
    const int d = static_cast<int>(x.size());
    VecR p(2 * d + u.size());
    p.head(d) = x.real();
    p.segment(d, d) = x.imag();
    p.tail(u.size()) = u;
    return p;
}

}  // namespace

FormJet form_jet(const FormField& g, const VecC& z) {
    if (g.analytic) return g.eval(z, true);
    FormJet j = g.eval(z, false);
    const int n = g.n;
    const double h = 1e-5;
    j.d_z = MatC::Zero(j.value.size(), n);
    j.d_zbar = MatC::Zero(j.value.size(), n);
    for (int l = 0; l < n; ++l) {
        VecC e = VecC::Zero(n);
        e(l) = h;
        VecC dx = (g.eval(z + e, false).value - g.eval(z - e, false).value) / (2 * h);
        VecC dy = (g.eval(z + kI * e, false).value - g.eval(z - kI * e, false).value) / (2 * h);
        j.d_z.col(l) = 0.5 * (dx - kI * dy);
        j.d_zbar.col(l) = 0.5 * (dx + kI * dy);
    }
    return j;
}

CutoffPair centered_cutoff(const ManifoldModel& M, double inner, double outer, const std::string& id) {
    if (!(0 < inner && inner < outer)) throw Error("invalid-argument", "cutoff radii need 0 < inner < outer");
    CutoffPair c;
    c.center_x = VecC::Zero(M.nz());
    c.center_u = VecR::Zero(M.m);
    c.radius_inner = inner;
    c.radius_outer = outer;
    c.id = id;
    return c;
}

FormField cutoff_field(const ManifoldModel& M, const CutoffPair& c, bool prime) {
    const double r0 = prime ? c.radius_outer : c.radius_inner;
    const double r1 = prime ? 2 * c.radius_outer - c.radius_inner : c.radius_outer;
    const int n = M.n, d = M.nz(), m = M.m;
    FormField f;
    f.n = n;
    f.r = 0;
    f.analytic = true;
    f.support = c.id + (prime ? "'" : "");
    f.eval = [=](const VecC& z, bool derivatives) {
        FormJet j = empty_jet(1, n);
        VecC dx = z.head(d) - c.center_x;
        VecR du = z.tail(m).real() - c.center_u;
        const double dist = std::sqrt(dx.squaredNorm() + du.squaredNorm());
        double ds = 0;
        const double s = smooth_step((dist - r0) / (r1 - r0), &ds);
        j.value(0) = 1.0 - s;
        if (derivatives && ds != 0) {
            const double dchi = -ds / (r1 - r0);
            for (int i = 0; i < d; ++i) {
                j.d_zbar(0, i) = dchi * dx(i) / (2 * dist);
                j.d_z(0, i) = dchi * std::conj(dx(i)) / (2 * dist);
            }
            for (int k = 0; k < m; ++k) {
                j.d_zbar(0, d + k) = 0.5 * dchi * du(k) / dist;
                j.d_z(0, d + k) = 0.5 * dchi * du(k) / dist;
            }
        }
        return j;
    };
    return f;
}

FormField polynomial_form(const ManifoldModel& M, int r, const std::vector<Polynomial>& coeffs) {
    const int n = M.n, d = M.nz(), m = M.m;
    if (static_cast<int>(coeffs.size()) != binom(n, r))
        throw Error("invalid-argument", "polynomial_form needs one polynomial per multi-index");
    FormField f;
    f.n = n;
    f.r = r;
    f.analytic = true;
    f.eval = [=](const VecC& z, bool derivatives) {
        FormJet j = empty_jet(static_cast<int>(coeffs.size()), n);
        for (std::size_t J = 0; J < coeffs.size(); ++J) {
            for (const Monomial& mono : coeffs[J]) {
                auto pw = [&](const std::vector<int>& p, int i) { return i < static_cast<int>(p.size()) ? p[i] : 0; };
                cd val = mono.coef;
                for (int i = 0; i < d; ++i) val *= ipow(z(i), pw(mono.z, i)) * ipow(std::conj(z(i)), pw(mono.zbar, i));
                for (int k = 0; k < m; ++k) val *= ipow(z(d + k).real(), pw(mono.u, k));
                j.value(J) += val;
                if (!derivatives) continue;
                for (int i = 0; i < d; ++i) {
                    const int a = pw(mono.z, i), b = pw(mono.zbar, i);
                    if (a > 0) j.d_z(J, i) += val * double(a) / z(i);
                    if (b > 0) j.d_zbar(J, i) += val * double(b) / std::conj(z(i));
                }
                for (int k = 0; k < m; ++k) {
                    const int c = pw(mono.u, k);
                    if (c == 0) continue;
                    const double uk = z(d + k).real();
                    cd du = mono.coef * double(c) * std::pow(uk, c - 1);
                    for (int i = 0; i < d; ++i) du *= ipow(z(i), pw(mono.z, i)) * ipow(std::conj(z(i)), pw(mono.zbar, i));
                    for (int kk = 0; kk < m; ++kk)
                        if (kk != k) du *= std::pow(z(d + kk).real(), pw(mono.u, kk));
                    j.d_z(J, d + k) += 0.5 * du;
                    j.d_zbar(J, d + k) += 0.5 * du;
                }
            }
            if (derivatives) {
                // Division by z_i above is only valid off z_i = 0: recompute those entries directly.
                for (int i = 0; i < d; ++i) {
                    if (z(i) != 0.0) continue;
                    j.d_z(J, i) = 0;
                    j.d_zbar(J, i) = 0;
                    for (const Monomial& mono : coeffs[J]) {
                        auto pw = [&](const std::vector<int>& p, int ii) { return ii < static_cast<int>(p.size()) ? p[ii] : 0; };
                        for (int which = 0; which < 2; ++which) {
                            const int e = which == 0 ? pw(mono.z, i) : pw(mono.zbar, i);
                            if (e == 0) continue;
                            cd v = mono.coef * double(e);
                            for (int ii = 0; ii < d; ++ii) {
                                int a = pw(mono.z, ii), b = pw(mono.zbar, ii);
                                if (ii == i) (which == 0 ? a : b) -= 1;
                                v *= ipow(z(ii), a) * ipow(std::conj(z(ii)), b);
                            }
                            for (int k = 0; k < m; ++k) v *= std::pow(z(d + k).real(), pw(mono.u, k));
                            (which == 0 ? j.d_z : j.d_zbar)(J, i) += v;
                        }
                    }
                }
            }
        }
        return j;
    };
    return f;
}

FormField scale(const FormField& a, const FormField& fn) {
    if (fn.r != 0) throw Error("invalid-argument", "scale needs a function");
    FormField out;
    out.n = a.n;
    out.r = a.r;
    out.analytic = a.analytic && fn.analytic;
    out.support = fn.support;
    out.eval = [a, fn](const VecC& z, bool derivatives) {
        if (!derivatives) {
            FormJet j = a.eval(z, false);
            j.value *= fn.eval(z, false).value(0);
            return j;
        }
        FormJet ja = form_jet(a, z), jf = form_jet(fn, z);
        const cd v = jf.value(0);
        FormJet j = ja;
        j.value = v * ja.value;
        j.d_z = v * ja.d_z + ja.value * jf.d_z.row(0);
        j.d_zbar = v * ja.d_zbar + ja.value * jf.d_zbar.row(0);
        return j;
    };
    return out;
}

FormField wedge(const FormField& a, const FormField& b) {
    if (a.n != b.n) throw Error("invalid-argument", "wedge of forms on different spaces");
    const int n = a.n, r = a.r + b.r;
    FormField out;
    out.n = n;
    out.r = r;
    out.analytic = a.analytic && b.analytic;
    auto CA = combinations(n, a.r), CB = combinations(n, b.r), CK = combinations(n, r);
    struct Entry {
        int ia, ib, k, sign;
    };
    std::vector<Entry> table;
    for (int ia = 0; ia < static_cast<int>(CA.size()); ++ia)
        for (int ib = 0; ib < static_cast<int>(CB.size()); ++ib) {
            MultiIndex K;
            int s = merge_sign(CA[ia], CB[ib], K);
            if (s != 0) table.push_back({ia, ib, index_of(CK, K), s});
        }
    const int nk = static_cast<int>(CK.size());
    out.eval = [a, b, table, nk, n](const VecC& z, bool derivatives) {
        FormJet ja = derivatives ? form_jet(a, z) : a.eval(z, false);
        FormJet jb = derivatives ? form_jet(b, z) : b.eval(z, false);
        FormJet j = empty_jet(nk, n);
        for (const Entry& e : table) {
            j.value(e.k) += double(e.sign) * ja.value(e.ia) * jb.value(e.ib);
            if (!derivatives) continue;
            j.d_z.row(e.k) += double(e.sign) * (ja.d_z.row(e.ia) * jb.value(e.ib) + ja.value(e.ia) * jb.d_z.row(e.ib));
            j.d_zbar.row(e.k) +=
                double(e.sign) * (ja.d_zbar.row(e.ia) * jb.value(e.ib) + ja.value(e.ia) * jb.d_zbar.row(e.ib));
        }
        return j;
    };
    return out;
}

FormField sum(const FormField& a, const FormField& b, cd beta) {
    if (a.n != b.n || a.r != b.r) throw Error("invalid-argument", "sum of forms of different degree");
    FormField out = a;
    out.analytic = a.analytic && b.analytic;
    out.eval = [a, b, beta](const VecC& z, bool derivatives) {
        FormJet ja = derivatives ? form_jet(a, z) : a.eval(z, false);
        FormJet jb = derivatives ? form_jet(b, z) : b.eval(z, false);
        ja.value += beta * jb.value;
        if (derivatives) {
            ja.d_z += beta * jb.d_z;
            ja.d_zbar += beta * jb.d_zbar;
        }
        return ja;
    };
    return out;
}

FormField zero_form(const ManifoldModel& M, int r) {
    std::vector<Polynomial> c(binom(M.n, r));
    return polynomial_form(M, r, c);
}

FormField bundled_test_form(const ManifoldModel& M, const CutoffPair& c) {
    if (M.nz() < 2) throw Error("invalid-argument", "bundled test form needs n - m >= 2");
    const int n = M.n, d = M.nz();
    std::vector<Polynomial> p(n);
    auto zi = [&](int i) {
        std::vector<int> v(d, 0);
        v[i] = 1;
        return v;
    };
    std::vector<int> none;
    std::vector<int> u1(M.m, 0);
    u1[0] = 1;
    p[0] = {{cd(1.0, 0.0), none, none, none}, {cd(0.5, 0.0), zi(1), none, none}, {cd(0.3, 0.0), none, none, u1}};
    p[1] = {{cd(0.0, -0.2), none, none, u1}, {cd(0.4, 0.0), none, zi(0), none}};
    if (d > 2) p[2] = {{cd(0.3, 0.1), zi(d - 1), zi(2), none}, {cd(-0.25, 0.0), none, none, none}};
    if (d > 3) p[3] = {{cd(0.2, 0.0), zi(0), none, none}, {cd(0.0, 0.15), none, zi(3), none}};
    FormField f = scale(polynomial_form(M, 1, p), cutoff_field(M, c, false));
    f.support = c.id;
    return f;
}

FormField bundled_test_function(const ManifoldModel& M, const CutoffPair& c) {
    const int d = M.nz();
    std::vector<int> z0(d, 0), z1(d, 0), none;
    z0[0] = 1;
    z1[d - 1] = 1;
    std::vector<int> u1(M.m, 0);
    u1[0] = 1;
    Polynomial p = {{cd(1.0, 0.0), none, none, none}, {cd(0.4, 0.2), z0, none, none},
                    {cd(0.3, 0.0), none, z1, none},   {cd(-0.5, 0.0), none, none, u1}};
    FormField f = scale(polynomial_form(M, 0, {p}), cutoff_field(M, c, false));
    f.support = c.id;
    return f;
}

VecC fibre_projection(const ManifoldModel& M, const VecC& zeta, const Extension& ext) {
    VecC x = zeta.head(M.nz());
    VecR u = zeta.tail(M.m).real();
    if (ext.shear != 0.0) u += ext.shear * rho(M, zeta).comps;
    return point_on_M(M, x, u);
}

FormField extend(const ManifoldModel& M, const FormField& g, const Extension& ext) {
    FormField out = g;
    const int n = M.n, d = M.nz(), m = M.m;
    out.eval = [M, g, ext, n, d, m](const VecC& zeta, bool derivatives) {
        VecC p = fibre_projection(M, zeta, ext);
        if (!derivatives) return g.eval(p, false);
        FormJet jp = form_jet(g, p);
        // dP_i/dzeta_l and dP_i/dzetabar_l.
        MatC dP = MatC::Zero(n, n), dPbar = MatC::Zero(n, n);
        for (int i = 0; i < d; ++i) dP(i, i) = 1.0;
        VecC x = zeta.head(d);
        MatC grad = DefiningSystem(M).grad(zeta);
        for (int k = 0; k < m; ++k) {
            VecC Hx = M.H[k] * x;
            for (int l = 0; l < n; ++l) {
                cd a = ext.shear * grad(k, l), b = ext.shear * std::conj(grad(k, l));
                if (l == d + k) {
                    a += 0.5;
                    b += 0.5;
                }
                if (l < d) {
                    a += kI * std::conj(Hx(l));
                    b += kI * Hx(l);
                }
                dP(d + k, l) = a;
                dPbar(d + k, l) = b;
            }
        }
        // dPbar_i/dzetabar_l = conj(dP_i/dzeta_l); dPbar_i/dzeta_l = conj(dP_i/dzetabar_l).
        FormJet j = jp;
        j.d_zbar = jp.d_z * dPbar + jp.d_zbar * dP.conjugate();
        j.d_z = jp.d_z * dP + jp.d_zbar * dPbar.conjugate();
        return j;
    };
    return out;
}

namespace {

MatC wbar_frame(const ManifoldModel& M, const VecC& z) {
    const int d = M.nz();
    MatC W = MatC::Zero(M.n, d);
    for (int i = 0; i < d; ++i) W(i, i) = 1.0;
    for (int k = 0; k < M.m; ++k) {
        VecC Hz = M.H[k] * z.head(d);
        for (int j = 0; j < d; ++j) W(d + k, j) = -2.0 * kI * Hz(j);
    }
    return W;
}

}  // namespace

VecC pr_M(const ManifoldModel& M, const VecC& ambient, int r, const VecC& z) {
    const int n = M.n, d = M.nz();
    auto CJ = combinations(n, r), CT = combinations(d, r);
    if (ambient.size() != static_cast<Eigen::Index>(CJ.size())) throw Error("invalid-argument", "pr_M degree mismatch");
    if (r == 0) return ambient;
    MatC W = wbar_frame(M, z);
    VecC out = VecC::Zero(CT.size());
    for (std::size_t t = 0; t < CT.size(); ++t)
        for (std::size_t J = 0; J < CJ.size(); ++J) {
            if (ambient(J) == 0.0) continue;
            MatC sub(r, r);
            for (int a = 0; a < r; ++a)
                for (int b = 0; b < r; ++b) sub(a, b) = W(CJ[J][a], CT[t][b]);
            out(t) += ambient(J) * (r == 1 ? sub(0, 0) : sub.determinant());
        }
    return out;
}

VecC tangential_to_ambient(const ManifoldModel& M, const VecC& tangential, int r) {
    auto CJ = combinations(M.n, r), CT = combinations(M.nz(), r);
    VecC out = VecC::Zero(CJ.size());
    for (std::size_t t = 0; t < CT.size(); ++t) out(index_of(CJ, CT[t])) = tangential(t);
    return out;
}

VecC ambient_dbar(const FormJet& jet, int n, int r) {
    auto CJ = combinations(n, r), CK = combinations(n, r + 1);
    VecC out = VecC::Zero(CK.size());
    for (std::size_t J = 0; J < CJ.size(); ++J)
        for (int l = 0; l < n; ++l) {
            MultiIndex K;
            int s = merge_sign({l}, CJ[J], K);
            if (s != 0) out(index_of(CK, K)) += double(s) * jet.d_zbar(J, l);
        }
    return out;
}

FormField dbar_M(const ManifoldModel& M, const FormField& g) {
    FormField ext = extend(M, g, {});
    FormField out;
    out.n = M.n;
    out.r = g.r + 1;
    out.analytic = false;
    out.support = g.support;
    const int n = M.n, r = g.r;
    out.eval = [M, ext, n, r](const VecC& z, bool) {
        VecC p = fibre_projection(M, z, {});
        VecC tang = pr_M(M, ambient_dbar(form_jet(ext, p), n, r), r + 1, p);
        FormJet j;
        j.value = tangential_to_ambient(M, tang, r + 1);
        return j;
    };
    return out;
}

// ----- Quadrature grid -----

double tube_radius(const ManifoldModel& M) { return 0.5 * M.radius; }

double QuadratureGrid::box_volume() const {
    const int dp = 2 * model->nz() + model->m;
    return std::pow(2 * support.radius_outer, dp) * (model->m == 1 ? 2.0 : 2 * kPi);
}

namespace {

struct MixtureShape {
    int dp, dx, m;
    double R, r0, re, s0, S, gauge_vol;
};

MixtureShape mixture_shape(const QuadratureGrid& g) {
    MixtureShape s;
    s.m = g.model->m;
    s.dx = 2 * g.model->nz();
    s.dp = s.dx + s.m;
    s.R = g.support.radius_outer;
    s.r0 = g.epsilon;
    s.re = 2 * s.R;
    s.s0 = std::sqrt(g.epsilon);
    s.S = 2 * s.R;
    s.gauge_vol = gauge_ball_volume(s.dx, s.m);
    return s;
}

// Gauss-Legendre order per parameter for a tensor grid over both sheets.
int tensor_order(long budget, int dp) {
    return std::max(2, static_cast<int>(std::floor(std::pow(double(budget / 2), 1.0 / dp) + 1e-9)));
}

long component_count(long budget, int c) { return budget / 3 + (c < budget % 3 ? 1 : 0); }

double mixture_density(const MixtureShape& s, const VecR& delta_box, const VecR& delta_center, long budget) {
    for (int i = 0; i < s.dp; ++i)
        if (std::abs(delta_box(i)) > s.R) return 0.0;
    const double a0 = double(component_count(budget, 0)) / budget;
    const double a1 = double(component_count(budget, 1)) / budget;
    const double a2 = double(component_count(budget, 2)) / budget;
    const double pu = 1.0 / std::pow(2 * s.R, s.dp);
    double pe = 0;
    const double r = delta_center.norm();
    if (r < s.re)
        pe = (std::pow(std::max(r, s.r0), -s.dp) - std::pow(s.re, -s.dp)) / (s.dp * ball_volume(s.dp) * std::log(s.re / s.r0));
    double pp = 0;
    const double xn = delta_center.head(s.dx).norm(), un = delta_center.tail(s.m).norm();
    const double N = std::pow(std::pow(xn, 4) + un * un, 0.25);
    const int Q = s.dx + 2 * s.m;
    if (N < s.S)
        pp = (std::pow(std::max(N, s.s0), -Q) - std::pow(s.S, -Q)) / (Q * s.gauge_vol * std::log(s.S / s.s0));
    return a0 * pu + a1 * pe + a2 * pp;
}

void fill_geometry(const ManifoldModel& M, double eps, GridNode& nd) {
    const int n = M.n, d = M.nz(), m = M.m;
    nd.zeta = point_from_params(M, nd.x, nd.u, eps * nd.theta);
    const int dim = 2 * n - 1;
    std::vector<VecC> T;
    std::vector<VecC> Hx(m);
    for (int k = 0; k < m; ++k) Hx[k] = M.H[k] * nd.x;
    for (int part = 0; part < 2; ++part)
        for (int a = 0; a < d; ++a) {
            VecC t = VecC::Zero(n);
            t(a) = part == 0 ? cd(1.0) : kI;
            for (int k = 0; k < m; ++k)
                t(d + k) = kI * (part == 0 ? 2 * Hx[k](a).real() : 2 * Hx[k](a).imag());
            T.push_back(t);
        }
    for (int k = 0; k < m; ++k) {
        VecC t = VecC::Zero(n);
        t(d + k) = 1.0;
        T.push_back(t);
    }
    if (m == 2) {
        VecC t = VecC::Zero(n);
        t(d) = kI * eps * (-nd.theta(1));
        t(d + 1) = kI * eps * nd.theta(0);
        T.push_back(t);
    }
    // Orientation: outward normal grad|rho| followed by T is positive in
    // the interleaved (x1, y1, ..., xn, yn) layout.
    MatR R(2 * n, 2 * n);
    MatC grad = DefiningSystem(M).grad(nd.zeta);
    VecR N = VecR::Zero(2 * n);
    for (int k = 0; k < m; ++k)
        for (int i = 0; i < n; ++i) {
            N(2 * i) += nd.theta(k) * 2.0 * grad(k, i).real();
            N(2 * i + 1) += nd.theta(k) * -2.0 * grad(k, i).imag();
        }
    R.col(0) = N;
    MatR TR(2 * n, dim);
    for (int p = 0; p < dim; ++p)
        for (int i = 0; i < n; ++i) {
            TR(2 * i, p) = T[p](i).real();
            TR(2 * i + 1, p) = T[p](i).imag();
        }
    R.rightCols(dim) = TR;
    const double orient = R.determinant() > 0 ? 1.0 : -1.0;
    nd.surface_factor = std::sqrt((TR.transpose() * TR).determinant());
    nd.pullback = VecC::Zero(n);
    std::vector<cd> buf(dim * dim);
    for (int j = 0; j < n; ++j) {
        int row = 0;
        for (int l = 0; l < n; ++l) {
            if (l == j) continue;
            for (int p = 0; p < dim; ++p) buf[p * dim + row] = std::conj(T[p](l));
            ++row;
        }
        for (int i = 0; i < n; ++i, ++row)
            for (int p = 0; p < dim; ++p) buf[p * dim + row] = T[p](i);
        nd.pullback(j) = orient * det_inplace(buf.data(), dim);
    }
}

}  // namespace

GridNode QuadratureGrid::node(long i) const {
    if (cached) return (*cached)[i];
    const ManifoldModel& M = *model;
    const int d = M.nz(), m = M.m;
    GridNode nd;
    nd.x = VecC(d);
    nd.u = VecR(m);
    nd.theta = VecR(m);
    VecR cparams = params_of(support.center_x, support.center_u);
    VecR zparams = params_of(center.head(d), center.tail(m).real());
    const int dp = 2 * d + m;
    VecR p(dp);
    double weight = 0;
    if (mode == GridMode::tensor) {
        const int order = tensor_order(budget, dp);
        GaussRule g = gauss_legendre(order, -support.radius_outer, support.radius_outer);
        long rest = i;
        const int sheet = static_cast<int>(rest % 2);
        rest /= 2;
        weight = 1.0;
        for (int a = 0; a < dp; ++a) {
            const int idx = static_cast<int>(rest % order);
            rest /= order;
            p(a) = cparams(a) + g.nodes(idx);
            weight *= g.weights(idx);
        }
        nd.theta(0) = sheet == 0 ? 1.0 : -1.0;
    } else {
        Rng rng(mix_seed(seed, static_cast<std::uint64_t>(i)));
        MixtureShape s = mixture_shape(*this);
        const int comp = static_cast<int>(i % 3);
        const long stratum = i / 3, count = component_count(budget, comp);
        const double q = (stratum + rng.uniform()) / double(count);
        if (comp == 0) {
            for (int a = 0; a < dp; ++a) p(a) = cparams(a) + rng.uniform(-s.R, s.R);
        } else if (comp == 1) {
            VecR y(dp);
            for (int a = 0; a < dp; ++a) y(a) = rng.normal();
            y /= y.norm();
            const double r = s.r0 * std::pow(s.re / s.r0, q) * std::pow(rng.uniform(), 1.0 / dp);
            p = zparams + r * y;
        } else {
            VecR ups(m);
            for (;;) {
                ups = unit_ball_point(rng, m);
                if (rng.uniform() < std::pow(1.0 - ups.squaredNorm(), 0.25 * s.dx)) break;
            }
            VecR xi = unit_ball_point(rng, s.dx) * std::pow(1.0 - ups.squaredNorm(), 0.25);
            const double sc = s.s0 * std::pow(s.S / s.s0, q);
            p = zparams;
            p.head(s.dx) += sc * xi;
            p.tail(m) += sc * sc * ups;
        }
        const double dens = mixture_density(s, p - cparams, p - zparams, budget);
        const double fibre = m == 1 ? 2.0 : 2 * kPi;
        weight = dens > 0 ? fibre / (double(budget) * dens) : 0.0;
        if (m == 1) {
            nd.theta(0) = rng.uniform() < 0.5 ? 1.0 : -1.0;
        } else {
            const double phi = 2 * kPi * rng.uniform();
            nd.theta << std::cos(phi), std::sin(phi);
        }
    }
    for (int a = 0; a < d; ++a) nd.x(a) = cd(p(a), p(d + a));
    nd.u = p.tail(m);
    nd.weight = weight;
    fill_geometry(M, epsilon, nd);
    return nd;
}

std::vector<GridNode> QuadratureGrid::materialize() const {
    std::vector<GridNode> out;
    out.reserve(budget);
    for (long i = 0; i < budget; ++i) out.push_back(node(i));
    return out;
}

void QuadratureGrid::cache_nodes() {
    cached.reset();
    cached = std::make_shared<const std::vector<GridNode>>(materialize());
}

QuadratureGrid build_grid(const ManifoldModel& M, const CutoffPair& support, double epsilon, long node_budget,
                          GridMode mode, std::uint64_t seed, const std::optional<VecC>& center) {
    if (!(epsilon > 0)) throw Error("invalid-argument", "epsilon must be positive");
    if (epsilon >= tube_radius(M)) throw Error("outside-tube", "epsilon must be below the tube radius");
    if (node_budget < 1000) throw Error("invalid-argument", "node budget must be at least 1000");
    if (M.m > 2) throw Error("unsupported", "M_eps parameterization is implemented for m <= 2");
    QuadratureGrid g;
    g.model = &M;
    g.support = support;
    g.epsilon = epsilon;
    g.mode = mode;
    g.seed = seed;
    g.center = center ? *center : point_on_M(M, support.center_x, support.center_u);
    // With eta_t reduced by the dt column the integrand has degree n - 2 in t.
    g.t_rule = gauss_legendre(std::max(1, M.n / 2), 0.0, 1.0);
    if (mode == GridMode::tensor) {
        if (M.m != 1) throw Error("unsupported", "tensor grids are implemented for m = 1");
        const int dp = 2 * M.nz() + M.m;
        const int order = tensor_order(node_budget, dp);
        long count = 2;
        for (int a = 0; a < dp; ++a) count *= order;
        g.budget = count;
    } else {
        g.budget = node_budget;
    }
    return g;
}

// ----- Kernel evaluation -----

namespace {

struct Jet {
    SVec eta;
    SMat d_zbar, d_zetabar;
};

// Per evaluation point data for the barrier jets.
struct PointContext {
    VecC z;
    bool fast = false;
    std::vector<SVec> Q;         // Q^(k), independent of zeta when A = 0
    std::vector<SMat> hess;      // hess_mixed(z, k)
    SMat a_plus, a_minus;        // E_perp frames for theta = +1, -1 (m = 1)
};

PointContext make_context(const DefiningSystem& D, const VecC& z) {
    const ManifoldModel& M = D.model();
    PointContext c;
    c.z = z;
    c.fast = D.A() == 0.0 && M.m == 1;
    if (!c.fast) return c;
    VecC dummy = z;
    for (int k = 0; k < M.m; ++k) {
        c.Q.push_back(q_section(D, k, dummy, z));
        c.hess.push_back(D.hess_mixed(z, k));
    }
    VecR tp(1), tm(1);
    tp << 1.0;
    tm << -1.0;
    c.a_plus = eperp_frame(M, Direction{tp}, z).a;
    c.a_minus = eperp_frame(M, Direction{tm}, z).a;
    return c;
}

Jet bm_jet(const VecC& zeta, const VecC& z) {
    const int n = static_cast<int>(z.size());
    SVec dz = zeta - z;
    const double s = dz.squaredNorm();
    Jet j;
    j.eta = dz.conjugate() / s;
    j.d_zetabar = SMat::Identity(n, n) / s - j.eta * dz.transpose() / s;
    j.d_zbar = -j.d_zetabar;
    return j;
}

// P/Phi and its jets; `phi` receives Phi.
Jet barrier_jet(const DefiningSystem& D, const PointContext& c, const VecC& zeta, cd* phi) {
    if (!c.fast) {
        *phi = barrier_eval(D, zeta, c.z).Phi;
        Jet j;
        if (!(std::abs(*phi) >= kTolPhi)) return j;
        SectionJet s = barrier_section(D, zeta, c.z, {}, 0.0);
        j.eta = s.value;
        j.d_zbar = s.d_zbar;
        j.d_zetabar = s.d_zetabar;
        return j;
    }
    const int n = D.model().n;
    const double r = D.values(zeta)(0);
    const double theta = r > 0 ? -1.0 : 1.0;
    const SMat& a = theta > 0 ? c.a_plus : c.a_minus;
    SVec dz = zeta - c.z;
    SVec P = theta * c.Q[0];
    SMat Pi = SMat::Zero(n, n);
    if (a.cols() > 0) {
        SVec A = a.transpose() * dz;
        P += a * A.conjugate();
        Pi = a * a.adjoint();
    }
    const cd Phi = (P.array() * dz.array()).sum();
    *phi = Phi;
    SMat dPz = -Pi - theta * c.hess[0];
    SVec dPhi_zetabar = Pi.transpose() * dz;
    SVec dPhi_zbar = dPz.transpose() * dz;
    Jet j;
    j.eta = P / Phi;
    j.d_zetabar = Pi / Phi - P * dPhi_zetabar.transpose() / (Phi * Phi);
    j.d_zbar = dPz / Phi - P * dPhi_zbar.transpose() / (Phi * Phi);
    return j;
}

// Index tables for g~ ^ omega' ^ omega over M_eps with g of degree r and
// output degree k: for each L = [n] \ {j} and J in L, the complement L' and
// the sign of dzetabar_J ^ dzetabar_L' = sign dzetabar_L.
struct Assembly {
    int n = 0, r = 0, k = 0;
    bool with_t = false;
    std::vector<MultiIndex> CJ, CK, CL;  // g indices, output indices, L' sets
    struct Entry {
        int j, J, Lp;
        double sign;
    };
    std::vector<Entry> entries;
    double sign_K = 1;  // (-1)^{r k} from moving dzbar_K to the front
};

Assembly make_assembly(int n, int r, int k, bool with_t) {
    Assembly a;
    a.n = n;
    a.r = r;
    a.k = k;
    a.with_t = with_t;
    a.CJ = combinations(n, r);
    a.CK = combinations(n, k);
    a.CL = combinations(n, n - 1 - r);
    for (int j = 0; j < n; ++j)
        for (int J = 0; J < static_cast<int>(a.CJ.size()); ++J) {
            const MultiIndex& JJ = a.CJ[J];
            if (std::find(JJ.begin(), JJ.end(), j) != JJ.end()) continue;
            MultiIndex Lp;
            for (int l = 0; l < n; ++l)
                if (l != j && std::find(JJ.begin(), JJ.end(), l) == JJ.end()) Lp.push_back(l);
            MultiIndex L;
            int s = merge_sign(JJ, Lp, L);
            a.entries.push_back({j, J, index_of(a.CL, Lp), double(s)});
        }
    a.sign_K = ((r * k) % 2 == 0) ? 1.0 : -1.0;
    if (with_t && (n - 1) % 2 == 1) a.sign_K = -a.sign_K;  // dt moved in front of dzetabar_L
    return a;
}

// Ambient output coefficients (length C(n,k)) of one node at one section jet.
void assemble(const Assembly& as, const Jet& jet, const SVec* dt, const VecC& gvals, const VecC& pullback,
              std::vector<cd>& dets, VecC& out) {
    const int n = as.n;
    const int nL = static_cast<int>(as.CL.size());
    dets.assign(as.CK.size() * nL, 0.0);
    cd buf[64];
    for (std::size_t K = 0; K < as.CK.size(); ++K)
        for (int Lp = 0; Lp < nL; ++Lp) {
            int col = 0;
            auto put = [&](const auto& v) {
                for (int i = 0; i < n; ++i) buf[col * n + i] = v(i);
                ++col;
            };
            put(jet.eta);
            for (int l : as.CK[K]) put(jet.d_zbar.col(l));
            for (int l : as.CL[Lp]) put(jet.d_zetabar.col(l));
            if (as.with_t) put(*dt);
            dets[K * nL + Lp] = det_inplace(buf, n);
        }
    out = VecC::Zero(as.CK.size());
    for (const Assembly::Entry& e : as.entries) {
        const cd w = pullback(e.j) * gvals(e.J) * e.sign;
        if (w == 0.0) continue;
        for (std::size_t K = 0; K < as.CK.size(); ++K) out(K) += w * dets[K * nL + e.Lp];
    }
    out *= as.sign_K;
}

cd operator_constant(int n, int r) {
    return ((r % 2 == 0) ? 1.0 : -1.0) * factorial(n - 1) / std::pow(2.0 * kPi * kI, n);
}

// Accumulates weighted node contributions with compensated sums.
struct Accumulator {
    std::vector<Kahan<cd>> sum;
    std::vector<Kahan<double>> sq;
    long count = 0;
    explicit Accumulator(int k = 0) : sum(k), sq(k) {}
    void add(const VecC& v) {
        for (int i = 0; i < v.size(); ++i) {
            sum[i].add(v(i));
            sq[i].add(std::norm(v(i)));
        }
        ++count;
    }
    VecC mean_sum() const {
        VecC out(sum.size());
        for (std::size_t i = 0; i < sum.size(); ++i) out(i) = sum[i].sum();
        return out;
    }
    // Standard error of the sum estimator sum_i v_i over `budget` draws.
    VecC std_error(long budget) const {
        VecC out(sum.size());
        for (std::size_t i = 0; i < sum.size(); ++i) {
            const double N = double(budget);
            const double mean2 = std::norm(sum[i].sum() / N);
            const double var = std::max(0.0, sq[i].sum() / N - mean2);
            out(i) = std::sqrt(var * N);
        }
        return out;
    }
};

enum class OpKind { R, H, BM };

OperatorResult run_operator(const DefiningSystem& D, const FormField& g, const VecC& z, const QuadratureGrid& grid,
                            const Extension& ext, OpKind kind) {
    const ManifoldModel& M = D.model();
    const int n = M.n, r = g.r;
    if (kind == OpKind::R && r < 1) throw Error("invalid-argument", "R_r needs r >= 1");
    const int kout = kind == OpKind::R ? r - 1 : r;
    Assembly as = make_assembly(n, r, kout, kind == OpKind::R);
    FormField gt = extend(M, g, ext);
    PointContext ctx = make_context(D, z);
    Accumulator acc(binom(n, kout));
    std::vector<cd> dets;
    long rejected = 0;
    const GaussRule& tr = grid.t_rule;
    for (long i = 0; i < grid.budget; ++i) {
        GridNode nd = grid.node(i);
        if (nd.weight == 0.0) {
            ++acc.count;
            continue;
        }
        VecC gv = gt.eval(nd.zeta, false).value;
        if (gv.cwiseAbs().maxCoeff() == 0.0) {
            ++acc.count;
            continue;
        }
        VecC total = VecC::Zero(binom(n, kout)), part;
        if (kind == OpKind::BM) {
            Jet j0 = bm_jet(nd.zeta, z);
            assemble(as, j0, nullptr, gv, nd.pullback, dets, part);
            total = part;
        } else {
            cd phi;
            Jet j1 = barrier_jet(D, ctx, nd.zeta, &phi);
            if (!(std::abs(phi) >= kTolPhi)) {
                ++rejected;
                ++acc.count;
                continue;
            }
            if (kind == OpKind::H) {
                assemble(as, j1, nullptr, gv, nd.pullback, dets, part);
                total = part;
            } else {
                Jet j0 = bm_jet(nd.zeta, z);
                SVec dt = j1.eta - j0.eta;
                for (int q = 0; q < tr.nodes.size(); ++q) {
                    const double t = tr.nodes(q);
                    Jet jt;
                    jt.eta = (1 - t) * j0.eta + t * j1.eta;
                    jt.d_zbar = (1 - t) * j0.d_zbar + t * j1.d_zbar;
                    jt.d_zetabar = (1 - t) * j0.d_zetabar + t * j1.d_zetabar;
                    assemble(as, jt, &dt, gv, nd.pullback, dets, part);
                    total += tr.weights(q) * part;
                }
            }
        }
        acc.add(nd.weight * total);
    }
    if (grid.budget > 0 && rejected > 0.01 * grid.budget)
        throw Error("grid-too-coarse", std::to_string(rejected) + " nodes rejected for |Phi| < tol_phi");
    cd C = operator_constant(n, kind == OpKind::BM ? 0 : r);
    if (kind == OpKind::R) C *= kTimeOrientation;
    OperatorResult res;
    res.value = pr_M(M, C * acc.mean_sum(), kout, z);
    VecC se = acc.std_error(grid.budget) * std::abs(C);
    res.std_error = kout == 0 ? se : pr_M(M, se, kout, z).cwiseAbs().cast<cd>();
    res.nodes = grid.budget;
    res.rejected = rejected;
    return res;
}

}  // namespace

OperatorResult R_r_eps(const DefiningSystem& D, const FormField& g, const VecC& z, const QuadratureGrid& grid,
                       const Extension& ext) {
    return run_operator(D, g, z, grid, ext, OpKind::R);
}

OperatorResult H_r_eps(const DefiningSystem& D, const FormField& g, const VecC& z, const QuadratureGrid& grid,
                       const Extension& ext) {
    return run_operator(D, g, z, grid, ext, OpKind::H);
}

OperatorResult bm_reproduction(const DefiningSystem& D, const FormField& g, const VecC& z, const QuadratureGrid& grid,
                               const Extension& ext) {
    if (g.r != 0) throw Error("invalid-argument", "bm_reproduction takes a function");
    return run_operator(D, g, z, grid, ext, OpKind::BM);
}

KernelVanishing kernel_vanishing(const DefiningSystem& D, int r, const VecC& z, const QuadratureGrid& grid, int count) {
    KernelVanishing out;
    const int n = D.model().n;
    for (long i = 0; i < grid.budget && out.nodes < count; ++i) {
        GridNode nd = grid.node(i);
        SectionJet j = barrier_section(D, nd.zeta, z);
        j.d_t = VecC::Zero(n);
        FormTensor w = omega_prime_r(j, r);
        double cmax = 0;
        for (int c = 0; c < n; ++c) cmax = std::max({cmax, j.d_zbar.col(c).norm(), j.d_zetabar.col(c).norm()});
        const double scale = j.value.norm() * std::pow(cmax, n - 1);
        out.max_ratio = std::max(out.max_ratio, w.max_abs() / scale);
        ++out.nodes;
    }
    return out;
}

std::vector<VecC> bundled_test_points(const ManifoldModel& M) {
    const int d = M.nz(), m = M.m;
    std::vector<VecC> pts;
    const double xs[5][2] = {{0, 0}, {0.1, 0.05}, {-0.08, 0.02}, {0.05, -0.1}, {0.12, 0.0}};
    const double us[5] = {0.0, 0.05, -0.05, 0.1, -0.1};
    for (int p = 0; p < 5; ++p) {
        VecC x = VecC::Zero(d);
        x(p % d) = cd(xs[p][0], xs[p][1]);
        if (p >= 3) x((p + 1) % d) += cd(xs[p][1], xs[p][0]);
        VecR u = VecR::Constant(m, us[p]);
        pts.push_back(point_on_M(M, x, u));
    }
    return pts;
}

HomotopyRung homotopy_rung(const DefiningSystem& D, const FormField& f, const CutoffPair& support,
                           const std::vector<VecC>& test_points, double epsilon, long budget, std::uint64_t seed,
                           const HomotopyOptions& opt) {
    const ManifoldModel& M = D.model();
    const int n = M.n, d = M.nz(), m = M.m, r = f.r;
    if (r + 1 > n - 1) throw Error("invalid-argument", "degree too large for R_{r+1}");
    HomotopyRung rung;
    rung.epsilon = epsilon;
    rung.budget = budget;
    rung.seed = seed;
    FormField ft = extend(M, f, opt.extension);
    FormField df = dbar_M(M, f);
    FormField dft = extend(M, df, opt.extension);
    Assembly asR = make_assembly(n, r, r - 1 >= 0 ? r - 1 : 0, true);
    Assembly asR1 = make_assembly(n, r + 1, r, true);
    Assembly asH = make_assembly(n, r, r, false);
    const cd CR = kTimeOrientation * operator_constant(n, r);
    const cd CR1 = kTimeOrientation * operator_constant(n, r + 1);
    const cd CH = operator_constant(n, r);
    const int nt = binom(d, r);
    for (std::size_t p = 0; p < test_points.size(); ++p) {
        const VecC& z0 = test_points[p];
        QuadratureGrid grid = build_grid(M, support, epsilon, budget, GridMode::monte_carlo,
                                         mix_seed(seed, static_cast<std::uint64_t>(p)), z0);
        // Evaluation points: z0, then +-h along each graph parameter.
        const double h = opt.fd_step * epsilon;
        const VecC x0 = z0.head(d);
        const VecR u0 = z0.tail(m).real();
        std::vector<VecC> zs = {z0};
        if (r >= 1)
            for (int a = 0; a < 2 * d + m; ++a)
                for (int sgn : {1, -1}) {
                    VecC x = x0;
                    VecR u = u0;
                    if (a < d) x(a) += double(sgn) * h;
                    else if (a < 2 * d) x(a - d) += double(sgn) * h * kI;
                    else u(a - 2 * d) += double(sgn) * h;
                    zs.push_back(point_on_M(M, x, u));
                }
        std::vector<PointContext> ctx;
        for (const VecC& z : zs) ctx.push_back(make_context(D, z));
        const MatC W0 = wbar_frame(M, z0);
        // Per node: residual integral part (nt), R_r f at z0 (C(d, r-1)), H_r f (nt).
        Accumulator acc_res(nt), acc_R(r >= 1 ? binom(d, r - 1) : 1), acc_H(nt), acc_R1(nt), acc_dR(nt);
        std::vector<cd> dets;
        long rejected = 0;
        const GaussRule& tr = grid.t_rule;
        for (long i = 0; i < grid.budget; ++i) {
            GridNode nd = grid.node(i);
            if (nd.weight == 0.0) continue;
            VecC fv = ft.eval(nd.zeta, false).value;
            VecC dfv = dft.eval(nd.zeta, false).value;
            if (fv.cwiseAbs().maxCoeff() == 0.0 && dfv.cwiseAbs().maxCoeff() == 0.0) continue;
            // R_r f at every evaluation point (scalar output when r = 1).
            std::vector<VecC> Rz(zs.size());
            VecC R1 = VecC::Zero(binom(n, r)), Hv = VecC::Zero(binom(n, r));
            bool reject = false;
            for (std::size_t e = 0; e < zs.size(); ++e) {
                cd phi;
                Jet j1 = barrier_jet(D, ctx[e], nd.zeta, &phi);
                if (!(std::abs(phi) >= kTolPhi)) {
                    reject = true;
                    break;
                }
                Jet j0 = bm_jet(nd.zeta, zs[e]);
                SVec dt = j1.eta - j0.eta;
                VecC part;
                Rz[e] = VecC::Zero(r >= 1 ? binom(n, r - 1) : 1);
                for (int q = 0; q < tr.nodes.size(); ++q) {
                    const double t = tr.nodes(q);
                    Jet jt;
                    jt.eta = (1 - t) * j0.eta + t * j1.eta;
                    jt.d_zbar = (1 - t) * j0.d_zbar + t * j1.d_zbar;
                    jt.d_zetabar = (1 - t) * j0.d_zetabar + t * j1.d_zetabar;
                    if (r >= 1) {
                        assemble(asR, jt, &dt, fv, nd.pullback, dets, part);
                        Rz[e] += tr.weights(q) * part;
                    }
                    if (e == 0) {
                        assemble(asR1, jt, &dt, dfv, nd.pullback, dets, part);
                        R1 += tr.weights(q) * part;
                    }
                }
                if (e == 0 && opt.with_H && r >= 1) assemble(asH, j1, nullptr, fv, nd.pullback, dets, Hv);
            }
            if (reject) {
                ++rejected;
                continue;
            }
            const double w = nd.weight;
            VecC R1t = pr_M(M, CR1 * w * R1, r, z0);
            VecC dR = VecC::Zero(nt);
            if (r == 1) {
                // Wbar_j U = dU/dxbar_j - i sum_k (H_k x)_j dU/du_k, central differences.
                auto D1 = [&](int a) { return (Rz[1 + 2 * a](0) - Rz[2 + 2 * a](0)) / (2 * h); };
                for (int j = 0; j < d; ++j) {
                    cd v = 0.5 * (D1(j) + kI * D1(d + j));
                    for (int k = 0; k < m; ++k) v -= kI * (M.H[k] * x0)(j) * D1(2 * d + k);
                    dR(j) = CR * w * v;
                }
                VecC Rv(1);
                Rv(0) = CR * w * Rz[0](0);
                acc_R.add(Rv);
            } else if (r >= 2) {
                throw Error("unsupported", "homotopy_rung implements r <= 1");
            }
            acc_dR.add(dR);
            acc_R1.add(R1t);
            acc_res.add(-(dR + R1t));
            if (opt.with_H && r >= 1) acc_H.add(pr_M(M, CH * w * Hv, r, z0));
        }
        if (rejected > 0.01 * grid.budget)
            throw Error("grid-too-coarse", std::to_string(rejected) + " nodes rejected for |Phi| < tol_phi");
        HomotopyPoint hp;
        hp.f = pr_M(M, f.eval(z0, false).value, r, z0);
        hp.dbar_R = acc_dR.mean_sum();
        hp.R_next = acc_R1.mean_sum();
        hp.H = acc_H.mean_sum();
        hp.residual = hp.f + acc_res.mean_sum();
        hp.residual_norm = hp.residual.norm();
        hp.std_error = acc_res.std_error(grid.budget).norm();
        if (r >= 1) {
            hp.R = acc_R.mean_sum();
            hp.R_std_error = acc_R.std_error(grid.budget).norm();
        }
        (void)W0;
        rung.points.push_back(hp);
        rung.max_residual = std::max(rung.max_residual, hp.residual_norm);
        rung.max_std_error = std::max(rung.max_std_error, hp.std_error);
        rung.rejected += rejected;
    }
    return rung;
}

FormField partition_function(const ManifoldModel& M, const std::vector<CutoffPair>& covers, int i) {
    std::vector<FormField> b;
    for (const CutoffPair& c : covers) b.push_back(cutoff_field(M, c, false));
    FormField out;
    out.n = M.n;
    out.r = 0;
    out.analytic = true;
    out.support = covers.at(i).id;
    out.eval = [b, i](const VecC& z, bool derivatives) {
        FormJet ji = derivatives ? form_jet(b[i], z) : b[i].eval(z, false);
        FormJet tot = ji;
        tot.value.setZero();
        if (derivatives) {
            tot.d_z.setZero();
            tot.d_zbar.setZero();
        }
        for (const FormField& bk : b) {
            FormJet jk = derivatives ? form_jet(bk, z) : bk.eval(z, false);
            tot.value += jk.value;
            if (derivatives) {
                tot.d_z += jk.d_z;
                tot.d_zbar += jk.d_zbar;
            }
        }
        FormJet j = ji;
        const cd S = tot.value(0);
        if (S == 0.0) {
            j.value.setZero();
            if (derivatives) {
                j.d_z.setZero();
                j.d_zbar.setZero();
            }
            return j;
        }
        j.value(0) = ji.value(0) / S;
        if (derivatives) {
            j.d_z = ji.d_z / S - ji.value(0) * tot.d_z / (S * S);
            j.d_zbar = ji.d_zbar / S - ji.value(0) * tot.d_zbar / (S * S);
        }
        return j;
    };
    return out;
}

GlueResult glue(const DefiningSystem& D, const std::vector<CutoffPair>& covers, const FormField& g, const VecC& z,
                const QuadratureGrid& grid) {
    const ManifoldModel& M = D.model();
    const int d = M.nz(), r = g.r;
    if (r < 1) throw Error("invalid-argument", "glue needs r >= 1");
    // Partition check on a sample of supp g.
    for (long i = 0; i < std::min<long>(grid.budget, 2000); ++i) {
        GridNode nd = grid.node(i);
        VecC p = fibre_projection(M, nd.zeta, {});
        if (g.eval(p, false).value.cwiseAbs().maxCoeff() == 0.0) continue;
        double s = 0;
        for (std::size_t c = 0; c < covers.size(); ++c) s += partition_function(M, covers, int(c)).eval(p, false).value(0).real();
        if (std::abs(s - 1.0) > 1e-8) throw Error("cover", "partition of unity is deficient on supp g");
    }
    GlueResult out;
    out.R = VecC::Zero(binom(d, r - 1));
    out.H_cutoff = VecC::Zero(binom(d, r));
    out.H_dbar_theta = VecC::Zero(binom(d, r));
    out.H_local = VecC::Zero(binom(d, r));
    for (std::size_t c = 0; c < covers.size(); ++c) {
        FormField th = partition_function(M, covers, int(c));
        FormField thp = cutoff_field(M, covers[c], true);
        const cd tp = thp.eval(z, false).value(0);
        FormField tg = scale(g, th);
        OperatorResult Rloc = R_r_eps(D, tg, z, grid);
        out.R += tp * Rloc.value;
        // - dbar_M theta' ^ R_r(theta g): for r = 1 a function times a (0,1) form.
        VecC dtp = pr_M(M, ambient_dbar(form_jet(thp, z), M.n, 0), 1, z);
        if (r == 1) out.H_cutoff -= Rloc.value(0) * dtp;
        else throw Error("unsupported", "glue implements r = 1");
        if (tp != 0.0) {
            FormField dth_g = wedge(dbar_M(M, th), g);
            out.H_dbar_theta += tp * R_r_eps(D, dth_g, z, grid).value;
            out.H_local += tp * H_r_eps(D, tg, z, grid).value;
        }
    }
    out.H = out.H_cutoff + out.H_dbar_theta + out.H_local;
    return out;
}

ExtensionComparison extension_independence(const DefiningSystem& D, const FormField& f, const CutoffPair& support,
                                           const std::vector<VecC>& test_points, double epsilon, long budget,
                                           std::uint64_t seed, double shear) {
    ExtensionComparison out;
    double se = 0;
    for (std::size_t p = 0; p < test_points.size(); ++p) {
        QuadratureGrid grid = build_grid(D.model(), support, epsilon, budget, GridMode::monte_carlo,
                                         mix_seed(seed, static_cast<std::uint64_t>(p)), test_points[p]);
        OperatorResult a = R_r_eps(D, f, test_points[p], grid, Extension{0.0});
        OperatorResult b = R_r_eps(D, f, test_points[p], grid, Extension{shear});
        out.R_graph.push_back(a.value);
        out.R_sheared.push_back(b.value);
        out.max_difference = std::max(out.max_difference, (a.value - b.value).norm());
        se = std::max(se, a.std_error.norm());
    }
    out.tolerance = 2 * se;
    out.pass = out.max_difference <= out.tolerance;
    return out;
}

namespace {

std::string node_checksum(const QuadratureGrid& g) {
    std::ostringstream os;
    os.precision(17);
    for (long i = 0; i < std::min<long>(g.budget, 256); ++i) {
        GridNode nd = g.node(i);
        for (int k = 0; k < nd.zeta.size(); ++k) os << nd.zeta(k).real() << ' ' << nd.zeta(k).imag() << ' ';
        os << nd.weight << '\n';
    }
    return hex64(fnv1a(os.str()));
}

}  // namespace

void save_grid_cache(const QuadratureGrid& g, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw Error("io", "cannot write " + path);
    out.precision(17);
    out << "crq-grid-cache 1\n";
    out << "model_hash " << model_hash(*g.model) << "\n";
    out << "epsilon " << g.epsilon << "\n";
    out << "budget " << g.budget << "\n";
    out << "seed " << g.seed << "\n";
    out << "mode " << (g.mode == GridMode::tensor ? "tensor" : "monte-carlo") << "\n";
    out << "support " << g.support.id << ' ' << g.support.radius_inner << ' ' << g.support.radius_outer;
    for (int i = 0; i < g.support.center_x.size(); ++i)
        out << ' ' << g.support.center_x(i).real() << ' ' << g.support.center_x(i).imag();
    for (int i = 0; i < g.support.center_u.size(); ++i) out << ' ' << g.support.center_u(i);
    out << "\ncenter";
    for (int i = 0; i < g.center.size(); ++i) out << ' ' << g.center(i).real() << ' ' << g.center(i).imag();
    out << "\nchecksum " << node_checksum(g) << "\n";
}

QuadratureGrid load_grid_cache(const ManifoldModel& M, const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("missing-cache", "no grid cache at " + path + "; run the homotopy command first");
    std::string key, hash, mode, checksum, id;
    int version = 0;
    double eps = 0, r0 = 0, r1 = 0;
    long budget = 0;
    std::uint64_t seed = 0;
    in >> key >> version;
    if (key != "crq-grid-cache" || version != 1) throw Error("cache-mismatch", "unsupported grid cache header");
    in >> key >> hash >> key >> eps >> key >> budget >> key >> seed >> key >> mode >> key >> id >> r0 >> r1;
    if (hash != model_hash(M)) throw Error("cache-mismatch", "grid cache belongs to another model");
    CutoffPair c;
    c.id = id;
    c.radius_inner = r0;
    c.radius_outer = r1;
    c.center_x = VecC(M.nz());
    c.center_u = VecR(M.m);
    for (int i = 0; i < M.nz(); ++i) {
        double a, b;
        in >> a >> b;
        c.center_x(i) = cd(a, b);
    }
    for (int i = 0; i < M.m; ++i) in >> c.center_u(i);
    in >> key;
    VecC center(M.n);
    for (int i = 0; i < M.n; ++i) {
        double a, b;
        in >> a >> b;
        center(i) = cd(a, b);
    }
    in >> key >> checksum;
    if (!in) throw Error("cache-mismatch", "truncated grid cache");
    QuadratureGrid g = build_grid(M, c, eps, budget, mode == "tensor" ? GridMode::tensor : GridMode::monte_carlo, seed, center);
    if (node_checksum(g) != checksum) throw Error("cache-mismatch", "regenerated nodes do not match the cache checksum");
    return g;
}

}  // namespace crq
