#include "crq/norms.hpp"

#include <Eigen/LU>
#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace crq {

ExpControls ExpControls::zero(const ManifoldModel& M) {
    return {VecR::Zero(M.m), VecR::Zero(M.m), VecR::Zero(M.nz()), VecR::Zero(M.nz())};
}

VecR ExpControls::flat() const {
    VecR f(x.size() + y.size() + u.size() + v.size());
    f << x, y, u, v;
    return f;
}

ExpControls ExpControls::from_flat(const ManifoldModel& M, const VecR& f) {
    const int m = M.m, d = M.nz();
    return {f.segment(0, m), f.segment(m, m), f.segment(2 * m, d), f.segment(2 * m + d, d)};
}

VecC frame_vector(const ManifoldModel& M, const VecC& zeta, const FrameField& field) {
    const int d = M.nz();
    VecC v = VecC::Zero(M.n);
    if (field.kind == FrameKind::Y) {
        v(d + field.index) = 1.0;
        return v;
    }
    const int j = field.index;
    v(j) = 1.0;
    for (int k = 0; k < M.m; ++k) v(d + k) = 2.0 * kI * std::conj((M.H[k] * zeta.head(d))(j));
    if (field.kind == FrameKind::V) v *= kI;
    return v;
}

std::string to_string(const FrameField& f) {
    const char* k = f.kind == FrameKind::U ? "U" : f.kind == FrameKind::V ? "V" : "Y";
    return std::string(k) + std::to_string(f.index + 1);
}

std::vector<VecC> rk4_path(const std::function<VecC(double, const VecC&)>& rhs, const VecC& y0, int steps) {
    std::vector<VecC> out{y0};
    out.reserve(steps + 1);
    const double h = 1.0 / steps;
    VecC y = y0;
    for (int i = 0; i < steps; ++i) {
        const double t = i * h;
        VecC k1 = rhs(t, y);
        VecC k2 = rhs(t + 0.5 * h, y + 0.5 * h * k1);
        VecC k3 = rhs(t + 0.5 * h, y + 0.5 * h * k2);
        VecC k4 = rhs(t + h, y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        out.push_back(y);
    }
    return out;
}

namespace {

// sum_j c_j U_j(zeta) with c_j = u_j + i v_j.
VecC tangential_velocity(const ManifoldModel& M, const VecC& zeta, const VecC& c) {
    const int d = M.nz();
    VecC v = VecC::Zero(M.n);
    v.head(d) = c;
    for (int k = 0; k < M.m; ++k) {
        VecC Hx = M.H[k] * zeta.head(d);
        cd s = 0;
        for (int j = 0; j < d; ++j) s += c(j) * 2.0 * kI * std::conj(Hx(j));
        v(d + k) = s;
    }
    return v;
}

// d/ds of sum_j c_j U_j(x(s)) for constant c, given x'(s).
VecC tangential_acceleration(const ManifoldModel& M, const VecC& c, const VecC& dc, const VecC& zeta,
                             const VecC& velocity) {
    const int d = M.nz();
    VecC a = tangential_velocity(M, zeta, dc);
    for (int k = 0; k < M.m; ++k) {
        VecC Hv = M.H[k] * velocity.head(d);
        cd s = 0;
        for (int j = 0; j < d; ++j) s += c(j) * 2.0 * kI * std::conj(Hv(j));
        a(d + k) += s;
    }
    return a;
}

VecC control_vector(const ExpControls& c) {
    VecC out(c.u.size());
    for (int j = 0; j < c.u.size(); ++j) out(j) = cd(c.u(j), c.v(j));
    return out;
}

VecC exp_rhs(const ManifoldModel& M, const ExpControls& c, const VecC& zeta) {
    VecC v = tangential_velocity(M, zeta, control_vector(c));
    const int d = M.nz();
    for (int k = 0; k < M.m; ++k) v(d + k) += cd(c.y(k), c.x(k));
    return v;
}

VecR realify_c(const VecC& v) {
    VecR r(2 * v.size());
    for (int i = 0; i < v.size(); ++i) {
        r(2 * i) = v(i).real();
        r(2 * i + 1) = v(i).imag();
    }
    return r;
}

VecC sample_point(const ManifoldModel& M, Rng& rng, double region) {
    VecC x(M.nz());
    for (int i = 0; i < M.nz(); ++i) x(i) = cd(rng.uniform(-region, region), rng.uniform(-region, region));
    VecR u(M.m);
    for (int k = 0; k < M.m; ++k) u(k) = rng.uniform(-region, region);
    return point_on_M(M, x, u);
}

}  // namespace

ExpPath exp_map(const ManifoldModel& M, const VecC& z, const ExpControls& c) {
    auto rhs = [&](double, const VecC& y) { return exp_rhs(M, c, y); };
    ExpPath out;
    std::vector<VecC> prev = rk4_path(rhs, z, 4);
    for (int steps = 8;; steps *= 2) {
        std::vector<VecC> path = rk4_path(rhs, z, steps);
        for (const VecC& p : path)
            if (p.norm() > M.radius) throw Error("chart-exit", "exp_map path leaves the chart |zeta| <= radius");
        const double change = (path.back() - prev.back()).norm();
        if (change < 1e-9 || steps >= 1 << 14) {
            out.end = path.back();
            out.path = std::move(path);
            out.steps = steps;
            out.halving_change = change;
            return out;
        }
        prev = std::move(path);
    }
}

ExpControls exp_inverse(const ManifoldModel& M, const VecC& z, const VecC& zeta) {
    const int dim = 2 * M.n;
    auto endpoint = [&](const VecR& f) { return realify_c(exp_map(M, z, ExpControls::from_flat(M, f)).end); };
    // Linearized start: the frame at z.
    MatR B(dim, dim);
    for (int a = 0; a < dim; ++a) {
        VecR e = VecR::Zero(dim);
        e(a) = 1.0;
        B.col(a) = realify_c(exp_rhs(M, ExpControls::from_flat(M, e), z));
    }
    const VecR target = realify_c(zeta);
    VecR f = B.partialPivLu().solve(target - realify_c(z));
    VecR res = endpoint(f) - target;
    for (int it = 0; it < 60; ++it) {
        if (res.norm() < 1e-9) return ExpControls::from_flat(M, f);
        MatR J(dim, dim);
        const double h = 1e-6;
        for (int a = 0; a < dim; ++a) {
            VecR e = VecR::Zero(dim);
            e(a) = h;
            J.col(a) = (endpoint(f + e) - endpoint(f - e)) / (2 * h);
        }
        VecR step = J.partialPivLu().solve(res);
        double lam = 1.0;
        for (; lam > 1e-4; lam *= 0.5) {
            VecR trial = f - lam * step;
            VecR r = endpoint(trial) - target;
            if (r.norm() < res.norm()) {
                f = trial;
                res = r;
                break;
            }
        }
        if (lam <= 1e-4) break;
    }
    if (res.norm() < 1e-9) return ExpControls::from_flat(M, f);
    throw Error("inversion", "Newton inversion of e_z stalled at residual " + std::to_string(res.norm()));
}

CurveAudit audit_curve(const ManifoldModel& M, const TangentCurve& c, double slack) {
    CurveAudit a;
    DefiningSystem D(M);
    for (std::size_t i = 0; i < c.x.size(); ++i) {
        a.max_speed = std::max(a.max_speed, c.velocity[i].norm());
        a.max_acceleration = std::max(a.max_acceleration, c.acceleration[i].norm());
        MatC g = D.grad(c.x[i]);
        for (int k = 0; k < M.m; ++k) {
            cd s = 0;
            for (int l = 0; l < M.n; ++l) s += g(k, l) * c.velocity[i](l);
            a.max_normal = std::max(a.max_normal, std::abs(s));
        }
        a.max_rho = std::max(a.max_rho, rho(M, c.x[i]).norm);
    }
    a.pass = a.max_speed <= 1 + slack && a.max_acceleration <= 1 + slack && a.max_normal < 1e-8;
    return a;
}

namespace {

TangentCurve integrate_curve(const ManifoldModel& M, const VecC& start, const std::vector<VecC>& g, int samples) {
    auto c_at = [&](double s) {
        VecC c = VecC::Zero(M.nz());
        double p = 1;
        for (const VecC& gp : g) {
            c += p * gp;
            p *= s;
        }
        return c;
    };
    auto dc_at = [&](double s) {
        VecC c = VecC::Zero(M.nz());
        for (std::size_t q = 1; q < g.size(); ++q) c += double(q) * std::pow(s, double(q - 1)) * g[q];
        return c;
    };
    const int sub = 4;
    auto rhs = [&](double s, const VecC& y) { return tangential_velocity(M, y, c_at(s)); };
    std::vector<VecC> path = rk4_path(rhs, start, sub * (samples - 1));
    TangentCurve out;
    out.generator = g;
    for (int i = 0; i < samples; ++i) {
        const double s = double(i) / (samples - 1);
        const VecC& x = path[sub * i];
        VecC v = tangential_velocity(M, x, c_at(s));
        out.s.push_back(s);
        out.x.push_back(x);
        out.velocity.push_back(v);
        out.acceleration.push_back(tangential_acceleration(M, c_at(s), dc_at(s), x, v));
    }
    return out;
}

}  // namespace

TangentCurve random_curve(const ManifoldModel& M, Rng& rng, const VecC& start, int samples) {
    std::vector<VecC> g(4);
    for (VecC& gp : g) {
        gp = VecC(M.nz());
        for (int j = 0; j < M.nz(); ++j) gp(j) = cd(rng.normal(), rng.normal());
    }
    for (int it = 0; it < 200; ++it) {
        TangentCurve c = integrate_curve(M, start, g, samples);
        double S = 0, A = 0;
        for (std::size_t i = 0; i < c.x.size(); ++i) {
            S = std::max(S, c.velocity[i].norm());
            A = std::max(A, c.acceleration[i].norm());
        }
        if (S <= 0.9 && A <= 0.9) return c;
        const double lam = 0.98 * std::min({1.0, 0.9 / S, std::sqrt(0.9 / A)});
        for (VecC& gp : g) gp *= lam;
    }
    throw Error("curve", "random_curve failed to meet the speed and acceleration bounds");
}

PiProjection pi_c_projection(const ManifoldModel& M, const VecC& z, const VecC& zeta, int samples) {
    PiProjection out;
    out.controls = exp_inverse(M, z, zeta);
    out.projected = out.controls;
    out.projected.x.setZero();
    out.projected.y.setZero();
    out.point = exp_map(M, z, out.projected).end;
    out.curve = integrate_curve(M, z, {control_vector(out.projected)}, samples);
    return out;
}

const char* to_string(HolderRegime r) { return r == HolderRegime::ambient ? "ambient" : "tangential"; }

HolderEstimate ambient_holder(const ManifoldModel& M, const ScalarField& h, double exponent, const NormSampling& s) {
    HolderEstimate e;
    e.beta = exponent;
    e.regime = HolderRegime::ambient;
    for (long i = 0; i < s.pair_budget; ++i) {
        Rng rng(mix_seed(s.seed, static_cast<std::uint64_t>(i)));
        VecC a = sample_point(M, rng, s.region);
        VecC dir(M.nz());
        for (int j = 0; j < M.nz(); ++j) dir(j) = cd(rng.normal(), rng.normal());
        VecR du(M.m);
        for (int k = 0; k < M.m; ++k) du(k) = rng.normal();
        const double len = std::sqrt(dir.squaredNorm() + du.squaredNorm());
        const double r = s.region * std::pow(10.0, -4.0 * rng.uniform());
        auto at = [&](double t) {
            return point_on_M(M, a.head(M.nz()) + t * r / len * dir, a.tail(M.m).real() + t * r / len * du);
        };
        double q;
        if (exponent <= 1) {
            VecC b = at(1.0);
            q = std::abs(h(a) - h(b)) / std::pow((a - b).norm(), exponent);
        } else {
            VecC b = at(1.0), c = at(-1.0);
            q = std::abs(h(b) - 2.0 * h(a) + h(c)) / std::pow(0.5 * (b - c).norm(), exponent);
        }
        e.quotients.push_back(q);
        e.quotient_sup = std::max(e.quotient_sup, q);
        ++e.pair_count;
    }
    return e;
}

HolderEstimate tangential_holder(const ManifoldModel& M, const ScalarField& h, double beta, const NormSampling& s) {
    HolderEstimate e;
    e.beta = beta;
    e.regime = HolderRegime::tangential;
    for (long i = 0; i < s.curve_budget; ++i) {
        Rng rng(mix_seed(s.seed ^ 0x5851f42d4c957f2dULL, static_cast<std::uint64_t>(i)));
        VecC start = sample_point(M, rng, s.region);
        TangentCurve c = random_curve(M, rng, start, s.curve_samples);
        std::vector<cd> v;
        for (const VecC& x : c.x) v.push_back(h(x));
        const int K = static_cast<int>(v.size());
        double best = 0;
        if (beta <= 1) {
            for (int a = 0; a < K; ++a)
                for (int b = a + 1; b < K; ++b) {
                    best = std::max(best, std::abs(v[a] - v[b]) / std::pow(c.s[b] - c.s[a], beta));
                    ++e.pair_count;
                }
        } else {
            for (int a = 1; a + 1 < K; ++a)
                for (int w = 1; a - w >= 0 && a + w < K; ++w) {
                    best = std::max(best, std::abs(v[a + w] - 2.0 * v[a] + v[a - w]) / std::pow(c.s[a + w] - c.s[a], beta));
                    ++e.pair_count;
                }
        }
        e.quotients.push_back(best);
        e.quotient_sup = std::max(e.quotient_sup, best);
    }
    return e;
}

GammaEstimate gamma_norm_estimate(const ManifoldModel& M, const ScalarField& h, double beta, const NormSampling& s) {
    if (!(beta > 0 && beta < 2)) throw Error("invalid-argument", "Gamma^beta needs 0 < beta < 2");
    GammaEstimate g;
    g.ambient = ambient_holder(M, h, beta / 2, s);
    g.tangential = tangential_holder(M, h, beta, s);
    g.total = g.ambient.quotient_sup + g.tangential.quotient_sup;
    return g;
}

ScalarField derivative_along(const ManifoldModel& M, const ScalarField& h, const FrameField& field, double step) {
    return [M, h, field, step](const VecC& zeta) {
        VecC v = frame_vector(M, zeta, field);
        auto proj = [&](const VecC& p) { return point_on_M(M, p.head(M.nz()), p.tail(M.m).real()); };
        return (h(proj(zeta + step * v)) - h(proj(zeta - step * v))) / (2 * step);
    };
}

std::vector<DerivativeWord> derivative_words(const ManifoldModel& M, int max_weight) {
    std::vector<FrameField> dc, dg;
    for (int j = 0; j < M.nz(); ++j) dc.push_back({FrameKind::U, j});
    for (int j = 0; j < M.nz(); ++j) dc.push_back({FrameKind::V, j});
    for (int k = 0; k < M.m; ++k) dg.push_back({FrameKind::Y, k});
    dg.insert(dg.end(), dc.begin(), dc.end());
    auto sequences = [](const std::vector<FrameField>& gens, int len) {
        std::vector<std::vector<FrameField>> out{{}};
        for (int l = 0; l < len; ++l) {
            std::vector<std::vector<FrameField>> next;
            for (const auto& seq : out)
                for (const FrameField& g : gens) {
                    auto s = seq;
                    s.push_back(g);
                    next.push_back(s);
                }
            out = std::move(next);
        }
        return out;
    };
    std::vector<DerivativeWord> words;
    for (int w = 0; w <= max_weight; ++w)
        for (int k = 0; 2 * k <= w; ++k) {
            const int s = w - 2 * k;
            for (const auto& D : sequences(dg, k))
                for (const auto& Dc : sequences(dc, s)) words.push_back({D, Dc});
        }
    return words;
}

ScalarField apply_word(const ManifoldModel& M, const ScalarField& h, const DerivativeWord& word) {
    const int len = word.k() + word.s();
    const double step = len > 1 ? 1e-3 : 1e-4;
    ScalarField g = h;
    for (auto it = word.D.rbegin(); it != word.D.rend(); ++it) g = derivative_along(M, g, *it, step);
    for (auto it = word.Dc.rbegin(); it != word.Dc.rend(); ++it) g = derivative_along(M, g, *it, step);
    return g;
}

PiEstimate pi_norm_estimate(const ManifoldModel& M, const ScalarField& h, double a, const NormSampling& s,
                            int word_budget) {
    PiEstimate e;
    e.p = static_cast<int>(std::floor(a));
    e.alpha = a - e.p;
    if (!(e.alpha > 0 && e.alpha < 1)) throw Error("invalid-argument", "Pi^a needs a = p + alpha with 0 < alpha < 1");
    if (e.p > 2) throw Error("order", "frame derivatives beyond order 2 are not available");
    std::vector<DerivativeWord> words = derivative_words(M, e.p);
    std::vector<int> used(e.p + 1, 0);
    for (const DerivativeWord& w : words) {
        if (used[w.weight()]++ >= word_budget) continue;
        ScalarField g = apply_word(M, h, w);
        e.gamma_alpha_sup = std::max(e.gamma_alpha_sup, gamma_norm_estimate(M, g, e.alpha, s).total);
        if (w.weight() <= e.p - 1)
            e.gamma_one_plus_alpha_sup = std::max(e.gamma_one_plus_alpha_sup, gamma_norm_estimate(M, g, 1 + e.alpha, s).total);
        ++e.words;
    }
    e.total = e.gamma_alpha_sup + e.gamma_one_plus_alpha_sup;
    return e;
}

std::string RegularityReport::to_json() const {
    nlohmann::ordered_json j;
    j["alpha"] = alpha;
    j["epsilon"] = epsilon;
    j["budget"] = budget;
    j["seed"] = seed;
    j["lower_bounds"] = true;
    j["note"] = note;
    j["rows"] = nlohmann::ordered_json::array();
    for (const RegularityRow& r : rows)
        j["rows"].push_back({{"quantity", r.quantity}, {"coefficient", r.coefficient}, {"norm", r.norm},
                             {"gamma_alpha", r.gamma_alpha}, {"gamma_one_plus_alpha", r.gamma_one_plus_alpha},
                             {"total", r.total}, {"words", r.words}});
    return j.dump(2);
}

RegularityReport regularity_gain_report(const DefiningSystem& D, const FormField& f, const CutoffPair& support,
                                        double alpha, double epsilon, long budget, std::uint64_t seed,
                                        const NormSampling& s) {
    const ManifoldModel& M = D.model();
    if (f.r != 1) throw Error("invalid-argument", "regularity_gain_report takes a (0,1) form");
    RegularityReport rep;
    rep.alpha = alpha;
    rep.epsilon = epsilon;
    rep.budget = budget;
    rep.seed = seed;
    rep.note = "Sampled difference quotients over a finite frame set; lower bounds, demonstrative and non-probative.";
    auto row = [](const std::string& q, int J, const std::string& norm, const PiEstimate& e) {
        return RegularityRow{q, J, norm, e.gamma_alpha_sup, e.gamma_one_plus_alpha_sup, e.total, e.words};
    };
    for (int J = 0; J < M.nz(); ++J) {
        ScalarField hJ = [&M, f, J](const VecC& z) { return pr_M(M, f.eval(z, false).value, 1, z)(J); };
        rep.rows.push_back(row("f", J, "Pi^alpha", pi_norm_estimate(M, hJ, alpha, s)));
    }
    QuadratureGrid grid = build_grid(M, support, epsilon, budget, GridMode::monte_carlo, seed);
    grid.cache_nodes();
    ScalarField R = [&D, f, grid](const VecC& z) { return R_r_eps(D, f, z, grid).value(0); };
    rep.rows.push_back(row("R_1 f", 0, "Pi^{1+alpha}", pi_norm_estimate(M, R, 1 + alpha, s, 2)));
    return rep;
}

}  // namespace crq
