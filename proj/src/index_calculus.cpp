#include "crq/index_calculus.hpp"

#include <json.hpp>

#include <cmath>
#include <set>
#include <tuple>

namespace crq {

void check_invariants(const KernelTerm& t, int m) {
    if (t.I1 < 0 || t.I2 < 0 || t.I3 < 0 || t.I4 < 0 || t.I5 < 0 || t.d < 0)
        throw Error("invalid-term", "negative cardinality in " + to_string(t));
    if (t.I4 + t.I5 != m - 1) throw Error("invalid-term", "|I4| + |I5| != m - 1 in " + to_string(t));
}

std::string to_string(const KernelTerm& t) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "K[I=(%d,%d,%d,%d,%d), d=%d, h=%g] k=%d l=%d", t.I1, t.I2, t.I3, t.I4, t.I5,
                  t.d, t.h(), t.k(), t.l());
    return buf;
}

const char* to_string(TermKind k) {
    switch (k) {
        case TermKind::lambda: return "lambda";
        case TermKind::gamma: return "gamma";
        case TermKind::phi: return "phi";
        case TermKind::psi: return "psi";
    }
    return "?";
}

namespace {

bool is_lambda_gamma(TermKind k) { return k == TermKind::lambda || k == TermKind::gamma; }

int sum(const std::vector<int>& J, int from, int to) {
    int s = 0;
    for (int i = from; i < to; ++i) s += J[i];
    return s;
}

// All vectors of `parts` nonnegative integers summing to `total`.
void compositions(int total, int parts, std::vector<int>& cur, std::vector<std::vector<int>>& out) {
    if (parts == 1) {
        cur.push_back(total);
        out.push_back(cur);
        cur.pop_back();
        return;
    }
    for (int v = 0; v <= total; ++v) {
        cur.push_back(v);
        compositions(total - v, parts - 1, cur, out);
        cur.pop_back();
    }
}

std::vector<std::vector<int>> compositions(int total, int parts) {
    std::vector<std::vector<int>> out;
    if (total < 0) return out;
    std::vector<int> cur;
    compositions(total, parts, cur, out);
    return out;
}

}  // namespace

void check_invariants(const LambdaGammaTerm& t) {
    const bool lg = is_lambda_gamma(t.kind);
    const std::size_t want = lg ? 8 : 6;
    if (t.J.size() != want) throw Error("invalid-term", "wrong number of J groups");
    for (int v : t.J)
        if (v < 0) throw Error("invalid-term", "negative J cardinality");
    const int n = t.n, m = t.m, r = t.r;
    // For lambda/gamma the theta-rank bound |J2|+|J3| <= m-1 is the same
    // statement as |I4| >= 0 and is reported by to_kernel_terms.
    if (lg) {
        if (sum(t.J, 0, 4) != n - r - 1) throw Error("invalid-term", "|J1|+..+|J4| != n-r-1");
        if (sum(t.J, 4, 8) != r - 1) throw Error("invalid-term", "|J5|+..+|J8| != r-1");
        if (t.kind == TermKind::gamma && n - t.q - m < 1) throw Error("invalid-term", "gamma term without a frame");
    } else {
        if (sum(t.J, 0, 3) != n - r - 1) throw Error("invalid-term", "|J1|+|J2|+|J3| != n-r-1");
        if (t.J[0] + t.J[1] > m - 1) throw Error("invalid-term", "|J1|+|J2| > m-1");
        if (t.J[2] > n - t.q - m) throw Error("invalid-term", "|J3| exceeds the frame count n-q-m");
    }
}

std::vector<LambdaGammaTerm> enumerate_lambda_gamma(int n, int m, int q, int r) {
    std::vector<LambdaGammaTerm> out;
    if (r < 1 || r > n - 1) return out;
    auto front = compositions(n - r - 1, 4);
    auto back = compositions(r - 1, 4);
    for (TermKind kind : {TermKind::lambda, TermKind::gamma}) {
        if (kind == TermKind::gamma && n - q - m < 1) continue;
        for (const auto& a : front) {
            for (const auto& b : back) {
                LambdaGammaTerm t;
                t.kind = kind;
                t.J = a;
                t.J.insert(t.J.end(), b.begin(), b.end());
                t.r = r;
                t.n = n;
                t.m = m;
                t.q = q;
                out.push_back(std::move(t));
            }
        }
    }
    return out;
}

KernelExpansion to_kernel_terms(const LambdaGammaTerm& t) {
    if (!is_lambda_gamma(t.kind)) throw Error("invalid-argument", "to_kernel_terms takes lambda/gamma terms");
    check_invariants(t);
    const auto& J = t.J;
    KernelExpansion out;
    const int I4 = J[0] + J[3] + t.r + t.m - t.n;
    if (I4 < 0) {
        out.feasible = false;
        out.reason = "|I4| = |J1|+|J4|+r+m-n = " + std::to_string(I4) + " < 0";
        return out;
    }
    const int degree = (t.kind == TermKind::lambda ? 1 : 2) + J[1] + J[2] + J[5];
    for (int a = 0; a <= degree; ++a) {
        KernelTerm k;
        k.I1 = 0;
        k.I2 = a;
        k.I3 = degree - a;
        k.I4 = I4;
        k.I5 = t.m - 1 - I4;
        k.d = 2 * (J[0] + J[4] + 1);
        k.h2 = 2 * (t.n - J[0] - J[4] - 1);
        check_invariants(k, t.m);
        out.terms.push_back(k);
    }
    return out;
}

const char* to_string(EstimateTag t) {
    switch (t) {
        case EstimateTag::eps_power_log2: return "eps_power_log2";
        case EstimateTag::eps_halfpower_log: return "eps_halfpower_log";
        case EstimateTag::O_delta: return "O_delta";
        case EstimateTag::O_delta_alpha: return "O_delta_alpha";
        case EstimateTag::O_one: return "O_one";
        case EstimateTag::O_log_delta: return "O_log_delta";
        case EstimateTag::O_delta_alpha_minus_1: return "O_delta_alpha_minus_1";
        case EstimateTag::O_delta_alpha_minus_2: return "O_delta_alpha_minus_2";
        case EstimateTag::vanishing_sqrt_eps_log: return "vanishing_sqrt_eps_log";
        case EstimateTag::unclassified: return "unclassified";
    }
    return "?";
}

namespace {

// Conditions are compared in doubled units so half-integers stay exact:
// kh2 = 2(k + h), k2h = k + 2h.
struct Params {
    int k, h2, dim;
    int kh2() const { return 2 * k + h2; }
    int k2h() const { return k + h2; }
    bool big() const { return k >= dim - 1; }  // otherwise k <= dim - 2
};

EstimateClass make(EstimateTag tag, const char* row, double exponent = 0, bool boundary = false) {
    EstimateClass c;
    c.tag = tag;
    c.row = row;
    c.exponent = exponent;
    c.boundary = boundary;
    return c;
}

}  // namespace

EstimateClass classify_I1(double alpha, int k, int h2, int dim) {
    if (alpha < 0 || alpha >= 1) throw Error("invalid-argument", "alpha must lie in [0,1)");
    Params p{k, h2, dim};
    const bool half = (h2 % 2) != 0;
    if (alpha == 0) {
        if (p.big() && p.kh2() >= 2 * dim)
            return make(EstimateTag::eps_power_log2, "k >= 2n-m-1, k+h >= 2n-m", dim - k - 0.5 * h2);
        if (p.big() && p.kh2() <= 2 * (dim - 1)) return make(EstimateTag::O_delta, "k >= 2n-m-1, k+h <= 2n-m-1");
        if (!p.big() && p.k2h() >= dim + 1)
            return make(EstimateTag::eps_halfpower_log, "k <= 2n-m-2, k+2h >= 2n-m+1", 0.5 * (dim - k - h2 + 1));
        if (!p.big() && p.k2h() <= dim) return make(EstimateTag::O_delta, "k <= 2n-m-2, k+2h <= 2n-m");
        return make(EstimateTag::unclassified, "k >= 2n-m-1, k+h = 2n-m-1/2 falls between rows", 0, half);
    }
    if (p.big() && p.kh2() <= 2 * dim - 1)
        return make(EstimateTag::O_delta_alpha, "alpha > 0, k >= 2n-m-1, k+h <= 2n-m-1/2", 0,
                     half && p.kh2() == 2 * dim - 1);
    if (!p.big() && p.k2h() <= dim + 1) return make(EstimateTag::O_delta_alpha, "alpha > 0, k <= 2n-m-2, k+2h <= 2n-m+1");
    return make(EstimateTag::unclassified, "alpha > 0 outside the O(delta^alpha) rows");
}

EstimateClass classify_I2(double alpha, int k, int h2, int dim) {
    if (alpha < 0 || alpha >= 1) throw Error("invalid-argument", "alpha must lie in [0,1)");
    Params p{k, h2, dim};
    const bool half = (h2 % 2) != 0;
    if (alpha == 0) {
        if (p.big() && p.kh2() <= 2 * (dim - 1)) return make(EstimateTag::O_one, "k >= 2n-m-1, k+h <= 2n-m-1");
        if (!p.big() && p.k2h() <= dim) return make(EstimateTag::O_one, "k <= 2n-m-2, k+2h <= 2n-m");
        if (!p.big() && p.k2h() <= dim + 1) return make(EstimateTag::O_log_delta, "k <= 2n-m-2, k+2h <= 2n-m+1");
    }
    if (p.big() && p.kh2() <= 2 * dim) return make(EstimateTag::O_delta_alpha_minus_1, "k >= 2n-m-1, k+h <= 2n-m");
    if (!p.big() && p.k2h() <= dim + 2)
        return make(EstimateTag::O_delta_alpha_minus_1, "k <= 2n-m-2, k+2h <= 2n-m+2");
    if (p.big() && p.kh2() <= 2 * dim + 1)
        return make(EstimateTag::O_delta_alpha_minus_2, "k >= 2n-m-1, k+h <= 2n-m+1/2", 0,
                    half && p.kh2() == 2 * dim + 1);
    if (!p.big() && p.k2h() <= dim + 3)
        return make(EstimateTag::O_delta_alpha_minus_2, "k <= 2n-m-2, k+2h <= 2n-m+3");
    return make(EstimateTag::unclassified, "outside every I_2 row");
}

bool satisfies_22(const KernelTerm& out, const KernelTerm& ref) {
    return out.khl2() <= ref.khl2() && out.k2hl() <= ref.k2hl();
}

bool satisfies_23(const KernelTerm& out, const KernelTerm& ref) {
    return out.k() - out.l() + 1 <= ref.k() - ref.l() && out.k() - 2 * out.l() + 1 <= ref.k() - 2 * ref.l();
}

namespace {

struct Node {
    DerivedTerm t;
    bool operator<(const Node& o) const {
        auto key = [](const DerivedTerm& d) {
            const KernelTerm& a = d.term;
            const KernelTerm& b = d.reference;
            return std::make_tuple(a.I1, a.I2, a.I3, a.I4, a.I5, a.d, a.h2, d.carries_Y, b.I1, b.I2, b.I3, b.I4,
                                   b.I5, b.d, b.h2, d.rule);
        };
        return key(t) < key(o.t);
    }
};

void emit(std::set<Node>& out, const KernelTerm& term, bool y, const char* rule, const KernelTerm& ref, int depth) {
    const bool ok = y ? satisfies_23(term, ref) : satisfies_22(term, ref);
    if (!ok)
        throw Error("rewrite-soundness",
                    std::string("rule ") + rule + " produced " + to_string(term) + " from " + to_string(ref));
    out.insert(Node{DerivedTerm{term, y, rule, ref, depth}});
}

// One differentiation of a single term.
void step(const DerivedTerm& in, DiffKind kind, std::set<Node>& out) {
    const int depth = in.depth + 1;
    const KernelTerm& t = in.term;
    if (in.carries_Y) {
        // A Y-carrying kernel is only differentiated along the complex tangent:
        // Dc Im F = O(|zeta - z|) leaves two possible index changes.
        if (kind != DiffKind::Dc) throw Error("invalid-argument", "Y-carrying kernels admit only Dc");
        KernelTerm a = t;
        a.d += 1;  // k + 1
        emit(out, a, false, "Dc on Y-term: k+1", in.reference, depth);
        KernelTerm b = t;
        b.h2 += 2;
        b.I2 += 1;  // h + 1, k - 1
        emit(out, b, false, "Dc on Y-term: h+1, k-1", in.reference, depth);
        return;
    }
    emit(out, t, false, "derivative moved onto g", t, depth);
    if (t.I2 + t.I3 > 0) emit(out, t, false, "monomial (zeta-z) derivative", t, depth);
    KernelTerm re = t;
    re.h2 += 2;
    re.I2 += 2;
    emit(out, re, false, "Re F / script-A derivative: h+1, |I2|+|I3|+2", t, depth);
    KernelTerm dist = t;
    dist.d += 2;
    dist.I2 += 2;
    emit(out, dist, false, "|zeta-z|^-d derivative: d+2, |I2|+|I3|+2", t, depth);
    emit(out, t, false, "Im F by parts along Y", t, depth);
    KernelTerm y = t;
    y.I2 += 1;
    emit(out, y, true, "Im F by parts, Y on g: |I2|+|I3|+1", t, depth);
}

}  // namespace

std::vector<DerivedTerm> differentiate_term(const KernelTerm& term, DiffKind kind, int budget) {
    if (budget < 0) throw Error("invalid-argument", "budget must be >= 0");
    if (kind == DiffKind::D && budget > 1)
        throw Error("invalid-argument", "iterated full-tangent derivatives are not covered by the rewrite rules");
    std::vector<DerivedTerm> cur{DerivedTerm{term, false, "identity", term, 0}};
    for (int b = 0; b < budget; ++b) {
        std::set<Node> next;
        for (const DerivedTerm& d : cur) step(d, kind, next);
        cur.clear();
        for (const Node& n : next) cur.push_back(n.t);
    }
    return cur;
}

bool admissible_42(const KernelTerm& t, int n, int m) {
    const int dim = 2 * n - m;
    return t.khl2() <= 2 * (dim - 2) && t.k2hl() <= dim;
}

bool vanishing_39(const KernelTerm& t, int n, int m) {
    if (t.h2 % 2 != 0) return false;  // hypothesis needs integer indices
    return t.khl2() >= 2 * (2 * n - m - 1);
}

std::vector<LambdaGammaTerm> hr_vanishing(int n, int m, int q, int r) {
    if (r < 1 || r > n - 1) throw Error("invalid-argument", "hr_vanishing needs 1 <= r <= n-1");
    std::vector<LambdaGammaTerm> out;
    const int frames = n - q - m;
    auto front = compositions(n - r - 1, 3);
    auto back = compositions(r, 3);
    for (TermKind kind : {TermKind::phi, TermKind::psi}) {
        if (kind == TermKind::psi && frames < 1) continue;
        for (const auto& a : front) {
            if (a[0] + a[1] > m - 1) continue;
            if (a[2] > frames) continue;
            for (const auto& b : back) {
                LambdaGammaTerm t;
                t.kind = kind;
                t.J = a;
                t.J.insert(t.J.end(), b.begin(), b.end());
                t.r = r;
                t.n = n;
                t.m = m;
                t.q = q;
                out.push_back(std::move(t));
            }
        }
    }
    return out;
}

double realized_integral(const KernelTerm& t, int n, int m, double eps) {
    if (!(eps > 0)) throw Error("invalid-argument", "eps must be > 0");
    const int power = 2 * n - m - 2;
    const int k = t.k();
    const double se = std::sqrt(eps);
    // Reduced form on V(1): eta_1 in (-1,1), V^2 < 1 - |eta_1|. Log variables
    // resolve the eps and sqrt(eps) scales; both tails below 1e-16 are dropped.
    static const GaussRule g = gauss_legendre(8, 0.0, 1.0);
    const double lo = std::log(1e-16);
    const double width = 0.5;
    auto panels = [&](double a, double b, auto&& f) {
        Kahan<double> acc;
        const int count = std::max(1, static_cast<int>(std::ceil((b - a) / width)));
        const double w = (b - a) / count;
        for (int p = 0; p < count; ++p)
            for (int i = 0; i < g.nodes.size(); ++i) acc.add(w * g.weights(i) * f(a + w * (p + g.nodes(i))));
        return acc.sum();
    };
    double outer = panels(lo, 0.0, [&](double s) {
        const double eta = std::exp(s);
        const double top = 1.0 - eta;
        if (top <= 1e-300) return 0.0;
        const double se1 = std::sqrt(eta);
        double inner = panels(lo, 0.5 * std::log(top), [&](double v) {
            const double V = std::exp(v);
            const double den = std::pow(eps + eta + V, k) * std::pow(se + se1 + V, t.h2);
            return std::pow(V, power + 1) / den;
        });
        return eta * inner;
    });
    return 2.0 * std::pow(eps, t.l()) * outer;
}

Corroboration numeric_corroboration(const KernelTerm& t, int n, int m, const std::vector<double>& ladder) {
    if (ladder.size() < 2) throw Error("invalid-argument", "ladder needs at least two rungs");
    Corroboration c;
    std::vector<double> x, y;
    for (double e : ladder) {
        double v = realized_integral(t, n, m, e);
        c.eps.push_back(e);
        c.integral.push_back(v);
        x.push_back(std::log(e));
        y.push_back(std::log(v));
    }
    c.slope = fit_slope(x, y);
    return c;
}

namespace {

// Classifications used to discharge an admissible term: the Holder estimates
// apply the tables at (k, h - l) and (k + 1, h - l + 1/2).
std::vector<EstimateClass> admissible_classes(const KernelTerm& t, int dim) {
    const int h2 = t.h2 - 2 * t.l();
    return {classify_I1(0.0, t.k(), h2, dim), classify_I2(0.0, t.k(), h2, dim), classify_I1(0.5, t.k(), h2, dim),
            classify_I2(0.5, t.k() + 1, h2 + 1, dim)};
}

}  // namespace

DichotomyAudit dichotomy_audit(int n_max) {
    DichotomyAudit a;
    for (int n = 2; n <= n_max; ++n)
        for (int m = 1; m <= n - 1; ++m)
            for (int q = 0; q <= n - m; ++q)
                for (int r = 1; r <= n - 1; ++r)
                    for (const auto& lg : enumerate_lambda_gamma(n, m, q, r)) {
                        KernelExpansion ex = to_kernel_terms(lg);
                        if (!ex.feasible) {
                            ++a.infeasible;
                            continue;
                        }
                        const int dim = 2 * n - m;
                        for (const KernelTerm& t : ex.terms) {
                            ++a.terms;
                            const bool adm = admissible_42(t, n, m), van = vanishing_39(t, n, m);
                            if (adm) {
                                ++a.admissible;
                                for (const auto& c : admissible_classes(t, dim))
                                    if (c.tag == EstimateTag::unclassified) ++a.classification_gaps;
                            } else if (van) {
                                ++a.vanishing;
                                if (t.khl2() != 2 * (dim - 1) || t.l() < m - 1) ++a.vanishing_shape_violations;
                                if (classify_I1(0.0, t.k(), t.h2, dim).tag == EstimateTag::unclassified)
                                    ++a.classification_gaps;
                            } else {
                                ++a.unclassified;
                            }
                        }
                    }
    return a;
}

RewriteAudit rewrite_audit(int n_max, int budget) {
    RewriteAudit a;
    std::set<std::tuple<int, int, int, int, int, int, int, int, int>> seen;
    for (int n = 2; n <= n_max; ++n)
        for (int m = 1; m <= n - 1; ++m)
            for (int q = 0; q <= n - m; ++q)
                for (int r = 1; r <= n - 1; ++r)
                    for (const auto& lg : enumerate_lambda_gamma(n, m, q, r)) {
                        KernelExpansion ex = to_kernel_terms(lg);
                        for (const KernelTerm& t : ex.terms) {
                            if (!seen.insert({n, m, t.I1, t.I2, t.I3, t.I4, t.I5, t.d, t.h2}).second) continue;
                            ++a.inputs;
                            const bool adm = admissible_42(t, n, m);
                            for (DiffKind kind : {DiffKind::D, DiffKind::Dc}) {
                                const int b = kind == DiffKind::D ? 1 : budget;
                                std::vector<DerivedTerm> out;
                                try {
                                    out = differentiate_term(t, kind, b);
                                } catch (const Error& e) {
                                    if (e.kind() != "rewrite-soundness") throw;
                                    ++a.violations;
                                    continue;
                                }
                                for (const DerivedTerm& d : out) {
                                    ++a.outputs;
                                    // Both left-hand sides of the admissibility test never grow.
                                    const bool ok = d.carries_Y ? satisfies_23(d.term, t) : satisfies_22(d.term, t);
                                    if (!ok) ++a.violations;
                                    if (adm && !d.carries_Y && !admissible_42(d.term, n, m)) ++a.admissibility_lost;
                                }
                            }
                        }
                    }
    return a;
}

HrSweep hr_sweep(int n_max, int m_max) {
    HrSweep s;
    for (int n = 2; n <= n_max; ++n)
        for (int m = 1; m <= std::min(m_max, n - 1); ++m)
            for (int q = 0; q <= n - m; ++q)
                for (int r = 1; r < q && r <= n - 1; ++r) {
                    ++s.cases;
                    s.survivors += static_cast<long>(hr_vanishing(n, m, q, r).size());
                }
    return s;
}

namespace {

nlohmann::ordered_json term_json(const KernelTerm& t) {
    nlohmann::ordered_json j;
    j["I"] = {t.I1, t.I2, t.I3, t.I4, t.I5};
    j["d"] = t.d;
    j["h"] = t.h();
    j["k"] = t.k();
    j["l"] = t.l();
    return j;
}

nlohmann::ordered_json class_json(const EstimateClass& c) {
    nlohmann::ordered_json j;
    j["tag"] = to_string(c.tag);
    j["row"] = c.row;
    if (c.tag == EstimateTag::eps_power_log2 || c.tag == EstimateTag::eps_halfpower_log) j["eps_exponent"] = c.exponent;
    if (c.boundary) j["boundary"] = true;
    return j;
}

}  // namespace

std::string index_certificate_json(int n, int m, int q) {
    const int dim = 2 * n - m;
    nlohmann::ordered_json doc;
    doc["n"] = n;
    doc["m"] = m;
    doc["q"] = q;
    nlohmann::ordered_json rs = nlohmann::ordered_json::array();
    long adm = 0, van = 0, unc = 0;
    for (int r = 1; r <= n - 1; ++r) {
        nlohmann::ordered_json rj;
        rj["r"] = r;
        nlohmann::ordered_json terms = nlohmann::ordered_json::array();
        for (const auto& lg : enumerate_lambda_gamma(n, m, q, r)) {
            nlohmann::ordered_json tj;
            tj["kind"] = to_string(lg.kind);
            tj["J"] = lg.J;
            KernelExpansion ex = to_kernel_terms(lg);
            if (!ex.feasible) {
                tj["discharged_by"] = "infeasible";
                tj["reason"] = ex.reason;
                terms.push_back(tj);
                continue;
            }
            nlohmann::ordered_json ks = nlohmann::ordered_json::array();
            for (const KernelTerm& t : ex.terms) {
                nlohmann::ordered_json kj = term_json(t);
                if (admissible_42(t, n, m)) {
                    ++adm;
                    kj["discharged_by"] = "admissible_42";
                    nlohmann::ordered_json cs = nlohmann::ordered_json::array();
                    for (const auto& c : admissible_classes(t, dim)) cs.push_back(class_json(c));
                    kj["estimates"] = cs;
                } else if (vanishing_39(t, n, m)) {
                    ++van;
                    kj["discharged_by"] = "vanishing_39";
                    EstimateClass v = make(EstimateTag::vanishing_sqrt_eps_log, "k+h-l >= 2n-m-1");
                    kj["estimates"] = {class_json(classify_I1(0.0, t.k(), t.h2, dim)), class_json(v)};
                } else {
                    ++unc;
                    kj["discharged_by"] = "unclassified";
                }
                ks.push_back(kj);
            }
            tj["kernels"] = ks;
            terms.push_back(tj);
        }
        rj["lambda_gamma"] = terms;
        auto surv = hr_vanishing(n, m, q, r);
        nlohmann::ordered_json hj;
        hj["survivors"] = static_cast<long>(surv.size());
        hj["H_r_vanishes"] = surv.empty();
        rj["H_r"] = hj;
        rs.push_back(rj);
    }
    doc["degrees"] = rs;
    doc["summary"] = {{"admissible_42", adm}, {"vanishing_39", van}, {"unclassified", unc}};
    return doc.dump(2) + "\n";
}

}  // namespace crq
