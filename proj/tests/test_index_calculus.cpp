#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "crq/index_calculus.hpp"

#include <json.hpp>

using namespace crq;

namespace {

LambdaGammaTerm lg(TermKind kind, std::vector<int> J, int n, int m, int q, int r) {
    LambdaGammaTerm t;
    t.kind = kind;
    t.J = std::move(J);
    t.n = n;
    t.m = m;
    t.q = q;
    t.r = r;
    return t;
}

// Term with prescribed (k, h, l): no monomials, l carried by rho powers.
KernelTerm with_khl(int k, int h2, int l, int m) {
    KernelTerm t;
    t.d = k;
    t.h2 = h2;
    t.I1 = l;
    t.I5 = m - 1;
    return t;
}

}  // namespace

TEST_CASE("to_kernel_terms on the worked lambda and gamma terms") {
    KernelExpansion e = to_kernel_terms(lg(TermKind::lambda, {3, 0, 0, 0, 0, 0, 0, 0}, 5, 1, 2, 1));
    REQUIRE(e.feasible);
    REQUIRE(e.terms.size() == 2);
    for (const KernelTerm& t : e.terms) {
        CHECK(t.d == 8);
        CHECK(t.h() == 1.0);
        CHECK(t.I4 == 0);
        CHECK(t.I2 + t.I3 == 1);
        CHECK(t.k() == 7);
        CHECK(t.l() == t.I1);
    }
    KernelExpansion g = to_kernel_terms(lg(TermKind::gamma, {3, 0, 0, 0, 0, 0, 0, 0}, 5, 1, 2, 1));
    REQUIRE(g.feasible);
    CHECK(g.terms.front().I2 + g.terms.front().I3 == 2);
    CHECK(g.terms.front().k() == 6);
}

TEST_CASE("negative |I4| is reported as infeasible") {
    KernelExpansion e = to_kernel_terms(lg(TermKind::lambda, {2, 1, 0, 0, 0, 0, 0, 0}, 5, 1, 2, 1));
    CHECK_FALSE(e.feasible);
    CHECK(e.terms.empty());
    CHECK(e.reason.find("< 0") != std::string::npos);
}

TEST_CASE("term invariants are enforced") {
    CHECK_THROWS_AS(to_kernel_terms(lg(TermKind::lambda, {2, 0, 0, 0, 0, 0, 0, 0}, 5, 1, 2, 1)), Error);
    CHECK_THROWS_AS(to_kernel_terms(lg(TermKind::lambda, {3, 0, 0, 0, 1, 0, 0, 0}, 5, 1, 2, 1)), Error);
    CHECK_THROWS_AS(to_kernel_terms(lg(TermKind::gamma, {3, 0, 0, 0, 0, 0, 0, 0}, 5, 1, 4, 1)), Error);
    CHECK_THROWS_AS(to_kernel_terms(lg(TermKind::phi, {3, 0, 0, 1, 0, 0}, 5, 1, 2, 1)), Error);
    KernelTerm bad = with_khl(3, 2, 0, 2);
    bad.I5 = 0;
    CHECK_THROWS_AS(check_invariants(bad, 2), Error);
}

TEST_CASE("kernel indices match an independent recomputation for n <= 6") {
    long checked = 0;
    for (int n = 2; n <= 6; ++n)
        for (int m = 1; m < n; ++m)
            for (int q = 0; q <= n - m; ++q)
                for (int r = 1; r < n; ++r)
                    for (const auto& t : enumerate_lambda_gamma(n, m, q, r)) {
                        const auto& J = t.J;
                        const int extra = t.kind == TermKind::lambda ? 1 : 2;
                        const int d = 2 * (J[0] + J[4] + 1);
                        const int h = n - J[0] - J[4] - 1;
                        const int deg = extra + J[1] + J[2] + J[5];
                        const int I4 = J[0] + J[3] + r + m - n;
                        KernelExpansion e = to_kernel_terms(t);
                        CHECK(e.feasible == (I4 >= 0));
                        CHECK(e.feasible == (J[1] + J[2] <= m - 1));
                        for (const KernelTerm& k : e.terms) {
                            CHECK(k.d == d);
                            CHECK(k.h2 == 2 * h);
                            CHECK(k.k() == d - deg);
                            CHECK(k.l() == I4);
                            // 2n - m + l - k - h = n - |J1| - |J5| + |J6| - 1 (+1 for gamma)
                            CHECK(2 * n - m + k.l() - k.k() - h == n - J[0] - J[4] + J[5] - 1 + (extra - 1));
                            ++checked;
                        }
                    }
    CHECK(checked > 10000);
}

TEST_CASE("classify_I1 rows") {
    const int n = 5, m = 1, dim = 2 * n - m;
    EstimateClass a = classify_I1(0.0, dim - 1, 2 * 1, dim);
    CHECK(a.tag == EstimateTag::eps_power_log2);
    CHECK(a.exponent == 0.0);
    CHECK(classify_I1(0.0, dim - 2, 2, dim).tag == EstimateTag::O_delta);
    CHECK(classify_I1(0.0, dim - 1, 0, dim).tag == EstimateTag::O_delta);
    EstimateClass c = classify_I1(0.0, dim - 3, 4, dim);
    CHECK(c.tag == EstimateTag::eps_halfpower_log);
    CHECK(c.exponent == doctest::Approx(0.0));
    CHECK(classify_I1(0.5, dim - 2, 3, dim).tag == EstimateTag::O_delta_alpha);
    EstimateClass gap = classify_I1(0.0, dim - 1, 1, dim);
    CHECK(gap.tag == EstimateTag::unclassified);
    CHECK(gap.boundary);
    CHECK(classify_I1(0.5, dim + 3, 6, dim).tag == EstimateTag::unclassified);
    CHECK_THROWS_AS(classify_I1(1.0, 0, 0, dim), Error);
}

TEST_CASE("classify_I2 rows") {
    const int dim = 9;
    CHECK(classify_I2(0.0, dim - 2, 2, dim).tag == EstimateTag::O_one);
    CHECK(classify_I2(0.0, dim - 1, 0, dim).tag == EstimateTag::O_one);
    CHECK(classify_I2(0.0, dim - 3, 4, dim).tag == EstimateTag::O_log_delta);
    CHECK(classify_I2(0.5, dim - 1, 2, dim).tag == EstimateTag::O_delta_alpha_minus_1);
    CHECK(classify_I2(0.5, dim - 2, 4, dim).tag == EstimateTag::O_delta_alpha_minus_1);
    CHECK(classify_I2(0.5, dim - 1, 3, dim).tag == EstimateTag::O_delta_alpha_minus_2);
    CHECK(classify_I2(0.0, dim - 1, 20, dim).tag == EstimateTag::unclassified);
}

TEST_CASE("admissible_42 and vanishing_39 at their boundaries") {
    const int n = 5, m = 1;
    CHECK(admissible_42(with_khl(2 * n - m - 2, 2, 1, m), n, m));
    CHECK_FALSE(admissible_42(with_khl(2 * n - m - 1, 2, 1, m), n, m));
    KernelTerm v = with_khl(2 * n - m - 1, 2, 1, m);  // k + h - l = 2n - m - 1
    CHECK(vanishing_39(v, n, m));
    KernelTerm w = with_khl(2 * n - m - 2, 2, 1, m);
    CHECK_FALSE(vanishing_39(w, n, m));
    KernelTerm half = with_khl(2 * n - m, 3, 1, m);
    CHECK_FALSE(vanishing_39(half, n, m));
}

TEST_CASE("every lambda/gamma kernel is admissible or vanishing") {
    DichotomyAudit a = dichotomy_audit(6);
    CHECK(a.terms > 0);
    CHECK(a.vanishing > 0);
    CHECK(a.unclassified == 0);
    CHECK(a.vanishing_shape_violations == 0);
    CHECK(a.classification_gaps == 0);
    CHECK(a.admissible + a.vanishing == a.terms);
}

TEST_CASE("differentiate_term: identity at zero budget") {
    KernelTerm t = with_khl(7, 2, 0, 1);
    auto out = differentiate_term(t, DiffKind::Dc, 0);
    REQUIRE(out.size() == 1);
    CHECK(out[0].term == t);
    CHECK_FALSE(out[0].carries_Y);
}

TEST_CASE("differentiate_term: both Dc cases on Y-terms appear and obey their inequalities") {
    KernelTerm t = with_khl(7, 2, 1, 2);
    auto out = differentiate_term(t, DiffKind::Dc, 2);
    bool saw_k_up = false, saw_h_up = false;
    for (const DerivedTerm& d : out) {
        if (d.rule == "Dc on Y-term: k+1") saw_k_up = true;
        if (d.rule == "Dc on Y-term: h+1, k-1") saw_h_up = true;
        CHECK((d.carries_Y ? satisfies_23(d.term, d.reference) : satisfies_22(d.term, d.reference)));
        if (!d.carries_Y) CHECK(satisfies_22(d.term, t));
    }
    CHECK(saw_k_up);
    CHECK(saw_h_up);
    CHECK_THROWS_AS(differentiate_term(t, DiffKind::D, 2), Error);
    CHECK_FALSE(differentiate_term(t, DiffKind::D, 1).empty());
}

TEST_CASE("rewrite soundness over the n <= 6 enumeration") {
    RewriteAudit a = rewrite_audit(6, 2);
    CHECK(a.inputs > 0);
    CHECK(a.outputs > a.inputs);
    CHECK(a.violations == 0);
    CHECK(a.admissibility_lost == 0);
}

TEST_CASE("hr_vanishing on the primary model") {
    CHECK(hr_vanishing(5, 1, 2, 1).empty());
    auto at_q = hr_vanishing(5, 1, 2, 2);
    CHECK_FALSE(at_q.empty());
    for (const auto& t : at_q) CHECK(t.J[2] == 2);
    CHECK_THROWS_AS(hr_vanishing(5, 1, 2, 0), Error);
}

TEST_CASE("hr_vanishing is empty for every r < q, n <= 8, m <= 3") {
    HrSweep s = hr_sweep(8, 3);
    CHECK(s.cases > 50);
    CHECK(s.survivors == 0);
    // The one-line count: |J3| >= n-r-1-(m-1) > n-q-m whenever r < q.
    for (int n = 2; n <= 8; ++n)
        for (int m = 1; m <= std::min(3, n - 1); ++m)
            for (int q = 1; q <= n - m; ++q)
                for (int r = 1; r < q; ++r) CHECK(n - r - m > n - q - m);
}

TEST_CASE("realized integral of the smooth kernel matches the closed form") {
    const int n = 4, m = 2, P = 2 * n - m - 2;
    KernelTerm t = with_khl(0, 0, 0, m);
    const double exact = 4.0 / ((P + 1.0) * (P + 3.0));
    for (double eps : {0.1, 0.01})
        CHECK(realized_integral(t, n, m, eps) == doctest::Approx(exact).epsilon(1e-8));
    Corroboration c = numeric_corroboration(t, n, m, {0.1, 0.05, 0.025, 0.0125});
    CHECK(std::abs(c.slope) < 1e-6);
    KernelTerm lifted = with_khl(0, 0, 2, m);
    CHECK(realized_integral(lifted, n, m, 0.1) == doctest::Approx(0.01 * exact).epsilon(1e-8));
}

TEST_CASE("realized integral agrees with a frozen independent quadrature") {
    // Reference values from scipy dblquad in log variables (n = 5, m = 2).
    KernelTerm t = with_khl(7, 2, 0, 2);
    const double ref[] = {0.0660866843407702, 0.1600990408321447, 0.318144537490523, 0.5564076573131465};
    const double eps[] = {0.1, 0.05, 0.025, 0.0125};
    for (int i = 0; i < 4; ++i) CHECK(realized_integral(t, 5, 2, eps[i]) == doctest::Approx(ref[i]).epsilon(1e-6));
}

TEST_CASE("vanishing kernel with large l decays along the ladder") {
    // n = 5, m = 4: k = 7, h = 1, l = 3.
    KernelTerm t = with_khl(7, 2, 3, 4);
    REQUIRE(vanishing_39(t, 5, 4));
    Corroboration c = numeric_corroboration(t, 5, 4, {0.1, 0.05, 0.025, 0.0125});
    CHECK(c.slope >= 0.4);
}

TEST_CASE("admissible kernels converge as eps -> 0") {
    KernelTerm t = with_khl(1, 8, 0, 1);  // n = 5, m = 1
    REQUIRE(admissible_42(t, 5, 1));
    const double a = realized_integral(t, 5, 1, 1e-10), b = realized_integral(t, 5, 1, 1e-12);
    CHECK(std::abs(a - b) < 1e-3 * b);
}

TEST_CASE("certificate lists every term with its discharging rule") {
    auto doc = nlohmann::json::parse(index_certificate_json(5, 1, 2));
    CHECK(doc["n"] == 5);
    CHECK(doc["summary"]["unclassified"] == 0);
    long kernels = 0;
    for (const auto& r : doc["degrees"])
        for (const auto& t : r["lambda_gamma"])
            if (t.contains("kernels"))
                for (const auto& k : t["kernels"]) {
                    CHECK(k.contains("discharged_by"));
                    ++kernels;
                }
    CHECK(kernels == doc["summary"]["admissible_42"].get<long>() + doc["summary"]["vanishing_39"].get<long>());
    CHECK(doc["degrees"][0]["H_r"]["H_r_vanishes"] == true);
    CHECK(index_certificate_json(5, 1, 2) == index_certificate_json(5, 1, 2));
}
