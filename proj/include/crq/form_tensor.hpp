#pragma once

#include "crq/common.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace crq {

// Element of the exterior algebra on dzbar_1..n, dzetabar_1..n, dt.
// Generator bits: dzbar_l -> l, dzetabar_l -> n + l, dt -> 2n.
// A basis monomial is written in that increasing order, so the
// coefficient of dzbar_K ^ dzetabar_L ^ dt^tau is stored under one mask.
// The holomorphic volume omega(zeta) is implicit (flag only).
class FormTensor {
public:
    using Mask = std::uint32_t;

    FormTensor() = default;
    explicit FormTensor(int n, bool with_omega_zeta = true) : n_(n), omega_zeta_(with_omega_zeta) {}

    int n() const { return n_; }
    bool omega_zeta() const { return omega_zeta_; }
    const std::map<Mask, cd>& coeffs() const { return c_; }

    Mask zbar_bit(int l) const { return Mask(1) << l; }
    Mask zetabar_bit(int l) const { return Mask(1) << (n_ + l); }
    Mask dt_bit() const { return Mask(1) << (2 * n_); }

    static FormTensor scalar(int n, cd value);
    // One-form with coefficient arrays over dzbar, dzetabar and dt.
    static FormTensor one_form(int n, const VecC& zbar, const VecC& zetabar, cd dt);

    cd coeff(Mask mask) const;
    // Coefficient of dzbar_K ^ dzetabar_L ^ dt^tau, 0-based indices in any order (sign applied).
    cd coeff(const MultiIndex& K, const MultiIndex& L, int tau) const;

    void add(Mask mask, cd value);
    FormTensor& operator+=(const FormTensor& o);
    FormTensor& operator*=(cd s);
    friend FormTensor operator+(FormTensor a, const FormTensor& b) { return a += b; }
    friend FormTensor operator-(FormTensor a, const FormTensor& b) { return a += (FormTensor(b) *= -1.0); }
    friend FormTensor operator*(cd s, FormTensor a) { return a *= s; }

    // Part with exactly r dzbar factors.
    FormTensor zbar_degree_part(int r) const;

    // Sign of moving the generators of b past those of a into sorted order.
    static int merge_sign(Mask a, Mask b);

    // (r, s, tau) of a homogeneous tensor; throws if mixed.
    struct Bidegree {
        int r = 0, s = 0, tau = 0;
    };
    Bidegree bidegree() const;

    double max_abs() const;
    void prune(double tol = 0.0);

    std::string to_json() const;

private:
    int n_ = 0;
    bool omega_zeta_ = true;
    std::map<Mask, cd> c_;
};

FormTensor wedge(const FormTensor& a, const FormTensor& b);

}  // namespace crq
