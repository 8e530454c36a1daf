#include "crq/form_tensor.hpp"

#include <bit>
#include <cmath>

#include <json.hpp>

namespace crq {

FormTensor FormTensor::scalar(int n, cd value) {
    FormTensor f(n);
    f.add(0, value);
    return f;
}

FormTensor FormTensor::one_form(int n, const VecC& zbar, const VecC& zetabar, cd dt) {
    FormTensor f(n);
    for (int l = 0; l < n; ++l) {
        f.add(f.zbar_bit(l), zbar(l));
        f.add(f.zetabar_bit(l), zetabar(l));
    }
    f.add(f.dt_bit(), dt);
    return f;
}

cd FormTensor::coeff(Mask mask) const {
    auto it = c_.find(mask);
    return it == c_.end() ? cd(0.0) : it->second;
}

cd FormTensor::coeff(const MultiIndex& K, const MultiIndex& L, int tau) const {
    MultiIndex all;
    for (int k : K) all.push_back(k);
    for (int l : L) all.push_back(n_ + l);
    if (tau) all.push_back(2 * n_);
    int s = sort_sign(all);
    if (s == 0) return 0.0;
    Mask mask = 0;
    for (int g : all) mask |= Mask(1) << g;
    return double(s) * coeff(mask);
}

void FormTensor::add(Mask mask, cd value) {
    if (value == cd(0.0)) return;
    c_[mask] += value;
}

FormTensor& FormTensor::operator+=(const FormTensor& o) {
    if (n_ == 0) n_ = o.n_;
    for (const auto& [k, v] : o.c_) add(k, v);
    return *this;
}

FormTensor& FormTensor::operator*=(cd s) {
    for (auto& kv : c_) kv.second *= s;
    return *this;
}

FormTensor FormTensor::zbar_degree_part(int r) const {
    FormTensor out(n_, omega_zeta_);
    const Mask zmask = (Mask(1) << n_) - 1;
    for (const auto& [k, v] : c_)
        if (std::popcount(k & zmask) == r) out.add(k, v);
    return out;
}

int FormTensor::merge_sign(Mask a, Mask b) {
    int inversions = 0;
    while (b) {
        int j = std::countr_zero(b);
        inversions += std::popcount(a >> (j + 1));
        b &= b - 1;
    }
    return (inversions & 1) ? -1 : 1;
}

FormTensor::Bidegree FormTensor::bidegree() const {
    Bidegree d;
    bool first = true;
    const Mask zmask = (Mask(1) << n_) - 1;
    for (const auto& [k, v] : c_) {
        Bidegree b{std::popcount(k & zmask), std::popcount((k >> n_) & zmask), int((k >> (2 * n_)) & 1)};
        if (first) {
            d = b;
            first = false;
        } else if (b.r != d.r || b.s != d.s || b.tau != d.tau) {
            throw Error("mixed-degree", "form tensor is not homogeneous");
        }
    }
    return d;
}

double FormTensor::max_abs() const {
    double m = 0;
    for (const auto& kv : c_) m = std::max(m, std::abs(kv.second));
    return m;
}

void FormTensor::prune(double tol) {
    for (auto it = c_.begin(); it != c_.end();) {
        if (std::abs(it->second) <= tol) it = c_.erase(it);
        else ++it;
    }
}

std::string FormTensor::to_json() const {
    nlohmann::ordered_json j;
    nlohmann::ordered_json terms = nlohmann::ordered_json::array();
    for (const auto& [k, v] : c_) {
        nlohmann::ordered_json t;
        std::vector<int> K, L;
        for (int l = 0; l < n_; ++l) {
            if (k & (Mask(1) << l)) K.push_back(l + 1);
            if (k & (Mask(1) << (n_ + l))) L.push_back(l + 1);
        }
        t["zbar"] = K;
        t["zetabar"] = L;
        t["dt"] = int((k >> (2 * n_)) & 1);
        t["re"] = v.real();
        t["im"] = v.imag();
        terms.push_back(t);
    }
    j["n"] = n_;
    j["omega_zeta"] = omega_zeta_;
    j["terms"] = terms;
    return j.dump();
}

FormTensor wedge(const FormTensor& a, const FormTensor& b) {
    FormTensor out(std::max(a.n(), b.n()), a.omega_zeta());
    for (const auto& [ka, va] : a.coeffs())
        for (const auto& [kb, vb] : b.coeffs()) {
            if (ka & kb) continue;
            out.add(ka | kb, double(FormTensor::merge_sign(ka, kb)) * va * vb);
        }
    return out;
}

}  // namespace crq
