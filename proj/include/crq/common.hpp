#pragma once

#include <Eigen/Dense>

#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace crq {

using cd = std::complex<double>;
using VecC = Eigen::VectorXcd;
using MatC = Eigen::MatrixXcd;
using VecR = Eigen::VectorXd;
using MatR = Eigen::MatrixXd;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr cd kI{0.0, 1.0};

// Every failure the library reports carries a short machine-readable kind.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& what)
        : std::runtime_error(kind + ": " + what), kind_(std::move(kind)) {}
    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

// Sorted multi-index over {0..n-1}.
using MultiIndex = std::vector<int>;

// All strictly increasing k-subsets of {0..n-1} in lexicographic order.
std::vector<MultiIndex> combinations(int n, int k);

// Sign of the permutation sorting `idx`; 0 if an index repeats.
int sort_sign(MultiIndex& idx);

double factorial(int k);

// Compensated summation; the result depends only on the order of add() calls.
template <class T>
class Kahan {
public:
    void add(const T& x) {
        T y = x - c_;
        T t = s_ + y;
        c_ = (t - s_) - y;
        s_ = t;
    }
    const T& sum() const { return s_; }

private:
    T s_{};
    T c_{};
};

// Portable stream: mt19937_64 outputs are fixed by the standard, and the
// conversions below avoid the implementation-defined std distributions.
class Rng {
public:
    explicit Rng(std::uint64_t seed);
    std::uint64_t next();
    double uniform();              // [0,1), 53-bit
    double uniform(double a, double b);
    double normal();               // Box-Muller, no caching
    int below(int k);              // uniform integer in [0,k)

private:
    std::mt19937_64 eng_;
};

// SplitMix64 mixing; used to derive independent sub-seeds.
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

// 64-bit FNV-1a of a byte string.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t h);

// Gauss-Legendre rule on [a,b] via the Golub-Welsch eigenproblem.
struct GaussRule {
    VecR nodes;
    VecR weights;
};
GaussRule gauss_legendre(int order, double a = 0.0, double b = 1.0);

// Least-squares slope of y against x.
double fit_slope(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace crq
