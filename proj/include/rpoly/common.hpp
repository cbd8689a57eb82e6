#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <utility>

namespace rpoly {

// Lattice points live in Z^d with d <= 4; unused trailing coordinates stay 0.
constexpr int kMaxDim = 4;
using Vec = std::array<int, kMaxDim>;
using RVec = std::array<double, kMaxDim>;

constexpr double kInf = std::numeric_limits<double>::infinity();
constexpr double kNegInf = -std::numeric_limits<double>::infinity();

class Error : public std::runtime_error {
public:
    Error(std::string code, const std::string& what)
        : std::runtime_error(code + ": " + what), code_(std::move(code)) {}
    const std::string& code() const { return code_; }

private:
    std::string code_;
};

inline Vec operator+(const Vec& a, const Vec& b) {
    Vec r{};
    for (int k = 0; k < kMaxDim; ++k) r[k] = a[k] + b[k];
    return r;
}
inline Vec operator-(const Vec& a, const Vec& b) {
    Vec r{};
    for (int k = 0; k < kMaxDim; ++k) r[k] = a[k] - b[k];
    return r;
}
inline Vec operator-(const Vec& a) {
    Vec r{};
    for (int k = 0; k < kMaxDim; ++k) r[k] = -a[k];
    return r;
}
inline RVec to_real(const Vec& a) {
    RVec r{};
    for (int k = 0; k < kMaxDim; ++k) r[k] = a[k];
    return r;
}
inline double dot(const RVec& a, const Vec& b) {
    double s = 0;
    for (int k = 0; k < kMaxDim; ++k) s += a[k] * b[k];
    return s;
}
inline double dot(const RVec& a, const RVec& b) {
    double s = 0;
    for (int k = 0; k < kMaxDim; ++k) s += a[k] * b[k];
    return s;
}
inline double norm2(const RVec& a) { return std::sqrt(dot(a, a)); }
inline double norm2(const Vec& a) { return norm2(to_real(a)); }
inline int norm_inf(const Vec& a) {
    int m = 0;
    for (int v : a) m = std::max(m, std::abs(v));
    return m;
}
inline int norm1(const Vec& a) {
    int m = 0;
    for (int v : a) m += std::abs(v);
    return m;
}
inline RVec scaled(const RVec& a, double s) {
    RVec r{};
    for (int k = 0; k < kMaxDim; ++k) r[k] = a[k] * s;
    return r;
}
inline RVec plus(const RVec& a, const RVec& b) {
    RVec r{};
    for (int k = 0; k < kMaxDim; ++k) r[k] = a[k] + b[k];
    return r;
}
inline RVec minus(const RVec& a, const RVec& b) {
    RVec r{};
    for (int k = 0; k < kMaxDim; ++k) r[k] = a[k] - b[k];
    return r;
}

inline Vec unit(int k, int sign = 1) {
    Vec e{};
    e[k] = sign;
    return e;
}

// log(e^a + e^b) with -inf handled.
inline double log_add(double a, double b) {
    if (a == kNegInf) return b;
    if (b == kNegInf) return a;
    if (a < b) std::swap(a, b);
    return a + std::log1p(std::exp(b - a));
}

// counter-based hashing; every random quantity in the library derives from these
inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}
inline std::uint64_t hash_combine(std::uint64_t a, std::uint64_t b) {
    return splitmix64(a ^ splitmix64(b + 0x632be59bd9b4e019ULL));
}
inline double u01(std::uint64_t bits) { return (bits >> 11) * 0x1.0p-53; }

// splitmix64 stream keyed by (seed, stream id)
class Rng {
public:
    using result_type = std::uint64_t;
    Rng(std::uint64_t seed, std::uint64_t stream = 0) : state_(hash_combine(seed, stream)) {}
    std::uint64_t operator()() {
        state_ += 0x9e3779b97f4a7c15ULL;
        std::uint64_t z = state_;
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
        return z ^ (z >> 31);
    }
    double uniform() { return u01((*this)()); }
    static constexpr std::uint64_t min() { return 0; }
    static constexpr std::uint64_t max() { return ~std::uint64_t{0}; }

private:
    std::uint64_t state_;
};

}  // namespace rpoly
