#pragma once

#include <complex>
#include <string>
#include <vector>

#include "rpoly/common.hpp"
#include "rpoly/environment.hpp"  // Box

namespace rpoly {

struct KernelEntry {
    Vec x{};
    int n = 1;
    double f = 0;
};

// Sparse f(x, n) on Z^d x {1, 2, ...}.
struct RenewalKernel {
    int d = 1;
    std::vector<KernelEntry> entries;
    double tail_nu = kInf;    // f(x,n) <= C e^{-nu(|x|+n)} when finite
    double tail_C = 0;
    double dropped_mass = 0;  // mass removed by truncation

    static RenewalKernel from_sequence(const std::vector<double>& f);  // d = 1, x = 0
    static RenewalKernel from_text(int d, const std::string& text);
    std::string to_text() const;

    void validate() const;  // throws BadKernel
    double mass() const;
    bool is_probability(double tol = 1e-9) const { return std::abs(mass() - 1) <= tol; }
    int max_n() const;
    std::vector<double> marginal() const;  // index n = 0..max_n
    // drops entries below rel * (max of their time slice); returns the dropped mass
    double truncate(double rel = 1e-16);
};

// Lattice structure of the support: L = {x : (x, 0) in group generated by (x, n)}.
struct LatticeInfo {
    int time_gcd = 1;        // gcd of the durations
    Vec time_shift{};        // spatial part of the generator with time time_gcd
    std::vector<Vec> basis;  // triangular basis of L
    long period = 1;         // [Z^d : L]; 0 when L has lower rank
    bool full_rank() const { return period > 0; }
    // whether x can occur at time n (coset test)
    bool reachable(const Vec& x, int n, int d) const;
};
LatticeInfo kernel_lattice(const RenewalKernel& f);

// ---- one dimension ----

// t(0) = 1, t(n) = sum_{m=1}^n f(m) t(n-m); f[0] is ignored
std::vector<double> renewal_1d(const std::vector<double>& f, int n_max);

struct LimitRate {
    double mu = 0;
    std::vector<double> deviation;  // |t(n) - 1/mu|
    double sup_deviation = 0;       // over n >= n0
    double rate = 0;                // fitted -slope of log deviation
    double fit_max_residual = 0;
    bool exponential = true;        // false when the log-linear fit is poor
    int fit_points = 0;
};
LimitRate renewal_limit_rate(const std::vector<double>& t, double mu, int n0 = 1, double floor = 1e-13);

// -log of the second largest root modulus of z^M = sum f(m) z^{M-m}
double renewal_decay_oracle(const std::vector<double>& f);

// ---- multi-dimensional arrays ----

struct RenewalArray {
    int d = 1;
    int n_max = 0;
    std::vector<Box> boxes;                   // exact bounding box per slice
    std::vector<std::vector<double>> slices;  // t(x, n) over boxes[n]
    std::vector<bool> nonempty;

    double t(const Vec& x, int n) const;
    double t_n(int n) const;
    std::vector<double> marginal() const;
};

RenewalArray renewal_multid(const RenewalKernel& f, int n_max, std::size_t memory_cap = std::size_t{1} << 28);
// max relative residual of the recursion, recomputed by pulling from the kernel
double recursion_residual(const RenewalArray& t, const RenewalKernel& f);

// ---- complex-plane assumptions ----

struct ComplexReport {
    int zeros_in_disk = 0;      // zeros of 1 - fhat inside |z| < 1 + eps (argument principle)
    int zeros_near_one = 0;     // inside a small circle around z = 1
    double fhat_prime_one = 0;  // = mu
    double kappa = 0;           // min |1 - fhat_theta(z)| over |z| <= 1 + eps (theta-twisted)
    bool twisted_ok = true;     // kappa > 0
    std::string note;
};
std::complex<double> kernel_fhat(const RenewalKernel& f, std::complex<double> z, const RVec& theta);
ComplexReport check_complex_assumptions(const RenewalKernel& f, double eps, const RVec* theta = nullptr,
                                        int points = 4096);

// ---- shape equation ----

struct ShapePoint {
    RVec xi{};
    double lambda = 0;
    RVec grad{};                       // grad lambda
    std::array<double, 16> hess{};     // row-major d x d, implicit differentiation of F
    std::array<double, 16> hess_centered{};  // E[(X - vT)(X - vT)^T] / E T
    double mu = 0;                     // E_xi T
    RVec grad_log_mu{};
    int iterations = 0;
    bool used_bisection = false;
    double residual = 0;               // |F(xi, lambda)|
    double h(int i, int j) const { return hess[i * kMaxDim + j]; }
};

// F(xi, lambda) = log sum f e^{xi.x - lambda n}
double shape_F(const RenewalKernel& f, const RVec& xi, double lambda);
// Newton in lambda with bisection fallback, |F| <= tol
ShapePoint solve_shape(const RenewalKernel& f, const RVec& xi, double lambda_guess = kInf, double tol = 1e-12,
                       double margin = 1e-6);
// warm-started along the given order
std::vector<ShapePoint> solve_shape_grid(const RenewalKernel& f, const std::vector<RVec>& xis, double tol = 1e-12);
// central differences of lambda at xi with step hstep
std::array<double, 16> shape_hessian_fd(const RenewalKernel& f, const RVec& xi, double hstep = 1e-4);

RenewalKernel tilt_kernel(const RenewalKernel& f, const RVec& xi);

// ---- conditional laws, CLT, LD ----

struct PointMass {
    Vec x{};
    double q = 0;
};
std::vector<PointMass> conditional_law(const RenewalArray& t, int n);
RVec conditional_mean(const RenewalArray& t, int n);

struct LocalCltRow {
    int n = 0;
    double max_rel_dev = 0;
    int points = 0;
};
struct LocalCltReport {
    bool degenerate = false;
    long period = 1;
    std::vector<LocalCltRow> rows;
};
// Compares Q_n(x) with period * (2 pi n)^{-d/2} det(Xi)^{-1/2} exp(-(x - n v_n).(n Xi)^{-1}(x - n v_n) / 2)
// on reachable x with |x - n v_n| <= radius sqrt(n).
LocalCltReport verify_local_clt(const RenewalArray& t, const RenewalKernel& f, const ShapePoint& at_zero,
                                const std::vector<int>& n_list, double radius);

struct LocalLd {
    RVec u_n{};
    RVec xi_n{};
    double J = 0;
    double J_dual = kNaN();
    double q_exact = 0;
    double q_predicted = 0;
    double rel_error = 0;
    static double kNaN() { return std::numeric_limits<double>::quiet_NaN(); }
};
// xi with grad lambda(xi) = u (damped Newton); throws OutsideLocalDomain
ShapePoint solve_velocity(const RenewalKernel& f, const RVec& u, double tol = 1e-12);
LocalLd local_ld(const RenewalKernel& f, const RenewalArray& t, const RVec& u, int n);
// J(u) = sup_lambda (tau_lambda(u) - lambda), tau_lambda the support function of {lambda(xi) <= lambda}; d = 1
double rate_dual_1d(const RenewalKernel& f, double u);

// |phi_n(theta)| for n in n_list and the fitted exponential decay rate
struct CharDecay {
    std::vector<double> modulus;
    double rate = 0;
};
CharDecay characteristic_decay(const RenewalArray& t, const RVec& theta, const std::vector<int>& n_list);

// nonzero cells as rows n,x1..xd,t
std::string array_to_csv(const RenewalArray& t);
std::string shape_table_csv(const std::vector<ShapePoint>& pts, int d);

}  // namespace rpoly
