#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "rpoly/common.hpp"
#include "rpoly/decomposition.hpp"
#include "rpoly/environment.hpp"
#include "rpoly/lattice.hpp"
#include "rpoly/partition.hpp"

namespace rpoly {

// e^{-beta V_x} for one environment realization
using SiteWeight = std::function<double(const Vec&)>;

SiteWeight environment_weight(const PotentialLaw& law, std::uint64_t seed);

// F-pieces up to m_cap, grouped by (displacement, length). The quenched and
// annealed kernels of one experiment are both read off this list.
struct PieceCatalogue {
    int d = 1;
    int m_cap = 0;
    RVec h{};
    double lambda = 0;
    PotentialLaw law;
    std::vector<IrreduciblePiece> pieces;
    std::vector<double> log_base;  // log P_d + h.z (lambda applied separately)
    std::vector<double> log_phi;   // -Phi(piece), annealed over the environment
    struct Group {
        Vec z{};
        int m = 0;
        std::size_t first = 0, last = 0;  // pieces[first, last)
    };
    std::vector<Group> groups;
    std::uint64_t nodes = 0;

    double group_annealed(std::size_t g) const;  // f(z, m) at the stored lambda
    RenewalKernel annealed_kernel() const;
    double annealed_mass(double lambda) const;
    RVec velocity() const;  // E z / E m under the annealed kernel
};

// Pieces are weighted with drift (default g.h()); euclidean cones carry only a
// unit direction. Throws ConeRestrictionInfeasible when no piece fits under m_cap.
PieceCatalogue make_catalogue(const SurchargeGeometry& g, const StepDistribution& steps, const PotentialLaw& law,
                              int m_cap, int threads = 1, const std::optional<RVec>& drift = std::nullopt);
// sets lambda so the truncated annealed kernel has mass exactly 1; returns it
double normalize_lambda(PieceCatalogue& c, double tol = 1e-14);

// f^omega_y(z, m) for every group, computed on demand per base point y
class QuenchedKernel {
public:
    QuenchedKernel(const PieceCatalogue& c, SiteWeight w) : c_(c), w_(std::move(w)) {}
    const std::vector<double>& at(const Vec& y);
    double total(const Vec& y);
    const PieceCatalogue& catalogue() const { return c_; }

private:
    const PieceCatalogue& c_;
    SiteWeight w_;
    std::map<Vec, std::vector<double>> cache_;
};

// t^omega(x, n): concatenations of F-pieces from 0 to x in n steps, every
// junction a cone point. Pieces longer than m_cap are missing, so entries with
// n > m_cap are flagged approximate.
struct BasicQuenchedTable {
    int d = 1;
    int n_max = 0;
    int m_cap = 0;
    RVec h{};
    double lambda = 0, beta = 0;
    std::uint64_t seed = 0;
    bool approximate = false;
    std::vector<std::map<Vec, double>> t;          // t[n][x]
    std::map<Vec, std::vector<double>> f_by_m;     // f^omega_x(m), m = 0..m_cap, for every visited x
    std::map<Vec, std::vector<double>> f_groups;   // f^omega_x(z, m) per catalogue group

    std::vector<double> t_n() const;  // sum over x
    std::string to_csv() const;
};

BasicQuenchedTable basic_quenched(const PieceCatalogue& c, const SiteWeight& w, int n_max,
                                  std::uint64_t seed = 0);
// worst relative gap between t^omega and the pull form of its recursion over stored f^omega
double renewal_residual(const PieceCatalogue& c, const BasicQuenchedTable& t);

// mean f, annealed t and mu of the catalogue kernel
struct AnnealedRenewal {
    std::vector<double> f;  // f(m), m = 0..m_cap
    std::vector<double> t;  // t(n), n = 0..n_max
    double mu = 0;
    double mass = 0;
};
AnnealedRenewal annealed_renewal(const PieceCatalogue& c, int n_max);

struct SinaiLedger {
    int n_max = 0;
    double mu = 0;
    std::vector<double> Y;     // Y_l
    std::vector<double> s;     // s(n) = 1 + sum_{l <= n} Y_l
    std::vector<double> eps1, eps2;
    std::vector<double> eps_coef;  // eps via the a^(n)(l, m) coefficients
    std::vector<double> tq, ta;    // t^omega(n), t(n)
    std::vector<double> residual;  // relative, per n
    std::vector<std::vector<double>> A;  // A(l, m) = sum_x t^omega(x, l)(f^omega_x(m) - f(m))
    double max_residual = 0;
    // telescoping: 1 + sum Y = sum t f - sum_{l >= 1} t = mass still in flight at n_max
    double telescope_lhs = 0, telescope_rhs = 0, in_flight = 0;

    std::string to_csv() const;
};
// a^(n)(l, m) = (t(n - l - m) - 1/mu) [l + m <= n] - (1/mu) [l <= n < l + m]
double sinai_coefficient(const AnnealedRenewal& a, int n, int l, int m);
// Throws KernelMismatch when the annealed kernel is not a probability.
SinaiLedger sinai_ledger(const BasicQuenchedTable& t, const AnnealedRenewal& a);

// ---- mixingale diagnostics ----

struct MixingaleOptions {
    int n_max = 10;
    std::vector<int> ks{0, 1, 2, 4};
    int resamples = 64;
    int threads = 1;
};
struct MixingaleReport {
    int seeds = 0;
    int resamples = 0;
    std::vector<int> ks;
    RVec direction{};                    // slabs {x : x.v <= m |v|^2}
    std::vector<double> d2;              // E Y_l^2, l = 0..n_max
    std::vector<std::vector<double>> cond2;  // cond2[ki][l] = E[E(Y_l | A_{l-k})^2]
    std::vector<double> mean_Y;
    double ell_exponent = 0;             // fitted slope of log d_l^2 vs log l
    double k_exponent = 0;               // slope of log(mean_l cond2/d2) vs log(1 + k)
    bool summable = false;               // ell_exponent < -1
    bool degenerate = false;             // d2 vanishes identically
    std::string to_json() const;
};
// Throws InsufficientSeeds below 2 seeds.
MixingaleReport mixingale_diagnostics(const PieceCatalogue& c, const std::vector<std::uint64_t>& seeds,
                                      const MixingaleOptions& opt = {});

// ---- tilted environment Q_delta, psi(v) = min(v, 1), psi(inf) = 1 ----

double psi_clip(double v);
// E_Q exp(a psi(V) - b V), b >= 0
double tilt_moment(const PotentialLaw& law, double a, double b);
double tilt_g(const PotentialLaw& law, double delta);                // log E e^{delta psi}
double tilt_density(const PotentialLaw& law, double delta, double v); // dQ_delta / dQ at v
double tilted_phi(const PotentialLaw& law, int ell, double delta);    // -log E_delta e^{-beta l V}
double tilted_quantile(const PotentialLaw& law, double delta, double u);
// per-site log E_Q (dQ/dQ_delta)^{alpha/(1-alpha)}
double tilt_holder_log_moment(const PotentialLaw& law, double alpha, double delta);

struct TiltCheck {
    std::vector<double> dphi;           // d phi(l, delta)/d delta at 0, l = 1..ell_max
    bool dphi_positive = true;
    double quadratic_first_derivative = 0;  // central difference of the Holder log-moment at 0
};
TiltCheck tilt_checks(const PotentialLaw& law, double alpha, int ell_max, double step = 1e-4);

// ---- fractional moments ----

struct FractionalOptions {
    double alpha = 0.5;
    int N = 4;
    bool tilt = false;
    double delta = -1;    // < 0: N^{-0.55}
    double eps = 0.01;    // window upper end N^{-1/2 - eps}
    double K = -1;        // tube length factor; < 0: 2 max(z.v) + 1
    int threads = 1;
};
struct FractionalMomentRun {
    double alpha = 0;
    int N = 0;
    std::vector<std::uint64_t> seeds;
    std::vector<double> r_total;   // r_N^omega per seed
    std::vector<double> r_alpha;   // sum_x (r^omega_{x,N})^alpha per seed
    double mean = 0, stderr_ = 0;
    double annealed = 0;           // (sum f)^N
    double factor = 0, factor_hi = 0;  // (mean)^{1/N}, upper 95% bound
    bool below_one = false;
    // tilted variant
    bool tilted = false;
    double delta = 0, g_delta = 0, K = 0;
    std::size_t tube_sites = 0;
    double tilted_mean = 0, tilted_stderr = 0;  // E_delta r_N(A_N)
    double log_holder_bound = 0;   // log of the Holder bound on E (r_N(A_N))^alpha
    std::string to_json() const;
};
// Throws BadAlpha outside (0, 1] and WindowViolation for delta outside
// (log N / N, N^{-1/2 - eps}) when tilting.
FractionalMomentRun fractional_moment_experiment(const PieceCatalogue& c, const std::vector<std::uint64_t>& seeds,
                                                 const FractionalOptions& opt = {});

// ---- strong disorder ratio ----

struct RatioRow {
    int n = 0;
    std::vector<double> log_ratio;  // (1/n) log(Z^omega / Z) per seed, -inf when Z^omega = 0
    double q10 = 0, median = 0, q90 = 0;
    double mean_ratio = 0, mean_ratio_stderr = 0;
    int negatives = 0;
    double sign_p_value = 1;  // P(Bin(S, 1/2) >= negatives)
    bool negative_99 = false;
};
std::vector<RatioRow> strong_disorder_ratio(const PolymerModel& model, const std::vector<int>& ladder,
                                            const std::vector<std::uint64_t>& seeds, int threads = 1);
std::string ratio_rows_csv(const std::vector<RatioRow>& rows);

// ---- covariance locality ----

struct CovarianceProxy {
    double cov = 0, stderr_ = 0;
    bool disjoint = false;  // no site shared by the pieces from x and from y
};
CovarianceProxy f_block_covariance(const PieceCatalogue& c, const Vec& x, const Vec& y,
                                   const std::vector<std::uint64_t>& seeds, int threads = 1);

std::vector<std::uint64_t> seed_range(std::uint64_t first, int count);

}  // namespace rpoly
