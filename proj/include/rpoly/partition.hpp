#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "rpoly/environment.hpp"
#include "rpoly/lattice.hpp"

namespace rpoly {

struct PolymerModel {
    StepDistribution steps;
    PotentialLaw law;
    RVec h{};            // drift
    double lambda = 0;   // killing rate

    void validate() const;
};

// increments of the annealed potential: mult[c] = exp(-(phi(c+1) - phi(c))), phi(0) = 0
std::vector<double> annealed_multipliers(const PotentialLaw& law, int max_count);

// ---- quenched ----

struct QuenchedResult {
    double log_z = kNegInf;
    Box box;                 // support of the end-point table
    std::vector<double> table;  // Z_n(x|h) / exp(log_scale) over box
    double log_scale = 0;
    double log_endpoint(const Vec& x) const;
};

// Forward DP over (site, step index) with per-step renormalization.
// env must cover {|x|_inf <= nR}; throws EnvironmentCoverage otherwise.
QuenchedResult quenched_partition(const PolymerModel& model, const EnvironmentField& env, int n,
                                  bool keep_table = false);

// brute-force reference: sum over all paths of the quenched weight
double quenched_partition_enumerated(const PolymerModel& model, const EnvironmentField& env, int n);

// ---- annealed, exact ----

// End-point tables of the annealed model at h = 0 for n = 0..N, plus the
// first-hitting tables Zhat_n(x) (paths ending at x with l(x) = 1).
struct AnnealedTables {
    int d = 1;
    int N = 0;
    Box box;
    std::vector<std::vector<double>> z;     // z[n][box index]
    std::vector<std::vector<double>> zhat;  // empty unless requested

    double log_z(int n, const RVec& h) const;
    double z_at(int n, const Vec& x) const;
    double zhat_at(int n, const Vec& x) const;
    // mean end point under the h-tilted measure at length n
    RVec mean_displacement(int n, const RVec& h) const;
    // log Z_N(h) - log Z_{N-1}(h)
    double ratio_free_energy(const RVec& h) const;
};

struct EnumerationOptions {
    std::uint64_t cap = 2'000'000'000ULL;  // total path-steps
    bool first_hit = false;
    int threads = 1;
};

AnnealedTables annealed_tables(const StepDistribution& steps, const PotentialLaw& law, int N,
                               const EnumerationOptions& opt = {});
double annealed_partition_exact(const PolymerModel& model, int n, const EnumerationOptions& opt = {});

// per-path annealed log-weight: log P_d(gamma) - Phi(gamma) (+ h.X - lambda n when asked)
double annealed_log_weight(const StepDistribution& steps, const PotentialLaw& law, const LatticePath& path);

// ---- annealed, Monte Carlo ----

struct MCOptions {
    bool enrichment = false;     // pruned-enriched tours with pilot-fixed thresholds
    double ess_floor = 10;       // DegenerateWeights below this effective sample size
    int threads = 1;
};

struct MCEstimate {
    double mean = 0;
    double stderr_ = 0;
    double ess = 0;
    std::size_t chains = 0;
};

MCEstimate annealed_partition_mc(const PolymerModel& model, int n, std::size_t chains, std::uint64_t seed,
                                 const MCOptions& opt = {});

// ---- two-point functions ----

struct TwoPointResult {
    double G = 0, H = 0;
    std::vector<double> zhat;    // Zhat_n(x), n = 0..n_max
    std::vector<double> zn;      // Z_n(x|0)
    double truncation_bound = 0; // bound on the omitted tail n > n_max
};

TwoPointResult two_point_functions(const PolymerModel& model, const Vec& x, int n_max,
                                   const EnumerationOptions& opt = {});
TwoPointResult two_point_from_tables(const AnnealedTables& t, double lambda, const Vec& x);

// ---- free energies ----

struct FreeEnergyEstimate {
    std::vector<int> ladder;
    std::vector<double> lambda_n;   // (1/n) log Z_n, or the seed average for quenched mode
    std::vector<double> stderr_;    // quenched only
    double lower = kNegInf;         // annealed: max lambda_n (superadditivity certificate)
    double upper = kInf;            // annealed: log E e^{h.X}
    double extrapolated = 0;
    bool certified = false;
};

FreeEnergyEstimate free_energy_annealed(const PolymerModel& model, const std::vector<int>& ladder,
                                        const EnumerationOptions& opt = {});
FreeEnergyEstimate free_energy_quenched(const PolymerModel& model, const std::vector<int>& ladder,
                                        const std::vector<std::uint64_t>& seeds, bool fixed_environment,
                                        int threads = 1);

// log of the top eigenvalue of the walk killed on leaving a box of side L;
// lambda(0) >= this value whenever Q(V = 0) > 0
double confined_lower_bound(const StepDistribution& steps, int L);

// Subadditive a_n with a_{n+m} <= a_n + a_m + b_{n+m}: returns for each n the
// bound xi <= a_n/n - b_n/n + 4 sum_{k>=2n} b_k/(k(k+1)), the tail summed up to
// k_max and closed with b(k_max)/k_max.
std::vector<double> hammersley_upper_bounds(const std::vector<double>& a,
                                            const std::function<double(long)>& b, long k_max = 1'000'000);

// ---- point to hyperplane ----

struct HyperplaneResult {
    std::vector<double> t;
    std::vector<double> log_d;
    std::vector<double> leaked;   // mass lost through the lateral box boundary
    double rate = 0;              // fitted constant a in -(1/t) log D = a + b/t
    double slope = 0;             // b
    std::vector<double> residuals;
};

struct HyperplaneOptions {
    int lateral = 0;         // half-width of the lateral box; 0 picks a default from t and lambda
    int max_steps = 0;       // 0 picks a default
    double tail_tol = 1e-16;
};

// D(t) = sum over killed paths stopped at the first entry into {x.h >= t}; D(0) = 1.
HyperplaneResult point_to_hyperplane(const PolymerModel& model, std::uint64_t env_seed, const RVec& normal,
                                     const std::vector<double>& t_ladder, const HyperplaneOptions& opt = {});

// s* with log E e^{s normal.X} = lambda: the V = 0 decay rate
double homogeneous_hyperplane_rate(const StepDistribution& steps, const RVec& normal, double lambda);

// least squares y = a + b x
std::pair<double, double> linear_fit(const std::vector<double>& x, const std::vector<double>& y);

}  // namespace rpoly
