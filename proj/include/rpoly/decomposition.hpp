#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rpoly/common.hpp"
#include "rpoly/geometry.hpp"
#include "rpoly/lattice.hpp"
#include "rpoly/partition.hpp"
#include "rpoly/renewal.hpp"

namespace rpoly {

// Level set {h : lambda(h) <= level} in d = 2 as a polygon through the ray
// crossings at `directions` equally spaced angles plus the optional extra points.
// lambda_fn must be increasing along rays from 0 with lambda_fn(0) < level.
ConvexBody level_set_body(const std::function<double(const RVec&)>& lambda_fn, double level, int directions = 720,
                          const std::vector<RVec>& extra = {});

// tau_lambda for the annealed model with the ratio estimator as lambda(.); lambda = lambda(h).
struct PolymerShape {
    ConvexBody K;
    RVec h{};
    double lambda = 0;
    int N = 0;
};
PolymerShape polymer_shape(const AnnealedTables& t, const RVec& h, int directions = 720);

// Surcharge s(x) = tau(x) - h.x and the cones Y_i = {x : s(x) <= delta_i tau(x)}.
class SurchargeGeometry {
public:
    // tau must be positively homogeneous; returning NaN means "not tabulated"
    SurchargeGeometry(int d, SupportFn tau, const RVec& h, double lambda,
                      std::array<double, 3> delta = {0.1, 0.2, 0.3}, double tol = 1e-9);
    // tau = |x| with |h| = 1
    static SurchargeGeometry euclidean(int d, const RVec& h, double lambda = 1,
                                       std::array<double, 3> delta = {0.1, 0.2, 0.3});
    static SurchargeGeometry polymer(const PolymerShape& s, std::array<double, 3> delta = {0.1, 0.2, 0.3});
    // annealed tables to length N, then polymer_shape
    static SurchargeGeometry polymer(const StepDistribution& steps, const PotentialLaw& law, const RVec& h,
                                     int N = 10, int threads = 1);

    int dim() const { return d_; }
    const RVec& h() const { return h_; }
    double lambda() const { return lambda_; }
    const std::array<double, 3>& delta() const { return delta_; }

    double tau(const RVec& x) const;  // throws DirectionNotTabulated
    double tau(const Vec& x) const { return tau(to_real(x)); }
    double surcharge(const RVec& x) const;
    double surcharge(const Vec& x) const { return surcharge(to_real(x)); }
    // x in Y_i, i = 1..3 (0 is in every cone)
    bool in_cone(int i, const RVec& x) const;
    bool in_cone(int i, const Vec& x) const { return in_cone(i, to_real(x)); }

    // d = 2: Y_i is the sector swept counter-clockwise from angle lo to hi
    struct Sector {
        double lo = 0, hi = 0;
    };
    const Sector& sector(int i) const { return sectors_.at(i - 1); }
    bool has_sectors() const { return !sectors_.empty(); }

    // min{s : B_R in U_s} = R max over unit u of tau(u)
    double r_lambda(double range = 1) const;

    // surcharge >= -tol on a sweep, nesting, lattice direction inside each cone
    struct Report {
        double min_surcharge = 0;
        bool nested = true;
        bool lattice_direction = true;
        int directions = 0;
        bool ok() const { return min_surcharge >= -1e-9 && nested && lattice_direction; }
    };
    Report validate(int directions = 360) const;

private:
    int d_;
    SupportFn tau_;
    RVec h_;
    double lambda_;
    std::array<double, 3> delta_;
    double tol_;
    std::vector<Sector> sectors_;
    void find_sectors();
};

// ---- cone points ----

// strict version: gamma_i - u_l in -Y3 \ {0} for i < l and in Y3 \ {0} for i > l
std::vector<int> cone_points_reference(const SurchargeGeometry& g, const LatticePath& path);
// prefix/suffix extremes of the two sector functionals (d = 2); reference otherwise
std::vector<int> cone_points(const SurchargeGeometry& g, const LatticePath& path);

// ---- irreducible decomposition ----

enum class PieceClass { Left, Middle, Right, Whole };
const char* piece_class_name(PieceClass c);

struct Piece {
    int begin = 0, end = 0;  // vertex indices into the path
    PieceClass cls = PieceClass::Whole;
    bool confined = true;    // inside the diamond / half-diamond of its class
};

struct IrreducibleDecomposition {
    std::vector<int> junctions;  // cone points
    std::vector<Piece> pieces;
    bool decomposable() const { return !junctions.empty(); }
    LatticePath piece_path(const LatticePath& path, std::size_t i) const;
    LatticePath reconcatenate(const LatticePath& path) const;
    std::string to_json() const;
};

// No cone points gives one Whole piece flagged with confined = membership in the diamond.
IrreducibleDecomposition irreducible_split(const SurchargeGeometry& g, const LatticePath& path);

// log W^{h,lambda}(gamma) = log P_d(gamma) - Phi(gamma) + h.X - lambda n
double polymer_log_weight(const StepDistribution& steps, const PotentialLaw& law, const RVec& h, double lambda,
                          const LatticePath& path);

struct FactorizationCheck {
    double whole = 0;
    double pieces = 0;
    double rel_error = 0;  // |whole - pieces| / max(1, |whole|)
};
FactorizationCheck check_factorization(const StepDistribution& steps, const PotentialLaw& law, const RVec& h,
                                       double lambda, const LatticePath& path, const IrreducibleDecomposition& dec);

// ---- skeletons ----

struct Skeleton {
    double K = 0, r = 0;
    std::vector<Vec> trunk;      // u_0, ..., u_N
    std::vector<int> tau_idx;    // tau_l with u_l = gamma(tau_l)
    std::vector<int> sigma_idx;  // sigma_{l+1}, exit time from U_K(u_l)
    std::vector<Vec> exits;      // v_{l+1} = gamma(sigma_{l+1})
    bool terminal = false;       // last-visit time ran past n; u_N = gamma(n)
    std::vector<std::vector<Vec>> hairs;  // hairs[l-1] grows from u_l along the reversed gamma(sigma_l..tau_l)
};
// min_scale <= 0 means r_lambda; throws ScaleTooSmall when K is below it
Skeleton build_skeleton(const SurchargeGeometry& g, const LatticePath& path, double K, double range = 1,
                        double min_scale = 0);

struct SkeletonAudit {
    bool p1 = true;           // gamma_i, gamma_j disjoint for i != j
    bool p2 = true;           // l_{gamma_i}(v_{i+1}) = 1 for pieces ending at exits
    bool trunk_radii = true;  // tau(v_{l+1} - u_l) in [K, K + r]
    bool hair_radii = true;   // tau(w_{j+1} - w_j) >= K
    bool ok() const { return p1 && p2 && trunk_radii && hair_radii; }
};
SkeletonAudit audit_skeleton(const SurchargeGeometry& g, const LatticePath& path, const Skeleton& s);

// ---- irreducible kernel ----

// one path of F (irreducible, inside the diamond with the tips excluded), started at 0
struct IrreduciblePiece {
    std::vector<Vec> v;
    double log_p = 0;  // log P_d
};
// every piece of length <= m_cap, in a fixed order independent of threads
std::vector<IrreduciblePiece> irreducible_pieces(const SurchargeGeometry& g, const StepDistribution& steps, int m_cap,
                                                 int threads = 1, std::uint64_t* nodes = nullptr);

struct KernelEstimate {
    RenewalKernel f;
    std::vector<double> mass_by_n;  // index n = 0..n_max
    double mass = 0;
    std::uint64_t pieces = 0;       // number of F-paths found
    std::uint64_t nodes = 0;        // DFS nodes visited
    double chi = 0;                 // fitted decay rate of the marginal
    double chi_residual = 0;
    RVec velocity{};                // E X / E T under the normalized kernel
};
// Exhaustive over irreducible_pieces, weighted by W^{h,lambda}. Throws
// InsufficientConePoints when no piece is found.
KernelEstimate estimate_irreducible_kernel(const SurchargeGeometry& g, const StepDistribution& steps,
                                           const PotentialLaw& law, int n_max, int threads = 1);

// ---- Kesten forest bound ----

double kesten_forest_bound(int M, int N, int b);
// forests of N planted trees with M vertices in total, every vertex offering b slots
double kesten_forest_count(int M, int N, int b);

// ---- Ornstein-Zernike prefactor ----

struct OzFit {
    std::vector<double> r;          // |x| along the ray
    std::vector<double> log_scaled; // log(e^{tau(x)} G(x))
    double power = 0;               // fitted p in e^{tau} G ~ |x|^{-p}
    double flatness = 0;            // max |log(e^tau G |x|^{(d-1)/2}) - mean|
    double tau_decay = 0;           // slope of -log(G |x|^{(d-1)/2}) vs |x|, per unit length
    double tau_shape = 0;           // tau(direction / |direction|)
};
OzFit oz_two_point_check(const std::function<double(const Vec&)>& G, const SupportFn& tau, int d,
                         const RVec& direction, const std::vector<int>& r_ladder);

}  // namespace rpoly
