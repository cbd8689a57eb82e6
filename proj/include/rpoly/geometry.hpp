#pragma once

#include <functional>
#include <string>
#include <vector>

#include "rpoly/common.hpp"

namespace rpoly {

// Rectangular grid in R^d, `count[k]` points per axis from lo[k] to hi[k] inclusive.
struct Grid {
    int d = 1;
    RVec lo{}, hi{};
    std::array<int, kMaxDim> count{1, 1, 1, 1};

    static Grid uniform(int d, double lo, double hi, int count);
    std::size_t size() const;
    double spacing(int k) const { return count[k] > 1 ? (hi[k] - lo[k]) / (count[k] - 1) : 0.0; }
    double max_spacing() const;
    RVec point(std::size_t i) const;
    std::array<int, kMaxDim> multi(std::size_t i) const;
    std::size_t flat(const std::array<int, kMaxDim>& m) const;
};

// Values may be +inf (characteristic functions).
struct ConvexGridFunction {
    Grid grid;
    std::vector<double> values;

    static ConvexGridFunction tabulate(const Grid& g, const std::function<double(const RVec&)>& f);
    // multilinear interpolation; +inf if any corner is +inf; clamps outside the grid
    double eval(const RVec& x) const;
    // f(x) <= (f(x - e) + f(x + e))/2 + tol along axes and diagonals
    bool midpoint_convex(double tol = 1e-12) const;
    std::string to_csv() const;
};

// f*(x) = max_h (h.x - f(h)) over the grid of f, evaluated on `dual`; throws AllInfinite
ConvexGridFunction legendre_fenchel(const ConvexGridFunction& f, const Grid& dual, int threads = 1);
// d = 1 monotone-chain version, same result
ConvexGridFunction legendre_fenchel_1d_fast(const ConvexGridFunction& f, const Grid& dual);
// largest convex minorant on the same grid: exact lower hull in d = 1, double conjugate otherwise
ConvexGridFunction convex_envelope(const ConvexGridFunction& f);

// d = 2 bodies: polygons from vertex lists, or support-function tables over equally spaced angles.
// Vertex-list bodies also answer support() in any dimension.
class ConvexBody {
public:
    static ConvexBody polytope(int d, std::vector<RVec> vertices);
    static ConvexBody from_support(std::function<double(double)> tau_theta, int directions = 2048);
    static ConvexBody euclidean_ball(double r = 1, int directions = 2048);

    int dim() const { return d_; }
    bool is_polytope() const { return table_.empty(); }
    const std::vector<RVec>& vertices() const { return vertices_; }  // hull vertices, counter-clockwise in d = 2
    double table_spacing() const;

    double support(const RVec& x) const;
    bool contains(const RVec& h, double tol = 1e-12) const;
    bool origin_interior() const;
    // inf{r > 0 : h in rK}, by bisection on the ray; throws OriginNotInterior
    double minkowski(const RVec& h) const;
    // polar body; polytope in, polytope out, otherwise a support table (alpha_K sampled)
    ConvexBody polar() const;
    std::string to_json() const;

private:
    int d_ = 2;
    std::vector<RVec> vertices_;
    std::vector<double> table_;  // tau(cos t, sin t) at t = 2 pi k / M
    std::vector<double> cos_, sin_;
    void fill_trig();
};

// max over unit directions of |tau_A - tau_B|
double hausdorff(const ConvexBody& a, const ConvexBody& b, int directions = 4096);

// ---- curvature ----

using SupportFn = std::function<double(const RVec&)>;

// tau''(theta) + tau(theta) by central differences at the given step
double radius_of_curvature(const std::function<double(double)>& tau_theta, double theta, double step = 1e-3);
// from a tabulated body; throws TableTooCoarse when the table spacing exceeds max_spacing
double radius_of_curvature(const ConvexBody& k, double theta, double max_spacing = 0.02);

// Hessian of tau at x (row-major, kMaxDim stride), central differences with step * |x|
std::array<double, 16> support_hessian(const SupportFn& tau, int d, const RVec& x, double step = 1e-3);

struct PrincipalCurvature {
    std::vector<double> radii;       // eigenvalues of Hess tau(x/|x|) on the tangent space
    std::vector<RVec> directions;    // orthonormal, orthogonal to x
    double radial_residual = 0;      // |Hess tau(u) u| at u = x/|x|
};
PrincipalCurvature principal_curvature(const SupportFn& tau, int d, const RVec& x, double step = 1e-3);

struct QuadraticCheck {
    double lhs = 0;        // tau(tx + sum y v) + tau((1-t)x - sum y v) - tau(x)
    double predicted = 0;  // sum y^2 r / (2 t (1-t) |x|)
    double residual_ratio = 0;
};
QuadraticCheck quadratic_expansion_check(const SupportFn& tau, int d, const RVec& x, const std::vector<double>& y,
                                         double t, double step = 1e-3);

struct TriangleAudit {
    double c = kInf;  // min over pairs of (tau(x)+tau(y)-tau(x+y)) / (|x|+|y|-|x+y|)
    int pairs = 0;
};
TriangleAudit strict_triangle_audit(const SupportFn& tau, int d, int pairs, std::uint64_t seed);

// ---- rate functions ----

struct RateFunctions {
    ConvexGridFunction I, I_h;
    double lambda_h = 0;
    RVec grad_h{};
    double min_I_h = 0;
    double I_h_at_grad = 0;
    bool input_convex = true;  // false: lambda was replaced by its envelope
};
// I = lambda^* on v_grid; I_h(v) = I(v) - (h.v - lambda(h))
RateFunctions rate_functions(const ConvexGridFunction& lambda, const RVec& h, const Grid& v_grid, int threads = 1);

}  // namespace rpoly
