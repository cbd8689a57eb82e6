#include "rpoly/geometry.hpp"

#include <Eigen/Dense>
#include <cstdio>
#include <json.hpp>

#include "rpoly/parallel.hpp"

namespace rpoly {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;

double cross(const RVec& o, const RVec& a, const RVec& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Andrew's monotone chain, counter-clockwise, collinear points dropped
std::vector<RVec> hull_2d(std::vector<RVec> p) {
    std::sort(p.begin(), p.end(), [](const RVec& a, const RVec& b) { return a[0] < b[0] || (a[0] == b[0] && a[1] < b[1]); });
    p.erase(std::unique(p.begin(), p.end()), p.end());
    if (p.size() < 3) return p;
    std::vector<RVec> h(2 * p.size());
    std::size_t k = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        while (k >= 2 && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    for (std::size_t i = p.size() - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(h[k - 2], h[k - 1], p[i]) <= 0) --k;
        h[k++] = p[i];
    }
    h.resize(k - 1);
    return h;
}
}  // namespace

// ---------------------------------------------------------------- grids

Grid Grid::uniform(int d, double lo, double hi, int count) {
    Grid g;
    g.d = d;
    for (int k = 0; k < d; ++k) {
        g.lo[k] = lo;
        g.hi[k] = hi;
        g.count[k] = count;
    }
    return g;
}

std::size_t Grid::size() const {
    std::size_t s = 1;
    for (int k = 0; k < d; ++k) s *= static_cast<std::size_t>(count[k]);
    return s;
}

double Grid::max_spacing() const {
    double s = 0;
    for (int k = 0; k < d; ++k) s = std::max(s, spacing(k));
    return s;
}

std::array<int, kMaxDim> Grid::multi(std::size_t i) const {
    std::array<int, kMaxDim> m{};
    for (int k = d - 1; k >= 0; --k) {
        m[k] = static_cast<int>(i % count[k]);
        i /= count[k];
    }
    return m;
}

std::size_t Grid::flat(const std::array<int, kMaxDim>& m) const {
    std::size_t i = 0;
    for (int k = 0; k < d; ++k) i = i * count[k] + m[k];
    return i;
}

RVec Grid::point(std::size_t i) const {
    auto m = multi(i);
    RVec x{};
    for (int k = 0; k < d; ++k) x[k] = lo[k] + m[k] * spacing(k);
    return x;
}

ConvexGridFunction ConvexGridFunction::tabulate(const Grid& g, const std::function<double(const RVec&)>& f) {
    ConvexGridFunction out;
    out.grid = g;
    out.values.resize(g.size());
    for (std::size_t i = 0; i < g.size(); ++i) out.values[i] = f(g.point(i));
    return out;
}

double ConvexGridFunction::eval(const RVec& x) const {
    const int d = grid.d;
    std::array<int, kMaxDim> base{};
    std::array<double, kMaxDim> w{};
    for (int k = 0; k < d; ++k) {
        if (grid.count[k] == 1) continue;
        double s = (x[k] - grid.lo[k]) / grid.spacing(k);
        s = std::clamp(s, 0.0, static_cast<double>(grid.count[k] - 1));
        base[k] = std::min(static_cast<int>(s), grid.count[k] - 2);
        w[k] = s - base[k];
    }
    double v = 0;
    for (int c = 0; c < (1 << d); ++c) {
        double wt = 1;
        auto m = base;
        for (int k = 0; k < d; ++k) {
            if (grid.count[k] == 1) {
                if (c >> k & 1) wt = 0;
                continue;
            }
            bool up = c >> k & 1;
            m[k] += up;
            wt *= up ? w[k] : 1 - w[k];
        }
        if (wt == 0) continue;
        double fv = values[grid.flat(m)];
        if (fv == kInf) return kInf;
        v += wt * fv;
    }
    return v;
}

bool ConvexGridFunction::midpoint_convex(double tol) const {
    const int d = grid.d;
    std::vector<std::array<int, kMaxDim>> dirs;
    int total = 1;
    for (int k = 0; k < d; ++k) total *= 3;
    for (int c = 0; c < total; ++c) {
        std::array<int, kMaxDim> e{};
        int r = c, first = 0;
        for (int k = 0; k < d; ++k) {
            e[k] = r % 3 - 1;
            r /= 3;
            if (!first && e[k]) first = e[k];
        }
        if (first > 0) dirs.push_back(e);
    }
    for (std::size_t i = 0; i < values.size(); ++i) {
        auto m = grid.multi(i);
        for (const auto& e : dirs) {
            auto a = m, b = m;
            bool ok = true;
            for (int k = 0; k < d; ++k) {
                a[k] -= e[k];
                b[k] += e[k];
                if (a[k] < 0 || b[k] < 0 || a[k] >= grid.count[k] || b[k] >= grid.count[k]) ok = false;
            }
            if (!ok) continue;
            double fa = values[grid.flat(a)], fb = values[grid.flat(b)];
            if (fa == kInf || fb == kInf) continue;
            if (values[i] > 0.5 * (fa + fb) + tol * (1 + std::abs(values[i]))) return false;
        }
    }
    return true;
}

std::string ConvexGridFunction::to_csv() const {
    std::string out;
    for (int k = 0; k < grid.d; ++k) out += "x" + std::to_string(k + 1) + ",";
    out += "value\n";
    char buf[40];
    for (std::size_t i = 0; i < values.size(); ++i) {
        RVec p = grid.point(i);
        for (int k = 0; k < grid.d; ++k) {
            std::snprintf(buf, sizeof buf, "%.17g,", p[k]);
            out += buf;
        }
        if (values[i] == kInf)
            out += "inf\n";
        else {
            std::snprintf(buf, sizeof buf, "%.17g\n", values[i]);
            out += buf;
        }
    }
    return out;
}

ConvexGridFunction legendre_fenchel(const ConvexGridFunction& f, const Grid& dual, int threads) {
    std::vector<RVec> pts;
    std::vector<double> vals;
    for (std::size_t i = 0; i < f.values.size(); ++i)
        if (f.values[i] < kInf) {
            pts.push_back(f.grid.point(i));
            vals.push_back(f.values[i]);
        }
    if (pts.empty()) throw Error("AllInfinite", "conjugate of the constant +inf");
    ConvexGridFunction out;
    out.grid = dual;
    out.values.assign(dual.size(), kNegInf);
    parallel_for(dual.size(), threads, [&](std::size_t j) {
        RVec x = dual.point(j);
        double best = kNegInf;
        for (std::size_t i = 0; i < pts.size(); ++i) best = std::max(best, dot(pts[i], x) - vals[i]);
        out.values[j] = best;
    });
    return out;
}

namespace {
std::vector<RVec> lower_hull_1d(const ConvexGridFunction& f) {
    std::vector<RVec> h;
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        if (f.values[i] == kInf) continue;
        RVec p{f.grid.point(i)[0], f.values[i], 0, 0};
        while (h.size() >= 2 && cross(h[h.size() - 2], h.back(), p) <= 0) h.pop_back();
        h.push_back(p);
    }
    return h;
}
}  // namespace

ConvexGridFunction legendre_fenchel_1d_fast(const ConvexGridFunction& f, const Grid& dual) {
    if (f.grid.d != 1 || dual.d != 1) throw Error("BadDimension", "fast transform is one-dimensional");
    auto h = lower_hull_1d(f);
    if (h.empty()) throw Error("AllInfinite", "conjugate of the constant +inf");
    ConvexGridFunction out;
    out.grid = dual;
    out.values.resize(dual.size());
    std::size_t k = 0;
    for (std::size_t j = 0; j < dual.size(); ++j) {
        double x = dual.point(j)[0];
        // slopes of the hull increase, so the maximiser moves right as x grows
        while (k + 1 < h.size() && h[k + 1][0] * x - h[k + 1][1] >= h[k][0] * x - h[k][1]) ++k;
        out.values[j] = h[k][0] * x - h[k][1];
    }
    return out;
}

ConvexGridFunction convex_envelope(const ConvexGridFunction& f) {
    if (f.grid.d == 1) {
        auto h = lower_hull_1d(f);
        if (h.empty()) return f;
        ConvexGridFunction out = f;
        std::size_t k = 0;
        for (std::size_t i = 0; i < f.values.size(); ++i) {
            double x = f.grid.point(i)[0];
            if (x < h.front()[0] - 1e-12 || x > h.back()[0] + 1e-12) {
                out.values[i] = kInf;
                continue;
            }
            while (k + 1 < h.size() && h[k + 1][0] < x) ++k;
            if (k + 1 == h.size() || h[k][0] >= x)
                out.values[i] = h[k][1];
            else {
                double w = (x - h[k][0]) / (h[k + 1][0] - h[k][0]);
                out.values[i] = (1 - w) * h[k][1] + w * h[k + 1][1];
            }
        }
        return out;
    }
    // slopes grid wide enough for every finite difference quotient
    double lip = 0;
    for (std::size_t i = 0; i < f.values.size(); ++i) {
        if (f.values[i] == kInf) continue;
        auto m = f.grid.multi(i);
        for (int k = 0; k < f.grid.d; ++k) {
            if (m[k] + 1 >= f.grid.count[k]) continue;
            auto n = m;
            ++n[k];
            double v = f.values[f.grid.flat(n)];
            if (v < kInf) lip = std::max(lip, std::abs(v - f.values[i]) / f.grid.spacing(k));
        }
    }
    Grid slopes = f.grid;
    for (int k = 0; k < f.grid.d; ++k) {
        slopes.lo[k] = -lip - 1;
        slopes.hi[k] = lip + 1;
        slopes.count[k] = 2 * f.grid.count[k] + 1;
    }
    auto fs = legendre_fenchel(f, slopes);
    auto env = legendre_fenchel(fs, f.grid);
    for (std::size_t i = 0; i < env.values.size(); ++i) env.values[i] = std::min(env.values[i], f.values[i]);
    return env;
}

// ---------------------------------------------------------------- bodies

ConvexBody ConvexBody::polytope(int d, std::vector<RVec> vertices) {
    if (vertices.empty()) throw Error("EmptyBody", "no vertices");
    ConvexBody k;
    k.d_ = d;
    k.vertices_ = d == 2 ? hull_2d(std::move(vertices)) : std::move(vertices);
    return k;
}

ConvexBody ConvexBody::from_support(std::function<double(double)> tau_theta, int directions) {
    ConvexBody k;
    k.d_ = 2;
    k.table_.resize(directions);
    for (int i = 0; i < directions; ++i) k.table_[i] = tau_theta(kTwoPi * i / directions);
    k.fill_trig();
    return k;
}

void ConvexBody::fill_trig() {
    const int M = static_cast<int>(table_.size());
    cos_.resize(M);
    sin_.resize(M);
    for (int i = 0; i < M; ++i) {
        cos_[i] = std::cos(kTwoPi * i / M);
        sin_[i] = std::sin(kTwoPi * i / M);
    }
}

ConvexBody ConvexBody::euclidean_ball(double r, int directions) {
    return from_support([r](double) { return r; }, directions);
}

double ConvexBody::table_spacing() const { return table_.empty() ? 0.0 : kTwoPi / table_.size(); }

double ConvexBody::support(const RVec& x) const {
    if (is_polytope()) {
        double best = kNegInf;
        for (const auto& v : vertices_) best = std::max(best, dot(v, x));
        return best;
    }
    const double r = std::hypot(x[0], x[1]);
    if (r == 0) return 0;
    const int M = static_cast<int>(table_.size());
    double th = std::atan2(x[1], x[0]);
    if (th < 0) th += kTwoPi;
    int k = static_cast<int>(th / table_spacing()) % M;
    int k1 = (k + 1) % M;
    // x = a u_k + b u_{k+1} with a, b >= 0
    double t0 = kTwoPi * k / M, t1 = kTwoPi * (k + 1) / M;
    double det = std::sin(t1 - t0);
    double a = (x[0] * std::sin(t1) - x[1] * std::cos(t1)) / det;
    double b = (x[1] * std::cos(t0) - x[0] * std::sin(t0)) / det;
    return a * table_[k] + b * table_[k1];
}

bool ConvexBody::contains(const RVec& h, double tol) const {
    if (d_ != 2) throw Error("BadDimension", "membership implemented for d = 2");
    if (is_polytope()) {
        const std::size_t n = vertices_.size();
        if (n < 3) return false;
        for (std::size_t i = 0; i < n; ++i)
            if (cross(vertices_[i], vertices_[(i + 1) % n], h) < -tol) return false;
        return true;
    }
    const int M = static_cast<int>(table_.size());
    for (int i = 0; i < M; ++i)
        if (h[0] * cos_[i] + h[1] * sin_[i] > table_[i] + tol) return false;
    return true;
}

bool ConvexBody::origin_interior() const {
    if (d_ != 2) return false;
    if (is_polytope()) {
        const std::size_t n = vertices_.size();
        if (n < 3) return false;
        for (std::size_t i = 0; i < n; ++i)
            if (cross(vertices_[i], vertices_[(i + 1) % n], RVec{}) <= 1e-14) return false;
        return true;
    }
    for (double v : table_)
        if (v <= 0) return false;
    return true;
}

double ConvexBody::minkowski(const RVec& h) const {
    if (!origin_interior()) throw Error("OriginNotInterior", "Minkowski function needs 0 in the interior");
    if (h[0] == 0 && h[1] == 0) return 0;
    auto inside = [&](double r) { return contains(scaled(h, 1 / r), 0.0); };
    double hi = 1, lo = 1;
    while (!inside(hi)) hi *= 2;
    while (inside(lo)) lo /= 2;
    for (int it = 0; it < 200 && hi - lo > 1e-15 * hi; ++it) {
        double m = 0.5 * (lo + hi);
        (inside(m) ? hi : lo) = m;
    }
    return hi;
}

ConvexBody ConvexBody::polar() const {
    if (!origin_interior()) throw Error("OriginNotInterior", "polar needs 0 in the interior");
    if (is_polytope()) {
        std::vector<RVec> pv;
        const std::size_t n = vertices_.size();
        for (std::size_t i = 0; i < n; ++i) {
            const RVec& a = vertices_[i];
            const RVec& b = vertices_[(i + 1) % n];
            RVec normal{b[1] - a[1], a[0] - b[0], 0, 0};  // outward for counter-clockwise order
            double off = dot(normal, a);
            pv.push_back(scaled(normal, 1 / off));
        }
        return polytope(2, pv);
    }
    ConvexBody p;
    p.d_ = 2;
    const int M = static_cast<int>(table_.size());
    p.table_.resize(M);
    for (int i = 0; i < M; ++i) p.table_[i] = minkowski(RVec{cos_[i], sin_[i], 0, 0});
    p.fill_trig();
    return p;
}

std::string ConvexBody::to_json() const {
    nlohmann::json j;
    j["d"] = d_;
    if (is_polytope()) {
        j["type"] = "polytope";
        auto& arr = j["vertices"] = nlohmann::json::array();
        for (const auto& v : vertices_) arr.push_back(std::vector<double>(v.begin(), v.begin() + d_));
    } else {
        j["type"] = "support_table";
        j["tau"] = table_;
    }
    return j.dump();
}

double hausdorff(const ConvexBody& a, const ConvexBody& b, int directions) {
    double worst = 0;
    for (int i = 0; i < directions; ++i) {
        double t = kTwoPi * i / directions;
        RVec u{std::cos(t), std::sin(t), 0, 0};
        worst = std::max(worst, std::abs(a.support(u) - b.support(u)));
    }
    return worst;
}

// ---------------------------------------------------------------- curvature

double radius_of_curvature(const std::function<double(double)>& tau, double theta, double step) {
    double t0 = tau(theta);
    return (tau(theta + step) - 2 * t0 + tau(theta - step)) / (step * step) + t0;
}

double radius_of_curvature(const ConvexBody& k, double theta, double max_spacing) {
    if (k.is_polytope()) throw Error("TableTooCoarse", "polytope support functions are not twice differentiable");
    const double s = k.table_spacing();
    if (s > max_spacing) throw Error("TableTooCoarse", "table spacing " + std::to_string(s));
    auto tau = [&](double t) { return k.support(RVec{std::cos(t), std::sin(t), 0, 0}); };
    // discrete stencil at the two neighbouring table nodes, interpolated
    double pos = theta / s;
    double base = std::floor(pos), w = pos - base;
    double r0 = radius_of_curvature(tau, base * s, s);
    double r1 = radius_of_curvature(tau, (base + 1) * s, s);
    return (1 - w) * r0 + w * r1;
}

std::array<double, 16> support_hessian(const SupportFn& tau, int d, const RVec& x, double step) {
    std::array<double, 16> H{};
    const double h = step * std::max(norm2(x), 1e-300);
    auto at = [&](int a, double sa, int b, double sb) {
        RVec p = x;
        p[a] += sa;
        p[b] += sb;
        return tau(p);
    };
    const double t0 = tau(x);
    for (int a = 0; a < d; ++a) {
        H[a * kMaxDim + a] = (at(a, h, a, 0) - 2 * t0 + at(a, -h, a, 0)) / (h * h);
        for (int b = a + 1; b < d; ++b) {
            double v = (at(a, h, b, h) - at(a, h, b, -h) - at(a, -h, b, h) + at(a, -h, b, -h)) / (4 * h * h);
            H[a * kMaxDim + b] = H[b * kMaxDim + a] = v;
        }
    }
    return H;
}

PrincipalCurvature principal_curvature(const SupportFn& tau, int d, const RVec& x, double step) {
    PrincipalCurvature pc;
    const double nx = norm2(x);
    if (nx == 0) throw Error("BadDirection", "curvature at the origin");
    RVec u = scaled(x, 1 / nx);
    auto H = support_hessian(tau, d, u, step);
    Eigen::MatrixXd Hm(d, d);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) Hm(a, b) = H[a * kMaxDim + b];
    Eigen::VectorXd ue(d);
    for (int a = 0; a < d; ++a) ue[a] = u[a];
    pc.radial_residual = (Hm * ue).norm();
    // tangent frame by Gram-Schmidt
    std::vector<Eigen::VectorXd> frame;
    for (int k = 0; k < d && static_cast<int>(frame.size()) < d - 1; ++k) {
        Eigen::VectorXd v = Eigen::VectorXd::Unit(d, k);
        v -= v.dot(ue) * ue;
        for (const auto& f : frame) v -= v.dot(f) * f;
        if (v.norm() > 1e-8) frame.push_back(v.normalized());
    }
    Eigen::MatrixXd V(d, static_cast<int>(frame.size()));
    for (std::size_t i = 0; i < frame.size(); ++i) V.col(static_cast<int>(i)) = frame[i];
    Eigen::MatrixXd T = V.transpose() * Hm * V;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    for (int i = 0; i < T.rows(); ++i) {
        pc.radii.push_back(es.eigenvalues()[i]);
        Eigen::VectorXd dir = V * es.eigenvectors().col(i);
        RVec r{};
        for (int a = 0; a < d; ++a) r[a] = dir[a];
        pc.directions.push_back(r);
    }
    return pc;
}

QuadraticCheck quadratic_expansion_check(const SupportFn& tau, int d, const RVec& x, const std::vector<double>& y,
                                         double t, double step) {
    QuadraticCheck q;
    auto pc = principal_curvature(tau, d, x, step);
    const double nx = norm2(x);
    RVec z{};
    double ysq = 0;
    for (std::size_t l = 0; l < y.size() && l < pc.radii.size(); ++l) {
        z = plus(z, scaled(pc.directions[l], y[l]));
        ysq += y[l] * y[l];
        q.predicted += y[l] * y[l] * pc.radii[l] / (2 * t * (1 - t) * nx);
    }
    q.lhs = tau(plus(scaled(x, t), z)) + tau(minus(scaled(x, 1 - t), z)) - tau(x);
    q.residual_ratio = ysq > 0 ? std::abs(q.lhs - q.predicted) / (ysq / nx) : 0.0;
    return q;
}

TriangleAudit strict_triangle_audit(const SupportFn& tau, int d, int pairs, std::uint64_t seed) {
    TriangleAudit a;
    Rng rng(seed, 0x7a);
    for (int i = 0; i < pairs; ++i) {
        RVec x{}, y{};
        for (int k = 0; k < d; ++k) {
            x[k] = 2 * rng.uniform() - 1;
            y[k] = 2 * rng.uniform() - 1;
        }
        double den = norm2(x) + norm2(y) - norm2(plus(x, y));
        if (den < 1e-9) continue;
        a.c = std::min(a.c, (tau(x) + tau(y) - tau(plus(x, y))) / den);
        ++a.pairs;
    }
    return a;
}

// ---------------------------------------------------------------- rate functions

RateFunctions rate_functions(const ConvexGridFunction& lambda, const RVec& h, const Grid& v_grid, int threads) {
    RateFunctions r;
    const ConvexGridFunction* lam = &lambda;
    ConvexGridFunction env;
    if (!lambda.midpoint_convex(1e-9)) {
        r.input_convex = false;
        env = convex_envelope(lambda);
        lam = &env;
    }
    r.I = legendre_fenchel(*lam, v_grid, threads);
    r.lambda_h = lam->eval(h);
    for (int k = 0; k < lambda.grid.d; ++k) {
        double s = lambda.grid.spacing(k);
        RVec a = h, b = h;
        a[k] -= s;
        b[k] += s;
        r.grad_h[k] = (lam->eval(b) - lam->eval(a)) / (2 * s);
    }
    r.I_h = r.I;
    r.min_I_h = kInf;
    for (std::size_t i = 0; i < r.I.values.size(); ++i) {
        r.I_h.values[i] = r.I.values[i] - (dot(h, v_grid.point(i)) - r.lambda_h);
        r.min_I_h = std::min(r.min_I_h, r.I_h.values[i]);
    }
    r.I_h_at_grad = r.I.eval(r.grad_h) - (dot(h, r.grad_h) - r.lambda_h);
    return r;
}

}  // namespace rpoly
