#include "rpoly/renewal.hpp"

#include <Eigen/Dense>
#include <cstdio>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>

namespace rpoly {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

Error bad_kernel(const std::string& msg) { return Error("BadKernel", msg); }

}  // namespace

// ---------------------------------------------------------------- kernel

RenewalKernel RenewalKernel::from_sequence(const std::vector<double>& f) {
    RenewalKernel k;
    k.d = 1;
    for (std::size_t n = 1; n < f.size(); ++n)
        if (f[n] > 0) k.entries.push_back({Vec{}, static_cast<int>(n), f[n]});
    return k;
}

RenewalKernel RenewalKernel::from_text(int d, const std::string& text) {
    if (d < 1 || d > kMaxDim) throw bad_kernel("dimension out of range");
    RenewalKernel k;
    k.d = d;
    std::map<std::pair<Vec, int>, double> acc;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.rfind("#tail", 0) == 0) {
            std::istringstream t(line.substr(5));
            if (!(t >> k.tail_nu >> k.tail_C)) throw bad_kernel("bad #tail line " + std::to_string(lineno));
            continue;
        }
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        Vec x{};
        if (!(ls >> x[0])) continue;  // blank
        for (int c = 1; c < d; ++c)
            if (!(ls >> x[c])) throw bad_kernel("short line " + std::to_string(lineno));
        int n;
        double v;
        std::string extra;
        if (!(ls >> n >> v) || (ls >> extra)) throw bad_kernel("malformed line " + std::to_string(lineno));
        acc[{x, n}] += v;
    }
    for (auto& [key, v] : acc) k.entries.push_back({key.first, key.second, v});
    k.validate();
    return k;
}

std::string RenewalKernel::to_text() const {
    std::string out;
    char buf[64];
    if (std::isfinite(tail_nu)) {
        std::snprintf(buf, sizeof buf, "#tail %.17g %.17g\n", tail_nu, tail_C);
        out += buf;
    }
    for (const auto& e : entries) {
        for (int c = 0; c < d; ++c) out += std::to_string(e.x[c]) + ' ';
        std::snprintf(buf, sizeof buf, "%d %.17g\n", e.n, e.f);
        out += buf;
    }
    return out;
}

void RenewalKernel::validate() const {
    if (d < 1 || d > kMaxDim) throw bad_kernel("dimension out of range");
    if (entries.empty()) throw bad_kernel("empty kernel");
    for (const auto& e : entries) {
        if (e.n < 1) throw bad_kernel("entry with n < 1");
        if (!(e.f >= 0) || !std::isfinite(e.f)) throw bad_kernel("negative or non-finite weight");
        for (int c = d; c < kMaxDim; ++c)
            if (e.x[c] != 0) throw bad_kernel("coordinate beyond dimension");
    }
    double m = mass();
    if (!(m > 0) || m > 1 + 1e-9) throw bad_kernel("total mass " + std::to_string(m) + " outside (0,1]");
}

double RenewalKernel::mass() const {
    double s = 0;
    for (const auto& e : entries) s += e.f;
    return s;
}

int RenewalKernel::max_n() const {
    int m = 0;
    for (const auto& e : entries) m = std::max(m, e.n);
    return m;
}

std::vector<double> RenewalKernel::marginal() const {
    std::vector<double> f(max_n() + 1, 0.0);
    for (const auto& e : entries) f[e.n] += e.f;
    return f;
}

double RenewalKernel::truncate(double rel) {
    std::vector<double> top(max_n() + 1, 0.0);
    for (const auto& e : entries) top[e.n] = std::max(top[e.n], e.f);
    double dropped = 0;
    std::vector<KernelEntry> kept;
    for (const auto& e : entries) {
        if (e.f < rel * top[e.n])
            dropped += e.f;
        else
            kept.push_back(e);
    }
    entries.swap(kept);
    dropped_mass += dropped;
    return dropped;
}

// ---------------------------------------------------------------- lattice

namespace {
using Row = std::array<long long, kMaxDim + 1>;

// integer row echelon on columns [c0, cols) of rows [r0, end); returns rows used
int echelon(std::vector<Row>& rows, int r0, int c0, int cols) {
    int r = r0;
    for (int c = c0; c < cols && r < static_cast<int>(rows.size()); ++c) {
        while (true) {
            int piv = -1;
            for (int i = r; i < static_cast<int>(rows.size()); ++i)
                if (rows[i][c] != 0 && (piv < 0 || std::llabs(rows[i][c]) < std::llabs(rows[piv][c]))) piv = i;
            if (piv < 0) break;
            std::swap(rows[r], rows[piv]);
            bool clean = true;
            for (int i = r + 1; i < static_cast<int>(rows.size()); ++i) {
                if (rows[i][c] == 0) continue;
                long long q = rows[i][c] / rows[r][c];
                for (int k = 0; k <= kMaxDim; ++k) rows[i][k] -= q * rows[r][k];
                if (rows[i][c] != 0) clean = false;
            }
            if (clean) {
                if (rows[r][c] < 0)
                    for (auto& v : rows[r]) v = -v;
                ++r;
                break;
            }
        }
    }
    return r;
}
}  // namespace

LatticeInfo kernel_lattice(const RenewalKernel& f) {
    const int d = f.d;
    std::vector<Row> rows;
    for (const auto& e : f.entries) {
        if (e.f <= 0) continue;
        Row r{};
        r[0] = e.n;
        for (int c = 0; c < d; ++c) r[c + 1] = e.x[c];
        rows.push_back(r);
    }
    LatticeInfo info;
    if (rows.empty()) {
        info.period = 0;
        return info;
    }
    // time column first: afterwards row 0 is the only row with nonzero time
    echelon(rows, 0, 0, 1);
    std::vector<Row> rest(rows.begin() + 1, rows.end());
    info.time_gcd = static_cast<int>(rows[0][0]);
    for (int c = 0; c < d; ++c) info.time_shift[c] = static_cast<int>(rows[0][c + 1]);
    const int rank = echelon(rest, 0, 1, d + 1);
    rest.resize(rank);
    long long period = rank == d ? 1 : 0;
    for (int i = 0; i < rank; ++i) {
        Vec b{};
        for (int c = 0; c < d; ++c) b[c] = static_cast<int>(rest[i][c + 1]);
        info.basis.push_back(b);
        period *= rest[i][i + 1];  // full rank: pivots sit on the diagonal
    }
    info.period = static_cast<long>(period);
    return info;
}

bool LatticeInfo::reachable(const Vec& x, int n, int d) const {
    if (time_gcd <= 0 || n % time_gcd != 0) return false;
    long long y[kMaxDim] = {};
    const long long k = n / time_gcd;
    for (int c = 0; c < d; ++c) y[c] = x[c] - k * time_shift[c];
    int col = 0;
    for (const auto& b : basis) {
        int piv = 0;
        while (piv < d && b[piv] == 0) ++piv;
        for (; col < piv; ++col)
            if (y[col] != 0) return false;
        if (y[piv] % b[piv] != 0) return false;
        long long q = y[piv] / b[piv];
        for (int c = 0; c < d; ++c) y[c] -= q * b[c];
        col = piv + 1;
    }
    for (int c = 0; c < d; ++c)
        if (y[c] != 0) return false;
    return true;
}

// ---------------------------------------------------------------- 1-D

std::vector<double> renewal_1d(const std::vector<double>& f, int n_max) {
    std::vector<double> t(n_max + 1, 0.0);
    t[0] = 1;
    const int M = static_cast<int>(f.size()) - 1;
    for (int n = 1; n <= n_max; ++n) {
        double s = 0;
        for (int m = 1; m <= std::min(n, M); ++m) s += f[m] * t[n - m];
        t[n] = s;
    }
    return t;
}

LimitRate renewal_limit_rate(const std::vector<double>& t, double mu, int n0, double floor) {
    LimitRate r;
    r.mu = mu;
    r.deviation.resize(t.size());
    std::vector<double> xs, ys;
    for (std::size_t n = 0; n < t.size(); ++n) {
        r.deviation[n] = std::abs(t[n] - 1.0 / mu);
        if (static_cast<int>(n) >= n0) {
            r.sup_deviation = std::max(r.sup_deviation, r.deviation[n]);
            if (r.deviation[n] > floor) {
                xs.push_back(static_cast<double>(n));
                ys.push_back(std::log(r.deviation[n]));
            }
        }
    }
    r.fit_points = static_cast<int>(xs.size());
    if (xs.size() < 3) {
        // nothing left above the floor: convergence is immediate
        r.rate = kInf;
        return r;
    }
    const double nx = static_cast<double>(xs.size());
    double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / nx;
    double my = std::accumulate(ys.begin(), ys.end(), 0.0) / nx;
    double sxy = 0, sxx = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxy += (xs[i] - mx) * (ys[i] - my);
        sxx += (xs[i] - mx) * (xs[i] - mx);
    }
    double slope = sxy / sxx;
    r.rate = -slope;
    for (std::size_t i = 0; i < xs.size(); ++i)
        r.fit_max_residual = std::max(r.fit_max_residual, std::abs(ys[i] - (my + slope * (xs[i] - mx))));
    r.exponential = r.fit_max_residual < 1.0 && r.rate > 0;
    return r;
}

double renewal_decay_oracle(const std::vector<double>& f) {
    int M = static_cast<int>(f.size()) - 1;
    while (M > 0 && f[M] == 0) --M;
    if (M <= 1) return kInf;
    Eigen::MatrixXd C = Eigen::MatrixXd::Zero(M, M);
    for (int m = 1; m <= M; ++m) C(0, m - 1) = f[m];
    for (int i = 1; i < M; ++i) C(i, i - 1) = 1;
    Eigen::EigenSolver<Eigen::MatrixXd> es(C, false);
    std::vector<double> mods;
    for (int i = 0; i < M; ++i) mods.push_back(std::abs(es.eigenvalues()[i]));
    std::sort(mods.rbegin(), mods.rend());
    if (mods[1] <= 0) return kInf;
    return -std::log(mods[1] / mods[0]);
}

// ---------------------------------------------------------------- d+1 arrays

double RenewalArray::t(const Vec& x, int n) const {
    if (n < 0 || n > n_max || !nonempty[n] || !boxes[n].contains(x)) return 0.0;
    return slices[n][boxes[n].index(x)];
}

double RenewalArray::t_n(int n) const {
    if (n < 0 || n > n_max) return 0.0;
    double s = 0;
    for (double v : slices[n]) s += v;
    return s;
}

std::vector<double> RenewalArray::marginal() const {
    std::vector<double> m(n_max + 1);
    for (int n = 0; n <= n_max; ++n) m[n] = t_n(n);
    return m;
}

RenewalArray renewal_multid(const RenewalKernel& f, int n_max, std::size_t memory_cap) {
    f.validate();
    const int d = f.d;
    RenewalArray a;
    a.d = d;
    a.n_max = n_max;
    a.boxes.assign(n_max + 1, Box{});
    a.nonempty.assign(n_max + 1, false);
    a.slices.assign(n_max + 1, {});
    for (auto& b : a.boxes) b.d = d;
    a.nonempty[0] = true;
    std::size_t total = 1;
    for (int n = 1; n <= n_max; ++n) {
        Box& b = a.boxes[n];
        for (const auto& e : f.entries) {
            if (e.n > n || !a.nonempty[n - e.n]) continue;
            const Box& s = a.boxes[n - e.n];
            for (int c = 0; c < d; ++c) {
                int lo = s.lo[c] + e.x[c], hi = s.hi[c] + e.x[c];
                if (!a.nonempty[n]) {
                    b.lo[c] = lo;
                    b.hi[c] = hi;
                } else {
                    b.lo[c] = std::min(b.lo[c], lo);
                    b.hi[c] = std::max(b.hi[c], hi);
                }
            }
            a.nonempty[n] = true;
        }
        if (a.nonempty[n]) total += b.volume();
        if (total * sizeof(double) > memory_cap)
            throw Error("MemoryCap", "renewal array needs more than " + std::to_string(memory_cap) + " bytes");
    }
    a.slices[0] = {1.0};
    for (int n = 1; n <= n_max; ++n) {
        if (!a.nonempty[n]) continue;
        const Box& tb = a.boxes[n];
        auto& out = a.slices[n];
        out.assign(tb.volume(), 0.0);
        std::size_t stride[kMaxDim] = {};
        {
            std::size_t s = 1;
            for (int c = d - 1; c >= 0; --c) {
                stride[c] = s;
                s *= static_cast<std::size_t>(tb.hi[c] - tb.lo[c] + 1);
            }
        }
        for (const auto& e : f.entries) {
            if (e.n > n || !a.nonempty[n - e.n] || e.f == 0) continue;
            const Box& sb = a.boxes[n - e.n];
            const auto& src = a.slices[n - e.n];
            Vec p = sb.lo;
            for (std::size_t i = 0; i < src.size(); ++i) {
                if (src[i] != 0) {
                    std::size_t idx = 0;
                    for (int c = 0; c < d; ++c) idx += static_cast<std::size_t>(p[c] + e.x[c] - tb.lo[c]) * stride[c];
                    out[idx] += e.f * src[i];
                }
                for (int c = d - 1; c >= 0; --c) {  // odometer, last coordinate fastest
                    if (++p[c] <= sb.hi[c]) break;
                    p[c] = sb.lo[c];
                }
            }
        }
    }
    return a;
}

double recursion_residual(const RenewalArray& t, const RenewalKernel& f) {
    double worst = 0;
    for (int n = 1; n <= t.n_max; ++n) {
        if (!t.nonempty[n]) continue;
        const Box& b = t.boxes[n];
        double top = 0;
        for (double v : t.slices[n]) top = std::max(top, v);
        if (top == 0) continue;
        for (std::size_t i = 0; i < b.volume(); ++i) {
            Vec x = b.point(i);
            double s = 0;
            for (const auto& e : f.entries) s += e.f * t.t(x - e.x, n - e.n);
            worst = std::max(worst, std::abs(s - t.slices[n][i]) / top);
        }
    }
    return worst;
}

// ---------------------------------------------------------------- complex plane

std::complex<double> kernel_fhat(const RenewalKernel& f, std::complex<double> z, const RVec& theta) {
    std::complex<double> s = 0;
    for (const auto& e : f.entries) s += e.f * std::polar(1.0, dot(theta, e.x)) * std::pow(z, e.n);
    return s;
}

namespace {
// zeros of g inside the circle, by accumulated argument; min |g| on the circle
std::pair<int, double> winding(const std::function<std::complex<double>(std::complex<double>)>& g,
                               std::complex<double> center, double radius, int points) {
    double total = 0, mn = kInf;
    std::complex<double> prev = g(center + radius);
    mn = std::abs(prev);
    for (int k = 1; k <= points; ++k) {
        std::complex<double> z = center + std::polar(radius, kTwoPi * k / points);
        std::complex<double> cur = g(z);
        mn = std::min(mn, std::abs(cur));
        total += std::arg(cur / prev);
        prev = cur;
    }
    return {static_cast<int>(std::lround(total / kTwoPi)), mn};
}
}  // namespace

ComplexReport check_complex_assumptions(const RenewalKernel& f, double eps, const RVec* theta, int points) {
    f.validate();
    const double R = 1 + eps;
    if (!(f.tail_nu > std::log(R)))
        throw Error("TailTooHeavy", "tail rate does not cover the disk of radius " + std::to_string(R));
    ComplexReport rep;
    const RVec zero{};
    auto g = [&](std::complex<double> z) { return 1.0 - kernel_fhat(f, z, zero); };
    auto [zeros, mn] = winding(g, 0.0, R, points);
    rep.zeros_in_disk = zeros;
    if (mn < 1e-12) rep.note += "zero of 1 - fhat on the circle |z| = 1 + eps; ";
    const double r0 = std::min(eps / 2, 0.05);
    rep.zeros_near_one = winding(g, 1.0, r0, points).first;
    for (const auto& e : f.entries) rep.fhat_prime_one += e.n * e.f;
    if (rep.zeros_in_disk != rep.zeros_near_one) rep.note += "1 - fhat has zeros away from z = 1; ";

    if (theta) {
        auto gt = [&](std::complex<double> z) { return 1.0 - kernel_fhat(f, z, *theta); };
        auto [zt, boundary_min] = winding(gt, 0.0, R, points);
        double kappa = boundary_min;
        // interior grid; by the minimum modulus principle the boundary suffices when zt = 0
        const int radii = 32, angles = 256;
        for (int i = 0; i < radii; ++i)
            for (int j = 0; j < angles; ++j)
                kappa = std::min(kappa, std::abs(gt(std::polar(R * i / radii, kTwoPi * j / angles))));
        if (zt > 0) kappa = 0;
        rep.kappa = kappa;
        rep.twisted_ok = kappa > 1e-9;
        if (!rep.twisted_ok) rep.note += "twisted kernel: 1 - fhat_theta vanishes in the disk (periodicity); ";
    }
    return rep;
}

// ---------------------------------------------------------------- shape equation

double shape_F(const RenewalKernel& f, const RVec& xi, double lambda) {
    double mx = kNegInf;
    for (const auto& e : f.entries)
        if (e.f > 0) mx = std::max(mx, std::log(e.f) + dot(xi, e.x) - lambda * e.n);
    double s = 0;
    for (const auto& e : f.entries)
        if (e.f > 0) s += std::exp(std::log(e.f) + dot(xi, e.x) - lambda * e.n - mx);
    return mx + std::log(s);
}

namespace {

struct Moments {
    double F = 0, ET = 0, ET2 = 0;
    RVec EX{}, EXT{};
    std::array<double, 16> EXX{};
};

Moments tilted_moments(const RenewalKernel& f, const RVec& xi, double lambda) {
    Moments m;
    double mx = kNegInf;
    for (const auto& e : f.entries)
        if (e.f > 0) mx = std::max(mx, std::log(e.f) + dot(xi, e.x) - lambda * e.n);
    double s = 0;
    std::vector<double> w(f.entries.size(), 0.0);
    for (std::size_t i = 0; i < f.entries.size(); ++i) {
        const auto& e = f.entries[i];
        if (e.f > 0) s += w[i] = std::exp(std::log(e.f) + dot(xi, e.x) - lambda * e.n - mx);
    }
    m.F = mx + std::log(s);
    const int d = f.d;
    for (std::size_t i = 0; i < f.entries.size(); ++i) {
        const auto& e = f.entries[i];
        double p = w[i] / s;
        m.ET += p * e.n;
        m.ET2 += p * e.n * e.n;
        for (int a = 0; a < d; ++a) {
            m.EX[a] += p * e.x[a];
            m.EXT[a] += p * e.x[a] * e.n;
            for (int b = 0; b < d; ++b) m.EXX[a * kMaxDim + b] += p * e.x[a] * e.x[b];
        }
    }
    return m;
}

void fill_derivatives(const RenewalKernel& f, ShapePoint& sp) {
    const int d = f.d;
    Moments m = tilted_moments(f, sp.xi, sp.lambda);
    sp.residual = std::abs(m.F);
    sp.mu = m.ET;
    RVec g{};
    for (int a = 0; a < d; ++a) g[a] = m.EX[a] / m.ET;
    sp.grad = g;
    // implicit differentiation of F(xi, lambda(xi)) = 0
    const double varT = m.ET2 - m.ET * m.ET;
    for (int a = 0; a < d; ++a) {
        double covXT_a = m.EXT[a] - m.EX[a] * m.ET;
        for (int b = 0; b < d; ++b) {
            double covXX = m.EXX[a * kMaxDim + b] - m.EX[a] * m.EX[b];
            double covXT_b = m.EXT[b] - m.EX[b] * m.ET;
            sp.hess[a * kMaxDim + b] = (covXX - covXT_a * g[b] - g[a] * covXT_b + varT * g[a] * g[b]) / m.ET;
        }
    }
    // centered second moment of X - vT, accumulated directly
    std::array<double, 16> c{};
    RVec tm{};
    double mx = kNegInf;
    for (const auto& e : f.entries)
        if (e.f > 0) mx = std::max(mx, std::log(e.f) + dot(sp.xi, e.x) - sp.lambda * e.n);
    double s = 0;
    for (const auto& e : f.entries) {
        if (e.f <= 0) continue;
        double w = std::exp(std::log(e.f) + dot(sp.xi, e.x) - sp.lambda * e.n - mx);
        s += w;
        RVec y{};
        for (int a = 0; a < d; ++a) y[a] = e.x[a] - g[a] * e.n;
        for (int a = 0; a < d; ++a) {
            tm[a] += w * e.n * y[a];
            for (int b = 0; b < d; ++b) c[a * kMaxDim + b] += w * y[a] * y[b];
        }
    }
    for (int a = 0; a < d; ++a) {
        sp.grad_log_mu[a] = tm[a] / s / m.ET;
        for (int b = 0; b < d; ++b) sp.hess_centered[a * kMaxDim + b] = c[a * kMaxDim + b] / s / m.ET;
    }
}

}  // namespace

ShapePoint solve_shape(const RenewalKernel& f, const RVec& xi, double lambda_guess, double tol, double margin) {
    if (norm2(xi) >= f.tail_nu - margin)
        throw Error("DomainExceeded", "|xi| beyond the tail-certified domain");
    ShapePoint sp;
    sp.xi = xi;
    double lam = std::isfinite(lambda_guess) ? lambda_guess : shape_F(f, xi, 0.0);
    // bracket: F decreases in lambda since every n >= 1
    double lo = lam - 1, hi = lam + 1;
    for (int k = 0; shape_F(f, xi, lo) <= 0; ++k) {
        lo -= std::ldexp(1.0, k);
        if (k > 60) throw Error("NewtonDivergence", "no lower bracket");
    }
    for (int k = 0; shape_F(f, xi, hi) >= 0; ++k) {
        hi += std::ldexp(1.0, k);
        if (k > 60) throw Error("NewtonDivergence", "no upper bracket");
    }
    if (lam <= lo || lam >= hi) lam = 0.5 * (lo + hi);
    bool polished = false;
    for (int it = 0; it < 300; ++it) {
        Moments m = tilted_moments(f, xi, lam);
        sp.iterations = it + 1;
        if (m.F > 0)
            lo = lam;
        else
            hi = lam;
        if (std::abs(m.F) <= tol) {
            // one more Newton step takes lambda to rounding level (finite differences need it)
            if (polished || m.F == 0) break;
            polished = true;
        }
        double next = lam + m.F / m.ET;  // F_lambda = -E T
        if (!(next > lo && next < hi)) {
            next = 0.5 * (lo + hi);
            sp.used_bisection = true;
        }
        if (next == lam) break;
        lam = next;
    }
    sp.lambda = lam;
    fill_derivatives(f, sp);
    if (sp.residual > tol) throw Error("NewtonDivergence", "shape equation residual " + std::to_string(sp.residual));
    return sp;
}

std::vector<ShapePoint> solve_shape_grid(const RenewalKernel& f, const std::vector<RVec>& xis, double tol) {
    std::vector<ShapePoint> out;
    double guess = kInf;
    for (const auto& xi : xis) {
        out.push_back(solve_shape(f, xi, guess, tol));
        guess = out.back().lambda;
    }
    return out;
}

std::array<double, 16> shape_hessian_fd(const RenewalKernel& f, const RVec& xi, double h) {
    std::array<double, 16> H{};
    auto lam = [&](int a, double sa, int b, double sb) {
        RVec p = xi;
        p[a] += sa;
        p[b] += sb;
        return solve_shape(f, p).lambda;
    };
    const double l0 = solve_shape(f, xi).lambda;
    for (int a = 0; a < f.d; ++a) {
        H[a * kMaxDim + a] = (lam(a, h, a, 0) - 2 * l0 + lam(a, -h, a, 0)) / (h * h);
        for (int b = a + 1; b < f.d; ++b) {
            double v = (lam(a, h, b, h) - lam(a, h, b, -h) - lam(a, -h, b, h) + lam(a, -h, b, -h)) / (4 * h * h);
            H[a * kMaxDim + b] = H[b * kMaxDim + a] = v;
        }
    }
    return H;
}

RenewalKernel tilt_kernel(const RenewalKernel& f, const RVec& xi) {
    const double lam = solve_shape(f, xi).lambda;
    RenewalKernel g = f;
    for (auto& e : g.entries) e.f = e.f * std::exp(dot(xi, e.x) - lam * e.n);
    if (std::isfinite(g.tail_nu)) g.tail_nu -= norm2(xi);
    return g;
}

// ---------------------------------------------------------------- conditional laws

std::vector<PointMass> conditional_law(const RenewalArray& t, int n) {
    double tn = t.t_n(n);
    if (!(tn > 0)) throw Error("ZeroMass", "t(n) = 0 at n = " + std::to_string(n));
    std::vector<PointMass> q;
    const Box& b = t.boxes[n];
    for (std::size_t i = 0; i < t.slices[n].size(); ++i)
        if (t.slices[n][i] > 0) q.push_back({b.point(i), t.slices[n][i] / tn});
    return q;
}

RVec conditional_mean(const RenewalArray& t, int n) {
    RVec m{};
    for (const auto& pm : conditional_law(t, n))
        for (int c = 0; c < t.d; ++c) m[c] += pm.q * pm.x[c];
    return m;
}

namespace {
Eigen::MatrixXd to_matrix(const std::array<double, 16>& h, int d) {
    Eigen::MatrixXd M(d, d);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) M(a, b) = h[a * kMaxDim + b];
    return M;
}
}  // namespace

LocalCltReport verify_local_clt(const RenewalArray& t, const RenewalKernel& f, const ShapePoint& at_zero,
                                const std::vector<int>& n_list, double radius) {
    LocalCltReport rep;
    const int d = t.d;
    LatticeInfo lat = kernel_lattice(f);
    rep.period = lat.period;
    Eigen::MatrixXd Xi = to_matrix(at_zero.hess, d);
    Eigen::LLT<Eigen::MatrixXd> llt(Xi);
    if (!lat.full_rank() || llt.info() != Eigen::Success || Xi.determinant() < 1e-10) {
        rep.degenerate = true;
        return rep;
    }
    const double det = Xi.determinant();
    Eigen::MatrixXd inv = Xi.inverse();
    for (int n : n_list) {
        LocalCltRow row;
        row.n = n;
        const double tn = t.t_n(n);
        if (!(tn > 0)) throw Error("ZeroMass", "t(n) = 0 at n = " + std::to_string(n));
        RVec vn = scaled(conditional_mean(t, n), 1.0 / n);
        const double pref = lat.period * std::pow(kTwoPi * n, -0.5 * d) / std::sqrt(det);
        const Box& b = t.boxes[n];
        for (std::size_t i = 0; i < b.volume(); ++i) {
            Vec x = b.point(i);
            Eigen::VectorXd y(d);
            for (int c = 0; c < d; ++c) y[c] = x[c] - n * vn[c];
            if (y.norm() > radius * std::sqrt(static_cast<double>(n))) continue;
            if (!lat.reachable(x, n, d)) continue;
            double pred = pref * std::exp(-0.5 * y.dot(inv * y) / n);
            double q = t.slices[n][i] / tn;
            row.max_rel_dev = std::max(row.max_rel_dev, std::abs(q / pred - 1));
            ++row.points;
        }
        rep.rows.push_back(row);
    }
    return rep;
}

ShapePoint solve_velocity(const RenewalKernel& f, const RVec& u, double tol) {
    const int d = f.d;
    RVec xi{};
    ShapePoint sp = solve_shape(f, xi);
    auto err = [&](const ShapePoint& p) {
        double s = 0;
        for (int c = 0; c < d; ++c) s += (p.grad[c] - u[c]) * (p.grad[c] - u[c]);
        return std::sqrt(s);
    };
    double e = err(sp);
    for (int it = 0; it < 200 && e > tol; ++it) {
        Eigen::MatrixXd H = to_matrix(sp.hess, d);
        Eigen::VectorXd r(d);
        for (int c = 0; c < d; ++c) r[c] = u[c] - sp.grad[c];
        Eigen::FullPivLU<Eigen::MatrixXd> lu(H);
        if (!lu.isInvertible()) throw Error("OutsideLocalDomain", "singular Hessian while solving for velocity");
        Eigen::VectorXd step = lu.solve(r);
        double t = 1;
        bool moved = false;
        for (int k = 0; k < 60; ++k, t *= 0.5) {
            RVec trial = xi;
            for (int c = 0; c < d; ++c) trial[c] += t * step[c];
            if (norm2(trial) >= f.tail_nu - 1e-6) continue;
            ShapePoint cand;
            try {
                cand = solve_shape(f, trial, sp.lambda);
            } catch (const Error&) {
                continue;
            }
            double ce = err(cand);
            if (ce < e) {
                xi = trial;
                sp = cand;
                e = ce;
                moved = true;
                break;
            }
        }
        if (!moved) break;
    }
    if (!(e <= std::max(tol, 1e-10)))
        throw Error("OutsideLocalDomain", "velocity not in the image of grad lambda (residual " + std::to_string(e) + ")");
    return sp;
}

LocalLd local_ld(const RenewalKernel& f, const RenewalArray& t, const RVec& u, int n) {
    const int d = f.d;
    LocalLd r;
    Vec x{};
    for (int c = 0; c < d; ++c) {
        x[c] = static_cast<int>(std::floor(n * u[c] + 1e-9));
        r.u_n[c] = static_cast<double>(x[c]) / n;
    }
    ShapePoint s0 = solve_shape(f, RVec{});
    ShapePoint sp = solve_velocity(f, r.u_n);
    r.xi_n = sp.xi;
    r.J = dot(sp.xi, r.u_n) - sp.lambda;
    const double tn = t.t_n(n);
    if (!(tn > 0)) throw Error("ZeroMass", "t(n) = 0 at n = " + std::to_string(n));
    r.q_exact = t.t(x, n) / tn;
    LatticeInfo lat = kernel_lattice(f);
    Eigen::MatrixXd Xi = to_matrix(sp.hess, d);
    if (lat.full_rank() && lat.reachable(x, n, d)) {
        // lambda(0) enters through t(n) ~ e^{n lambda(0)} / mu(0) for sub-probability kernels
        r.q_predicted = lat.period * (s0.mu / sp.mu) * std::pow(kTwoPi * n, -0.5 * d) / std::sqrt(Xi.determinant()) *
                        std::exp(-n * (r.J + s0.lambda));
    }
    r.rel_error = r.q_exact > 0 ? std::abs(r.q_predicted / r.q_exact - 1) : (r.q_predicted == 0 ? 0 : kInf);
    if (d == 1) r.J_dual = rate_dual_1d(f, r.u_n[0]);
    return r;
}

double rate_dual_1d(const RenewalKernel& f, double u) {
    if (f.d != 1) throw Error("BadDimension", "dual rate formula implemented for d = 1");
    auto lam = [&](double xi) { return solve_shape(f, RVec{xi, 0, 0, 0}).lambda; };
    auto slope = [&](double xi) { return solve_shape(f, RVec{xi, 0, 0, 0}).grad[0]; };
    // minimiser of the convex lambda
    double a = -1, b = 1;
    const double cap = std::isfinite(f.tail_nu) ? f.tail_nu - 1e-6 : 50.0;
    while (slope(a) > 0 && a > -cap) a = std::max(2 * a, -cap);
    while (slope(b) < 0 && b < cap) b = std::min(2 * b, cap);
    for (int k = 0; k < 200 && b - a > 1e-14; ++k) {
        double m = 0.5 * (a + b);
        (slope(m) > 0 ? b : a) = m;
    }
    const double xi_min = 0.5 * (a + b), lam_min = lam(xi_min);
    if (u == 0) return -lam_min;
    const double sgn = u > 0 ? 1 : -1;
    // xi_edge(l): the end of {lambda <= l} on the side of u
    auto edge = [&](double l) {
        double lo = xi_min, hi = xi_min + sgn;
        while (lam(hi) < l && std::abs(hi) < cap) hi = xi_min + 2 * (hi - xi_min);
        for (int k = 0; k < 200 && std::abs(hi - lo) > 1e-15; ++k) {
            double m = 0.5 * (lo + hi);
            (lam(m) <= l ? lo : hi) = m;
        }
        return 0.5 * (lo + hi);
    };
    auto g = [&](double l) { return u * edge(l) - l; };
    // g is concave in l; golden section on an expanding bracket
    double L0 = lam_min, L1 = lam_min + 1;
    while (g(L1) > g(0.5 * (L0 + L1)) && L1 - lam_min < 1e3) L1 = lam_min + 2 * (L1 - lam_min);
    const double phi = 0.5 * (std::sqrt(5.0) - 1);
    double c = L1 - phi * (L1 - L0), e = L0 + phi * (L1 - L0);
    double gc = g(c), ge = g(e);
    for (int k = 0; k < 200 && L1 - L0 > 1e-12; ++k) {
        if (gc < ge) {
            L0 = c;
            c = e;
            gc = ge;
            e = L0 + phi * (L1 - L0);
            ge = g(e);
        } else {
            L1 = e;
            e = c;
            ge = gc;
            c = L1 - phi * (L1 - L0);
            gc = g(c);
        }
    }
    return std::max(gc, ge);
}

CharDecay characteristic_decay(const RenewalArray& t, const RVec& theta, const std::vector<int>& n_list) {
    CharDecay out;
    std::vector<double> xs, ys;
    for (int n : n_list) {
        std::complex<double> s = 0;
        for (const auto& pm : conditional_law(t, n)) s += pm.q * std::polar(1.0, dot(theta, pm.x));
        double m = std::abs(s);
        out.modulus.push_back(m);
        if (m > 1e-300) {
            xs.push_back(n);
            ys.push_back(std::log(m));
        }
    }
    if (xs.size() >= 2) {
        double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / xs.size();
        double my = std::accumulate(ys.begin(), ys.end(), 0.0) / ys.size();
        double sxy = 0, sxx = 0;
        for (std::size_t i = 0; i < xs.size(); ++i) {
            sxy += (xs[i] - mx) * (ys[i] - my);
            sxx += (xs[i] - mx) * (xs[i] - mx);
        }
        out.rate = -sxy / sxx;
    }
    return out;
}

std::string array_to_csv(const RenewalArray& t) {
    std::string out = "n";
    for (int c = 0; c < t.d; ++c) out += ",x" + std::to_string(c + 1);
    out += ",t\n";
    char buf[40];
    for (int n = 0; n <= t.n_max; ++n) {
        if (!t.nonempty[n]) continue;
        const Box& b = t.boxes[n];
        for (std::size_t i = 0; i < t.slices[n].size(); ++i) {
            if (t.slices[n][i] == 0) continue;
            Vec x = b.point(i);
            out += std::to_string(n);
            for (int c = 0; c < t.d; ++c) out += ',' + std::to_string(x[c]);
            std::snprintf(buf, sizeof buf, ",%.17g\n", t.slices[n][i]);
            out += buf;
        }
    }
    return out;
}

std::string shape_table_csv(const std::vector<ShapePoint>& pts, int d) {
    std::string out;
    for (int c = 0; c < d; ++c) out += (c ? ",xi" : "xi") + std::to_string(c + 1);
    out += ",lambda";
    for (int c = 0; c < d; ++c) out += ",grad" + std::to_string(c + 1);
    for (int a = 0; a < d; ++a)
        for (int b = 0; b < d; ++b) out += ",Xi" + std::to_string(a + 1) + std::to_string(b + 1);
    out += ",mu\n";
    char buf[40];
    auto put = [&](double v, bool first = false) {
        std::snprintf(buf, sizeof buf, first ? "%.17g" : ",%.17g", v);
        out += buf;
    };
    for (const auto& p : pts) {
        for (int c = 0; c < d; ++c) put(p.xi[c], c == 0);
        put(p.lambda);
        for (int c = 0; c < d; ++c) put(p.grad[c]);
        for (int a = 0; a < d; ++a)
            for (int b = 0; b < d; ++b) put(p.hess[a * kMaxDim + b]);
        put(p.mu);
        out += '\n';
    }
    return out;
}

}  // namespace rpoly
