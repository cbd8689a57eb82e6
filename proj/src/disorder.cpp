#include "rpoly/disorder.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "rpoly/parallel.hpp"

namespace rpoly {

namespace {

constexpr std::uint64_t kMixStream = 0x6d6978696e67ULL;
constexpr std::uint64_t kTiltStream = 0x74696c74ULL;

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0;
    return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double stderr_of(const std::vector<double>& v) {
    if (v.size() < 2) return 0;
    double m = mean_of(v), s = 0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / (v.size() - 1) / v.size());
}

// quantile by linear interpolation on the sorted sample; -inf entries are fine
double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    if (v.empty()) return 0;
    double pos = q * (v.size() - 1);
    std::size_t i = static_cast<std::size_t>(std::floor(pos));
    if (i + 1 >= v.size()) return v.back();
    double fr = pos - i;
    if (fr == 0 || v[i] == v[i + 1]) return v[i];
    return v[i] + fr * (v[i + 1] - v[i]);
}

// P(Bin(n, 1/2) >= k)
double binomial_upper_tail(int n, int k) {
    if (k <= 0) return 1;
    double acc = kNegInf;
    for (int j = k; j <= n; ++j) {
        double lc = std::lgamma(n + 1.0) - std::lgamma(j + 1.0) - std::lgamma(n - j + 1.0) - n * std::log(2.0);
        acc = log_add(acc, lc);
    }
    return std::exp(acc);
}

double y_term(const BasicQuenchedTable& t, int l) {
    double y = 0;
    for (const auto& [x, tv] : t.t[l]) {
        const auto& fm = t.f_by_m.at(x);
        y += tv * (std::accumulate(fm.begin(), fm.end(), 0.0) - 1.0);
    }
    return y;
}

}  // namespace

SiteWeight environment_weight(const PotentialLaw& law, std::uint64_t seed) {
    return [law, seed](const Vec& x) { return site_weight(law_quantile(law, site_uniform(seed, x)), law.beta); };
}

std::vector<std::uint64_t> seed_range(std::uint64_t first, int count) {
    std::vector<std::uint64_t> s(std::max(count, 0));
    std::iota(s.begin(), s.end(), first);
    return s;
}

// ---- catalogue ----

double PieceCatalogue::group_annealed(std::size_t g) const {
    const Group& G = groups[g];
    double s = 0;
    for (std::size_t p = G.first; p < G.last; ++p) s += std::exp(log_base[p] + log_phi[p] - lambda * G.m);
    return s;
}

RenewalKernel PieceCatalogue::annealed_kernel() const {
    RenewalKernel k;
    k.d = d;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        double f = group_annealed(g);
        if (f > 0) k.entries.push_back({groups[g].z, groups[g].m, f});
    }
    return k;
}

double PieceCatalogue::annealed_mass(double lam) const {
    double s = 0;
    for (std::size_t p = 0; p < pieces.size(); ++p)
        s += std::exp(log_base[p] + log_phi[p] - lam * (static_cast<int>(pieces[p].v.size()) - 1));
    return s;
}

RVec PieceCatalogue::velocity() const {
    RVec ez{};
    double em = 0;
    for (std::size_t g = 0; g < groups.size(); ++g) {
        double f = group_annealed(g);
        ez = plus(ez, scaled(to_real(groups[g].z), f));
        em += f * groups[g].m;
    }
    return em > 0 ? scaled(ez, 1 / em) : RVec{};
}

PieceCatalogue make_catalogue(const SurchargeGeometry& g, const StepDistribution& steps, const PotentialLaw& law,
                              int m_cap, int threads, const std::optional<RVec>& drift) {
    PieceCatalogue c;
    c.d = g.dim();
    c.m_cap = m_cap;
    c.h = drift.value_or(g.h());
    c.lambda = g.lambda();
    c.law = law;
    c.pieces = irreducible_pieces(g, steps, m_cap, threads, &c.nodes);
    if (c.pieces.empty())
        throw Error("ConeRestrictionInfeasible", "no irreducible piece of length <= " + std::to_string(m_cap));
    auto key = [](const IrreduciblePiece& p) { return std::make_pair(static_cast<int>(p.v.size()) - 1, p.v.back()); };
    std::stable_sort(c.pieces.begin(), c.pieces.end(),
                     [&](const IrreduciblePiece& a, const IrreduciblePiece& b) { return key(a) < key(b); });
    for (std::size_t p = 0; p < c.pieces.size(); ++p) {
        const auto& P = c.pieces[p];
        c.log_base.push_back(P.log_p + dot(c.h, P.v.back()));
        c.log_phi.push_back(annealed_log_weight(steps, law, LatticePath(P.v)) - P.log_p);
        auto k = key(P);
        if (c.groups.empty() || c.groups.back().m != k.first || c.groups.back().z != k.second)
            c.groups.push_back({k.second, k.first, p, p});
        c.groups.back().last = p + 1;
    }
    return c;
}

double normalize_lambda(PieceCatalogue& c, double tol) {
    // log mass is decreasing and convex in lambda
    auto L = [&](double lam) { return std::log(c.annealed_mass(lam)); };
    double lo = c.lambda, hi = c.lambda;
    double step = 0.1;
    while (L(lo) < 0) lo -= step, step *= 2;
    step = 0.1;
    while (L(hi) > 0) hi += step, step *= 2;
    for (int it = 0; it < 200 && hi - lo > tol; ++it) {
        double mid = 0.5 * (lo + hi);
        (L(mid) > 0 ? lo : hi) = mid;
    }
    c.lambda = 0.5 * (lo + hi);
    return c.lambda;
}

// ---- quenched kernel ----

const std::vector<double>& QuenchedKernel::at(const Vec& y) {
    auto it = cache_.find(y);
    if (it != cache_.end()) return it->second;
    std::vector<double> out(c_.groups.size(), 0.0);
    for (std::size_t g = 0; g < c_.groups.size(); ++g) {
        const auto& G = c_.groups[g];
        double s = 0;
        for (std::size_t p = G.first; p < G.last; ++p) {
            const auto& v = c_.pieces[p].v;
            double prod = 1;
            for (std::size_t i = 1; i < v.size() && prod != 0; ++i) prod *= w_(y + v[i]);
            if (prod != 0) s += std::exp(c_.log_base[p] - c_.lambda * G.m) * prod;
        }
        out[g] = s;
    }
    return cache_.emplace(y, std::move(out)).first->second;
}

double QuenchedKernel::total(const Vec& y) {
    const auto& f = at(y);
    return std::accumulate(f.begin(), f.end(), 0.0);
}

// ---- basic quenched table ----

BasicQuenchedTable basic_quenched(const PieceCatalogue& c, const SiteWeight& w, int n_max, std::uint64_t seed) {
    if (c.groups.empty()) throw Error("ConeRestrictionInfeasible", "empty piece catalogue");
    if (n_max < 0) throw Error("BadLength", "n_max < 0");
    BasicQuenchedTable T;
    T.d = c.d;
    T.n_max = n_max;
    T.m_cap = c.m_cap;
    T.h = c.h;
    T.lambda = c.lambda;
    T.beta = c.law.beta;
    T.seed = seed;
    T.approximate = n_max > c.m_cap;
    T.t.assign(n_max + 1, {});
    T.t[0][Vec{}] = 1.0;
    QuenchedKernel K(c, w);
    for (int n = 0; n <= n_max; ++n) {
        for (const auto& [x, tv] : T.t[n]) {
            if (tv == 0) continue;
            const auto& fg = K.at(x);
            if (!T.f_groups.count(x)) {
                T.f_groups[x] = fg;
                std::vector<double> fm(c.m_cap + 1, 0.0);
                for (std::size_t g = 0; g < c.groups.size(); ++g) fm[c.groups[g].m] += fg[g];
                T.f_by_m[x] = std::move(fm);
            }
            for (std::size_t g = 0; g < c.groups.size(); ++g) {
                int m = c.groups[g].m;
                if (n + m > n_max || fg[g] == 0) continue;
                T.t[n + m][x + c.groups[g].z] += tv * fg[g];
            }
        }
    }
    return T;
}

std::vector<double> BasicQuenchedTable::t_n() const {
    std::vector<double> out;
    for (const auto& row : t) {
        double s = 0;
        for (const auto& [x, v] : row) s += v;
        out.push_back(s);
    }
    return out;
}

std::string BasicQuenchedTable::to_csv() const {
    std::ostringstream o;
    o.precision(17);
    o << "n,";
    for (int k = 0; k < d; ++k) o << "x" << k + 1 << ",";
    o << "t\n";
    for (int n = 0; n <= n_max; ++n)
        for (const auto& [x, v] : t[n]) {
            o << n << ",";
            for (int k = 0; k < d; ++k) o << x[k] << ",";
            o << v << "\n";
        }
    return o.str();
}

double renewal_residual(const PieceCatalogue& c, const BasicQuenchedTable& T) {
    double worst = 0;
    for (int n = 1; n <= T.n_max; ++n) {
        double tot_t = 0, tot_pull = 0;
        for (const auto& [x, tv] : T.t[n]) {
            double pull = 0;
            for (std::size_t g = 0; g < c.groups.size(); ++g) {
                int m = c.groups[g].m;
                if (m > n) continue;
                Vec y = x - c.groups[g].z;
                auto it = T.t[n - m].find(y);
                if (it == T.t[n - m].end() || it->second == 0) continue;
                pull += it->second * T.f_groups.at(y)[g];
            }
            tot_t += tv;
            tot_pull += pull;
            worst = std::max(worst, std::abs(tv - pull) / std::max(std::abs(tv), 1e-300));
        }
        worst = std::max(worst, std::abs(tot_t - tot_pull) / std::max(std::abs(tot_t), 1e-300));
    }
    return worst;
}

AnnealedRenewal annealed_renewal(const PieceCatalogue& c, int n_max) {
    AnnealedRenewal a;
    a.f.assign(c.m_cap + 1, 0.0);
    for (std::size_t g = 0; g < c.groups.size(); ++g) a.f[c.groups[g].m] += c.group_annealed(g);
    a.t = renewal_1d(a.f, n_max);
    for (int m = 1; m <= c.m_cap; ++m) {
        a.mu += m * a.f[m];
        a.mass += a.f[m];
    }
    return a;
}

// ---- Sinai ledger ----

double sinai_coefficient(const AnnealedRenewal& a, int n, int l, int m) {
    double inv_mu = 1 / a.mu;
    if (l + m <= n) return a.t[n - l - m] - inv_mu;
    if (l <= n) return -inv_mu;
    return 0;
}

SinaiLedger sinai_ledger(const BasicQuenchedTable& T, const AnnealedRenewal& a) {
    if (std::abs(a.mass - 1) > 1e-9)
        throw Error("KernelMismatch", "annealed kernel mass " + std::to_string(a.mass) + " is not 1");
    if (static_cast<int>(a.t.size()) <= T.n_max) throw Error("KernelMismatch", "annealed t shorter than the table");
    const int N = T.n_max, M = T.m_cap;
    SinaiLedger L;
    L.n_max = N;
    L.mu = a.mu;
    const double inv_mu = 1 / a.mu;
    L.tq = T.t_n();
    L.ta.assign(a.t.begin(), a.t.begin() + N + 1);
    L.A.assign(N + 1, std::vector<double>(M + 1, 0.0));
    L.Y.assign(N + 1, 0.0);
    for (int l = 0; l <= N; ++l) {
        for (const auto& [x, tv] : T.t[l]) {
            const auto& fm = T.f_by_m.at(x);
            for (int m = 1; m <= M; ++m) L.A[l][m] += tv * (fm[m] - a.f[m]);
        }
        L.Y[l] = y_term(T, l);
    }
    L.s.assign(N + 1, 0.0);
    double run = 1;
    for (int n = 0; n <= N; ++n) L.s[n] = (run += L.Y[n]);
    L.eps1.assign(N + 1, 0.0);
    L.eps2.assign(N + 1, 0.0);
    L.eps_coef.assign(N + 1, 0.0);
    L.residual.assign(N + 1, 0.0);
    for (int n = 0; n <= N; ++n) {
        double e1 = 0, e2 = 0, ec = 0;
        for (int l = 0; l <= n; ++l)
            for (int m = 1; m <= M; ++m) {
                const double A = L.A[l][m];
                if (A == 0) continue;
                if (l + m <= n)
                    e1 += A * (a.t[n - l - m] - inv_mu);
                else
                    e2 += A;
                ec += A * sinai_coefficient(a, n, l, m);
            }
        L.eps1[n] = e1;
        L.eps2[n] = e2 * inv_mu;
        L.eps_coef[n] = ec;
        double rhs = L.s[n] * inv_mu + (e1 - L.eps2[n]) + (a.t[n] - inv_mu);
        double scale = std::max({std::abs(L.tq[n]), std::abs(a.t[n]), inv_mu});
        L.residual[n] = std::abs(L.tq[n] - rhs) / scale;
        L.max_residual = std::max(L.max_residual, L.residual[n]);
    }
    // telescoping at n_max
    double tf = 0, flight = 0, tsum = 0;
    for (int l = 0; l <= N; ++l) {
        for (const auto& [x, tv] : T.t[l]) {
            const auto& fm = T.f_by_m.at(x);
            for (int m = 1; m <= M; ++m) {
                tf += tv * fm[m];
                if (l + m > N) flight += tv * fm[m];
            }
        }
        if (l >= 1) tsum += L.tq[l];
    }
    L.telescope_lhs = L.s[N];
    L.telescope_rhs = tf - tsum;
    L.in_flight = flight;
    return L;
}

std::string SinaiLedger::to_csv() const {
    std::ostringstream o;
    o.precision(17);
    o << "n,Y,s,eps1,eps2,t_quenched,t_annealed,residual\n";
    for (int n = 0; n <= n_max; ++n)
        o << n << "," << Y[n] << "," << s[n] << "," << eps1[n] << "," << eps2[n] << "," << tq[n] << "," << ta[n] << ","
          << residual[n] << "\n";
    return o.str();
}

// ---- mixingale diagnostics ----

MixingaleReport mixingale_diagnostics(const PieceCatalogue& c, const std::vector<std::uint64_t>& seeds,
                                      const MixingaleOptions& opt) {
    if (seeds.size() < 2) throw Error("InsufficientSeeds", "need at least 2 seeds");
    if (opt.resamples < 1) throw Error("InsufficientSeeds", "need at least 1 resample");
    const int N = opt.n_max;
    MixingaleReport R;
    R.seeds = static_cast<int>(seeds.size());
    R.resamples = opt.resamples;
    R.ks = opt.ks;
    const RVec v = c.velocity();
    const double vv = dot(v, v);
    R.direction = v;
    const int kn = static_cast<int>(opt.ks.size());

    struct PerSeed {
        std::vector<double> y;
        std::vector<std::vector<double>> cond;  // [ki][l]
    };
    std::vector<PerSeed> out(seeds.size());
    parallel_for(seeds.size(), opt.threads, [&](std::size_t si) {
        const std::uint64_t seed = seeds[si];
        SiteWeight w0 = environment_weight(c.law, seed);
        BasicQuenchedTable T = basic_quenched(c, w0, N, seed);
        PerSeed& P = out[si];
        P.y.resize(N + 1);
        for (int l = 0; l <= N; ++l) P.y[l] = y_term(T, l);
        P.cond.assign(kn, std::vector<double>(N + 1, 0.0));
        // one conditioning slab per m = l - k; each resample gives every l at once
        std::map<int, std::vector<double>> by_m;
        for (int ki = 0; ki < kn; ++ki)
            for (int l = 0; l <= N; ++l) by_m.emplace(l - opt.ks[ki], std::vector<double>());
        for (auto& [m, avg] : by_m) {
            avg.assign(N + 1, 0.0);
            const double cut = m * vv + 1e-9;
            const std::uint64_t base = hash_combine(hash_combine(seed, kMixStream),
                                                    static_cast<std::uint64_t>(static_cast<std::int64_t>(m)));
            for (int r = 0; r < opt.resamples; ++r) {
                const std::uint64_t rs = hash_combine(base, static_cast<std::uint64_t>(r));
                const PotentialLaw& law = c.law;
                SiteWeight wr = [&, rs](const Vec& x) {
                    if (dot(v, x) <= cut) return w0(x);
                    return site_weight(law_quantile(law, site_uniform(rs, x)), law.beta);
                };
                BasicQuenchedTable Tr = basic_quenched(c, wr, N, rs);
                for (int l = 0; l <= N; ++l) avg[l] += y_term(Tr, l);
            }
            for (double& a : avg) a /= opt.resamples;
        }
        for (int ki = 0; ki < kn; ++ki)
            for (int l = 0; l <= N; ++l) {
                double e = by_m.at(l - opt.ks[ki])[l];
                P.cond[ki][l] = e * e;
            }
    });

    R.d2.assign(N + 1, 0.0);
    R.mean_Y.assign(N + 1, 0.0);
    R.cond2.assign(kn, std::vector<double>(N + 1, 0.0));
    const double S = static_cast<double>(seeds.size());
    for (const auto& P : out) {
        for (int l = 0; l <= N; ++l) {
            R.d2[l] += P.y[l] * P.y[l] / S;
            R.mean_Y[l] += P.y[l] / S;
            for (int ki = 0; ki < kn; ++ki) R.cond2[ki][l] += P.cond[ki][l] / S;
        }
    }
    R.degenerate = std::all_of(R.d2.begin(), R.d2.end(), [](double x) { return x < 1e-24; });
    if (!R.degenerate) {
        std::vector<double> lx, ly;
        for (int l = 1; l <= N; ++l)
            if (R.d2[l] > 1e-300) lx.push_back(std::log(l)), ly.push_back(std::log(R.d2[l]));
        if (lx.size() >= 2) R.ell_exponent = linear_fit(lx, ly).second;
        std::vector<double> kx, ky;
        for (int ki = 0; ki < kn; ++ki) {
            double acc = 0;
            int cnt = 0;
            for (int l = 1; l <= N; ++l)
                if (R.d2[l] > 1e-300) acc += R.cond2[ki][l] / R.d2[l], ++cnt;
            if (cnt && acc > 0) kx.push_back(std::log(1.0 + opt.ks[ki])), ky.push_back(std::log(acc / cnt));
        }
        if (kx.size() >= 2) R.k_exponent = linear_fit(kx, ky).second;
        R.summable = R.ell_exponent < -1;
    }
    return R;
}

std::string MixingaleReport::to_json() const {
    nlohmann::json j;
    j["seeds"] = seeds;
    j["resamples"] = resamples;
    j["ks"] = ks;
    j["d2"] = d2;
    j["mean_Y"] = mean_Y;
    j["cond2"] = cond2;
    j["ell_exponent"] = ell_exponent;
    j["k_exponent"] = k_exponent;
    j["summable"] = summable;
    j["degenerate"] = degenerate;
    return j.dump(2);
}

// ---- tilting ----

double psi_clip(double v) { return std::min(v, 1.0); }

double tilt_moment(const PotentialLaw& law, double a, double b) {
    if (law.kind == LawKind::Exponential) {
        const double r = law.rate, c = a - r - b;
        const double head = r * (c == 0 ? 1.0 : std::expm1(c) / c);
        return head + std::exp(a) * r * std::exp(-(r + b)) / (r + b);
    }
    double s = 0;
    for (auto [v, q] : law.atom_list()) {
        if (q <= 0) continue;
        if (v == kInf)
            s += b > 0 ? 0.0 : q * std::exp(a);
        else
            s += q * std::exp(a * psi_clip(v) - b * v);
    }
    return s;
}

double tilt_g(const PotentialLaw& law, double delta) { return std::log(tilt_moment(law, delta, 0)); }

double tilt_density(const PotentialLaw& law, double delta, double v) {
    return std::exp(delta * psi_clip(v) - tilt_g(law, delta));
}

double tilted_phi(const PotentialLaw& law, int ell, double delta) {
    return -std::log(tilt_moment(law, delta, law.beta * ell) / tilt_moment(law, delta, 0));
}

double tilted_quantile(const PotentialLaw& law, double delta, double u) {
    if (delta == 0) return law_quantile(law, u);
    const double Z = tilt_moment(law, delta, 0);
    if (law.kind == LawKind::Exponential) {
        const double r = law.rate, c = r - delta;
        const double head = r * (c == 0 ? 1.0 : -std::expm1(-c) / c);  // unnormalized mass of [0, 1]
        const double target = u * Z;
        if (target <= head) return c == 0 ? target / r : -std::log1p(-target * c / r) / c;
        return (delta - std::log((1 - u) * Z)) / r;
    }
    double acc = 0;
    const auto atoms = law.atom_list();
    for (auto [v, q] : atoms) {
        acc += q * std::exp(delta * psi_clip(v)) / Z;
        if (u < acc) return v;
    }
    for (auto it = atoms.rbegin(); it != atoms.rend(); ++it)
        if (it->second > 0) return it->first;
    return atoms.back().first;
}

double tilt_holder_log_moment(const PotentialLaw& law, double alpha, double delta) {
    const double c = alpha / (1 - alpha);
    return c * tilt_g(law, delta) + tilt_g(law, -c * delta);
}

TiltCheck tilt_checks(const PotentialLaw& law, double alpha, int ell_max, double step) {
    TiltCheck T;
    for (int l = 1; l <= ell_max; ++l) {
        double d = (tilted_phi(law, l, step) - tilted_phi(law, l, -step)) / (2 * step);
        T.dphi.push_back(d);
        if (!(d > 0)) T.dphi_positive = false;
    }
    T.quadratic_first_derivative =
        (tilt_holder_log_moment(law, alpha, step) - tilt_holder_log_moment(law, alpha, -step)) / (2 * step);
    return T;
}

// ---- fractional moments ----

namespace {

// sum over N-fold compositions, returned as the end-point measure
std::map<Vec, double> compose(const PieceCatalogue& c, const SiteWeight& w, int N) {
    QuenchedKernel K(c, w);
    std::map<Vec, double> cur{{Vec{}, 1.0}};
    for (int k = 0; k < N; ++k) {
        std::map<Vec, double> nxt;
        for (const auto& [x, r] : cur) {
            if (r == 0) continue;
            const auto& fg = K.at(x);
            for (std::size_t g = 0; g < c.groups.size(); ++g)
                if (fg[g] != 0) nxt[x + c.groups[g].z] += r * fg[g];
        }
        cur = std::move(nxt);
    }
    return cur;
}

}  // namespace

FractionalMomentRun fractional_moment_experiment(const PieceCatalogue& c, const std::vector<std::uint64_t>& seeds,
                                                 const FractionalOptions& opt) {
    if (!(opt.alpha > 0 && opt.alpha <= 1)) throw Error("BadAlpha", "alpha must lie in (0, 1]");
    if (opt.N < 1) throw Error("BadLength", "N < 1");
    if (seeds.empty()) throw Error("InsufficientSeeds", "no seeds");
    FractionalMomentRun F;
    F.alpha = opt.alpha;
    F.N = opt.N;
    F.seeds = seeds;
    const double a = opt.alpha;
    const int N = opt.N;

    RVec dir = c.velocity();
    const double vn = norm2(dir);
    if (vn > 0) dir = scaled(dir, 1 / vn);
    if (opt.tilt) {
        if (c.d != 2) throw Error("BadDimension", "tilted fractional moments need d = 2");
        if (opt.alpha >= 1) throw Error("BadAlpha", "the Holder step needs alpha < 1");
        F.tilted = true;
        F.delta = opt.delta < 0 ? std::pow(N, -0.55) : opt.delta;
        const double lo = std::log(N) / N, hi = std::pow(N, -0.5 - opt.eps);
        if (!(F.delta > lo && F.delta < hi))
            throw Error("WindowViolation", "delta " + std::to_string(F.delta) + " outside (" + std::to_string(lo) +
                                               ", " + std::to_string(hi) + ")");
        F.g_delta = tilt_g(c.law, F.delta);
        double zmax = 0;
        for (const auto& G : c.groups) zmax = std::max(zmax, dot(dir, G.z));
        F.K = opt.K < 0 ? 2 * zmax + 1 : opt.K;
    }
    const double width = std::pow(N, 0.5 + opt.eps);
    auto in_tube = [&](const Vec& y) {
        double along = dot(dir, y);
        if (along < 0 || along > F.K * N) return false;
        RVec perp = minus(to_real(y), scaled(dir, along));
        return norm2(perp) <= width;
    };
    if (F.tilted) {
        const int R = static_cast<int>(std::ceil(F.K * N)) + 1;
        for (int i = -R; i <= R; ++i)
            for (int j = -R; j <= R; ++j) {
                Vec y{};
                y[0] = i;
                y[1] = j;
                if (in_tube(y)) ++F.tube_sites;
            }
    }

    F.r_total.assign(seeds.size(), 0.0);
    F.r_alpha.assign(seeds.size(), 0.0);
    std::vector<double> tilted(seeds.size(), 0.0);
    parallel_for(seeds.size(), opt.threads, [&](std::size_t si) {
        auto end = compose(c, environment_weight(c.law, seeds[si]), N);
        double tot = 0, sa = 0;
        for (const auto& [x, r] : end) {
            tot += r;
            if (r > 0) sa += std::pow(r, a);
        }
        F.r_total[si] = tot;
        F.r_alpha[si] = sa;
        if (F.tilted) {
            const std::uint64_t ts = hash_combine(seeds[si], kTiltStream);
            const PotentialLaw& law = c.law;
            const double delta = F.delta;
            SiteWeight wt = [&, ts, delta](const Vec& x) {
                if (!in_tube(x)) return 0.0;
                return site_weight(tilted_quantile(law, delta, site_uniform(ts, x)), law.beta);
            };
            auto te = compose(c, wt, N);
            double s = 0;
            for (const auto& [x, r] : te) s += r;
            tilted[si] = s;
        }
    });
    F.mean = mean_of(F.r_alpha);
    F.stderr_ = stderr_of(F.r_alpha);
    double sf = 0;
    for (std::size_t g = 0; g < c.groups.size(); ++g) sf += c.group_annealed(g);
    F.annealed = std::pow(sf, N);
    F.factor = std::pow(F.mean, 1.0 / N);
    F.factor_hi = std::pow(F.mean + 1.6448536269514722 * F.stderr_, 1.0 / N);
    F.below_one = F.factor_hi < 1;
    if (F.tilted) {
        F.tilted_mean = mean_of(tilted);
        F.tilted_stderr = stderr_of(tilted);
        F.log_holder_bound = (1 - a) * F.tube_sites * tilt_holder_log_moment(c.law, a, F.delta) +
                             a * std::log(F.tilted_mean);
    }
    return F;
}

std::string FractionalMomentRun::to_json() const {
    nlohmann::json j;
    j["alpha"] = alpha;
    j["N"] = N;
    j["seeds"] = seeds.size();
    j["seed_first"] = seeds.empty() ? 0 : seeds.front();
    j["mean"] = mean;
    j["stderr"] = stderr_;
    j["annealed"] = annealed;
    j["factor"] = factor;
    j["factor_hi95"] = factor_hi;
    j["below_one"] = below_one;
    if (tilted) {
        j["delta"] = delta;
        j["g_delta"] = g_delta;
        j["K"] = K;
        j["tube_sites"] = tube_sites;
        j["tilted_mean"] = tilted_mean;
        j["tilted_stderr"] = tilted_stderr;
        j["log_holder_bound"] = log_holder_bound;
    }
    return j.dump(2);
}

// ---- strong disorder ratio ----

std::vector<RatioRow> strong_disorder_ratio(const PolymerModel& model, const std::vector<int>& ladder,
                                            const std::vector<std::uint64_t>& seeds, int threads) {
    if (ladder.empty() || seeds.empty()) throw Error("BadConfig", "empty ladder or seed list");
    const int nmax = *std::max_element(ladder.begin(), ladder.end());
    EnumerationOptions eo;
    eo.threads = threads;
    AnnealedTables A = annealed_tables(model.steps, model.law, nmax, eo);
    std::vector<std::vector<double>> lr(seeds.size(), std::vector<double>(ladder.size()));
    parallel_for(seeds.size(), threads, [&](std::size_t si) {
        EnvironmentField env(model.law, Box::centered(model.steps.d, nmax * model.steps.range), seeds[si], true);
        for (std::size_t k = 0; k < ladder.size(); ++k) {
            const int n = ladder[k];
            double q = quenched_partition(model, env, n).log_z;
            double an = A.log_z(n, model.h) - model.lambda * n;
            lr[si][k] = n == 0 ? 0.0 : (q == kNegInf ? kNegInf : (q - an) / n);
        }
    });
    std::vector<RatioRow> rows;
    for (std::size_t k = 0; k < ladder.size(); ++k) {
        RatioRow r;
        r.n = ladder[k];
        for (std::size_t si = 0; si < seeds.size(); ++si) r.log_ratio.push_back(lr[si][k]);
        r.q10 = quantile(r.log_ratio, 0.1);
        r.median = quantile(r.log_ratio, 0.5);
        r.q90 = quantile(r.log_ratio, 0.9);
        std::vector<double> ratio;
        for (double x : r.log_ratio) {
            ratio.push_back(x == kNegInf ? 0.0 : std::exp(x * r.n));
            if (x < 0) ++r.negatives;
        }
        r.mean_ratio = mean_of(ratio);
        r.mean_ratio_stderr = stderr_of(ratio);
        r.sign_p_value = binomial_upper_tail(static_cast<int>(seeds.size()), r.negatives);
        r.negative_99 = r.sign_p_value < 0.01;
        rows.push_back(std::move(r));
    }
    return rows;
}

std::string ratio_rows_csv(const std::vector<RatioRow>& rows) {
    std::ostringstream o;
    o.precision(17);
    o << "n,q10,median,q90,mean_ratio,mean_ratio_stderr,negatives,sign_p_value\n";
    for (const auto& r : rows)
        o << r.n << "," << r.q10 << "," << r.median << "," << r.q90 << "," << r.mean_ratio << ","
          << r.mean_ratio_stderr << "," << r.negatives << "," << r.sign_p_value << "\n";
    return o.str();
}

// ---- covariance locality ----

CovarianceProxy f_block_covariance(const PieceCatalogue& c, const Vec& x, const Vec& y,
                                   const std::vector<std::uint64_t>& seeds, int threads) {
    if (seeds.size() < 2) throw Error("InsufficientSeeds", "need at least 2 seeds");
    CovarianceProxy C;
    std::map<Vec, int> sx;
    for (const auto& p : c.pieces)
        for (std::size_t i = 1; i < p.v.size(); ++i) sx[x + p.v[i]] = 1;
    C.disjoint = true;
    for (const auto& p : c.pieces)
        for (std::size_t i = 1; i < p.v.size() && C.disjoint; ++i)
            if (sx.count(y + p.v[i])) C.disjoint = false;
    std::vector<double> a(seeds.size()), b(seeds.size());
    parallel_for(seeds.size(), threads, [&](std::size_t si) {
        QuenchedKernel K(c, environment_weight(c.law, seeds[si]));
        a[si] = K.total(x);
        b[si] = K.total(y);
    });
    const double ma = mean_of(a), mb = mean_of(b);
    std::vector<double> prod;
    for (std::size_t i = 0; i < a.size(); ++i) prod.push_back((a[i] - ma) * (b[i] - mb));
    const double S = static_cast<double>(a.size());
    C.cov = mean_of(prod) * S / (S - 1);
    C.stderr_ = stderr_of(prod);
    return C;
}

}  // namespace rpoly
