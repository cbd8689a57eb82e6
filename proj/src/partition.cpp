#include "rpoly/partition.hpp"

#include <cmath>
#include <numeric>
#include <unordered_map>

#include "rpoly/parallel.hpp"

namespace rpoly {

void PolymerModel::validate() const {
    law.validate();
    if (!(lambda >= 0)) throw Error("BadModel", "killing rate must be >= 0");
    for (double c : h)
        if (!std::isfinite(c)) throw Error("BadModel", "drift must be finite");
}

std::vector<double> annealed_multipliers(const PotentialLaw& law, int max_count) {
    std::vector<double> mult(max_count + 1);
    double prev = 0;
    for (int c = 0; c <= max_count; ++c) {
        double cur = phi_beta(law, c + 1);
        mult[c] = (cur == kInf) ? 0.0 : std::exp(-(cur - prev));
        prev = cur;
        if (cur == kInf) {
            for (int k = c + 1; k <= max_count; ++k) mult[k] = 0.0;
            break;
        }
    }
    return mult;
}

// ---------------------------------------------------------------- quenched

double QuenchedResult::log_endpoint(const Vec& x) const {
    if (!box.contains(x)) return kNegInf;
    double v = table.at(box.index(x));
    return v > 0 ? std::log(v) + log_scale : kNegInf;
}

namespace {

Box reach_box(const StepDistribution& steps, int n) { return Box::centered(steps.d, std::max(n, 0) * steps.range); }

void check_coverage(const EnvironmentField& env, const Box& need) {
    const Box& r = env.region();
    if (r.d != need.d) throw Error("EnvironmentCoverage", "dimension mismatch");
    for (int k = 0; k < need.d; ++k)
        if (r.lo[k] > need.lo[k] || r.hi[k] < need.hi[k])
            throw Error("EnvironmentCoverage", "environment region does not contain the reachable box");
}

std::vector<std::ptrdiff_t> step_offsets(const StepDistribution& steps, const Box& box) {
    std::vector<std::ptrdiff_t> off;
    for (const Vec& s : steps.steps) {
        // index difference is translation invariant inside the box
        Vec c{};
        for (int k = 0; k < box.d; ++k) c[k] = (box.lo[k] + box.hi[k]) / 2;
        off.push_back(static_cast<std::ptrdiff_t>(box.index(c + s)) - static_cast<std::ptrdiff_t>(box.index(c)));
    }
    return off;
}

}  // namespace

QuenchedResult quenched_partition(const PolymerModel& model, const EnvironmentField& env, int n, bool keep_table) {
    if (n < 0) throw Error("BadLength", "n < 0");
    const StepDistribution& S = model.steps;
    QuenchedResult res;
    res.box = reach_box(S, n);
    check_coverage(env, res.box);
    const Box& box = res.box;
    const std::size_t V = box.volume();

    std::vector<double> w(V);
    for (std::size_t i = 0; i < V; ++i) w[i] = env.weight(box.point(i));
    std::vector<double> stepw(S.size());
    for (std::size_t j = 0; j < S.size(); ++j) stepw[j] = S.prob[j] * std::exp(dot(model.h, S.steps[j]) - model.lambda);

    std::vector<double> cur(V, 0.0), nxt(V, 0.0);
    cur[box.index(Vec{})] = 1.0;
    double log_scale = 0;
    // the active set grows by one range per step
    for (int i = 1; i <= n; ++i) {
        std::fill(nxt.begin(), nxt.end(), 0.0);
        const int r_prev = (i - 1) * S.range;
        Box src = Box::centered(S.d, r_prev);
        const std::size_t Vs = src.volume();
        for (std::size_t a = 0; a < Vs; ++a) {
            Vec x = src.point(a);
            double m = cur[box.index(x)];
            if (m == 0) continue;
            for (std::size_t j = 0; j < S.size(); ++j) {
                std::size_t y = box.index(x + S.steps[j]);
                nxt[y] += m * stepw[j];
            }
        }
        double mx = 0;
        for (std::size_t a = 0; a < V; ++a) {
            nxt[a] *= w[a];
            mx = std::max(mx, nxt[a]);
        }
        if (mx == 0) {
            res.log_z = kNegInf;
            res.log_scale = 0;
            if (keep_table) res.table.assign(V, 0.0);
            return res;
        }
        for (double& v : nxt) v /= mx;
        log_scale += std::log(mx);
        std::swap(cur, nxt);
    }
    double total = 0;
    for (double v : cur) total += v;
    res.log_z = std::log(total) + log_scale;
    res.log_scale = log_scale;
    if (keep_table) res.table = std::move(cur);
    return res;
}

double quenched_partition_enumerated(const PolymerModel& model, const EnvironmentField& env, int n) {
    double total = 0;
    enumerate_paths(
        model.steps, n,
        [&](const LatticePath& p, double prob) {
            double w = prob * std::exp(dot(model.h, p.end()) - model.lambda * n);
            for (std::size_t i = 1; i < p.v.size() && w > 0; ++i) w *= env.weight(p.v[i]);
            total += w;
        },
        100'000'000ULL);
    return total > 0 ? std::log(total) : kNegInf;
}

// ---------------------------------------------------------------- annealed exact

double AnnealedTables::log_z(int n, const RVec& h) const {
    const auto& t = z.at(n);
    double m = kNegInf;
    for (std::size_t i = 0; i < t.size(); ++i)
        if (t[i] > 0) m = log_add(m, std::log(t[i]) + dot(h, box.point(i)));
    return m;
}

double AnnealedTables::z_at(int n, const Vec& x) const {
    if (!box.contains(x)) return 0;
    return z.at(n)[box.index(x)];
}

double AnnealedTables::zhat_at(int n, const Vec& x) const {
    if (zhat.empty()) throw Error("NotComputed", "first-hitting tables were not requested");
    if (!box.contains(x)) return 0;
    return zhat.at(n)[box.index(x)];
}

RVec AnnealedTables::mean_displacement(int n, const RVec& h) const {
    const auto& t = z.at(n);
    const double lz = log_z(n, h);
    RVec m{};
    for (std::size_t i = 0; i < t.size(); ++i) {
        if (t[i] <= 0) continue;
        Vec x = box.point(i);
        double p = std::exp(std::log(t[i]) + dot(h, x) - lz);
        for (int k = 0; k < d; ++k) m[k] += p * x[k];
    }
    return m;
}

double AnnealedTables::ratio_free_energy(const RVec& h) const {
    if (N < 1) throw Error("BadLength", "ratio estimator needs N >= 1");
    return log_z(N, h) - log_z(N - 1, h);
}

namespace {

struct DfsState {
    int N;
    const std::vector<std::ptrdiff_t>* off;
    const std::vector<double>* p;
    const std::vector<double>* mult;
    std::vector<int> count;
    std::vector<std::vector<double>>* z;
    std::vector<std::vector<double>>* zhat;

    void run(int depth, std::ptrdiff_t cell, double w) {
        (*z)[depth][cell] += w;
        if (zhat && depth > 0 && count[cell] == 1) (*zhat)[depth][cell] += w;
        if (depth == N) return;
        const auto& o = *off;
        const auto& pr = *p;
        const auto& mu = *mult;
        const std::size_t S = o.size();
        if (depth + 1 == N && !zhat) {
            auto& zl = (*z)[N];
            for (std::size_t j = 0; j < S; ++j) {
                std::ptrdiff_t c2 = cell + o[j];
                zl[c2] += w * pr[j] * mu[count[c2]];
            }
            return;
        }
        for (std::size_t j = 0; j < S; ++j) {
            std::ptrdiff_t c2 = cell + o[j];
            int c = count[c2];
            double w2 = w * pr[j] * mu[c];
            if (w2 == 0) continue;
            count[c2] = c + 1;
            run(depth + 1, c2, w2);
            count[c2] = c;
        }
    }
};

}  // namespace

AnnealedTables annealed_tables(const StepDistribution& steps, const PotentialLaw& law, int N,
                               const EnumerationOptions& opt) {
    if (N < 0) throw Error("BadLength", "N < 0");
    double nodes = 0, layer = 1;
    for (int n = 0; n <= N; ++n) {
        nodes += layer;
        layer *= steps.size();
    }
    if (nodes > static_cast<double>(opt.cap))
        throw Error("EnumerationCapExceeded", "about " + std::to_string(nodes) + " tree nodes");

    AnnealedTables T;
    T.d = steps.d;
    T.N = N;
    T.box = Box::centered(steps.d, N * steps.range);
    const std::size_t V = T.box.volume();
    const auto off = step_offsets(steps, T.box);
    const auto mult = annealed_multipliers(law, N + 1);
    const std::ptrdiff_t origin = T.box.index(Vec{});
    const std::size_t S = steps.size();

    T.z.assign(N + 1, std::vector<double>(V, 0.0));
    if (opt.first_hit) T.zhat.assign(N + 1, std::vector<double>(V, 0.0));
    T.z[0][origin] = 1.0;
    if (N == 0) return T;

    // split by two-step prefixes; every worker owns its tables, reduced in prefix order
    const int pre = N >= 2 ? 2 : 1;
    std::size_t items = pre == 2 ? S * S : S;
    struct Part {
        std::vector<std::vector<double>> z, zhat;
    };
    std::vector<Part> parts(items);
    parallel_for(items, opt.threads, [&](std::size_t it) {
        Part& part = parts[it];
        part.z.assign(N + 1, std::vector<double>(V, 0.0));
        if (opt.first_hit) part.zhat.assign(N + 1, std::vector<double>(V, 0.0));
        DfsState st{N, &off, &steps.prob, &mult, std::vector<int>(V, 0), &part.z, opt.first_hit ? &part.zhat : nullptr};
        std::size_t j1 = pre == 2 ? it / S : it;
        std::ptrdiff_t c1 = origin + off[j1];
        double w1 = steps.prob[j1] * mult[0];
        if (w1 == 0) return;
        st.count[c1] = 1;
        if (pre == 1) {
            st.run(1, c1, w1);
            return;
        }
        std::size_t j2 = it % S;
        std::ptrdiff_t c2 = c1 + off[j2];
        int c = st.count[c2];
        double w2 = w1 * steps.prob[j2] * mult[c];
        if (w2 == 0) return;
        st.count[c2] = c + 1;
        st.run(2, c2, w2);
    });
    // depth-1 layer when split at depth 2
    if (pre == 2) {
        for (std::size_t j = 0; j < S; ++j) {
            std::ptrdiff_t c1 = origin + off[j];
            T.z[1][c1] += steps.prob[j] * mult[0];
            if (opt.first_hit) T.zhat[1][c1] += steps.prob[j] * mult[0];
        }
    }
    for (const Part& part : parts) {
        for (int n = 1; n <= N; ++n) {
            for (std::size_t i = 0; i < V; ++i) T.z[n][i] += part.z[n][i];
            if (opt.first_hit)
                for (std::size_t i = 0; i < V; ++i) T.zhat[n][i] += part.zhat[n][i];
        }
    }
    return T;
}

double annealed_partition_exact(const PolymerModel& model, int n, const EnumerationOptions& opt) {
    AnnealedTables T = annealed_tables(model.steps, model.law, n, opt);
    return T.log_z(n, model.h) - model.lambda * n;
}

double annealed_log_weight(const StepDistribution& steps, const PotentialLaw& law, const LatticePath& path) {
    double p = path_probability(steps, path);
    if (p <= 0) return kNegInf;
    double phi = 0;
    for (const auto& [x, c] : local_time_profile(path)) {
        double f = phi_beta(law, c);
        if (f == kInf) return kNegInf;
        phi += f;
    }
    return std::log(p) - phi;
}

// ---------------------------------------------------------------- annealed MC

namespace {

std::uint64_t pack_site(const Vec& x) {
    std::uint64_t k = 0;
    for (int i = 0; i < kMaxDim; ++i) k = (k << 16) | (static_cast<std::uint64_t>(x[i] + 32768) & 0xffff);
    return k;
}

struct Walker {
    Vec pos{};
    int step = 0;
    double w = 1;
    std::unordered_map<std::uint64_t, int> lt;
};

std::size_t draw_step(const StepDistribution& S, double u) {
    std::size_t j = 0;
    double acc = S.prob[0];
    while (u >= acc && j + 1 < S.size()) acc += S.prob[++j];
    return j;
}

// advances one step from P_d and multiplies in e^{h.dX - lambda} e^{-(phi(l+1)-phi(l))}
void advance(Walker& wk, const PolymerModel& m, const std::vector<double>& mult, Rng& rng) {
    std::size_t j = draw_step(m.steps, rng.uniform());
    wk.pos = wk.pos + m.steps.steps[j];
    int& c = wk.lt[pack_site(wk.pos)];
    double f = c < static_cast<int>(mult.size()) ? mult[c] : mult.back();
    ++c;
    wk.w *= f * std::exp(dot(m.h, m.steps.steps[j]) - m.lambda);
    ++wk.step;
}

double plain_tour(const PolymerModel& m, int n, const std::vector<double>& mult, Rng& rng,
                  std::vector<double>* level_sums) {
    Walker wk;
    for (int i = 0; i < n && wk.w > 0; ++i) {
        advance(wk, m, mult, rng);
        if (level_sums) (*level_sums)[i + 1] += wk.w;
    }
    return wk.step == n ? wk.w : 0.0;
}

// Pruned-enriched tour: above hi[i] a walker splits into two with half weight,
// below lo[i] it survives with probability 1/2 and doubled weight. Both moves
// preserve the expected total weight, so the tour total is unbiased for Z_n.
double enriched_tour(const PolymerModel& m, int n, const std::vector<double>& mult, Rng& rng,
                     const std::vector<double>& lo, const std::vector<double>& hi) {
    double total = 0;
    std::vector<Walker> stack;
    stack.push_back(Walker{});
    std::size_t guard = 0;
    while (!stack.empty()) {
        Walker wk = std::move(stack.back());
        stack.pop_back();
        while (wk.step < n && wk.w > 0) {
            advance(wk, m, mult, rng);
            const int i = wk.step;
            if (wk.w > hi[i] && stack.size() < 4096) {
                wk.w *= 0.5;
                stack.push_back(wk);
            } else if (wk.w < lo[i]) {
                if (rng.uniform() < 0.5)
                    wk.w = 0;
                else
                    wk.w *= 2;
            }
        }
        if (wk.step == n) total += wk.w;
        if (++guard > 10'000'000) throw Error("DegenerateWeights", "enrichment tree exploded");
    }
    return total;
}

}  // namespace

MCEstimate annealed_partition_mc(const PolymerModel& model, int n, std::size_t chains, std::uint64_t seed,
                                 const MCOptions& opt) {
    if (n < 1) throw Error("BadLength", "n >= 1 required");
    if (chains < 2) throw Error("BadArgument", "chains >= 2 required");
    const auto mult = annealed_multipliers(model.law, n + 1);

    std::vector<double> lo(n + 1, 0.0), hi(n + 1, kInf);
    if (opt.enrichment) {
        // pilot on a separate stream fixes the thresholds before any tour runs
        std::vector<double> sums(n + 1, 0.0);
        const std::size_t pilot = std::max<std::size_t>(1000, chains / 10);
        Rng prng(seed, 0xfeedULL);
        for (std::size_t c = 0; c < pilot; ++c) plain_tour(model, n, mult, prng, &sums);
        for (int i = 1; i <= n; ++i) {
            double zi = sums[i] / pilot;
            lo[i] = zi / 4;
            hi[i] = zi > 0 ? 4 * zi : kInf;
        }
    }
    std::vector<double> w(chains);
    parallel_for(chains, opt.threads, [&](std::size_t c) {
        Rng rng(seed, c + 1);
        w[c] = opt.enrichment ? enriched_tour(model, n, mult, rng, lo, hi) : plain_tour(model, n, mult, rng, nullptr);
    });
    MCEstimate est;
    est.chains = chains;
    double s = 0, s2 = 0;
    for (double v : w) {
        s += v;
        s2 += v * v;
    }
    est.mean = s / chains;
    double var = std::max(0.0, s2 / chains - est.mean * est.mean) * chains / (chains - 1.0);
    est.stderr_ = std::sqrt(var / chains);
    est.ess = s2 > 0 ? s * s / s2 : 0;
    if (est.ess < opt.ess_floor)
        throw Error("DegenerateWeights", "effective sample size " + std::to_string(est.ess));
    return est;
}

// ---------------------------------------------------------------- two-point

TwoPointResult two_point_from_tables(const AnnealedTables& t, double lambda, const Vec& x) {
    if (!(lambda > 0)) throw Error("LambdaNonpositive", "truncation needs lambda > 0");
    TwoPointResult r;
    for (int n = 0; n <= t.N; ++n) {
        double zn = t.z_at(n, x);
        double zh = t.zhat.empty() ? 0 : t.zhat_at(n, x);
        r.zn.push_back(zn);
        r.zhat.push_back(zh);
        double k = std::exp(-lambda * n);
        r.G += k * zn;
        r.H += k * zh;
    }
    // Z_n(x|0) <= Z_n(0) <= 1
    r.truncation_bound = std::exp(-lambda * (t.N + 1)) / (1 - std::exp(-lambda));
    return r;
}

TwoPointResult two_point_functions(const PolymerModel& model, const Vec& x, int n_max, const EnumerationOptions& opt) {
    EnumerationOptions o = opt;
    o.first_hit = true;
    AnnealedTables t = annealed_tables(model.steps, model.law, n_max, o);
    return two_point_from_tables(t, model.lambda, x);
}

// ---------------------------------------------------------------- free energy

FreeEnergyEstimate free_energy_annealed(const PolymerModel& model, const std::vector<int>& ladder,
                                        const EnumerationOptions& opt) {
    if (ladder.empty()) throw Error("BadLadder", "empty ladder");
    for (std::size_t i = 1; i < ladder.size(); ++i)
        if (ladder[i] <= ladder[i - 1]) throw Error("BadLadder", "ladder must increase");
    AnnealedTables T = annealed_tables(model.steps, model.law, ladder.back(), opt);
    FreeEnergyEstimate e;
    e.ladder = ladder;
    for (int n : ladder) {
        double ln = T.log_z(n, model.h) / n;
        e.lambda_n.push_back(ln);
        e.lower = std::max(e.lower, ln);
    }
    e.upper = model.steps.log_mgf(model.h);
    e.extrapolated = ladder.back() >= 1 ? T.ratio_free_energy(model.h) : e.lambda_n.back();
    e.extrapolated = std::min(std::max(e.extrapolated, e.lower), e.upper);
    e.certified = true;
    return e;
}

FreeEnergyEstimate free_energy_quenched(const PolymerModel& model, const std::vector<int>& ladder,
                                        const std::vector<std::uint64_t>& seeds, bool fixed_environment, int threads) {
    if (seeds.size() < 2) throw Error("BadArgument", "need at least two environment seeds");
    FreeEnergyEstimate e;
    e.ladder = ladder;
    const int nmax = ladder.back();
    const Box box = Box::centered(model.steps.d, nmax * model.steps.range);
    for (int n : ladder) {
        std::vector<double> v(seeds.size());
        parallel_for(seeds.size(), threads, [&](std::size_t s) {
            std::uint64_t es = fixed_environment ? seeds[s] : hash_combine(seeds[s], static_cast<std::uint64_t>(n));
            EnvironmentField env = sample_environment(model.law, box, es);
            v[s] = quenched_partition(model, env, n).log_z / n;
        });
        double m = 0, m2 = 0;
        for (double x : v) {
            m += x;
            m2 += x * x;
        }
        m /= v.size();
        double var = std::max(0.0, m2 / v.size() - m * m) * v.size() / (v.size() - 1.0);
        e.lambda_n.push_back(m);
        e.stderr_.push_back(std::sqrt(var / v.size()));
    }
    e.extrapolated = e.lambda_n.back();
    return e;
}

double confined_lower_bound(const StepDistribution& steps, int L) {
    if (L < 1) throw Error("BadArgument", "L >= 1");
    Box box;
    box.d = steps.d;
    for (int k = 0; k < steps.d; ++k) {
        box.lo[k] = 0;
        box.hi[k] = L - 1;
    }
    const std::size_t V = box.volume();
    // power iteration on the lazy operator (I + P)/2, which removes the
    // bipartite -rho eigenvalue; rho is read off from sum ratios
    std::vector<double> u(V, 1.0), nu(V);
    double rho = 0;
    for (int it = 0; it < 200000; ++it) {
        double su = 0, snu = 0;
        for (std::size_t a = 0; a < V; ++a) {
            Vec x = box.point(a);
            double acc = 0;
            for (std::size_t j = 0; j < steps.size(); ++j) {
                Vec y = x + steps.steps[j];
                if (box.contains(y)) acc += steps.prob[j] * u[box.index(y)];
            }
            nu[a] = 0.5 * (u[a] + acc);
            su += u[a];
            snu += nu[a];
        }
        double r = snu / su;
        for (std::size_t a = 0; a < V; ++a) nu[a] /= r;
        std::swap(u, nu);
        bool done = it > 50 && std::abs(r - rho) < 1e-15;
        rho = r;
        if (done) break;
    }
    rho = 2 * rho - 1;
    return std::log(rho);
}

std::vector<double> hammersley_upper_bounds(const std::vector<double>& a, const std::function<double(long)>& b,
                                            long k_max) {
    std::vector<double> out;
    for (std::size_t i = 1; i < a.size(); ++i) {
        const long n = static_cast<long>(i);
        double tail = 0;
        for (long k = 2 * n; k < k_max; ++k) tail += b(k) / (static_cast<double>(k) * (k + 1));
        tail += b(k_max) / static_cast<double>(k_max);
        out.push_back(a[i] / n - b(n) / n + 4 * tail);
    }
    return out;
}

// ---------------------------------------------------------------- point to hyperplane

std::pair<double, double> linear_fit(const std::vector<double>& x, const std::vector<double>& y) {
    const double n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sx += x[i];
        sy += y[i];
        sxx += x[i] * x[i];
        sxy += x[i] * y[i];
    }
    double den = n * sxx - sx * sx;
    if (den == 0) return {sy / n, 0.0};
    double b = (n * sxy - sx * sy) / den;
    return {(sy - b * sx) / n, b};
}

double homogeneous_hyperplane_rate(const StepDistribution& steps, const RVec& normal, double lambda) {
    // log E e^{s normal.X} is convex, zero at s = 0 and increasing for s > 0
    double lo = 0, hi = 1;
    while (steps.log_mgf(scaled(normal, hi)) < lambda) hi *= 2;
    for (int it = 0; it < 200; ++it) {
        double mid = 0.5 * (lo + hi);
        (steps.log_mgf(scaled(normal, mid)) < lambda ? lo : hi) = mid;
    }
    return 0.5 * (lo + hi);
}

HyperplaneResult point_to_hyperplane(const PolymerModel& model, std::uint64_t env_seed, const RVec& normal,
                                     const std::vector<double>& t_ladder, const HyperplaneOptions& opt) {
    if (!(model.lambda > 0)) throw Error("BadArgument", "point-to-hyperplane needs lambda > 0");
    if (norm2(normal) == 0) throw Error("BadArgument", "normal must be nonzero");
    const StepDistribution& S = model.steps;
    HyperplaneResult res;
    const double tmax = t_ladder.empty() ? 0 : *std::max_element(t_ladder.begin(), t_ladder.end());
    const int max_steps = opt.max_steps > 0 ? opt.max_steps : static_cast<int>(std::ceil(40.0 / model.lambda + 4 * tmax));
    const int B = opt.lateral > 0 ? opt.lateral : std::min(max_steps * S.range, static_cast<int>(8 * tmax / std::max(1e-9, norm2(normal)) + 40));
    const Box box = Box::centered(S.d, B);
    const std::size_t V = box.volume();
    EnvironmentField env = sample_environment(model.law, box, env_seed);
    std::vector<double> w(V);
    for (std::size_t i = 0; i < V; ++i) w[i] = env.weight(box.point(i));
    const double kill = std::exp(-model.lambda);

    for (double t : t_ladder) {
        res.t.push_back(t);
        if (t <= 0) {
            res.log_d.push_back(0.0);
            res.leaked.push_back(0.0);
            continue;
        }
        std::vector<double> cur(V, 0.0), nxt(V, 0.0);
        cur[box.index(Vec{})] = 1.0;
        double absorbed = 0, leaked = 0;
        for (int step = 0; step < max_steps; ++step) {
            std::fill(nxt.begin(), nxt.end(), 0.0);
            double live = 0;
            for (std::size_t a = 0; a < V; ++a) {
                double m = cur[a];
                if (m == 0) continue;
                Vec x = box.point(a);
                for (std::size_t j = 0; j < S.size(); ++j) {
                    Vec y = x + S.steps[j];
                    double q = m * S.prob[j] * kill;
                    if (!box.contains(y)) {
                        leaked += q;
                        continue;
                    }
                    std::size_t b = box.index(y);
                    q *= w[b];
                    if (dot(normal, y) >= t)
                        absorbed += q;
                    else
                        nxt[b] += q;
                }
            }
            for (double v : nxt) live += v;
            std::swap(cur, nxt);
            if (live == 0 || live * kill / (1 - kill) < opt.tail_tol * absorbed) break;
        }
        res.log_d.push_back(absorbed > 0 ? std::log(absorbed) : kNegInf);
        res.leaked.push_back(leaked);
    }
    std::vector<double> x, y;
    for (std::size_t i = 0; i < res.t.size(); ++i) {
        if (res.t[i] <= 0 || !std::isfinite(res.log_d[i])) continue;
        x.push_back(1.0 / res.t[i]);
        y.push_back(-res.log_d[i] / res.t[i]);
    }
    if (!x.empty()) {
        auto [a, b] = linear_fit(x, y);
        res.rate = a;
        res.slope = b;
        for (std::size_t i = 0; i < x.size(); ++i) res.residuals.push_back(y[i] - (a + b * x[i]));
    }
    return res;
}

}  // namespace rpoly
