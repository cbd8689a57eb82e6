#include "rpoly/decomposition.hpp"

#include <cmath>
#include <map>
#include <numbers>
#include <unordered_map>

#include <json.hpp>

#include "rpoly/parallel.hpp"

namespace rpoly {

namespace {

constexpr double kPi = std::numbers::pi;

RVec dir2(double t) {
    RVec u{};
    u[0] = std::cos(t);
    u[1] = std::sin(t);
    return u;
}

struct VecHash {
    std::size_t operator()(const Vec& x) const {
        std::uint64_t k = 0;
        for (int v : x) k = hash_combine(k, static_cast<std::uint64_t>(static_cast<std::int64_t>(v)));
        return static_cast<std::size_t>(k);
    }
};

}  // namespace

// ---------------------------------------------------------------- level sets

ConvexBody level_set_body(const std::function<double(const RVec&)>& lambda_fn, double level, int directions,
                          const std::vector<RVec>& extra) {
    if (directions < 8) throw Error("BadArgument", "need at least 8 directions");
    if (!(lambda_fn(RVec{}) < level)) throw Error("Subcritical", "lambda(0) >= level, the level set has empty interior");
    std::vector<RVec> pts(extra);
    for (int k = 0; k < directions; ++k) {
        const RVec u = dir2(2 * kPi * k / directions);
        double lo = 0, hi = 1;
        while (lambda_fn(scaled(u, hi)) <= level) {
            lo = hi;
            hi *= 2;
            if (hi > 1e6) throw Error("Unbounded", "level set unbounded along a ray");
        }
        for (int it = 0; it < 200 && hi - lo > 1e-14 * hi; ++it) {
            const double mid = 0.5 * (lo + hi);
            (lambda_fn(scaled(u, mid)) <= level ? lo : hi) = mid;
        }
        pts.push_back(scaled(u, 0.5 * (lo + hi)));
    }
    return ConvexBody::polytope(2, std::move(pts));
}

PolymerShape polymer_shape(const AnnealedTables& t, const RVec& h, int directions) {
    if (t.d != 2) throw Error("BadDimension", "polymer shape is tabulated in d = 2");
    PolymerShape s;
    s.h = h;
    s.N = t.N;
    s.lambda = t.ratio_free_energy(h);
    if (!(s.lambda > 0)) throw Error("Subcritical", "ratio estimate of lambda(h) is not positive");
    s.K = level_set_body([&t](const RVec& q) { return t.ratio_free_energy(q); }, s.lambda, directions, {h});
    return s;
}

// ---------------------------------------------------------------- surcharge

SurchargeGeometry::SurchargeGeometry(int d, SupportFn tau, const RVec& h, double lambda,
                                     std::array<double, 3> delta, double tol)
    : d_(d), tau_(std::move(tau)), h_(h), lambda_(lambda), delta_(delta), tol_(tol) {
    if (d < 1 || d > kMaxDim) throw Error("BadDimension", "d out of range");
    if (!(0 < delta[0] && delta[0] < delta[1] && delta[1] < delta[2] && delta[2] < 1))
        throw Error("BadCone", "need 0 < delta_1 < delta_2 < delta_3 < 1");
    if (norm2(h) == 0) throw Error("BadDrift", "h = 0 has no surcharge cone");
    if (d == 2) find_sectors();
}

SurchargeGeometry SurchargeGeometry::euclidean(int d, const RVec& h, double lambda, std::array<double, 3> delta) {
    return SurchargeGeometry(d, [](const RVec& x) { return norm2(x); }, scaled(h, 1 / norm2(h)), lambda, delta);
}

SurchargeGeometry SurchargeGeometry::polymer(const PolymerShape& s, std::array<double, 3> delta) {
    ConvexBody K = s.K;
    return SurchargeGeometry(2, [K](const RVec& x) { return K.support(x); }, s.h, s.lambda, delta);
}

SurchargeGeometry SurchargeGeometry::polymer(const StepDistribution& steps, const PotentialLaw& law, const RVec& h,
                                             int N, int threads) {
    EnumerationOptions o;
    o.threads = threads;
    return polymer(polymer_shape(annealed_tables(steps, law, N, o), h));
}

double SurchargeGeometry::tau(const RVec& x) const {
    const double t = tau_(x);
    if (std::isnan(t)) throw Error("DirectionNotTabulated", "tau unavailable in this direction");
    return t;
}

double SurchargeGeometry::surcharge(const RVec& x) const {
    const double t = tau(x);
    const double s = t - dot(h_, x);
    if (s < 0 && s >= -tol_ * std::max(1.0, t)) return 0;
    return s;
}

bool SurchargeGeometry::in_cone(int i, const RVec& y) const {
    if (norm2(y) == 0) return true;
    const double t = tau(y);
    return t - dot(h_, y) <= delta_.at(i - 1) * t + tol_ * t;
}

void SurchargeGeometry::find_sectors() {
    sectors_.clear();
    const int M = 3600;
    for (int i = 0; i < 3; ++i) {
        const double keep = 1 - delta_[i];
        auto g = [&](double th) {
            const RVec u = dir2(th);
            const double t = tau_(u);
            return std::isnan(t) ? kNegInf : dot(h_, u) - keep * t;
        };
        int best = 0;
        double gbest = kNegInf;
        for (int k = 0; k < M; ++k) {
            const double v = g(2 * kPi * k / M);
            if (v > gbest) gbest = v, best = k;
        }
        if (!(gbest > 0)) throw Error("BadCone", "cone Y_" + std::to_string(i + 1) + " has empty interior");
        const double step = 2 * kPi / M, t0 = best * step;
        auto edge = [&](double sign) {
            int k = 1;
            while (g(t0 + sign * k * step) > 0) {
                if (k * step >= kPi) throw Error("BadCone", "cone is not pointed");
                ++k;
            }
            double in = t0 + sign * (k - 1) * step, out = t0 + sign * k * step;
            for (int it = 0; it < 100; ++it) {
                const double mid = 0.5 * (in + out);
                (g(mid) > 0 ? in : out) = mid;
            }
            return 0.5 * (in + out);
        };
        Sector s;
        s.lo = edge(-1);
        s.hi = edge(+1);
        if (s.hi - s.lo >= kPi) throw Error("BadCone", "cone is not pointed");
        sectors_.push_back(s);
    }
}

double SurchargeGeometry::r_lambda(double range) const {
    double m = 0;
    if (d_ == 1) {
        RVec e{};
        e[0] = 1;
        m = std::max(tau(e), tau(scaled(e, -1)));
    } else if (d_ == 2) {
        for (int k = 0; k < 3600; ++k) m = std::max(m, tau(dir2(2 * kPi * k / 3600)));
    } else {
        Rng rng(0x5eed, static_cast<std::uint64_t>(d_));
        for (int k = 0; k < 20000; ++k) {
            RVec u{};
            for (int j = 0; j < d_; ++j) u[j] = 2 * rng.uniform() - 1;
            const double nu = norm2(u);
            if (nu < 1e-3 || nu > 1) continue;
            m = std::max(m, tau(scaled(u, 1 / nu)));
        }
    }
    return range * m;
}

SurchargeGeometry::Report SurchargeGeometry::validate(int directions) const {
    Report r;
    r.directions = directions;
    r.min_surcharge = kInf;
    if (d_ == 2) {
        for (int k = 0; k < directions; ++k) {
            const RVec u = dir2(2 * kPi * k / directions);
            r.min_surcharge = std::min(r.min_surcharge, tau(u) - dot(h_, u));
        }
        // boundary rays of Y_i strictly inside Y_{i+1}
        for (int i = 0; i + 1 < 3; ++i) {
            for (double th : {sectors_[i].lo, sectors_[i].hi}) {
                const RVec u = dir2(th);
                if (!(dot(h_, u) - (1 - delta_[i + 1]) * tau(u) > 0)) r.nested = false;
            }
        }
    } else {
        for (int k = 0; k < d_; ++k)
            for (int s : {-1, 1}) {
                const RVec u = to_real(unit(k, s));
                r.min_surcharge = std::min(r.min_surcharge, tau(u) - dot(h_, u));
            }
    }
    // some lattice vector strictly inside Y_1
    bool found = false;
    const int R = 4;
    Vec x{};
    std::function<void(int)> scan = [&](int k) {
        if (found) return;
        if (k == d_) {
            if (x == Vec{}) return;
            const RVec y = to_real(x);
            const double t = tau(y);
            if (dot(h_, y) - (1 - delta_[0]) * t > 1e-6 * t) found = true;
            return;
        }
        for (int v = -R; v <= R; ++v) {
            x[k] = v;
            scan(k + 1);
        }
        x[k] = 0;
    };
    scan(0);
    r.lattice_direction = found;
    return r;
}

// ---------------------------------------------------------------- cone points

std::vector<int> cone_points_reference(const SurchargeGeometry& g, const LatticePath& path) {
    std::vector<int> out;
    const int n = static_cast<int>(path.length());
    for (int l = 1; l < n; ++l) {
        const Vec& u = path.v[l];
        bool ok = true;
        for (int i = 0; i <= n && ok; ++i) {
            if (i == l) continue;
            const Vec x = path.v[i] - u;
            if (x == Vec{}) ok = false;
            else ok = i < l ? g.in_cone(3, -x) : g.in_cone(3, x);
        }
        if (ok) out.push_back(l);
    }
    return out;
}

namespace {

struct SectorForms {
    RVec a{}, b{};
    double l1(const Vec& x) const { return a[0] * x[1] - a[1] * x[0]; }
    double l2(const Vec& x) const { return x[0] * b[1] - x[1] * b[0]; }
};

SectorForms forms(const SurchargeGeometry& g) {
    const auto& s = g.sector(3);
    return {dir2(s.lo), dir2(s.hi)};
}

constexpr double kSweepEps = 1e-10;

}  // namespace

std::vector<int> cone_points(const SurchargeGeometry& g, const LatticePath& path) {
    if (!g.has_sectors()) return cone_points_reference(g, path);
    const int n = static_cast<int>(path.length());
    std::vector<int> out;
    if (n < 2) return out;
    const SectorForms F = forms(g);
    std::vector<double> a(n + 1), b(n + 1);
    std::unordered_map<Vec, int, VecHash> visits;
    for (int i = 0; i <= n; ++i) {
        a[i] = F.l1(path.v[i]);
        b[i] = F.l2(path.v[i]);
        ++visits[path.v[i]];
    }
    std::vector<double> suf_a(n + 2, kInf), suf_b(n + 2, kInf);
    for (int i = n; i >= 0; --i) {
        suf_a[i] = std::min(suf_a[i + 1], a[i]);
        suf_b[i] = std::min(suf_b[i + 1], b[i]);
    }
    double pre_a = a[0], pre_b = b[0];
    for (int l = 1; l < n; ++l) {
        if (pre_a <= a[l] + kSweepEps && pre_b <= b[l] + kSweepEps && suf_a[l + 1] >= a[l] - kSweepEps &&
            suf_b[l + 1] >= b[l] - kSweepEps && visits[path.v[l]] == 1)
            out.push_back(l);
        pre_a = std::max(pre_a, a[l]);
        pre_b = std::max(pre_b, b[l]);
    }
    return out;
}

// ---------------------------------------------------------------- irreducible split

const char* piece_class_name(PieceClass c) {
    switch (c) {
        case PieceClass::Left: return "left";
        case PieceClass::Middle: return "middle";
        case PieceClass::Right: return "right";
        default: return "whole";
    }
}

LatticePath IrreducibleDecomposition::piece_path(const LatticePath& path, std::size_t i) const {
    return subpath(path, pieces.at(i).begin, pieces.at(i).end);
}

LatticePath IrreducibleDecomposition::reconcatenate(const LatticePath& path) const {
    LatticePath out(std::vector<Vec>{path.v.front()});
    for (std::size_t i = 0; i < pieces.size(); ++i) out = concatenate(out, piece_path(path, i));
    return out;
}

std::string IrreducibleDecomposition::to_json() const {
    nlohmann::json j;
    j["junctions"] = junctions;
    j["pieces"] = nlohmann::json::array();
    for (const auto& p : pieces)
        j["pieces"].push_back({{"begin", p.begin}, {"end", p.end}, {"class", piece_class_name(p.cls)},
                               {"confined", p.confined}});
    return j.dump();
}

IrreducibleDecomposition irreducible_split(const SurchargeGeometry& g, const LatticePath& path) {
    IrreducibleDecomposition dec;
    const int n = static_cast<int>(path.length());
    dec.junctions = cone_points(g, path);
    auto confined = [&](int b, int e, bool from_start, bool to_end) {
        for (int i = b; i <= e; ++i) {
            if (from_start && !g.in_cone(3, path.v[i] - path.v[b])) return false;
            if (to_end && !g.in_cone(3, path.v[e] - path.v[i])) return false;
        }
        return true;
    };
    if (dec.junctions.empty()) {
        dec.pieces.push_back({0, n, PieceClass::Whole, confined(0, n, true, true)});
        return dec;
    }
    std::vector<int> cut{0};
    cut.insert(cut.end(), dec.junctions.begin(), dec.junctions.end());
    cut.push_back(n);
    for (std::size_t k = 0; k + 1 < cut.size(); ++k) {
        Piece p;
        p.begin = cut[k];
        p.end = cut[k + 1];
        const bool first = k == 0, last = k + 2 == cut.size();
        p.cls = first ? PieceClass::Left : last ? PieceClass::Right : PieceClass::Middle;
        p.confined = confined(p.begin, p.end, !first, !last);
        dec.pieces.push_back(p);
    }
    return dec;
}

double polymer_log_weight(const StepDistribution& steps, const PotentialLaw& law, const RVec& h, double lambda,
                          const LatticePath& path) {
    const double w = annealed_log_weight(steps, law, path);
    if (w == kNegInf) return w;
    return w + dot(h, path.displacement()) - lambda * static_cast<double>(path.length());
}

FactorizationCheck check_factorization(const StepDistribution& steps, const PotentialLaw& law, const RVec& h,
                                       double lambda, const LatticePath& path, const IrreducibleDecomposition& dec) {
    FactorizationCheck c;
    c.whole = polymer_log_weight(steps, law, h, lambda, path);
    for (std::size_t i = 0; i < dec.pieces.size(); ++i)
        c.pieces += polymer_log_weight(steps, law, h, lambda, dec.piece_path(path, i));
    if (c.whole == kNegInf || c.pieces == kNegInf)
        c.rel_error = (c.whole == c.pieces) ? 0 : kInf;
    else
        c.rel_error = std::abs(c.whole - c.pieces) / std::max(1.0, std::abs(c.whole));
    return c;
}

// ---------------------------------------------------------------- skeletons

Skeleton build_skeleton(const SurchargeGeometry& g, const LatticePath& path, double K, double range,
                        double min_scale) {
    Skeleton s;
    s.K = K;
    s.r = g.r_lambda(range);
    const double floor = min_scale > 0 ? min_scale : s.r;
    if (!(K >= floor)) throw Error("ScaleTooSmall", "K below the minimum scale " + std::to_string(floor));
    const int n = static_cast<int>(path.length());
    const double slack = 1e-12 * (K + s.r);
    auto dist = [&](int i, const Vec& c) { return g.tau(path.v[i] - c); };

    s.trunk.push_back(path.v[0]);
    s.tau_idx.push_back(0);
    for (;;) {
        const int t = s.tau_idx.back();
        const Vec u = s.trunk.back();
        int sigma = -1;
        for (int i = t + 1; i <= n; ++i)
            if (dist(i, u) > K + slack) {
                sigma = i;
                break;
            }
        if (sigma < 0) break;
        int last = t;
        for (int i = t + 1; i <= n; ++i)
            if (dist(i, u) <= K + s.r + slack) last = i;
        s.sigma_idx.push_back(sigma);
        s.exits.push_back(path.v[sigma]);
        const int next = last + 1;
        if (next > n) {
            s.terminal = true;
            s.trunk.push_back(path.v[n]);
            s.tau_idx.push_back(n);
            break;
        }
        s.trunk.push_back(path.v[next]);
        s.tau_idx.push_back(next);
    }

    // hairs: reversed eta_l = gamma(sigma_l .. tau_l), read from u_l
    for (std::size_t l = 1; l < s.trunk.size(); ++l) {
        std::vector<Vec> eta;
        for (int i = s.tau_idx[l]; i >= s.sigma_idx[l - 1]; --i) eta.push_back(path.v[i]);
        std::vector<Vec> hair;
        Vec w = eta.front();
        std::size_t at = 0;
        for (;;) {
            std::size_t out = 0;
            for (std::size_t j = at + 1; j < eta.size(); ++j)
                if (g.tau(eta[j] - w) > K + slack) {
                    out = j;
                    break;
                }
            if (out == 0) break;
            at = out;
            w = eta[out];
            hair.push_back(w);
        }
        s.hairs.push_back(std::move(hair));
    }
    return s;
}

SkeletonAudit audit_skeleton(const SurchargeGeometry& g, const LatticePath& path, const Skeleton& s) {
    SkeletonAudit a;
    const int n = static_cast<int>(path.length());
    const double slack = 1e-9 * (s.K + s.r);
    for (std::size_t l = 0; l < s.exits.size(); ++l) {
        const double t = g.tau(s.exits[l] - s.trunk[l]);
        if (t < s.K - slack || t > s.K + s.r + slack) a.trunk_radii = false;
    }
    for (std::size_t l = 0; l < s.hairs.size(); ++l) {
        Vec w = s.trunk[l + 1];
        for (const Vec& x : s.hairs[l]) {
            if (g.tau(x - w) < s.K - slack) a.hair_radii = false;
            w = x;
        }
    }
    // pieces gamma_l = gamma(tau_l .. sigma_{l+1}), then the closing piece when the trunk stopped inside a ball
    std::vector<std::pair<int, int>> pieces;
    for (std::size_t l = 0; l < s.exits.size(); ++l) pieces.push_back({s.tau_idx[l], s.sigma_idx[l]});
    if (!s.terminal) pieces.push_back({s.tau_idx.back(), n});
    std::unordered_map<Vec, int, VecHash> owner;
    for (std::size_t k = 0; k < pieces.size(); ++k) {
        for (int i = pieces[k].first; i <= pieces[k].second; ++i) {
            auto [it, fresh] = owner.emplace(path.v[i], static_cast<int>(k));
            if (!fresh && it->second != static_cast<int>(k)) a.p1 = false;
        }
    }
    for (std::size_t l = 0; l < s.exits.size(); ++l) {
        int c = 0;
        for (int i = pieces[l].first + 1; i <= pieces[l].second; ++i) c += path.v[i] == s.exits[l];
        if (c != 1) a.p2 = false;
    }
    return a;
}

// ---------------------------------------------------------------- irreducible kernel

namespace {

struct PieceDfs {
    const SurchargeGeometry& g;
    const StepDistribution& steps;
    int m_cap;
    int R, side;
    std::size_t cells = 1;
    std::vector<double> log_p;
    std::vector<char> in_y;  // Y3 \ {0} on the box
    bool sectors;
    SectorForms F;

    std::size_t cell(const Vec& x) const {
        std::size_t k = 0;
        for (int j = 0; j < g.dim(); ++j) k = k * side + static_cast<std::size_t>(x[j] + R);
        return k;
    }
    Vec point(std::size_t c) const {
        Vec x{};
        for (int j = g.dim() - 1; j >= 0; --j) {
            x[j] = static_cast<int>(c % side) - R;
            c /= side;
        }
        return x;
    }
};

struct DfsState {
    std::vector<Vec> path;
    std::vector<int> visits;  // including the start
    std::vector<double> logp;
    std::vector<double> max_a, max_b;  // running maxima of the sector forms
    std::vector<IrreduciblePiece> out;
    std::uint64_t nodes = 0;
};

// whether the current path (length m >= 1) is in F
bool in_family(const PieceDfs& K, const DfsState& S) {
    const int m = static_cast<int>(S.path.size()) - 1;
    const Vec& x = S.path[m];
    if (S.visits[K.cell(x)] != 1) return false;
    if (K.sectors) {
        if (S.max_a[m - 1] > K.F.l1(x) + kSweepEps || S.max_b[m - 1] > K.F.l2(x) + kSweepEps) return false;
    } else {
        for (int i = 0; i < m; ++i)
            if (x - S.path[i] == Vec{} || !K.g.in_cone(3, x - S.path[i])) return false;
    }
    return cone_points(K.g, LatticePath(S.path)).empty();
}

void dfs(const PieceDfs& K, DfsState& S) {
    ++S.nodes;
    const int m = static_cast<int>(S.path.size()) - 1;
    if (m >= 1 && in_family(K, S)) S.out.push_back({S.path, S.logp[m]});
    if (m == K.m_cap) return;
    for (std::size_t j = 0; j < K.steps.size(); ++j) {
        const Vec y = S.path[m] + K.steps.steps[j];
        const std::size_t c = K.cell(y);
        if (!K.in_y[c]) continue;
        S.path.push_back(y);
        ++S.visits[c];
        S.logp.push_back(S.logp[m] + K.log_p[j]);
        if (K.sectors) {
            S.max_a.push_back(std::max(S.max_a[m], K.F.l1(y)));
            S.max_b.push_back(std::max(S.max_b[m], K.F.l2(y)));
        }
        dfs(K, S);
        if (K.sectors) {
            S.max_a.pop_back();
            S.max_b.pop_back();
        }
        S.logp.pop_back();
        --S.visits[c];
        S.path.pop_back();
    }
}

}  // namespace

std::vector<IrreduciblePiece> irreducible_pieces(const SurchargeGeometry& g, const StepDistribution& steps, int m_cap,
                                                 int threads, std::uint64_t* nodes) {
    if (steps.d != g.dim()) throw Error("BadDimension", "step law and geometry disagree");
    if (m_cap < 1) throw Error("BadArgument", "m_cap >= 1");
    PieceDfs K{g, steps, m_cap, m_cap * steps.range, 2 * m_cap * steps.range + 1, 1, {}, {}, g.has_sectors(), {}};
    if (K.sectors) K.F = forms(g);
    for (int j = 0; j < g.dim(); ++j) K.cells *= static_cast<std::size_t>(K.side);
    if (K.cells > (std::size_t{1} << 28)) throw Error("MemoryCap", "piece enumeration box too large");
    for (std::size_t j = 0; j < steps.size(); ++j) K.log_p.push_back(std::log(steps.prob[j]));
    K.in_y.assign(K.cells, 0);
    for (std::size_t c = 0; c < K.cells; ++c) {
        const Vec x = K.point(c);
        K.in_y[c] = x != Vec{} && g.in_cone(3, x);
    }
    // independent subtrees per first step, concatenated in step order
    std::vector<std::size_t> first;
    for (std::size_t j = 0; j < steps.size(); ++j)
        if (K.in_y[K.cell(steps.steps[j])]) first.push_back(j);
    std::vector<DfsState> parts(first.size());
    parallel_for(first.size(), threads, [&](std::size_t k) {
        DfsState S;
        const std::size_t j = first[k];
        const Vec y = steps.steps[j];
        S.path = {Vec{}, y};
        S.visits.assign(K.cells, 0);
        S.visits[K.cell(Vec{})] = 1;
        S.visits[K.cell(y)] = 1;
        S.logp = {0.0, K.log_p[j]};
        if (K.sectors) {
            S.max_a = {0.0, std::max(0.0, K.F.l1(y))};
            S.max_b = {0.0, std::max(0.0, K.F.l2(y))};
        }
        dfs(K, S);
        S.visits.clear();
        parts[k] = std::move(S);
    });
    std::vector<IrreduciblePiece> out;
    std::uint64_t count = 1;
    for (auto& S : parts) {
        count += S.nodes;
        for (auto& p : S.out) out.push_back(std::move(p));
    }
    if (nodes) *nodes = count;
    return out;
}

KernelEstimate estimate_irreducible_kernel(const SurchargeGeometry& g, const StepDistribution& steps,
                                           const PotentialLaw& law, int n_max, int threads) {
    KernelEstimate est;
    const auto pieces = irreducible_pieces(g, steps, n_max, threads, &est.nodes);
    if (pieces.empty()) throw Error("InsufficientConePoints", "no irreducible piece up to n_max");
    est.pieces = pieces.size();
    est.f.d = g.dim();
    std::map<std::pair<int, Vec>, double> acc;
    for (const auto& p : pieces) {
        const LatticePath path(p.v);
        const double lw = polymer_log_weight(steps, law, g.h(), g.lambda(), path);
        if (lw == kNegInf) continue;
        acc[{static_cast<int>(path.length()), path.end()}] += std::exp(lw);
    }
    est.mass_by_n.assign(n_max + 1, 0.0);
    double ex[kMaxDim] = {0, 0, 0, 0}, et = 0;
    for (const auto& [key, w] : acc) {
        KernelEntry e;
        e.n = key.first;
        e.x = key.second;
        e.f = w;
        est.f.entries.push_back(e);
        est.mass_by_n[e.n] += w;
        for (int k = 0; k < g.dim(); ++k) ex[k] += w * e.x[k];
        et += w * e.n;
    }
    for (int n = 1; n <= n_max; ++n) est.mass += est.mass_by_n[n];
    if (et > 0)
        for (int k = 0; k < g.dim(); ++k) est.velocity[k] = ex[k] / et;

    std::vector<double> xs, ys;
    for (int n = std::max(2, n_max / 2); n <= n_max; ++n)
        if (est.mass_by_n[n] > 0) {
            xs.push_back(n);
            ys.push_back(std::log(est.mass_by_n[n]));
        }
    if (xs.size() >= 2) {
        auto [a, b] = linear_fit(xs, ys);
        est.chi = -b;
        for (std::size_t i = 0; i < xs.size(); ++i)
            est.chi_residual = std::max(est.chi_residual, std::abs(ys[i] - a - b * xs[i]));
    }
    return est;
}

// ---------------------------------------------------------------- Kesten

double kesten_forest_bound(int M, int N, int b) {
    if (M < 0 || N < 1 || b < 2) throw Error("BadArgument", "need M >= 0, N >= 1, b >= 2");
    return std::exp(M * std::log(static_cast<double>(b)) + (N + M) * static_cast<double>(b) / (b - 1));
}

double kesten_forest_count(int M, int N, int b) {
    if (M < 0 || N < 1 || b < 1) throw Error("BadArgument", "need M >= 0, N >= 1, b >= 1");
    // c[s][m]: ways to fill s open slots with m vertices, each placed vertex opening b slots
    const int S = b * N + (b - 1) * M + 1;
    std::vector<std::vector<double>> c(S + 1, std::vector<double>(M + 1, 0.0));
    for (int s = 0; s <= S; ++s) c[s][0] = 1;
    for (int m = 1; m <= M; ++m)
        for (int s = 1; s <= S; ++s) {
            const int grown = s - 1 + b;
            c[s][m] = c[s - 1][m] + (grown <= S ? c[grown][m - 1] : 0.0);
        }
    return c[b * N][M];
}

// ---------------------------------------------------------------- OZ prefactor

OzFit oz_two_point_check(const std::function<double(const Vec&)>& G, const SupportFn& tau, int d,
                         const RVec& direction, const std::vector<int>& r_ladder) {
    OzFit fit;
    const RVec u = scaled(direction, 1 / norm2(direction));
    fit.tau_shape = tau(u);
    std::vector<double> lr, decay;
    const double half = 0.5 * (d - 1);
    for (int r : r_ladder) {
        Vec x{};
        for (int k = 0; k < d; ++k) x[k] = static_cast<int>(std::lround(r * u[k]));
        const double gx = G(x);
        if (!(gx > 0)) throw Error("ZeroMass", "G vanishes on the ray");
        const double len = norm2(x);
        fit.r.push_back(len);
        fit.log_scaled.push_back(tau(to_real(x)) + std::log(gx));
        lr.push_back(std::log(len));
        decay.push_back(-std::log(gx) - half * std::log(len));
    }
    if (fit.r.size() < 2) throw Error("BadArgument", "need at least two radii");
    fit.power = -linear_fit(lr, fit.log_scaled).second;
    fit.tau_decay = linear_fit(fit.r, decay).second;
    double mean = 0;
    std::vector<double> flat;
    for (std::size_t i = 0; i < fit.r.size(); ++i) {
        flat.push_back(fit.log_scaled[i] + half * lr[i]);
        mean += flat.back();
    }
    mean /= static_cast<double>(flat.size());
    for (double v : flat) fit.flatness = std::max(fit.flatness, std::abs(v - mean));
    return fit;
}

}  // namespace rpoly
