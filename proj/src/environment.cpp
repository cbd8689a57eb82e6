#include "rpoly/environment.hpp"

#include <cmath>
#include <sstream>

namespace rpoly {

PotentialLaw PotentialLaw::traps(double p_zero, double beta) {
    PotentialLaw l;
    l.kind = LawKind::BernoulliTrap;
    l.p_inf = 1.0 - p_zero;
    l.beta = beta;
    l.validate();
    return l;
}

PotentialLaw PotentialLaw::two_point(double v0, double v1, double p, double beta) {
    PotentialLaw l;
    l.kind = LawKind::TwoPoint;
    l.v0 = v0;
    l.v1 = v1;
    l.p = p;
    l.beta = beta;
    l.validate();
    return l;
}

PotentialLaw PotentialLaw::exponential(double rate, double beta) {
    PotentialLaw l;
    l.kind = LawKind::Exponential;
    l.rate = rate;
    l.beta = beta;
    l.validate();
    return l;
}

PotentialLaw PotentialLaw::discrete(std::vector<std::pair<double, double>> atoms, double beta) {
    PotentialLaw l;
    l.kind = LawKind::Discrete;
    l.atoms = std::move(atoms);
    l.beta = beta;
    l.validate();
    return l;
}

PotentialLaw PotentialLaw::zero() { return discrete({{0.0, 1.0}}, 1.0); }

void PotentialLaw::validate() const {
    if (!(beta > 0)) throw Error("BadLaw", "beta must be positive");
    switch (kind) {
        case LawKind::BernoulliTrap:
            if (!(p_inf >= 0 && p_inf <= 1)) throw Error("BadLaw", "p_inf outside [0,1]");
            break;
        case LawKind::TwoPoint:
            if (!(p >= 0 && p <= 1)) throw Error("BadLaw", "p outside [0,1]");
            if (!(v0 >= 0) || !(v1 >= 0)) throw Error("BadLaw", "negative atom");
            break;
        case LawKind::Exponential:
            if (!(rate > 0) || !std::isfinite(rate)) throw Error("BadLaw", "rate must be positive");
            break;
        case LawKind::Discrete: {
            if (atoms.empty()) throw Error("BadLaw", "no atoms");
            double t = 0;
            for (auto [v, q] : atoms) {
                if (!(v >= 0)) throw Error("BadLaw", "negative atom");
                if (!(q >= 0)) throw Error("BadLaw", "negative probability");
                t += q;
            }
            if (std::abs(t - 1) > 1e-12) throw Error("BadLaw", "atom probabilities do not sum to 1");
            break;
        }
    }
}

std::vector<std::pair<double, double>> PotentialLaw::atom_list() const {
    switch (kind) {
        case LawKind::BernoulliTrap: return {{0.0, 1 - p_inf}, {kInf, p_inf}};
        case LawKind::TwoPoint: return {{v0, 1 - p}, {v1, p}};
        case LawKind::Discrete: return atoms;
        case LawKind::Exponential: return {};
    }
    return {};
}

bool PotentialLaw::is_trivial() const {
    if (kind == LawKind::Exponential) return false;
    int support = 0;
    double first = -1;
    for (auto [v, q] : atom_list()) {
        if (q <= 0) continue;
        if (support == 0 || v != first) ++support;
        first = v;
    }
    return support <= 1;
}

double PotentialLaw::q_finite() const {
    if (kind == LawKind::Exponential) return 1;
    double s = 0;
    for (auto [v, q] : atom_list())
        if (std::isfinite(v)) s += q;
    return s;
}

double PotentialLaw::q_zero() const {
    if (kind == LawKind::Exponential) return 0;
    double s = 0;
    for (auto [v, q] : atom_list())
        if (v == 0) s += q;
    return s;
}

std::string PotentialLaw::describe() const {
    std::ostringstream o;
    switch (kind) {
        case LawKind::BernoulliTrap: o << "traps(p_inf=" << p_inf << ")"; break;
        case LawKind::TwoPoint: o << "two_point(" << v0 << "," << v1 << ",p=" << p << ")"; break;
        case LawKind::Exponential: o << "exponential(rate=" << rate << ")"; break;
        case LawKind::Discrete: o << "discrete(" << atoms.size() << " atoms)"; break;
    }
    o << " beta=" << beta;
    return o.str();
}

double site_weight(double v, double beta) {
    if (v == kInf) return 0.0;
    return std::exp(-beta * v);
}

double law_quantile(const PotentialLaw& law, double u) {
    if (law.kind == LawKind::Exponential) return -std::log1p(-u) / law.rate;
    double acc = 0;
    const auto atoms = law.atom_list();
    for (auto [v, q] : atoms) {
        acc += q;
        if (u < acc) return v;
    }
    // rounding: last atom with positive mass
    for (auto it = atoms.rbegin(); it != atoms.rend(); ++it)
        if (it->second > 0) return it->first;
    return atoms.back().first;
}

double phi_beta(const PotentialLaw& law, int ell) {
    if (ell < 1) throw Error("BadArgument", "phi_beta needs l >= 1");
    if (law.kind == LawKind::Exponential) return std::log1p(law.beta * ell / law.rate);
    double m = 0;
    for (auto [v, q] : law.atom_list()) m += q * site_weight(v, law.beta * ell);
    if (m <= 0) return kInf;
    return -std::log(m);
}

AttractivityReport check_attractivity(const PotentialLaw& law, int ell_max) {
    AttractivityReport r;
    r.ell_max = ell_max;
    r.phi.assign(ell_max + 1, 0.0);
    for (int l = 1; l <= ell_max; ++l) r.phi[l] = phi_beta(law, l);
    const double tol = 1e-12;
    auto slack = [&](double a) { return tol * std::max(1.0, std::abs(a)); };
    for (int l = 1; l <= ell_max; ++l) {
        for (int m = 1; l + m <= ell_max; ++m) {
            double lhs = r.phi[l + m], rhs = r.phi[l] + r.phi[m];
            if (lhs > rhs + slack(rhs))
                r.violations.push_back("subadditivity fails at l=" + std::to_string(l) + " m=" + std::to_string(m));
        }
        if (l >= 2 && r.phi[l] < r.phi[l - 1] - slack(r.phi[l]))
            r.violations.push_back("not nondecreasing at l=" + std::to_string(l));
        if (l >= 2 && r.phi[l] / l > r.phi[l - 1] / (l - 1) + slack(r.phi[l]))
            r.violations.push_back("phi(l)/l increases at l=" + std::to_string(l));
        if (r.phi[l] < r.phi[1] - slack(r.phi[1]))
            r.violations.push_back("phi(1) is not the minimum (l=" + std::to_string(l) + ")");
    }
    return r;
}

double site_percolation_threshold(int d) {
    switch (d) {
        case 1: return 1.0;
        case 2: return 0.592746;
        case 3: return 0.311608;
        case 4: return 0.196889;
        default: return 1.0 / (2 * d - 1);  // crude lower estimate beyond the table
    }
}

PercolationCheck check_percolation(const PotentialLaw& law, int d) {
    PercolationCheck c;
    c.q_open = law.q_finite();
    c.p_c = site_percolation_threshold(d);
    c.supercritical = d == 1 ? c.q_open >= 1.0 : c.q_open > c.p_c;
    if (!c.supercritical) c.note = "Q(V<inf) at or below the site percolation threshold; no infinite cluster";
    return c;
}

Box Box::centered(int d, int radius) {
    Box b;
    b.d = d;
    for (int k = 0; k < d; ++k) {
        b.lo[k] = -radius;
        b.hi[k] = radius;
    }
    return b;
}

bool Box::contains(const Vec& x) const {
    for (int k = 0; k < d; ++k)
        if (x[k] < lo[k] || x[k] > hi[k]) return false;
    for (int k = d; k < kMaxDim; ++k)
        if (x[k] != 0) return false;
    return true;
}

std::size_t Box::volume() const {
    std::size_t v = 1;
    for (int k = 0; k < d; ++k) v *= static_cast<std::size_t>(hi[k] - lo[k] + 1);
    return v;
}

std::size_t Box::index(const Vec& x) const {
    std::size_t idx = 0;
    for (int k = 0; k < d; ++k) idx = idx * (hi[k] - lo[k] + 1) + (x[k] - lo[k]);
    return idx;
}

Vec Box::point(std::size_t idx) const {
    Vec x{};
    for (int k = d - 1; k >= 0; --k) {
        std::size_t w = hi[k] - lo[k] + 1;
        x[k] = lo[k] + static_cast<int>(idx % w);
        idx /= w;
    }
    return x;
}

double site_uniform(std::uint64_t seed, const Vec& x) {
    std::uint64_t h = splitmix64(seed ^ 0x5bd1e9955bd1e995ULL);
    for (int k = 0; k < kMaxDim; ++k) h = hash_combine(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(x[k])));
    return u01(h);
}

EnvironmentField::EnvironmentField(PotentialLaw law, Box region, std::uint64_t seed, bool materialize)
    : law_(std::move(law)), region_(region), seed_(seed) {
    if (materialize) {
        const std::size_t n = region_.volume();
        values_.resize(n);
        for (std::size_t i = 0; i < n; ++i) values_[i] = value_unchecked(region_.point(i));
    }
}

double EnvironmentField::value_unchecked(const Vec& x) const { return law_quantile(law_, site_uniform(seed_, x)); }

double EnvironmentField::value(const Vec& x) const {
    if (!region_.contains(x)) throw Error("OutsideRegion", "site outside the sampled region");
    if (!values_.empty()) return values_[region_.index(x)];
    return value_unchecked(x);
}

std::string EnvironmentField::to_csv() const {
    std::ostringstream o;
    o.precision(17);
    for (int k = 0; k < region_.d; ++k) o << "x" << k + 1 << ",";
    o << "value\n";
    const std::size_t n = region_.volume();
    for (std::size_t i = 0; i < n; ++i) {
        Vec x = region_.point(i);
        for (int k = 0; k < region_.d; ++k) o << x[k] << ",";
        double v = value(x);
        if (v == kInf)
            o << "inf\n";
        else
            o << v << "\n";
    }
    return o.str();
}

EnvironmentField sample_environment(const PotentialLaw& law, const Box& region, std::uint64_t seed,
                                    std::size_t memory_cap) {
    law.validate();
    const std::size_t n = region.volume();
    if (n == 0) throw Error("EmptyRegion", "region has no sites");
    constexpr std::size_t kHardCap = std::size_t{1} << 40;
    if (n > kHardCap) throw Error("RegionTooLarge", std::to_string(n) + " sites");
    return EnvironmentField(law, region, seed, n <= memory_cap);
}

}  // namespace rpoly
