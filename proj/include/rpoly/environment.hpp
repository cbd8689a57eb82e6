#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "rpoly/common.hpp"

namespace rpoly {

enum class LawKind { BernoulliTrap, TwoPoint, Exponential, Discrete };

// Site potential law. V = +inf is stored as kInf and always has weight e^{-beta V} = 0.
struct PotentialLaw {
    LawKind kind = LawKind::Discrete;
    double beta = 1.0;
    double p_inf = 0.0;           // BernoulliTrap: Q(V = inf), otherwise V = 0
    double v0 = 0, v1 = 1, p = 0.5;  // TwoPoint: Q(V = v1) = p, Q(V = v0) = 1 - p
    double rate = 1.0;            // Exponential
    std::vector<std::pair<double, double>> atoms;  // Discrete: (value, prob)

    static PotentialLaw traps(double p_zero, double beta = 1.0);  // Q(V=0) = p_zero
    static PotentialLaw two_point(double v0, double v1, double p, double beta);
    static PotentialLaw exponential(double rate, double beta);
    static PotentialLaw discrete(std::vector<std::pair<double, double>> atoms, double beta);
    static PotentialLaw zero();

    // Throws BadLaw on negative atoms or non-normalized probabilities.
    void validate() const;
    // atom list view (Exponential has none)
    std::vector<std::pair<double, double>> atom_list() const;
    bool is_trivial() const;  // a.s. constant
    double q_finite() const;  // Q(V < inf)
    double q_zero() const;    // Q(V = 0)
    std::string describe() const;
};

double site_weight(double v, double beta);  // e^{-beta v}, 0 for v = inf

// inverse cdf at u in [0,1)
double law_quantile(const PotentialLaw& law, double u);

// -log E e^{-beta l V}; throws UnsupportedLaw when there is no closed form
double phi_beta(const PotentialLaw& law, int ell);

struct AttractivityReport {
    int ell_max = 0;
    std::vector<double> phi;  // phi[l], l = 0..ell_max, phi[0] = 0
    std::vector<std::string> violations;
    bool ok() const { return violations.empty(); }
};
AttractivityReport check_attractivity(const PotentialLaw& law, int ell_max);

struct PercolationCheck {
    double q_open = 1;     // Q(V < inf)
    double p_c = 1;        // site percolation threshold used
    bool supercritical = true;
    std::string note;
};
// Advisory only. Thresholds are standard numerical estimates for Z^d, d <= 4.
double site_percolation_threshold(int d);
PercolationCheck check_percolation(const PotentialLaw& law, int d);

struct Box {
    int d = 1;
    Vec lo{}, hi{};  // inclusive

    static Box centered(int d, int radius);
    bool contains(const Vec& x) const;
    std::size_t volume() const;
    std::size_t index(const Vec& x) const;
    Vec point(std::size_t idx) const;
};

// uniform in [0,1) attached to a site; the single source of randomness for environments
double site_uniform(std::uint64_t seed, const Vec& x);

class EnvironmentField {
public:
    EnvironmentField() = default;
    EnvironmentField(PotentialLaw law, Box region, std::uint64_t seed, bool materialize);

    const PotentialLaw& law() const { return law_; }
    const Box& region() const { return region_; }
    std::uint64_t seed() const { return seed_; }
    bool materialized() const { return !values_.empty(); }

    // V at x; throws OutsideRegion
    double value(const Vec& x) const;
    double weight(const Vec& x) const { return site_weight(value(x), law_.beta); }
    // value without the region check, from the site hash
    double value_unchecked(const Vec& x) const;

    std::string to_csv() const;

private:
    PotentialLaw law_;
    Box region_;
    std::uint64_t seed_ = 0;
    std::vector<double> values_;
};

// Stores values when the region is below memory_cap sites; larger regions are
// served lazily from the same site hash, so both give identical numbers.
EnvironmentField sample_environment(const PotentialLaw& law, const Box& region, std::uint64_t seed,
                                    std::size_t memory_cap = std::size_t{1} << 24);

}  // namespace rpoly
