#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "rpoly/common.hpp"

namespace rpoly {

struct StepDistribution {
    int d = 1;
    std::vector<Vec> steps;
    std::vector<double> prob;
    int range = 1;  // max sup-norm over the support

    // Normalizes and validates. Throws EmptySupport, NegativeWeight,
    // NonZeroMean, MissingUnitSteps.
    static StepDistribution validate(int d, const std::vector<std::pair<Vec, double>>& raw);
    static StepDistribution simple(int d);

    std::size_t size() const { return steps.size(); }
    double log_mgf(const RVec& h) const;  // log E e^{h.X}
};

struct LatticePath {
    std::vector<Vec> v{Vec{}};

    LatticePath() = default;
    explicit LatticePath(std::vector<Vec> vertices) : v(std::move(vertices)) {}
    std::size_t length() const { return v.size() - 1; }
    const Vec& end() const { return v.back(); }
    Vec displacement() const { return v.back() - v.front(); }
    bool operator==(const LatticePath& o) const { return v == o.v; }
};

// l(x) = #{1 <= i <= n : gamma_i = x}; the start vertex is not counted
using LocalTimeProfile = std::map<Vec, int>;

LocalTimeProfile local_time_profile(const LatticePath& path);
void add_local_times(LocalTimeProfile& into, const LocalTimeProfile& other);
LatticePath concatenate(const LatticePath& left, const LatticePath& right);
LatticePath subpath(const LatticePath& path, std::size_t from, std::size_t to);

bool is_admissible(const StepDistribution& steps, const LatticePath& path);
// product of step probabilities; 0 if some increment is not in the support
double path_probability(const StepDistribution& steps, const LatticePath& path);

// Calls visit(path, probability) on every n-step path from 0. Throws
// EnumerationCapExceeded when |support|^n * max(n,1) exceeds cap.
void enumerate_paths(const StepDistribution& steps, int n,
                     const std::function<void(const LatticePath&, double)>& visit,
                     std::uint64_t cap = 10'000'000);
std::uint64_t enumeration_cost(const StepDistribution& steps, int n);

LatticePath sample_path(const StepDistribution& steps, int n, std::uint64_t seed,
                        std::uint64_t stream = 0);

// "1/4", "0.25", "3" -> double
double parse_weight(const std::string& s);
// Reads lines "x_1 ... x_d weight"; '#' starts a comment.
StepDistribution read_step_config(int d, const std::string& text);
std::string vec_to_string(const Vec& x, int d);

}  // namespace rpoly
