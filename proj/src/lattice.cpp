#include "rpoly/lattice.hpp"

#include <cmath>
#include <sstream>

namespace rpoly {

StepDistribution StepDistribution::validate(int d, const std::vector<std::pair<Vec, double>>& raw) {
    if (d < 1 || d > kMaxDim) throw Error("BadDimension", "d must be in 1.." + std::to_string(kMaxDim));
    if (raw.empty()) throw Error("EmptySupport", "step list is empty");
    std::map<Vec, double> merged;
    for (const auto& [x, w] : raw) {
        if (!(w >= 0) || !std::isfinite(w)) throw Error("NegativeWeight", "weight " + std::to_string(w));
        for (int k = d; k < kMaxDim; ++k)
            if (x[k] != 0) throw Error("BadDimension", "step has coordinates beyond d");
        if (w > 0) merged[x] += w;
    }
    double total = 0;
    for (const auto& kv : merged) total += kv.second;
    if (merged.empty() || total <= 0) throw Error("EmptySupport", "all weights are zero");

    StepDistribution s;
    s.d = d;
    s.range = 0;
    for (const auto& [x, w] : merged) {
        s.steps.push_back(x);
        s.prob.push_back(w / total);
        s.range = std::max(s.range, norm_inf(x));
    }
    for (int k = 0; k < d; ++k) {
        if (!merged.count(unit(k, 1)) || !merged.count(unit(k, -1)))
            throw Error("MissingUnitSteps", "missing +-e_" + std::to_string(k + 1));
    }
    for (int k = 0; k < d; ++k) {
        double m = 0;
        for (std::size_t i = 0; i < s.steps.size(); ++i) m += s.prob[i] * s.steps[i][k];
        if (std::abs(m) > 1e-12) throw Error("NonZeroMean", "mean coordinate " + std::to_string(k + 1) + " = " + std::to_string(m));
    }
    return s;
}

StepDistribution StepDistribution::simple(int d) {
    std::vector<std::pair<Vec, double>> raw;
    for (int k = 0; k < d; ++k) {
        raw.push_back({unit(k, 1), 1.0});
        raw.push_back({unit(k, -1), 1.0});
    }
    return validate(d, raw);
}

double StepDistribution::log_mgf(const RVec& h) const {
    double m = kNegInf;
    for (std::size_t i = 0; i < steps.size(); ++i) m = log_add(m, std::log(prob[i]) + dot(h, steps[i]));
    return m;
}

LocalTimeProfile local_time_profile(const LatticePath& path) {
    LocalTimeProfile lt;
    for (std::size_t i = 1; i < path.v.size(); ++i) ++lt[path.v[i]];
    return lt;
}

void add_local_times(LocalTimeProfile& into, const LocalTimeProfile& other) {
    for (const auto& [x, c] : other) into[x] += c;
}

LatticePath concatenate(const LatticePath& left, const LatticePath& right) {
    LatticePath out;
    out.v = left.v;
    const Vec shift = left.end() - right.v.front();
    for (std::size_t i = 1; i < right.v.size(); ++i) out.v.push_back(right.v[i] + shift);
    return out;
}

LatticePath subpath(const LatticePath& path, std::size_t from, std::size_t to) {
    if (from > to || to >= path.v.size()) throw Error("BadRange", "subpath bounds");
    return LatticePath(std::vector<Vec>(path.v.begin() + from, path.v.begin() + to + 1));
}

namespace {
int step_index(const StepDistribution& steps, const Vec& dx) {
    for (std::size_t j = 0; j < steps.steps.size(); ++j)
        if (steps.steps[j] == dx) return static_cast<int>(j);
    return -1;
}
}  // namespace

bool is_admissible(const StepDistribution& steps, const LatticePath& path) {
    for (std::size_t i = 1; i < path.v.size(); ++i)
        if (step_index(steps, path.v[i] - path.v[i - 1]) < 0) return false;
    return true;
}

double path_probability(const StepDistribution& steps, const LatticePath& path) {
    double p = 1;
    for (std::size_t i = 1; i < path.v.size(); ++i) {
        int j = step_index(steps, path.v[i] - path.v[i - 1]);
        if (j < 0) return 0;
        p *= steps.prob[j];
    }
    return p;
}

std::uint64_t enumeration_cost(const StepDistribution& steps, int n) {
    double c = std::pow(static_cast<double>(steps.size()), n) * std::max(n, 1);
    if (c > 1.8e19) return ~std::uint64_t{0};
    return static_cast<std::uint64_t>(c);
}

void enumerate_paths(const StepDistribution& steps, int n,
                     const std::function<void(const LatticePath&, double)>& visit, std::uint64_t cap) {
    if (n < 0) throw Error("BadLength", "n < 0");
    if (enumeration_cost(steps, n) > cap)
        throw Error("EnumerationCapExceeded", std::to_string(steps.size()) + "^" + std::to_string(n) + " paths");
    LatticePath path;
    path.v.resize(n + 1);
    std::vector<double> prob(n + 1, 1.0);
    std::vector<std::size_t> choice(n + 1, 0);
    // iterative DFS over step choices
    int depth = 0;
    if (n == 0) {
        visit(path, 1.0);
        return;
    }
    choice[1] = 0;
    depth = 1;
    while (depth > 0) {
        if (choice[depth] == steps.size()) {
            --depth;
            if (depth > 0) ++choice[depth];
            continue;
        }
        const std::size_t j = choice[depth];
        path.v[depth] = path.v[depth - 1] + steps.steps[j];
        prob[depth] = prob[depth - 1] * steps.prob[j];
        if (depth == n) {
            visit(path, prob[depth]);
            ++choice[depth];
        } else {
            ++depth;
            choice[depth] = 0;
        }
    }
}

LatticePath sample_path(const StepDistribution& steps, int n, std::uint64_t seed, std::uint64_t stream) {
    Rng rng(seed, stream);
    LatticePath path;
    path.v.reserve(n + 1);
    for (int i = 0; i < n; ++i) {
        double u = rng.uniform();
        std::size_t j = 0;
        double acc = steps.prob[0];
        while (u >= acc && j + 1 < steps.size()) acc += steps.prob[++j];
        path.v.push_back(path.end() + steps.steps[j]);
    }
    return path;
}

double parse_weight(const std::string& s) {
    auto slash = s.find('/');
    try {
        if (slash == std::string::npos) return std::stod(s);
        double num = std::stod(s.substr(0, slash));
        double den = std::stod(s.substr(slash + 1));
        if (den == 0) throw Error("BadWeight", "zero denominator in '" + s + "'");
        return num / den;
    } catch (const std::invalid_argument&) {
        throw Error("BadWeight", "cannot parse '" + s + "'");
    }
}

StepDistribution read_step_config(int d, const std::string& text) {
    std::istringstream in(text);
    std::string line;
    std::vector<std::pair<Vec, double>> raw;
    while (std::getline(in, line)) {
        auto hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::vector<std::string> tok;
        std::string t;
        while (ls >> t) tok.push_back(t);
        if (tok.empty()) continue;
        if (static_cast<int>(tok.size()) != d + 1)
            throw Error("BadStepLine", "expected " + std::to_string(d + 1) + " fields: '" + line + "'");
        Vec x{};
        for (int k = 0; k < d; ++k) x[k] = std::stoi(tok[k]);
        raw.push_back({x, parse_weight(tok[d])});
    }
    return StepDistribution::validate(d, raw);
}

std::string vec_to_string(const Vec& x, int d) {
    std::string s = "(";
    for (int k = 0; k < d; ++k) {
        if (k) s += ",";
        s += std::to_string(x[k]);
    }
    return s + ")";
}

}  // namespace rpoly
