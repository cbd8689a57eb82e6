#include "rpoly/runner.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <numbers>
#include <sstream>

#include "rpoly/geometry.hpp"
#include "rpoly/parallel.hpp"

namespace rpoly {

namespace {

Error invalid(const std::string& what) { return Error("ConfigInvalid", what); }

std::string fmt(double x) {
    std::ostringstream o;
    o.precision(10);
    o << x;
    return o.str();
}

double mean_se(const std::vector<double>& v, double& se) {
    se = 0;
    if (v.empty()) return 0;
    double m = 0;
    for (double x : v) m += x;
    m /= v.size();
    if (v.size() > 1) {
        double s = 0;
        for (double x : v) s += (x - m) * (x - m);
        se = std::sqrt(s / (v.size() - 1) / v.size());
    }
    return m;
}

std::vector<int> ladder_of(const Json& cfg) {
    std::vector<int> l = cfg["engine"]["ladder"].get<std::vector<int>>();
    if (l.empty()) l.push_back(cfg["engine"]["n"].get<int>());
    return l;
}

int threads_of(const Json& cfg) { return std::max(1, cfg["run"]["threads"].get<int>()); }

}  // namespace

// ---- config ----

Json default_config() {
    return Json::parse(R"({
  "model": {
    "d": 1,
    "steps": "simple",
    "law": {"kind": "zero", "p": 0.5, "v0": 0.0, "v1": 1.0, "rate": 1.0, "atoms": []},
    "beta": 1.0,
    "h": [],
    "lambda": 0.0
  },
  "engine": {
    "n": 10,
    "ladder": [],
    "exact": true,
    "chains": 20000,
    "verify": false,
    "kernel": "srw1d",
    "kernel_file": "",
    "lclt_radius": 1.0,
    "tables_n": 10,
    "directions": 720,
    "geometry": "polymer",
    "n_max": 10,
    "n_max_list": [],
    "min_mass": 0.0,
    "m_cap": 10,
    "mixingale": false,
    "resamples": 64,
    "ks": [0, 1, 2, 4],
    "alpha": 0.5,
    "N": [4],
    "tilt": false
  },
  "run": {"seed": 1, "seeds": 1, "threads": 1, "out": "rpoly_out"}
})");
}

std::vector<std::string> preset_names() {
    return {"traps-half", "srw1d", "traps-supercritical", "weak-2d", "weak-4d", "strong-2d", "fracmom-2d"};
}

Json preset_config(const std::string& name) {
    if (name == "traps-half")
        return Json::parse(R"({"model": {"d": 1, "law": {"kind": "traps", "p": 0.5}, "h": [0.0]},
                               "engine": {"n": 3, "exact": true}})");
    if (name == "srw1d")
        return Json::parse(R"({"model": {"d": 1}, "engine": {"kernel": "srw1d", "n": 200}})");
    if (name == "traps-supercritical")
        return Json::parse(R"({"model": {"d": 2, "law": {"kind": "traps", "p": 0.8}, "h": [2.5, 0.0]},
                               "engine": {"tables_n": 14, "n_max": 14, "n_max_list": [10, 12, 14], "min_mass": 0.9}})");
    if (name == "weak-2d")
        return Json::parse(R"({"model": {"d": 2, "law": {"kind": "two_point", "v0": 0.0, "v1": 1.0, "p": 0.5},
                                         "beta": 0.3, "h": [1.5, 0.0]},
                               "engine": {"m_cap": 10, "n": 30}, "run": {"seeds": 100}})");
    if (name == "weak-4d")
        return Json::parse(R"({"model": {"d": 4, "law": {"kind": "two_point", "v0": 0.0, "v1": 1.0, "p": 0.5},
                                         "beta": 0.3, "h": [1.5, 0.0, 0.0, 0.0]},
                               "engine": {"geometry": "euclidean", "m_cap": 6, "n": 12, "mixingale": true, "ks": []},
                               "run": {"seeds": 200}})");
    if (name == "strong-2d")
        return Json::parse(R"({"model": {"d": 2, "law": {"kind": "traps", "p": 0.6}, "h": [2.5, 0.0]},
                               "engine": {"ladder": [4, 8, 12], "m_cap": 10, "alpha": 0.5, "N": [4]},
                               "run": {"seeds": 1000}})");
    if (name == "fracmom-2d")
        return Json::parse(R"({"model": {"d": 2, "law": {"kind": "traps", "p": 0.7}, "h": [3.5, 0.0]},
                               "engine": {"ladder": [4, 8], "m_cap": 10, "alpha": 0.5, "N": [4, 6, 8], "tilt": true},
                               "run": {"seeds": 1000}})");
    throw invalid("unknown preset '" + name + "'");
}

Json merge_config(const Json& base, const Json& overlay, const std::string& where) {
    if (!overlay.is_object()) throw invalid("expected an object at '" + where + "'");
    Json out = base;
    for (auto it = overlay.begin(); it != overlay.end(); ++it) {
        const std::string path = where.empty() ? it.key() : where + "." + it.key();
        if (!base.contains(it.key())) throw invalid("unknown key '" + path + "'");
        const Json& b = base[it.key()];
        if (b.is_object())
            out[it.key()] = merge_config(b, it.value(), path);
        else
            out[it.key()] = it.value();
    }
    return out;
}

void validate_config(const Json& cfg) {
    const Json def = default_config();
    // same keys and compatible types as the defaults
    std::function<void(const Json&, const Json&, const std::string&)> walk = [&](const Json& d, const Json& c,
                                                                                 const std::string& where) {
        if (!c.is_object()) throw invalid("'" + where + "' must be an object");
        for (auto it = c.begin(); it != c.end(); ++it)
            if (!d.contains(it.key())) throw invalid("unknown key '" + where + "." + it.key() + "'");
        for (auto it = d.begin(); it != d.end(); ++it) {
            const std::string path = where.empty() ? it.key() : where + "." + it.key();
            if (!c.contains(it.key())) throw invalid("missing key '" + path + "'");
            const Json& v = c[it.key()];
            const Json& dv = it.value();
            if (dv.is_object()) {
                walk(dv, v, path);
            } else if (dv.is_number() && !v.is_number()) {
                throw invalid("'" + path + "' must be a number");
            } else if (dv.is_number_integer() && !v.is_number_integer()) {
                throw invalid("'" + path + "' must be an integer");
            } else if (dv.is_boolean() && !v.is_boolean()) {
                throw invalid("'" + path + "' must be true or false");
            } else if (dv.is_array() && !v.is_array()) {
                throw invalid("'" + path + "' must be an array");
            } else if (dv.is_string() && path != "model.steps" && !v.is_string()) {
                throw invalid("'" + path + "' must be a string");
            }
        }
    };
    walk(def, cfg, "");
    const int d = cfg["model"]["d"].get<int>();
    if (d < 1 || d > kMaxDim) throw invalid("model.d must lie in 1..4");
    const auto& h = cfg["model"]["h"];
    if (!h.empty() && static_cast<int>(h.size()) != d) throw invalid("model.h needs d entries");
    const std::string kind = cfg["model"]["law"]["kind"].get<std::string>();
    if (kind != "zero" && kind != "traps" && kind != "two_point" && kind != "exponential" && kind != "discrete")
        throw invalid("model.law.kind must be zero, traps, two_point, exponential or discrete");
    const std::string geo = cfg["engine"]["geometry"].get<std::string>();
    if (geo != "polymer" && geo != "euclidean") throw invalid("engine.geometry must be polymer or euclidean");
    if (cfg["run"]["seeds"].get<int>() < 1) throw invalid("run.seeds must be positive");
}

void apply_assignment(Json& cfg, const std::string& a) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw invalid("override '" + a + "' is not key=value");
    const std::string key = a.substr(0, eq), val = a.substr(eq + 1);
    Json v;
    try {
        v = Json::parse(val);
    } catch (const Json::exception&) {
        v = val;
    }
    Json* node = &cfg;
    std::stringstream ss(key);
    std::string part;
    std::vector<std::string> parts;
    while (std::getline(ss, part, '.')) parts.push_back(part);
    for (std::size_t i = 0; i < parts.size(); ++i) {
        if (!node->is_object() || !node->contains(parts[i])) throw invalid("unknown key '" + key + "'");
        node = &(*node)[parts[i]];
    }
    *node = v;
}

std::string config_hash(const Json& cfg) {
    Json c = cfg;
    c["run"].erase("threads");
    c["run"].erase("out");
    const std::string s = c.dump();
    std::uint64_t h = 14695981039346656037ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

StepDistribution config_steps(const Json& cfg) {
    const int d = cfg["model"]["d"].get<int>();
    const Json& s = cfg["model"]["steps"];
    if (s.is_string()) {
        if (s.get<std::string>() != "simple") throw invalid("model.steps must be \"simple\" or a list of rows");
        return StepDistribution::simple(d);
    }
    if (!s.is_array()) throw invalid("model.steps must be \"simple\" or a list of rows");
    std::vector<std::pair<Vec, double>> raw;
    for (const auto& row : s) {
        if (!row.is_array() || static_cast<int>(row.size()) != d + 1) throw invalid("step rows are [x_1..x_d, weight]");
        Vec x{};
        for (int k = 0; k < d; ++k) x[k] = row[k].get<int>();
        raw.push_back({x, row[d].get<double>()});
    }
    return StepDistribution::validate(d, raw);
}

PotentialLaw config_law(const Json& cfg) {
    const Json& L = cfg["model"]["law"];
    const double beta = cfg["model"]["beta"].get<double>();
    const std::string kind = L["kind"].get<std::string>();
    PotentialLaw law;
    if (kind == "zero") {
        law = PotentialLaw::zero();
        law.beta = beta;
    } else if (kind == "traps") {
        law = PotentialLaw::traps(L["p"].get<double>(), beta);
    } else if (kind == "two_point") {
        law = PotentialLaw::two_point(L["v0"].get<double>(), L["v1"].get<double>(), L["p"].get<double>(), beta);
    } else if (kind == "exponential") {
        law = PotentialLaw::exponential(L["rate"].get<double>(), beta);
    } else {
        std::vector<std::pair<double, double>> atoms;
        for (const auto& a : L["atoms"]) {
            if (!a.is_array() || a.size() != 2) throw invalid("law atoms are [value, probability]");
            double v = a[0].is_string() && a[0].get<std::string>() == "inf" ? kInf : a[0].get<double>();
            atoms.push_back({v, a[1].get<double>()});
        }
        law = PotentialLaw::discrete(atoms, beta);
    }
    law.validate();
    return law;
}

RVec config_drift(const Json& cfg) {
    RVec h{};
    const auto& a = cfg["model"]["h"];
    for (std::size_t k = 0; k < a.size(); ++k) h[k] = a[k].get<double>();
    return h;
}

PolymerModel config_model(const Json& cfg) {
    PolymerModel m;
    m.steps = config_steps(cfg);
    m.law = config_law(cfg);
    m.h = config_drift(cfg);
    m.lambda = cfg["model"]["lambda"].get<double>();
    m.validate();
    return m;
}

std::vector<std::uint64_t> config_seeds(const Json& cfg) {
    return seed_range(cfg["run"]["seed"].get<std::uint64_t>(), cfg["run"]["seeds"].get<int>());
}

// ---- outputs ----

bool RunOutput::ok() const {
    for (auto it = checks.begin(); it != checks.end(); ++it)
        if (!it.value().get<bool>()) return false;
    return true;
}

std::string RunOutput::summary(const std::string& subcommand, const Json& cfg) const {
    Json c = cfg;
    c["run"].erase("threads");
    c["run"].erase("out");
    Json j;
    j["subcommand"] = subcommand;
    j["config"] = c;
    j["config_hash"] = config_hash(cfg);
    j["results"] = results;
    j["checks"] = checks;
    j["status"] = ok() ? "ok" : "check_failed";
    return j.dump(2) + "\n";
}

// ---- subcommands ----

namespace {

SurchargeGeometry build_geometry(const Json& cfg, const StepDistribution& steps, const PotentialLaw& law,
                                 const RVec& h) {
    const int d = steps.d;
    if (cfg["engine"]["geometry"].get<std::string>() == "euclidean" || d != 2)
        return SurchargeGeometry::euclidean(d, h);
    return SurchargeGeometry::polymer(steps, law, h, cfg["engine"]["tables_n"].get<int>(), threads_of(cfg));
}

PieceCatalogue build_catalogue(const Json& cfg) {
    const auto steps = config_steps(cfg);
    const auto law = config_law(cfg);
    const RVec h = config_drift(cfg);
    auto g = build_geometry(cfg, steps, law, h);
    auto c = make_catalogue(g, steps, law, cfg["engine"]["m_cap"].get<int>(), threads_of(cfg), h);
    normalize_lambda(c);
    return c;
}

RunOutput cmd_quenched(const Json& cfg) {
    RunOutput out;
    const PolymerModel model = config_model(cfg);
    const auto ladder = ladder_of(cfg);
    const auto seeds = config_seeds(cfg);
    const int nmax = *std::max_element(ladder.begin(), ladder.end());
    const bool verify = cfg["engine"]["verify"].get<bool>();
    std::vector<std::vector<double>> lz(seeds.size(), std::vector<double>(ladder.size()));
    std::vector<double> worst(seeds.size(), 0.0);
    parallel_for(seeds.size(), threads_of(cfg), [&](std::size_t si) {
        EnvironmentField env(model.law, Box::centered(model.steps.d, nmax * model.steps.range), seeds[si], true);
        for (std::size_t k = 0; k < ladder.size(); ++k) {
            lz[si][k] = quenched_partition(model, env, ladder[k]).log_z;
            if (verify && ladder[k] <= 8) {
                double le = quenched_partition_enumerated(model, env, ladder[k]);
                double diff = (le == lz[si][k]) ? 0.0 : std::abs(le - lz[si][k]) / std::max(1.0, std::abs(le));
                worst[si] = std::max(worst[si], diff);
            }
        }
    });
    std::ostringstream csv;
    csv.precision(17);
    csv << "seed,n,log_z\n";
    for (std::size_t si = 0; si < seeds.size(); ++si)
        for (std::size_t k = 0; k < ladder.size(); ++k) csv << seeds[si] << "," << ladder[k] << "," << lz[si][k] << "\n";
    out.files.push_back({"quenched.csv", csv.str()});
    Json rows = Json::array();
    for (std::size_t k = 0; k < ladder.size(); ++k) {
        std::vector<double> per;
        int dead = 0;
        for (std::size_t si = 0; si < seeds.size(); ++si) {
            if (lz[si][k] == kNegInf) ++dead;
            else per.push_back(lz[si][k] / std::max(1, ladder[k]));
        }
        double se = 0, m = mean_se(per, se);
        rows.push_back({{"n", ladder[k]}, {"mean_log_z_per_n", m}, {"stderr", se}, {"zero_partition_seeds", dead}});
        out.lines.push_back("n=" + std::to_string(ladder[k]) + "  (1/n) log Z^w = " + fmt(m) + " +- " + fmt(se));
    }
    out.results["ladder"] = rows;
    if (verify) {
        double w = *std::max_element(worst.begin(), worst.end());
        out.results["dp_vs_enumeration_max_rel"] = w;
        out.checks["dp_equals_enumeration"] = w <= 1e-10;
    }
    return out;
}

RunOutput cmd_annealed(const Json& cfg) {
    RunOutput out;
    const PolymerModel model = config_model(cfg);
    const auto ladder = ladder_of(cfg);
    std::ostringstream csv;
    csv.precision(17);
    Json rows = Json::array();
    if (cfg["engine"]["exact"].get<bool>()) {
        EnumerationOptions eo;
        eo.threads = threads_of(cfg);
        const int nmax = *std::max_element(ladder.begin(), ladder.end());
        AnnealedTables T = annealed_tables(model.steps, model.law, nmax, eo);
        csv << "n,log_z,z\n";
        for (int n : ladder) {
            const double lz = T.log_z(n, model.h) - model.lambda * n;
            csv << n << "," << lz << "," << std::exp(lz) << "\n";
            rows.push_back({{"n", n}, {"log_z", lz}, {"z", std::exp(lz)}});
            out.lines.push_back("n=" + std::to_string(n) + "  log Z = " + fmt(lz) + "  Z = " + fmt(std::exp(lz)));
        }
        if (ladder.size() >= 2) {
            auto fe = free_energy_annealed(model, ladder, eo);
            out.results["free_energy"] = {{"lower", fe.lower}, {"upper", fe.upper}, {"extrapolated", fe.extrapolated},
                                          {"certified", fe.certified}};
        }
    } else {
        MCOptions mo;
        mo.threads = threads_of(cfg);
        csv << "n,z_mean,z_stderr,ess\n";
        const auto chains = cfg["engine"]["chains"].get<std::size_t>();
        const auto seed = cfg["run"]["seed"].get<std::uint64_t>();
        for (int n : ladder) {
            auto e = annealed_partition_mc(model, n, chains, seed, mo);
            csv << n << "," << e.mean << "," << e.stderr_ << "," << e.ess << "\n";
            rows.push_back({{"n", n}, {"z_mean", e.mean}, {"z_stderr", e.stderr_}, {"ess", e.ess}});
            out.lines.push_back("n=" + std::to_string(n) + "  Z = " + fmt(e.mean) + " +- " + fmt(e.stderr_));
        }
    }
    out.results["ladder"] = rows;
    out.files.push_back({"annealed.csv", csv.str()});
    return out;
}

RenewalKernel named_kernel(const Json& cfg) {
    const std::string file = cfg["engine"]["kernel_file"].get<std::string>();
    if (!file.empty()) {
        std::ifstream in(file);
        if (!in) throw invalid("cannot read kernel file " + file);
        std::stringstream ss;
        ss << in.rdbuf();
        return RenewalKernel::from_text(cfg["model"]["d"].get<int>(), ss.str());
    }
    const std::string name = cfg["engine"]["kernel"].get<std::string>();
    RenewalKernel k;
    k.d = 1;
    if (name == "srw1d") {
        k.entries = {{unit(0, 1), 1, 0.5}, {unit(0, -1), 1, 0.5}};
    } else if (name == "geometric") {
        for (int n = 1; n <= 60; ++n) k.entries.push_back({Vec{}, n, std::ldexp(1.0, -n)});
    } else if (name == "half") {
        k.entries = {{Vec{}, 1, 0.5}, {Vec{}, 2, 0.5}};
    } else {
        throw invalid("engine.kernel must be srw1d, geometric or half (or set engine.kernel_file)");
    }
    return k;
}

RunOutput cmd_renewal(const Json& cfg) {
    RunOutput out;
    RenewalKernel k = named_kernel(cfg);
    k.validate();
    const int n = cfg["engine"]["n"].get<int>();
    const auto f = k.marginal();
    double mu = 0;
    for (std::size_t m = 1; m < f.size(); ++m) mu += m * f[m];
    const auto t = renewal_1d(f, n);
    const auto lr = renewal_limit_rate(t, mu);
    std::ostringstream csv;
    csv.precision(17);
    csv << "n,t,deviation\n";
    for (int i = 0; i <= n; ++i) csv << i << "," << t[i] << "," << lr.deviation[i] << "\n";
    out.files.push_back({"renewal.csv", csv.str()});
    out.results["mass"] = k.mass();
    out.results["mu"] = mu;
    out.results["sup_deviation"] = lr.sup_deviation;
    out.results["fitted_rate"] = lr.rate;
    out.results["exponential"] = lr.exponential;
    out.lines.push_back("mu = " + fmt(mu) + "  sup |t(n) - 1/mu| = " + fmt(lr.sup_deviation) + "  rate = " + fmt(lr.rate));
    if (f.size() <= 61) {
        const double oracle = renewal_decay_oracle(f);
        out.results["oracle_rate"] = oracle;
        // t(n) already at 1/mu: nothing to fit
        if (lr.sup_deviation <= 1e-12)
            out.checks["limit_exact"] = true;
        else if (std::isfinite(oracle))
            out.checks["rate_within_10pct"] = lr.exponential && std::abs(lr.rate - oracle) <= 0.1 * oracle;
    }
    bool spatial = false;
    for (const auto& e : k.entries) spatial = spatial || norm_inf(e.x) != 0;
    if (spatial && n >= 8 && n <= 2000) {
        auto arr = renewal_multid(k, n);
        auto at0 = solve_shape(k, RVec{});
        std::vector<int> nl{n / 4, n / 2, n};
        auto rep = verify_local_clt(arr, k, at0, nl, cfg["engine"]["lclt_radius"].get<double>());
        std::ostringstream lc;
        lc.precision(17);
        lc << "n,max_rel_dev,points\n";
        for (const auto& r : rep.rows) lc << r.n << "," << r.max_rel_dev << "," << r.points << "\n";
        out.files.push_back({"local_clt.csv", lc.str()});
        if (!rep.degenerate && !rep.rows.empty()) {
            const double dev = rep.rows.back().max_rel_dev;
            out.results["local_clt_max_rel_dev"] = dev;
            out.results["period"] = rep.period;
            out.checks["local_clt"] = dev <= (k.d == 1 ? 0.05 : 0.08);
            out.lines.push_back("local CLT at n = " + std::to_string(n) + ": max relative deviation " + fmt(dev));
        }
    }
    return out;
}

RunOutput cmd_decompose(const Json& cfg) {
    RunOutput out;
    const auto steps = config_steps(cfg);
    const auto law = config_law(cfg);
    const RVec h = config_drift(cfg);
    auto g = build_geometry(cfg, steps, law, h);
    std::vector<int> list = cfg["engine"]["n_max_list"].get<std::vector<int>>();
    if (list.empty()) list.push_back(cfg["engine"]["n_max"].get<int>());
    const int th = threads_of(cfg);
    std::ostringstream csv;
    csv.precision(17);
    csv << "n_max,mass,pieces,velocity_1,chi\n";
    Json rows = Json::array();
    std::vector<double> masses;
    KernelEstimate last;
    for (int nm : list) {
        last = estimate_irreducible_kernel(g, steps, law, nm, th);
        masses.push_back(last.mass);
        csv << nm << "," << last.mass << "," << last.pieces << "," << last.velocity[0] << "," << last.chi << "\n";
        rows.push_back({{"n_max", nm}, {"mass", last.mass}, {"pieces", last.pieces}, {"chi", last.chi},
                        {"velocity", std::vector<double>(last.velocity.begin(), last.velocity.begin() + steps.d)}});
        out.lines.push_back("n_max=" + std::to_string(nm) + "  mass = " + fmt(last.mass) + "  pieces = " +
                            std::to_string(last.pieces));
    }
    out.results["lambda"] = g.lambda();
    out.results["kernel"] = rows;
    out.files.push_back({"kernel_mass.csv", csv.str()});
    out.files.push_back({"kernel.txt", last.f.to_text()});
    if (masses.size() > 1) {
        bool inc = true;
        for (std::size_t i = 1; i < masses.size(); ++i) inc = inc && masses[i] > masses[i - 1];
        out.checks["mass_increasing"] = inc;
    }
    const double min_mass = cfg["engine"]["min_mass"].get<double>();
    if (min_mass > 0) out.checks["mass_at_least_min"] = masses.back() >= min_mass;
    return out;
}

RunOutput cmd_geometry(const Json& cfg) {
    RunOutput out;
    const auto steps = config_steps(cfg);
    const auto law = config_law(cfg);
    const RVec h = config_drift(cfg);
    if (steps.d != 2) throw invalid("geometry needs model.d = 2");
    EnumerationOptions eo;
    eo.threads = threads_of(cfg);
    auto T = annealed_tables(steps, law, cfg["engine"]["tables_n"].get<int>(), eo);
    auto shape = polymer_shape(T, h, cfg["engine"]["directions"].get<int>());
    auto g = SurchargeGeometry::polymer(shape);
    auto rep = g.validate();
    std::ostringstream csv;
    csv.precision(17);
    csv << "angle,tau,surcharge\n";
    const int M = 360;
    for (int i = 0; i < M; ++i) {
        const double a = 2 * std::numbers::pi * i / M;
        RVec u{std::cos(a), std::sin(a), 0, 0};
        csv << a << "," << g.tau(u) << "," << g.surcharge(u) << "\n";
    }
    out.files.push_back({"tau.csv", csv.str()});
    out.files.push_back({"K_lambda.json", shape.K.to_json() + "\n"});
    out.results["lambda"] = shape.lambda;
    out.results["r_lambda"] = g.r_lambda(steps.range);
    Json sec = Json::array();
    for (int i = 1; i <= 3; ++i) sec.push_back({{"lo", g.sector(i).lo}, {"hi", g.sector(i).hi}});
    out.results["sectors"] = sec;
    out.results["min_surcharge"] = rep.min_surcharge;
    out.checks["surcharge_nonnegative"] = rep.min_surcharge >= -1e-9;
    out.checks["cones_nested"] = rep.nested;
    out.checks["lattice_direction_in_cones"] = rep.lattice_direction;
    out.lines.push_back("lambda(h) = " + fmt(shape.lambda) + "  Y3 = [" + fmt(g.sector(3).lo) + ", " +
                        fmt(g.sector(3).hi) + "]");
    return out;
}

RunOutput cmd_weak(const Json& cfg) {
    RunOutput out;
    const PieceCatalogue c = build_catalogue(cfg);
    const int n = cfg["engine"]["n"].get<int>();
    const auto seeds = config_seeds(cfg);
    const auto a = annealed_renewal(c, n);
    std::vector<SinaiLedger> led(seeds.size());
    parallel_for(seeds.size(), threads_of(cfg), [&](std::size_t si) {
        led[si] = sinai_ledger(basic_quenched(c, environment_weight(c.law, seeds[si]), n, seeds[si]), a);
    });
    double worst = 0, tele = 0;
    for (const auto& L : led) {
        worst = std::max(worst, L.max_residual);
        tele = std::max(tele, std::abs(L.telescope_lhs - L.telescope_rhs) / std::max(1.0, std::abs(L.telescope_lhs)));
        tele = std::max(tele, std::abs(L.telescope_lhs - L.in_flight) / std::max(1.0, std::abs(L.telescope_lhs)));
    }
    std::ostringstream csv;
    csv.precision(17);
    csv << "n,mean_Y,stderr_Y,mean_s,mean_t_quenched,t_annealed\n";
    for (int l = 0; l <= n; ++l) {
        std::vector<double> y, s, tq;
        for (const auto& L : led) y.push_back(L.Y[l]), s.push_back(L.s[l]), tq.push_back(L.tq[l]);
        double se = 0, my = mean_se(y, se), dummy = 0;
        csv << l << "," << my << "," << se << "," << mean_se(s, dummy) << "," << mean_se(tq, dummy) << "," << a.t[l]
            << "\n";
    }
    out.files.push_back({"ledger_summary.csv", csv.str()});
    out.files.push_back({"ledger_seed" + std::to_string(seeds.front()) + ".csv", led.front().to_csv()});
    out.results["pieces"] = c.pieces.size();
    out.results["lambda_star"] = c.lambda;
    out.results["mu"] = a.mu;
    out.results["approximate"] = n > c.m_cap;
    out.results["max_ledger_residual"] = worst;
    out.results["max_telescoping_gap"] = tele;
    out.checks["ledger_identity"] = worst <= 1e-10;
    out.checks["telescoping"] = tele <= 1e-10;
    out.lines.push_back("Sinai ledger: " + std::to_string(seeds.size()) + " seeds, n <= " + std::to_string(n) +
                        ", max residual " + fmt(worst));
    if (cfg["engine"]["mixingale"].get<bool>()) {
        MixingaleOptions mo;
        mo.n_max = n;
        mo.ks = cfg["engine"]["ks"].get<std::vector<int>>();
        mo.resamples = cfg["engine"]["resamples"].get<int>();
        mo.threads = threads_of(cfg);
        auto R = mixingale_diagnostics(c, seeds, mo);
        out.results["mixingale"] = Json::parse(R.to_json());
        out.lines.push_back("mixingale: fitted l-exponent " + fmt(R.ell_exponent) +
                            (R.summable ? " (summable, weak-disorder candidate)" : " (not summable)"));
    }
    return out;
}

RunOutput cmd_strong(const Json& cfg) {
    RunOutput out;
    const PolymerModel model = config_model(cfg);
    const auto seeds = config_seeds(cfg);
    const int th = threads_of(cfg);
    auto rows = strong_disorder_ratio(model, ladder_of(cfg), seeds, th);
    out.files.push_back({"ratio.csv", ratio_rows_csv(rows)});
    Json jr = Json::array();
    for (const auto& r : rows) {
        jr.push_back({{"n", r.n}, {"median", r.median}, {"q10", r.q10}, {"q90", r.q90}, {"mean_ratio", r.mean_ratio},
                      {"mean_ratio_stderr", r.mean_ratio_stderr}, {"negatives", r.negatives},
                      {"sign_p_value", r.sign_p_value}});
        out.lines.push_back("n=" + std::to_string(r.n) + "  median (1/n) log(Z^w/Z) = " + fmt(r.median) +
                            "  negatives " + std::to_string(r.negatives) + "/" + std::to_string(seeds.size()));
    }
    out.results["ratio"] = jr;
    out.checks["median_negative_99"] = rows.back().negative_99;

    const auto Ns = cfg["engine"]["N"].get<std::vector<int>>();
    if (!Ns.empty() && model.steps.d == 2) {
        const PieceCatalogue c = build_catalogue(cfg);
        Json fr = Json::array();
        bool control = true;
        for (int N : Ns) {
            FractionalOptions fo;
            fo.alpha = cfg["engine"]["alpha"].get<double>();
            fo.N = N;
            fo.tilt = cfg["engine"]["tilt"].get<bool>();
            fo.threads = th;
            auto F = fractional_moment_experiment(c, seeds, fo);
            fo.alpha = 1;
            fo.tilt = false;
            auto F1 = fractional_moment_experiment(c, seeds, fo);
            const bool ok1 = std::abs(F1.mean - F1.annealed) <= 3 * F1.stderr_;
            control = control && ok1;
            Json j = Json::parse(F.to_json());
            j["alpha1_mean"] = F1.mean;
            j["alpha1_stderr"] = F1.stderr_;
            j["alpha1_annealed"] = F1.annealed;
            fr.push_back(j);
            out.lines.push_back("N=" + std::to_string(N) + "  per-step factor " + fmt(F.factor) + " (95% upper " +
                                fmt(F.factor_hi) + ")  alpha=1 control " + fmt(F1.mean) + " vs " + fmt(F1.annealed));
        }
        out.results["fractional"] = fr;
        out.results["lambda_star"] = c.lambda;
        out.checks["alpha1_control"] = control;
    }
    return out;
}

// ---- selftest ----

struct SelfCheck {
    std::string name;
    std::function<std::pair<bool, std::string>()> run;
};

RunOutput cmd_selftest(const Json& cfg) {
    RunOutput out;
    const int th = threads_of(cfg);
    auto srw2 = StepDistribution::simple(2);
    std::vector<SelfCheck> list;
    list.push_back({"quenched_dp_vs_enumeration", [] {
                        double worst = 0;
                        for (int d : {1, 2}) {
                            PolymerModel m;
                            m.steps = StepDistribution::simple(d);
                            m.law = PotentialLaw::two_point(0, 1, 0.5, 1.0);
                            m.h = RVec{0.3, 0, 0, 0};
                            for (std::uint64_t s = 0; s < 3; ++s) {
                                EnvironmentField env(m.law, Box::centered(d, 6), s, true);
                                for (int n = 1; n <= 6; ++n) {
                                    double a = quenched_partition(m, env, n).log_z;
                                    double b = quenched_partition_enumerated(m, env, n);
                                    worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(b)));
                                }
                            }
                        }
                        return std::make_pair(worst <= 1e-10, "max rel " + fmt(worst));
                    }});
    list.push_back({"annealed_traps_half_n3", [] {
                        PolymerModel m;
                        m.steps = StepDistribution::simple(1);
                        m.law = PotentialLaw::traps(0.5);
                        double z = std::exp(annealed_partition_exact(m, 3));
                        return std::make_pair(std::abs(z - 0.1875) <= 1e-14, "Z_3 = " + fmt(z));
                    }});
    list.push_back({"renewal_geometric_limit", [] {
                        std::vector<double> f(61, 0.0);
                        for (int n = 1; n <= 60; ++n) f[n] = std::ldexp(1.0, -n);
                        auto lr = renewal_limit_rate(renewal_1d(f, 50), 2.0);
                        return std::make_pair(lr.sup_deviation <= 1e-12, "sup dev " + fmt(lr.sup_deviation));
                    }});
    list.push_back({"renewal_half_rate", [] {
                        auto lr = renewal_limit_rate(renewal_1d({0, 0.5, 0.5}, 80), 1.5);
                        return std::make_pair(std::abs(lr.rate - std::log(2.0)) <= 0.1 * std::log(2.0),
                                              "rate " + fmt(lr.rate));
                    }});
    list.push_back({"shape_log_cosh", [] {
                        RenewalKernel k;
                        k.entries = {{unit(0, 1), 1, 0.5}, {unit(0, -1), 1, 0.5}};
                        double worst = 0;
                        for (int i = -10; i <= 10; ++i) {
                            RVec xi{i / 10.0, 0, 0, 0};
                            worst = std::max(worst, std::abs(solve_shape(k, xi).lambda - std::log(std::cosh(xi[0]))));
                        }
                        return std::make_pair(worst <= 1e-10, "max err " + fmt(worst));
                    }});
    list.push_back({"local_clt_pm1", [] {
                        RenewalKernel k;
                        k.entries = {{unit(0, 1), 1, 0.5}, {unit(0, -1), 1, 0.5}};
                        auto rep = verify_local_clt(renewal_multid(k, 200), k, solve_shape(k, RVec{}), {200}, 1.0);
                        double dev = rep.rows.empty() ? 1.0 : rep.rows[0].max_rel_dev;
                        return std::make_pair(dev <= 0.05, "max rel dev " + fmt(dev));
                    }});
    list.push_back({"local_ld_pm1", [] {
                        RenewalKernel k;
                        k.entries = {{unit(0, 1), 1, 0.5}, {unit(0, -1), 1, 0.5}};
                        auto ld = local_ld(k, renewal_multid(k, 200), RVec{0.5, 0, 0, 0}, 200);
                        const double closed = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
                        bool ok = std::abs(ld.J - closed) <= 1e-6 && ld.rel_error <= 0.05;
                        return std::make_pair(ok, "J err " + fmt(std::abs(ld.J - closed)) + ", prefactor " +
                                                      fmt(ld.rel_error));
                    }});
    list.push_back({"superadditivity", [&] {
                        auto T = annealed_tables(srw2, PotentialLaw::traps(0.8), 8, {});
                        bool ok = true;
                        for (double hx : {0.0, 0.5, 1.0})
                            for (int n = 1; n <= 8; ++n)
                                for (int m = 1; n + m <= 8; ++m) {
                                    RVec h{hx, 0.2, 0, 0};
                                    ok = ok && T.log_z(n + m, h) >= T.log_z(n, h) + T.log_z(m, h) - 1e-12;
                                }
                        ok = ok && T.log_z(8, RVec{}) <= 1e-12;
                        return std::make_pair(ok, std::string("n + m <= 8"));
                    }});
    list.push_back({"legendre_involution", [] {
                        Grid g = Grid::uniform(1, -2, 2, 401);
                        auto f = ConvexGridFunction::tabulate(g, [](const RVec& h) { return std::cosh(h[0]); });
                        Grid s = Grid::uniform(1, -4, 4, 801);
                        auto back = legendre_fenchel(legendre_fenchel(f, s), g);
                        double worst = 0;
                        for (std::size_t i = 0; i < g.size(); ++i)
                            worst = std::max(worst, std::abs(back.values[i] - f.values[i]));
                        return std::make_pair(worst <= 2 * g.spacing(0) * 4, "max err " + fmt(worst));
                    }});
    // one shared polymer geometry for the decomposition checks
    auto geo = std::make_shared<SurchargeGeometry>(
        SurchargeGeometry::polymer(srw2, PotentialLaw::traps(0.8), RVec{2.5, 0, 0, 0}, 10, th));
    list.push_back({"factorization_d2", [&, geo] {
                        double worst = 0;
                        long dec = 0;
                        for (int n = 2; n <= 6; ++n)
                            enumerate_paths(srw2, n, [&](const LatticePath& p, double) {
                                auto s = irreducible_split(*geo, p);
                                if (!s.decomposable()) return;
                                ++dec;
                                auto f = check_factorization(srw2, PotentialLaw::traps(0.8), geo->h(), geo->lambda(),
                                                             p, s);
                                worst = std::max(worst, f.rel_error);
                            });
                        return std::make_pair(worst <= 1e-12 && dec > 0,
                                              std::to_string(dec) + " paths, max rel " + fmt(worst));
                    }});
    list.push_back({"kernel_mass_increasing", [&, geo] {
                        auto a = estimate_irreducible_kernel(*geo, srw2, PotentialLaw::traps(0.8), 8, th);
                        auto b = estimate_irreducible_kernel(*geo, srw2, PotentialLaw::traps(0.8), 10, th);
                        return std::make_pair(b.mass > a.mass, fmt(a.mass) + " -> " + fmt(b.mass));
                    }});
    list.push_back({"sinai_ledger", [&, geo] {
                        auto c = make_catalogue(*geo, srw2, PotentialLaw::traps(0.8), 8, th);
                        normalize_lambda(c);
                        auto a = annealed_renewal(c, 20);
                        double worst = 0;
                        for (std::uint64_t s = 1; s <= 5; ++s)
                            worst = std::max(worst,
                                             sinai_ledger(basic_quenched(c, environment_weight(c.law, s), 20), a).max_residual);
                        return std::make_pair(worst <= 1e-10, "max residual " + fmt(worst));
                    }});
    list.push_back({"strong_disorder_sign", [&] {
                        PolymerModel m;
                        m.steps = srw2;
                        m.law = PotentialLaw::traps(0.6);
                        m.h = RVec{2.5, 0, 0, 0};
                        auto rows = strong_disorder_ratio(m, {8}, seed_range(1, 200), th);
                        return std::make_pair(rows[0].negative_99, "median " + fmt(rows[0].median));
                    }});
    list.push_back({"worker_count_invariance", [&] {
                        PolymerModel m;
                        m.steps = srw2;
                        m.law = PotentialLaw::traps(0.6);
                        m.h = RVec{2.5, 0, 0, 0};
                        auto a = ratio_rows_csv(strong_disorder_ratio(m, {6}, seed_range(1, 64), 1));
                        auto b = ratio_rows_csv(strong_disorder_ratio(m, {6}, seed_range(1, 64), std::max(2, th)));
                        return std::make_pair(a == b, std::string(a == b ? "identical" : "differs"));
                    }});
    list.push_back({"presets_valid", [] {
                        for (const auto& name : preset_names()) {
                            Json c = merge_config(default_config(), preset_config(name));
                            validate_config(c);
                            config_model(c);
                        }
                        return std::make_pair(true, std::to_string(preset_names().size()) + " presets");
                    }});
    std::ostringstream csv;
    csv << "check,pass,detail\n";
    for (const auto& c : list) {
        std::pair<bool, std::string> r;
        try {
            r = c.run();
        } catch (const std::exception& e) {
            r = {false, e.what()};
        }
        out.checks[c.name] = r.first;
        out.results[c.name] = r.second;
        csv << c.name << "," << (r.first ? "pass" : "FAIL") << ",\"" << r.second << "\"\n";
        char buf[200];
        std::snprintf(buf, sizeof buf, "%-4s  %-28s %s", r.first ? "PASS" : "FAIL", c.name.c_str(), r.second.c_str());
        out.lines.push_back(buf);
    }
    out.files.push_back({"selftest.csv", csv.str()});
    return out;
}

}  // namespace

std::vector<std::string> subcommand_names() {
    return {"quenched", "annealed", "renewal", "decompose", "geometry", "weak-disorder", "strong-disorder", "selftest"};
}

RunOutput run_subcommand(const std::string& sub, const Json& cfg) {
    validate_config(cfg);
    if (sub == "quenched") return cmd_quenched(cfg);
    if (sub == "annealed") return cmd_annealed(cfg);
    if (sub == "renewal") return cmd_renewal(cfg);
    if (sub == "decompose") return cmd_decompose(cfg);
    if (sub == "geometry") return cmd_geometry(cfg);
    if (sub == "weak-disorder") return cmd_weak(cfg);
    if (sub == "strong-disorder") return cmd_strong(cfg);
    if (sub == "selftest") return cmd_selftest(cfg);
    throw Error("SubcommandUnknown", "unknown subcommand '" + sub + "'");
}

// ---- command line ----

int cli_main(int argc, char** argv) {
    CLI::App app{"random polymer experiments"};
    std::string sub, config_path, preset, out_dir, kernel;
    std::vector<std::string> sets;
    std::optional<std::uint64_t> seed;
    std::optional<int> seeds, threads, n, n_max, m_cap;
    std::optional<double> alpha, beta;
    bool exact = false, mc = false, quiet = false;
    app.add_option("subcommand", sub, "one of: quenched annealed renewal decompose geometry weak-disorder "
                                      "strong-disorder selftest")
        ->required();
    app.add_option("--config", config_path, "JSON config file");
    app.add_option("--preset", preset, "named preset, applied before --config");
    app.add_option("--seed", seed, "first environment seed");
    app.add_option("--seeds", seeds, "number of seeds");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--threads", threads, "worker threads");
    app.add_option("--n", n, "length");
    app.add_option("--n-max", n_max, "largest piece length for decompose");
    app.add_option("--m-cap", m_cap, "piece length cap for the disorder catalogue");
    app.add_option("--kernel", kernel, "renewal kernel: srw1d, geometric, half");
    app.add_option("--alpha", alpha, "fractional moment exponent");
    app.add_option("--beta", beta, "inverse temperature");
    app.add_flag("--exact", exact, "exact enumeration");
    app.add_flag("--mc", mc, "Monte Carlo instead of enumeration");
    app.add_option("--set", sets, "override, e.g. engine.ladder=[4,8]");
    app.add_flag("--quiet", quiet, "no stdout report");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }
    Json cfg;
    try {
        const auto names = subcommand_names();
        if (std::find(names.begin(), names.end(), sub) == names.end())
            throw Error("SubcommandUnknown", "unknown subcommand '" + sub + "'");
        cfg = default_config();
        if (!preset.empty()) cfg = merge_config(cfg, preset_config(preset));
        if (!config_path.empty()) {
            std::ifstream in(config_path);
            if (!in) throw invalid("cannot read " + config_path);
            Json file;
            try {
                file = Json::parse(in);
            } catch (const Json::exception& e) {
                throw invalid(std::string("parse error: ") + e.what());
            }
            cfg = merge_config(cfg, file);
        }
        if (const char* e = std::getenv("RPOLY_SEED")) cfg["run"]["seed"] = std::stoull(e);
        if (const char* e = std::getenv("RPOLY_SEEDS")) cfg["run"]["seeds"] = std::stoi(e);
        if (const char* e = std::getenv("RPOLY_OUT")) cfg["run"]["out"] = std::string(e);
        if (seed) cfg["run"]["seed"] = *seed;
        if (seeds) cfg["run"]["seeds"] = *seeds;
        if (threads) cfg["run"]["threads"] = *threads;
        if (!out_dir.empty()) cfg["run"]["out"] = out_dir;
        if (n) cfg["engine"]["n"] = *n, cfg["engine"]["ladder"] = Json::array();
        if (n_max) cfg["engine"]["n_max"] = *n_max, cfg["engine"]["n_max_list"] = Json::array();
        if (m_cap) cfg["engine"]["m_cap"] = *m_cap;
        if (!kernel.empty()) cfg["engine"]["kernel"] = kernel;
        if (alpha) cfg["engine"]["alpha"] = *alpha;
        if (beta) cfg["model"]["beta"] = *beta;
        if (exact) cfg["engine"]["exact"] = true;
        if (mc) cfg["engine"]["exact"] = false;
        for (const auto& s : sets) apply_assignment(cfg, s);
        validate_config(cfg);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: ConfigInvalid: " << e.what() << "\n";
        return 2;
    }

    RunOutput out;
    try {
        out = run_subcommand(sub, cfg);
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return e.code() == "ConfigInvalid" || e.code() == "SubcommandUnknown" ? 2 : 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    try {
        namespace fs = std::filesystem;
        const fs::path dir = cfg["run"]["out"].get<std::string>();
        fs::create_directories(dir);
        for (const auto& [name, body] : out.files) std::ofstream(dir / name, std::ios::binary) << body;
        std::ofstream(dir / "summary.json", std::ios::binary) << out.summary(sub, cfg);
        if (!quiet) {
            for (const auto& l : out.lines) std::cout << l << "\n";
            std::cout << (out.ok() ? "status: ok" : "status: check failed") << "  (" << (dir / "summary.json").string()
                      << ", config " << config_hash(cfg) << ")\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: writing outputs: " << e.what() << "\n";
        return 1;
    }
    return out.ok() ? 0 : 1;
}

}  // namespace rpoly
