// One line per criterion: "AC<k> PASS|FAIL <seconds>s  <detail>". Exit status 1 if any fails.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "rpoly/geometry.hpp"
#include "rpoly/parallel.hpp"
#include "rpoly/runner.hpp"

using namespace rpoly;
namespace fs = std::filesystem;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string num(double x) {
    char b[64];
    std::snprintf(b, sizeof b, "%.4g", x);
    return b;
}

RVec rv(double a, double b = 0) { return RVec{a, b, 0, 0}; }
Vec v2(int a, int b) { return Vec{a, b, 0, 0}; }

PolymerModel model(int d, const PotentialLaw& law, RVec h = {}) {
    PolymerModel m;
    m.steps = StepDistribution::simple(d);
    m.law = law;
    m.h = h;
    return m;
}

RenewalKernel pm1() {
    RenewalKernel k;
    k.entries = {{Vec{1, 0, 0, 0}, 1, 0.5}, {Vec{-1, 0, 0, 0}, 1, 0.5}};
    return k;
}

const SurchargeGeometry& trap_geometry() {
    static const SurchargeGeometry g =
        SurchargeGeometry::polymer(StepDistribution::simple(2), PotentialLaw::traps(0.8), rv(2.5), 10);
    return g;
}

Json preset(const std::string& name) { return merge_config(default_config(), preset_config(name)); }

Outcome ac1() {
    double worst = 0;
    int compared = 0;
    for (int d : {1, 2}) {
        auto m = model(d, PotentialLaw::two_point(0, 1.3, 0.4, 0.8), rv(0.3, -0.1));
        if (d == 1) m.h[1] = 0;
        for (std::uint64_t s = 0; s < 25; ++s) {
            auto env = sample_environment(m.law, Box::centered(d, 8), 1000 + s);
            for (int n = 0; n <= 8; ++n) {
                double a = quenched_partition(m, env, n).log_z;
                double b = quenched_partition_enumerated(m, env, n);
                worst = std::max(worst, std::abs(a - b) / std::max(1.0, std::abs(b)));
                ++compared;
            }
        }
    }
    return {worst <= 1e-10, std::to_string(compared) + " (d, env, n) cases, max log-rel gap " + num(worst)};
}

Outcome ac2() {
    const int S = 10000;
    double worst_z = 0;
    bool ok = true;
    std::vector<PolymerModel> models{model(1, PotentialLaw::two_point(0, 1, 0.5, 1.0), rv(0.3)),
                                     model(2, PotentialLaw::two_point(0, 1, 0.5, 1.0), rv(0.3, 0.1)),
                                     model(2, PotentialLaw::traps(0.8), rv(0.5))};
    for (const auto& m : models) {
        std::vector<std::vector<double>> z(S, std::vector<double>(11));
        parallel_for(S, 8, [&](std::size_t s) {
            EnvironmentField env(m.law, Box::centered(m.steps.d, 10), s, true);
            for (int n = 1; n <= 10; ++n) z[s][n] = std::exp(quenched_partition(m, env, n).log_z);
        });
        for (int n = 1; n <= 10; ++n) {
            double mean = 0, sq = 0;
            for (int s = 0; s < S; ++s) mean += z[s][n];
            mean /= S;
            for (int s = 0; s < S; ++s) sq += (z[s][n] - mean) * (z[s][n] - mean);
            const double se = std::sqrt(sq / (S - 1) / S);
            const double exact = std::exp(annealed_partition_exact(m, n));
            const double zs = se > 0 ? std::abs(mean - exact) / se : (mean == exact ? 0 : kInf);
            worst_z = std::max(worst_z, zs);
            ok = ok && zs <= 4;
        }
    }
    return {ok, "3 models, n = 1..10, 1e4 seeds, worst |mean - Z_n| = " + num(worst_z) + " stderr"};
}

Outcome ac3() {
    std::vector<double> f(61, 0.0);
    for (int n = 1; n <= 60; ++n) f[n] = std::ldexp(1.0, -n);
    auto t = renewal_1d(f, 50);
    double dev = 0;
    for (int n = 1; n <= 50; ++n) dev = std::max(dev, std::abs(t[n] - 0.5));
    auto lr = renewal_limit_rate(renewal_1d({0, 0.5, 0.5}, 80), 1.5);
    const bool rate_ok = std::abs(lr.rate - std::log(2.0)) <= 0.1 * std::log(2.0);
    return {dev <= 1e-12 && rate_ok, "geometric sup dev " + num(dev) + ", half-kernel rate " + num(lr.rate) +
                                         " vs log 2 = " + num(std::log(2.0))};
}

Outcome ac4() {
    auto k = pm1();
    double worst = 0;
    for (int i = -100; i <= 100; ++i) {
        const double xi = i / 100.0;
        worst = std::max(worst, std::abs(solve_shape(k, rv(xi)).lambda - std::log(std::cosh(xi))));
    }
    RenewalKernel m;
    m.d = 2;
    m.entries = {{Vec{0, 1, 0, 0}, 1, 0.3}, {Vec{2, 0, 0, 0}, 1, 0.2}, {Vec{3, -1, 0, 0}, 2, 0.4},
                 {Vec{-1, 0, 0, 0}, 3, 0.1}};
    double rel = 0;
    for (const auto& kern : {k, m}) {
        auto s = solve_shape(kern, RVec{});
        auto fd = shape_hessian_fd(kern, RVec{});
        for (int a = 0; a < kern.d; ++a)
            for (int b = 0; b < kern.d; ++b) {
                const double an = s.hess[a * kMaxDim + b];
                const double scale = std::max(std::abs(an), 1e-12);
                rel = std::max(rel, std::abs(an - s.hess_centered[a * kMaxDim + b]) / scale);
                rel = std::max(rel, std::abs(an - fd[a * kMaxDim + b]) / scale);
            }
    }
    return {worst <= 1e-10 && rel <= 1e-6, "log cosh max err " + num(worst) + ", Xi(0) max rel gap " + num(rel)};
}

Outcome ac5() {
    auto k = pm1();
    auto rep = verify_local_clt(renewal_multid(k, 200), k, solve_shape(k, RVec{}), {200}, 1.0);
    const double dev = rep.rows.empty() ? 1.0 : rep.rows[0].max_rel_dev;
    return {!rep.degenerate && dev <= 0.05, "n = 200, max relative deviation " + num(dev) + " over " +
                                                (rep.rows.empty() ? "0" : std::to_string(rep.rows[0].points)) +
                                                " points"};
}

Outcome ac6() {
    auto k = pm1();
    auto ld = local_ld(k, renewal_multid(k, 200), rv(0.5), 200);
    const double closed = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    const double err = std::abs(ld.J - closed);
    return {err <= 1e-6 && ld.rel_error <= 0.05,
            "J(0.5) err " + num(err) + ", prefactor rel err " + num(ld.rel_error)};
}

Outcome ac7() {
    const auto steps = StepDistribution::simple(2);
    const auto law = PotentialLaw::traps(0.8);
    const auto& g = trap_geometry();
    double worst = 0;
    long dec = 0, total = 0;
    for (int n = 1; n <= 10; ++n)
        enumerate_paths(steps, n, [&](const LatticePath& p, double) {
            ++total;
            auto s = irreducible_split(g, p);
            if (!s.decomposable()) return;
            ++dec;
            worst = std::max(worst, check_factorization(steps, law, g.h(), g.lambda(), p, s).rel_error);
        }, 20'000'000);
    // sampled longer paths: forward-biased walk
    int recon_ok = 0;
    for (int s = 0; s < 1000; ++s) {
        Rng rng(77, s);
        std::vector<Vec> v{Vec{}};
        for (int i = 0; i < 40; ++i) {
            const double u = rng.uniform();
            Vec st = u < 0.7 ? v2(1, 0) : u < 0.8 ? v2(0, 1) : u < 0.9 ? v2(0, -1) : v2(-1, 0);
            v.push_back(v.back() + st);
        }
        LatticePath p(v);
        auto split = irreducible_split(g, p);
        if (split.reconcatenate(p) == p) ++recon_ok;
        if (split.decomposable())
            worst = std::max(worst, check_factorization(steps, law, g.h(), g.lambda(), p, split).rel_error);
    }
    return {worst <= 1e-12 && recon_ok == 1000 && dec > 0,
            std::to_string(dec) + "/" + std::to_string(total) + " enumerated paths decomposable, max rel " +
                num(worst) + ", re-concatenation " + std::to_string(recon_ok) + "/1000"};
}

Outcome ac8() {
    auto out = run_subcommand("decompose", preset("traps-supercritical"));
    std::string masses;
    for (const auto& r : out.results["kernel"]) masses += (masses.empty() ? "" : " / ") + num(r["mass"].get<double>());
    return {out.ok() && out.checks.contains("mass_increasing") && out.checks.contains("mass_at_least_min"),
            "mass at n_max 10 / 12 / 14: " + masses};
}

Outcome ac9() {
    EnumerationOptions eo;
    eo.threads = 8;
    auto T = annealed_tables(StepDistribution::simple(2), PotentialLaw::traps(0.8), 12, eo);
    std::vector<RVec> grid;
    for (int i = -2; i <= 2; ++i)
        for (int j = -2; j <= 2; ++j) grid.push_back(rv(0.5 * i, 0.5 * j));
    long super_fail = 0, conv_fail = 0;
    for (const auto& h : grid)
        for (int n = 1; n <= 11; ++n)
            for (int m = 1; n + m <= 12; ++m)
                // n = m = 1 is an equality case; allow rounding of the sum only
                if (T.log_z(n + m, h) < T.log_z(n, h) + T.log_z(m, h) - 4e-16 * (1 + std::abs(T.log_z(n + m, h))))
                    ++super_fail;
    double zmax = kNegInf;
    for (int n = 0; n <= 12; ++n) zmax = std::max(zmax, T.log_z(n, RVec{}));
    for (int n = 1; n <= 12; ++n)
        for (const auto& a : grid)
            for (const auto& b : grid) {
                const RVec mid = scaled(plus(a, b), 0.5);
                if (T.log_z(n, mid) / n > 0.5 * (T.log_z(n, a) + T.log_z(n, b)) / n + 1e-12) ++conv_fail;
            }
    return {super_fail == 0 && zmax <= 0 && conv_fail == 0,
            "superadditivity violations " + std::to_string(super_fail) + ", max log Z_n(0) " + num(zmax) +
                ", midpoint convexity violations " + std::to_string(conv_fail)};
}

Outcome ac10() {
    bool ok = true;
    Rng rng(5);
    Grid g = Grid::uniform(1, -2, 2, 401);
    double lf = 0;
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<std::pair<double, double>> pieces;
        double lip = 0;
        for (int i = 0; i < 4; ++i) {
            pieces.push_back({6 * rng.uniform() - 3, 2 * rng.uniform() - 1});
            lip = std::max(lip, std::abs(pieces.back().first));
        }
        auto f = ConvexGridFunction::tabulate(g, [&](const RVec& h) {
            double m = kNegInf;
            for (auto [a, b] : pieces) m = std::max(m, a * h[0] + b);
            return m;
        });
        Grid slopes = Grid::uniform(1, -lip - 1, lip + 1, 2001);
        auto back = legendre_fenchel(legendre_fenchel(f, slopes), g);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double e = std::abs(back.values[i] - f.values[i]);
            lf = std::max(lf, e / (2 * g.spacing(0) * lip));
            ok = ok && e <= 2 * g.spacing(0) * lip;
        }
    }
    double curv = 0;
    for (double rho : {0.5, 1.0, 2.5})
        for (double th : {0.0, 0.7, 2.0})
            curv = std::max(curv, std::abs(radius_of_curvature([rho](double) { return rho; }, th) - rho));
    ok = ok && curv <= 1e-6;
    auto ell = ConvexBody::from_support(
        [](double t) { return std::sqrt(4 * std::cos(t) * std::cos(t) + std::sin(t) * std::sin(t)); });
    const double pol = hausdorff(ell.polar().polar(), ell);
    ok = ok && pol <= 2 * ell.table_spacing();
    SupportFn et = [](const RVec& x) { return std::sqrt(4 * x[0] * x[0] + x[1] * x[1]); };
    double radial = 0;
    for (int i = 0; i < 50; ++i) {
        RVec x{2 * rng.uniform() - 1, 2 * rng.uniform() - 1, 0, 0};
        radial = std::max(radial, principal_curvature(et, 2, x).radial_residual);
    }
    // second differences with step 1e-3: truncation O(1e-6) plus roundoff O(eps / step^2)
    ok = ok && radial <= 1e-5;
    return {ok, "LF worst/tolerance " + num(lf) + ", circle curvature err " + num(curv) + ", polar Hausdorff " +
                    num(pol) + " (spacing " + num(ell.table_spacing()) + "), |Xi_x x| " + num(radial)};
}

Outcome ac11() {
    Json cfg = preset("weak-2d");
    cfg["run"]["threads"] = 8;
    auto out = run_subcommand("weak-disorder", cfg);
    return {out.ok(), "100 seeds, n <= 30, max residual " + num(out.results["max_ledger_residual"].get<double>()) +
                          ", telescoping gap " + num(out.results["max_telescoping_gap"].get<double>())};
}

Outcome ac12() {
    Json cfg = preset("strong-2d");
    cfg["engine"]["ladder"] = Json::array({12});
    cfg["run"]["threads"] = 8;
    auto out = run_subcommand("strong-disorder", cfg);
    const auto& r = out.results["ratio"][0];
    const auto& f = out.results["fractional"][0];
    const double se = f["alpha1_stderr"].get<double>();
    const double gap = std::abs(f["alpha1_mean"].get<double>() - f["alpha1_annealed"].get<double>());
    return {out.ok(), "n = 12: median " + num(r["median"].get<double>()) + ", negatives " +
                          std::to_string(r["negatives"].get<int>()) + "/1000, sign p " +
                          num(r["sign_p_value"].get<double>()) + "; alpha = 1 gap " + num(gap / se) + " stderr"};
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Outcome ac13() {
    const fs::path base = fs::temp_directory_path() / "rpoly_acceptance_determinism";
    fs::remove_all(base);
    const std::vector<std::string> runs{
        "quenched --preset strong-2d --seeds 50 --set engine.ladder=[4,8]",
        "annealed --preset traps-half --mc --set engine.ladder=[3,6] --set engine.chains=4000",
        "decompose --preset traps-supercritical --set engine.n_max_list=[8,10]",
        "weak-disorder --preset weak-2d --seeds 10 --n 16",
        "strong-disorder --preset fracmom-2d --seeds 60 --set engine.N=[4]",
        "geometry --preset traps-supercritical --set engine.tables_n=8",
    };
    int identical = 0;
    std::string bad;
    for (std::size_t i = 0; i < runs.size(); ++i) {
        std::vector<fs::path> dirs;
        bool ran = true;
        for (int th : {1, 8}) {
            const fs::path dir = base / (std::to_string(i) + "_t" + std::to_string(th));
            const std::string cmd = std::string(RPOLY_CLI_PATH) + " " + runs[i] + " --quiet --threads " +
                                    std::to_string(th) + " --out " + dir.string();
            ran = ran && std::system(cmd.c_str()) == 0;
            dirs.push_back(dir);
        }
        bool same = ran;
        std::vector<std::string> names;
        if (ran)
            for (const auto& e : fs::directory_iterator(dirs[0])) names.push_back(e.path().filename().string());
        std::size_t other = 0;
        if (ran)
            for ([[maybe_unused]] const auto& e : fs::directory_iterator(dirs[1])) ++other;
        same = same && !names.empty() && other == names.size();
        for (const auto& n : names) same = same && slurp(dirs[0] / n) == slurp(dirs[1] / n);
        if (same) ++identical;
        else bad += " [" + runs[i].substr(0, runs[i].find(' ')) + "]";
    }
    fs::remove_all(base);
    return {identical == static_cast<int>(runs.size()),
            std::to_string(identical) + "/" + std::to_string(runs.size()) +
                " experiments byte-identical at 1 vs 8 workers" + (bad.empty() ? "" : ", differing:" + bad)};
}

}  // namespace

int main() {
    const std::vector<std::function<Outcome()>> acs{ac1, ac2, ac3, ac4, ac5, ac6, ac7,
                                                    ac8, ac9, ac10, ac11, ac12, ac13};
    int failed = 0;
    for (std::size_t i = 0; i < acs.size(); ++i) {
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = acs[i]();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double sec = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (!o.pass) ++failed;
        std::printf("AC%-2zu %s %7.1fs  %s\n", i + 1, o.pass ? "PASS" : "FAIL", sec, o.detail.c_str());
        std::fflush(stdout);
    }
    std::printf("%d/%zu criteria passed\n", static_cast<int>(acs.size()) - failed, acs.size());
    return failed == 0 ? 0 : 1;
}
