#include <algorithm>
#include <cmath>
#include <thread>

#include "doctest.h"
#include "rpoly/disorder.hpp"

using namespace rpoly;

namespace {

RVec rv(double a, double b = 0) {
    RVec r{};
    r[0] = a;
    r[1] = b;
    return r;
}

Vec v2(int a, int b) {
    Vec x{};
    x[0] = a;
    x[1] = b;
    return x;
}

int workers() { return static_cast<int>(std::clamp(std::thread::hardware_concurrency(), 1u, 8u)); }

const StepDistribution& srw2() {
    static const StepDistribution s = StepDistribution::simple(2);
    return s;
}

// normalized catalogue for law on the polymer cones of that law at drift h
PieceCatalogue catalogue(const PotentialLaw& law, double hx, int m_cap) {
    auto g = SurchargeGeometry::polymer(srw2(), law, rv(hx), 10, workers());
    auto c = make_catalogue(g, srw2(), law, m_cap, workers());
    normalize_lambda(c);
    return c;
}

const PieceCatalogue& traps8() {
    static const PieceCatalogue c = catalogue(PotentialLaw::traps(0.8), 2.5, 8);
    return c;
}

const PieceCatalogue& weak() {
    static const PieceCatalogue c = catalogue(PotentialLaw::two_point(0, 1, 0.5, 0.3), 1.5, 10);
    return c;
}

// same pieces, annealed law V = 0
PieceCatalogue with_law(PieceCatalogue c, const PotentialLaw& law, const StepDistribution& steps) {
    c.law = law;
    for (std::size_t p = 0; p < c.pieces.size(); ++p)
        c.log_phi[p] = annealed_log_weight(steps, law, LatticePath(c.pieces[p].v)) - c.pieces[p].log_p;
    normalize_lambda(c);
    return c;
}

double sd_mean(const std::vector<double>& v, double& se) {
    double m = 0;
    for (double x : v) m += x;
    m /= v.size();
    double s = 0;
    for (double x : v) s += (x - m) * (x - m);
    se = std::sqrt(s / (v.size() - 1) / v.size());
    return m;
}

}  // namespace

TEST_CASE("tilt tools") {
    const auto traps = PotentialLaw::traps(0.7);
    CHECK(tilt_g(traps, 0) == doctest::Approx(0).epsilon(1e-15));
    CHECK(tilt_density(traps, 0, 0.0) == doctest::Approx(1));
    CHECK(tilt_density(traps, 0, kInf) == doctest::Approx(1));
    for (double d : {0.05, 0.3, 1.0})
        CHECK(tilt_g(traps, d) == doctest::Approx(std::log(0.7 + 0.3 * std::exp(d))).epsilon(1e-14));

    const auto expo = PotentialLaw::exponential(2.0, 0.5);
    const auto two = PotentialLaw::two_point(0, 2, 0.3, 0.7);
    for (const auto& law : {traps, expo, two}) {
        auto tc = tilt_checks(law, 0.5, 6);
        CHECK(std::abs(tc.quadratic_first_derivative) < 1e-8);
        CHECK(tc.dphi_positive);
        // density integrates to 1 and the tilted quantile reproduces g'(delta) = E_delta psi
        const double delta = 0.4;
        const int K = 200000;
        double mass = 0, epsi = 0;
        for (int i = 0; i < K; ++i) {
            const double u = (i + 0.5) / K;
            mass += tilt_density(law, delta, law_quantile(law, u)) / K;
            epsi += psi_clip(tilted_quantile(law, delta, u)) / K;
        }
        const double dg = (tilt_g(law, delta + 1e-5) - tilt_g(law, delta - 1e-5)) / 2e-5;
        CHECK(mass == doctest::Approx(1).epsilon(1e-3));
        CHECK(epsi == doctest::Approx(dg).epsilon(1e-3));
    }
    // tilted phi at delta = 0 is the plain annealed potential
    CHECK(tilted_phi(expo, 3, 0) == doctest::Approx(phi_beta(expo, 3)).epsilon(1e-12));
    CHECK(tilted_phi(traps, 2, 0) == doctest::Approx(phi_beta(traps, 2)).epsilon(1e-12));
}

TEST_CASE("catalogue groups and normalization") {
    const auto& c = traps8();
    CHECK(c.annealed_mass(c.lambda) == doctest::Approx(1).epsilon(1e-12));
    double sum = 0;
    for (std::size_t g = 0; g < c.groups.size(); ++g) sum += c.group_annealed(g);
    CHECK(sum == doctest::Approx(1).epsilon(1e-12));
    std::size_t covered = 0;
    for (const auto& G : c.groups) {
        covered += G.last - G.first;
        for (std::size_t p = G.first; p < G.last; ++p) {
            CHECK(c.pieces[p].v.back() == G.z);
            CHECK(static_cast<int>(c.pieces[p].v.size()) - 1 == G.m);
        }
    }
    CHECK(covered == c.pieces.size());
    CHECK(c.annealed_kernel().mass() == doctest::Approx(1).epsilon(1e-12));

    PieceCatalogue empty;
    CHECK_THROWS_WITH_AS(basic_quenched(empty, [](const Vec&) { return 1.0; }, 3), doctest::Contains("ConeRestrictionInfeasible"), Error);
    auto g = SurchargeGeometry::polymer(srw2(), PotentialLaw::traps(0.8), rv(2.5), 10, workers());
    CHECK_THROWS_AS(make_catalogue(g, srw2(), PotentialLaw::traps(0.8), 0), Error);
}

TEST_CASE("basic quenched table: trivial environments") {
    const auto zero = with_law(traps8(), PotentialLaw::zero(), srw2());
    const int n = 16;
    auto T = basic_quenched(zero, environment_weight(zero.law, 7), n, 7);
    auto a = annealed_renewal(zero, n);
    auto tn = T.t_n();
    for (int k = 0; k <= n; ++k) CHECK(tn[k] == doctest::Approx(a.t[k]).epsilon(1e-12));
    CHECK(T.approximate);
    CHECK(renewal_residual(zero, T) < 1e-12);
    // spatial table equals the annealed multi-d renewal
    auto arr = renewal_multid(zero.annealed_kernel(), n);
    for (int k = 0; k <= n; ++k)
        for (const auto& [x, v] : T.t[k]) CHECK(v == doctest::Approx(arr.t(x, k)).epsilon(1e-12));

    auto dead = basic_quenched(traps8(), [](const Vec&) { return 0.0; }, 10);
    for (int k = 1; k <= 10; ++k) CHECK(dead.t[k].empty());
    CHECK(dead.t[0].at(Vec{}) == 1.0);
}

TEST_CASE("basic quenched table: renewal identity and E-consistency") {
    const auto& c = traps8();
    const int n = 10, S = 1000;
    auto a = annealed_renewal(c, n);
    std::vector<std::vector<double>> tq(n + 1, std::vector<double>(S));
    std::vector<double> f0(S);
    double worst = 0;
    for (int s = 0; s < S; ++s) {
        auto T = basic_quenched(c, environment_weight(c.law, s), n, s);
        auto tn = T.t_n();
        for (int k = 0; k <= n; ++k) tq[k][s] = tn[k];
        QuenchedKernel K(c, environment_weight(c.law, s));
        f0[s] = K.total(Vec{});
        if (s < 50) worst = std::max(worst, renewal_residual(c, T));
    }
    CHECK(worst < 1e-12);
    for (int k = 1; k <= n; ++k) {
        double se = 0, m = sd_mean(tq[k], se);
        INFO("n = " << k << " mean " << m << " annealed " << a.t[k] << " se " << se);
        CHECK(std::abs(m - a.t[k]) <= 4 * se);
    }
    double se = 0, m = sd_mean(f0, se);
    CHECK(std::abs(m - 1) <= 4 * se);
}

TEST_CASE("Sinai ledger") {
    SUBCASE("no disorder") {
        const auto zero = with_law(weak(), PotentialLaw::zero(), srw2());
        auto a = annealed_renewal(zero, 20);
        auto L = sinai_ledger(basic_quenched(zero, environment_weight(zero.law, 1), 20), a);
        for (int n = 0; n <= 20; ++n) {
            CHECK(std::abs(L.Y[n]) < 1e-12);
            CHECK(L.s[n] == doctest::Approx(1).epsilon(1e-12));
            CHECK(std::abs(L.eps1[n]) < 1e-12);
            CHECK(std::abs(L.eps2[n]) < 1e-12);
        }
        CHECK(L.max_residual <= 1e-10);
    }
    SUBCASE("weak preset identity and coefficient form") {
        const auto& c = weak();
        auto a = annealed_renewal(c, 30);
        double worst = 0, coef = 0;
        for (std::uint64_t s = 0; s < 20; ++s) {
            auto L = sinai_ledger(basic_quenched(c, environment_weight(c.law, s), 30, s), a);
            worst = std::max(worst, L.max_residual);
            for (int n = 0; n <= 30; ++n)
                coef = std::max(coef, std::abs(L.eps_coef[n] - (L.eps1[n] - L.eps2[n])) / (1 + std::abs(L.eps_coef[n])));
        }
        CHECK(worst <= 1e-10);
        CHECK(coef <= 1e-12);
    }
    SUBCASE("zero-mean increments") {
        const auto& c = weak();
        auto a = annealed_renewal(c, 8);
        const int S = 300;
        std::vector<std::vector<double>> Y(9, std::vector<double>(S));
        for (int s = 0; s < S; ++s) {
            auto L = sinai_ledger(basic_quenched(c, environment_weight(c.law, 1000 + s), 8), a);
            for (int l = 0; l <= 8; ++l) Y[l][s] = L.Y[l];
        }
        for (int l = 0; l <= 8; ++l) {
            double se = 0, m = sd_mean(Y[l], se);
            INFO("l = " << l << " mean " << m << " se " << se);
            CHECK(std::abs(m) <= 4 * se);
        }
    }
    SUBCASE("traps: telescoping") {
        const auto& c = traps8();
        auto a = annealed_renewal(c, 14);
        for (std::uint64_t s = 0; s < 10; ++s) {
            auto L = sinai_ledger(basic_quenched(c, environment_weight(c.law, s), 14), a);
            CHECK(L.telescope_lhs == doctest::Approx(L.telescope_rhs).epsilon(1e-10));
            CHECK(L.telescope_lhs == doctest::Approx(L.in_flight).epsilon(1e-10));
            CHECK(L.max_residual <= 1e-10);
        }
    }
    SUBCASE("kernel mismatch") {
        PieceCatalogue c = traps8();
        c.lambda += 0.05;
        auto a = annealed_renewal(c, 5);
        CHECK_THROWS_WITH_AS(sinai_ledger(basic_quenched(c, environment_weight(c.law, 1), 5), a),
                             doctest::Contains("KernelMismatch"), Error);
    }
}

TEST_CASE("mixingale diagnostics") {
    MixingaleOptions mo;
    mo.n_max = 6;
    mo.resamples = 8;
    mo.threads = workers();
    const auto zero = with_law(traps8(), PotentialLaw::zero(), srw2());
    auto R0 = mixingale_diagnostics(zero, seed_range(1, 4), mo);
    CHECK(R0.degenerate);
    for (const auto& row : R0.cond2)
        for (double x : row) CHECK(x < 1e-24);

    CHECK_THROWS_WITH_AS(mixingale_diagnostics(weak(), {1}, mo), doctest::Contains("InsufficientSeeds"), Error);

    auto R = mixingale_diagnostics(weak(), seed_range(1, 16), mo);
    CHECK_FALSE(R.degenerate);
    CHECK(std::isfinite(R.ell_exponent));
    CHECK(std::isfinite(R.k_exponent));
    // conditioning on less information cannot raise the second moment (up to resampling noise)
    for (int l = 1; l <= mo.n_max; ++l) CHECK(R.cond2.back()[l] <= R.d2[l] * 1.5);
    mo.threads = 1;
    auto R1 = mixingale_diagnostics(weak(), seed_range(1, 16), mo);
    CHECK(R1.to_json() == R.to_json());
}

TEST_CASE("fractional moments") {
    const auto& c = traps8();
    FractionalOptions fo;
    fo.threads = workers();
    SUBCASE("alpha = 1 is the annealed value in expectation") {
        fo.alpha = 1;
        fo.N = 4;
        auto F = fractional_moment_experiment(c, seed_range(1, 1000), fo);
        CHECK(F.annealed == doctest::Approx(1).epsilon(1e-10));
        CHECK(std::abs(F.mean - F.annealed) <= 4 * F.stderr_);
        for (std::size_t i = 0; i < F.r_total.size(); ++i) CHECK(F.r_total[i] == doctest::Approx(F.r_alpha[i]));
    }
    SUBCASE("no disorder is deterministic") {
        const auto zero = with_law(c, PotentialLaw::zero(), srw2());
        fo.alpha = 0.5;
        fo.N = 3;
        auto F = fractional_moment_experiment(zero, seed_range(1, 5), fo);
        for (double x : F.r_alpha) CHECK(x == F.r_alpha.front());
        CHECK(F.stderr_ < 1e-12);
        double direct = 0;
        std::map<Vec, double> cur{{Vec{}, 1.0}};
        for (int k = 0; k < 3; ++k) {
            std::map<Vec, double> nxt;
            for (const auto& [x, r] : cur)
                for (std::size_t g = 0; g < zero.groups.size(); ++g) nxt[x + zero.groups[g].z] += r * zero.group_annealed(g);
            cur = nxt;
        }
        for (const auto& [x, r] : cur) direct += std::sqrt(r);
        CHECK(F.mean == doctest::Approx(direct).epsilon(1e-12));
    }
    SUBCASE("window and alpha checks") {
        fo.alpha = 0.5;
        fo.N = 4;
        fo.tilt = true;
        fo.delta = 0.9;
        CHECK_THROWS_WITH_AS(fractional_moment_experiment(c, seed_range(1, 2), fo), doctest::Contains("WindowViolation"), Error);
        fo.delta = 0.1;
        CHECK_THROWS_WITH_AS(fractional_moment_experiment(c, seed_range(1, 2), fo), doctest::Contains("WindowViolation"), Error);
        fo.delta = -1;
        auto F = fractional_moment_experiment(c, seed_range(1, 20), fo);
        CHECK(F.delta == doctest::Approx(std::pow(4.0, -0.55)));
        CHECK(F.tube_sites > 0);
        CHECK(std::isfinite(F.log_holder_bound));
        fo.alpha = 1.5;
        CHECK_THROWS_AS(fractional_moment_experiment(c, seed_range(1, 2), fo), Error);
    }
}

TEST_CASE("fractional moment: d=2 traps p=.7 decay") {
    const auto c = catalogue(PotentialLaw::traps(0.7), 3.5, 10);
    FractionalOptions fo;
    fo.alpha = 0.5;
    fo.threads = workers();
    double prev = kInf;
    for (int N : {4, 6, 8}) {
        fo.N = N;
        auto F = fractional_moment_experiment(c, seed_range(1, 1000), fo);
        INFO("N = " << N << " factor " << F.factor << " upper " << F.factor_hi);
        CHECK(F.below_one);
        CHECK(F.mean < prev);
        prev = F.mean;
    }
}

TEST_CASE("strong disorder ratio") {
    PolymerModel m;
    m.steps = srw2();
    m.h = rv(2.5);
    m.law = PotentialLaw::zero();
    auto rows0 = strong_disorder_ratio(m, {2, 5}, seed_range(1, 3), workers());
    for (const auto& r : rows0)
        for (double x : r.log_ratio) CHECK(std::abs(x) < 1e-12);

    m.law = PotentialLaw::traps(0.6);
    auto rows = strong_disorder_ratio(m, {4, 8}, seed_range(1, 1000), workers());
    for (const auto& r : rows) {
        INFO("n = " << r.n << " mean ratio " << r.mean_ratio << " se " << r.mean_ratio_stderr);
        CHECK(std::abs(r.mean_ratio - 1) <= 4 * r.mean_ratio_stderr);
        CHECK(r.median < 0);
        CHECK(r.negative_99);
    }
    CHECK(rows[1].median < rows[0].median);
    CHECK(ratio_rows_csv(rows).find("median") != std::string::npos);
}

TEST_CASE("covariance locality") {
    const auto& c = traps8();
    auto far = f_block_covariance(c, Vec{}, v2(40, 0), seed_range(1, 1000), workers());
    CHECK(far.disjoint);
    CHECK(std::abs(far.cov) <= 3 * far.stderr_);
    auto near = f_block_covariance(c, Vec{}, v2(1, 0), seed_range(1, 1000), workers());
    CHECK_FALSE(near.disjoint);
    CHECK(near.cov > 3 * near.stderr_);
}

TEST_CASE("disorder outputs do not depend on the worker count") {
    const auto& c = traps8();
    FractionalOptions fo;
    fo.alpha = 0.5;
    fo.N = 4;
    fo.tilt = true;
    fo.threads = 1;
    auto a = fractional_moment_experiment(c, seed_range(1, 40), fo);
    fo.threads = 4;
    auto b = fractional_moment_experiment(c, seed_range(1, 40), fo);
    CHECK(a.to_json() == b.to_json());
    CHECK(basic_quenched(c, environment_weight(c.law, 3), 12).to_csv() ==
          basic_quenched(c, environment_weight(c.law, 3), 12).to_csv());
}

TEST_CASE("mixingale: d=4 tiny weak preset") {
    const auto steps = StepDistribution::simple(4);
    const auto law = PotentialLaw::two_point(0, 1, 0.5, 0.3);
    RVec h{};
    h[0] = 1.5;
    auto c = make_catalogue(SurchargeGeometry::euclidean(4, h), steps, law, 6, workers(), h);
    normalize_lambda(c);
    MixingaleOptions mo;
    mo.n_max = 12;
    mo.ks = {};
    mo.threads = workers();
    auto R = mixingale_diagnostics(c, seed_range(1, 200), mo);
    INFO("fitted l-exponent " << R.ell_exponent);
    CHECK(R.summable);
}
