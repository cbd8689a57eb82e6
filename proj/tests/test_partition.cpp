#include <cmath>

#include "doctest.h"
#include "rpoly/partition.hpp"

using namespace rpoly;

namespace {
PolymerModel model(int d, PotentialLaw law, RVec h = {}, double lambda = 0) {
    PolymerModel m;
    m.steps = StepDistribution::simple(d);
    m.law = law;
    m.h = h;
    m.lambda = lambda;
    return m;
}

// brute force annealed sum over all paths
double brute_annealed(const PolymerModel& m, int n) {
    double z = 0;
    enumerate_paths(m.steps, n, [&](const LatticePath& p, double) {
        double lw = annealed_log_weight(m.steps, m.law, p);
        if (lw > kNegInf) z += std::exp(lw + dot(m.h, p.end()) - m.lambda * n);
    });
    return z;
}
}  // namespace

TEST_CASE("quenched partition small cases") {
    auto m = model(1, PotentialLaw::discrete({{std::log(2.0), 1.0}}, 1.0));
    auto env = sample_environment(m.law, Box::centered(1, 4), 1);
    CHECK(std::exp(quenched_partition(m, env, 2).log_z) == doctest::Approx(0.25));
    CHECK(quenched_partition(m, env, 0).log_z == 0.0);

    // V(1) = inf, V = 0 elsewhere: only the -1 step survives
    auto traps = model(1, PotentialLaw::traps(0.5));
    bool found = false;
    for (std::uint64_t seed = 0; seed < 200 && !found; ++seed) {
        auto e = sample_environment(traps.law, Box::centered(1, 1), seed);
        if (e.value(Vec{1, 0, 0, 0}) == kInf && e.value(Vec{-1, 0, 0, 0}) == 0) {
            found = true;
            CHECK(std::exp(quenched_partition(traps, e, 1).log_z) == doctest::Approx(0.5));
        }
    }
    CHECK(found);
    CHECK_THROWS_AS(quenched_partition(m, env, 5), Error);
}

TEST_CASE("quenched DP equals enumeration") {
    for (int d = 1; d <= 2; ++d) {
        auto m = model(d, PotentialLaw::two_point(0, 1.7, 0.4, 0.9), RVec{0.3, -0.2, 0, 0}, 0.1);
        for (std::uint64_t s = 0; s < 5; ++s) {
            auto env = sample_environment(m.law, Box::centered(d, 6), s);
            for (int n = 0; n <= 6; ++n) {
                double a = quenched_partition(m, env, n).log_z;
                double b = quenched_partition_enumerated(m, env, n);
                CHECK(std::abs(a - b) <= 1e-10 * std::max(1.0, std::abs(b)));
            }
        }
    }
}

TEST_CASE("annealed exact values") {
    auto m = model(1, PotentialLaw::traps(0.5));
    CHECK(std::exp(annealed_partition_exact(m, 2)) == doctest::Approx(0.25));
    CHECK(std::exp(annealed_partition_exact(m, 3)) == doctest::Approx(0.1875));
    auto free = model(2, PotentialLaw::zero(), RVec{0.4, -0.3, 0, 0});
    for (int n = 0; n <= 6; ++n)
        CHECK(annealed_partition_exact(free, n) == doctest::Approx(n * free.steps.log_mgf(free.h)));
}

TEST_CASE("annealed tables match brute force, any thread count") {
    auto m = model(2, PotentialLaw::two_point(0, 0.8, 0.35, 1.2), RVec{0.5, 0.1, 0, 0});
    EnumerationOptions o1, o3;
    o3.threads = 3;
    auto t1 = annealed_tables(m.steps, m.law, 7, o1);
    auto t3 = annealed_tables(m.steps, m.law, 7, o3);
    for (int n = 0; n <= 7; ++n) {
        CHECK(t1.log_z(n, m.h) == doctest::Approx(std::log(brute_annealed(m, n))).epsilon(1e-12));
        CHECK(t1.z[n] == t3.z[n]);
    }
}

TEST_CASE("annealed MC") {
    auto m = model(1, PotentialLaw::traps(0.5));
    auto est = annealed_partition_mc(m, 3, 100000, 5);
    CHECK(std::abs(est.mean - 0.1875) < 4 * est.stderr_);

    MCOptions en;
    en.enrichment = true;
    auto m2 = model(2, PotentialLaw::traps(0.7), RVec{0.3, 0, 0, 0});
    double exact = std::exp(annealed_partition_exact(m2, 10));
    auto e2 = annealed_partition_mc(m2, 10, 20000, 9, en);
    CHECK(std::abs(e2.mean - exact) < 4 * e2.stderr_);
    auto e3 = annealed_partition_mc(m2, 10, 20000, 9);
    CHECK(std::abs(e3.mean - exact) < 4 * e3.stderr_);

    auto free = model(1, PotentialLaw::zero(), RVec{0.2, 0, 0, 0});
    auto e4 = annealed_partition_mc(free, 8, 20000, 3);
    CHECK(std::abs(e4.mean - std::exp(8 * free.steps.log_mgf(free.h))) < 4 * e4.stderr_);

    // stronger disorder lowers the partition function
    auto weak = model(2, PotentialLaw::two_point(0, 1, 0.5, 0.5));
    auto strong = model(2, PotentialLaw::two_point(0, 1, 0.5, 5.0));
    CHECK(annealed_partition_exact(strong, 10) < annealed_partition_exact(weak, 10));
}

TEST_CASE("two-point functions") {
    auto m = model(1, PotentialLaw::traps(0.5), {}, 1.0);
    auto r0 = two_point_functions(m, Vec{}, 8);
    CHECK(r0.G >= 1.0);
    auto r = two_point_functions(m, Vec{1, 0, 0, 0}, 12);
    CHECK(r.zhat[1] == doctest::Approx(0.25));  // (1/2) * p
    // brute force over first-passage paths
    double H = 0;
    for (int n = 1; n <= 12; ++n) {
        enumerate_paths(m.steps, n, [&](const LatticePath& p, double) {
            if (p.end() != Vec{1, 0, 0, 0}) return;
            auto lt = local_time_profile(p);
            if (lt[Vec{1, 0, 0, 0}] != 1) return;
            H += std::exp(annealed_log_weight(m.steps, m.law, p) - n);
        });
    }
    CHECK(r.H == doctest::Approx(H).epsilon(1e-12));
    CHECK(r.truncation_bound < 1e-5);
    CHECK_THROWS_AS(two_point_functions(model(1, PotentialLaw::zero()), Vec{}, 3), Error);
}

// Returns to the start are excluded: Zhat_n(0) counts first returns, and
// concatenating with one can revisit the target early.
TEST_CASE("first-hitting tables are supermultiplicative away from the origin") {
    for (int d = 1; d <= 2; ++d) {
        auto m = model(d, PotentialLaw::traps(0.6));
        EnumerationOptions o;
        o.first_hit = true;
        auto T = annealed_tables(m.steps, m.law, 8, o);
        Rng rng(17, d);
        for (int k = 0; k < 100; ++k) {
            int n = 1 + rng() % 4, mm = 1 + rng() % 4;
            Vec x{}, y{};
            for (int c = 0; c < d; ++c) {
                x[c] = static_cast<int>(rng() % (2 * n + 1)) - n;
                y[c] = static_cast<int>(rng() % (2 * mm + 1)) - mm;
            }
            if (x == Vec{} || y == Vec{}) {
                --k;
                continue;
            }
            double lhs = T.zhat_at(n + mm, x + y), rhs = T.zhat_at(n, x) * T.zhat_at(mm, y);
            CHECK(lhs >= rhs * (1 - 1e-12));
        }
    }
}

TEST_CASE("free energy ladders") {
    auto free = model(2, PotentialLaw::zero(), RVec{0.3, 0.1, 0, 0});
    auto e = free_energy_annealed(free, {2, 4, 6});
    for (double l : e.lambda_n) CHECK(l == doctest::Approx(free.steps.log_mgf(free.h)));

    auto traps = model(2, PotentialLaw::traps(0.7));
    auto e0 = free_energy_annealed(traps, {2, 4, 6, 8, 10});
    for (double l : e0.lambda_n) CHECK(l <= 0.0);
    // confinement brackets lambda(0) from below and tends to 0
    double b4 = confined_lower_bound(traps.steps, 4), b8 = confined_lower_bound(traps.steps, 8),
           b16 = confined_lower_bound(traps.steps, 16);
    CHECK(b4 < b8);
    CHECK(b8 < b16);
    CHECK(b16 < 0);
    CHECK(b16 > -0.03);

    // quenched average below annealed (Jensen)
    auto tp = model(2, PotentialLaw::two_point(0, 1, 0.5, 1.0), RVec{0.2, 0, 0, 0});
    std::vector<std::uint64_t> seeds;
    for (std::uint64_t s = 0; s < 200; ++s) seeds.push_back(s);
    auto q = free_energy_quenched(tp, {4, 8}, seeds, false);
    auto a = free_energy_annealed(tp, {4, 8});
    for (std::size_t i = 0; i < 2; ++i) CHECK(q.lambda_n[i] <= a.lambda_n[i] + 2 * q.stderr_[i]);
}

TEST_CASE("hammersley bound with b = 0 reduces to a_n/n") {
    std::vector<double> a = {0, 1.0, 1.8, 2.5};
    auto ub = hammersley_upper_bounds(a, [](long) { return 0.0; });
    CHECK(ub[0] == doctest::Approx(1.0));
    CHECK(ub[2] == doctest::Approx(2.5 / 3));
    auto ub2 = hammersley_upper_bounds(a, [](long k) { return std::log(1.0 + k); }, 100000);
    CHECK(ub2[0] > ub[0] - 1.0);
}

TEST_CASE("point to hyperplane") {
    // V = 0, d = 1: D(t) = exp(-s t) with cosh s = e^lambda, exactly
    auto m = model(1, PotentialLaw::zero(), {}, 0.5);
    auto r = point_to_hyperplane(m, 1, RVec{1, 0, 0, 0}, {0, 1, 2, 4, 8});
    const double s = std::acosh(std::exp(0.5));
    CHECK(r.log_d[0] == 0.0);
    for (std::size_t i = 1; i < r.t.size(); ++i) CHECK(r.log_d[i] == doctest::Approx(-s * r.t[i]).epsilon(1e-9));
    CHECK(r.rate == doctest::Approx(s).epsilon(1e-8));
    CHECK(homogeneous_hyperplane_rate(m.steps, RVec{1, 0, 0, 0}, 0.5) == doctest::Approx(s).epsilon(1e-12));

    // d = 2 homogeneous: fitted rate near the closed-form one
    auto m2 = model(2, PotentialLaw::zero(), {}, 0.3);
    auto r2 = point_to_hyperplane(m2, 1, RVec{1, 0, 0, 0}, {4, 8, 12, 16});
    double s2 = homogeneous_hyperplane_rate(m2.steps, RVec{1, 0, 0, 0}, 0.3);
    CHECK(r2.rate == doctest::Approx(s2).epsilon(0.02));

    // more disorder, smaller D
    int decreased = 0;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        auto lo = model(2, PotentialLaw::two_point(0, 1, 0.5, 0.5), {}, 0.3);
        auto hi = model(2, PotentialLaw::two_point(0, 1, 0.5, 1.0), {}, 0.3);
        double a = point_to_hyperplane(lo, seed, RVec{1, 0, 0, 0}, {6}).log_d[0];
        double b = point_to_hyperplane(hi, seed, RVec{1, 0, 0, 0}, {6}).log_d[0];
        decreased += b < a;
    }
    CHECK(decreased == 20);
}
