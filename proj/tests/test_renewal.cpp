#include <cmath>

#include "doctest.h"
#include "rpoly/renewal.hpp"

using namespace rpoly;

namespace {
RenewalKernel pm1() {
    RenewalKernel k;
    k.d = 1;
    k.entries = {{Vec{1, 0, 0, 0}, 1, 0.5}, {Vec{-1, 0, 0, 0}, 1, 0.5}};
    return k;
}
RenewalKernel pm1_2d() {
    RenewalKernel k;
    k.d = 2;
    for (int a : {-1, 1})
        for (int b : {-1, 1}) k.entries.push_back({Vec{a, b, 0, 0}, 1, 0.25});
    return k;
}
double log_binom_pmf(int n, int k) {
    return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0) - n * std::log(2.0);
}
}  // namespace

TEST_CASE("one-dimensional renewal examples") {
    auto t = renewal_1d({0, 1.0}, 10);
    for (double v : t) CHECK(v == 1.0);

    std::vector<double> geo(61, 0.0);
    for (int n = 1; n <= 60; ++n) geo[n] = std::ldexp(1.0, -n);
    auto tg = renewal_1d(geo, 50);
    for (int n = 1; n <= 50; ++n) CHECK(std::abs(tg[n] - 0.5) <= 1e-12);
    CHECK(renewal_limit_rate(tg, 2.0).sup_deviation <= 1e-12);

    auto th = renewal_1d({0, 0.5, 0.5}, 80);
    auto lr = renewal_limit_rate(th, 1.5);
    CHECK(lr.rate == doctest::Approx(std::log(2.0)).epsilon(0.1));
    CHECK(lr.exponential);
    CHECK(renewal_decay_oracle({0, 0.5, 0.5}) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
    // |t(n) - 2/3| = 2^{-n}/3 exactly
    for (int n = 0; n <= 30; ++n) CHECK(lr.deviation[n] == doctest::Approx(std::ldexp(1.0, -n) / 3).epsilon(1e-9));

    auto det = renewal_limit_rate(renewal_1d({0, 1.0}, 20), 1.0);
    CHECK(det.sup_deviation == 0.0);
}

TEST_CASE("limit rate matches companion eigenvalue oracle") {
    std::vector<double> f = {0, 0.2, 0.5, 0.3};
    double mu = 0.2 + 1.0 + 0.9;
    auto lr = renewal_limit_rate(renewal_1d(f, 120), mu, 5);
    CHECK(lr.rate == doctest::Approx(renewal_decay_oracle(f)).epsilon(0.05));
}

TEST_CASE("multi-dimensional arrays") {
    RenewalKernel ball;
    ball.entries = {{Vec{1, 0, 0, 0}, 1, 1.0}};
    auto a = renewal_multid(ball, 8);
    for (int n = 0; n <= 8; ++n)
        for (int x = -2; x <= 10; ++x) CHECK(a.t(Vec{x, 0, 0, 0}, n) == (x == n ? 1.0 : 0.0));

    RenewalKernel two;
    two.entries = {{Vec{1, 0, 0, 0}, 1, 0.5}, {Vec{2, 0, 0, 0}, 2, 0.5}};
    auto b = renewal_multid(two, 30);
    auto t1 = renewal_1d(two.marginal(), 30);
    for (int n = 0; n <= 30; ++n) CHECK(b.t_n(n) == doctest::Approx(t1[n]).epsilon(1e-14));
    CHECK(solve_shape(two, RVec{}).grad[0] == doctest::Approx(1.0));

    auto c = renewal_multid(pm1(), 40);
    for (int n : {1, 7, 40})
        for (int x = -n; x <= n; ++x) {
            double want = (x + n) % 2 ? 0.0 : std::exp(log_binom_pmf(n, (n + x) / 2));
            CHECK(c.t(Vec{x, 0, 0, 0}, n) == doctest::Approx(want).epsilon(1e-12));
        }
    CHECK(recursion_residual(c, pm1()) <= 1e-12);
    auto d2 = renewal_multid(pm1_2d(), 20);
    CHECK(recursion_residual(d2, pm1_2d()) <= 1e-12);
    CHECK_THROWS_AS(renewal_multid(pm1_2d(), 2000, 1 << 20), Error);
}

TEST_CASE("lattice period") {
    CHECK(kernel_lattice(pm1()).period == 2);
    CHECK(kernel_lattice(pm1_2d()).period == 4);
    RenewalKernel lazy;
    lazy.entries = {{Vec{1, 0, 0, 0}, 1, 0.25}, {Vec{-1, 0, 0, 0}, 1, 0.25}, {Vec{0, 0, 0, 0}, 1, 0.5}};
    CHECK(kernel_lattice(lazy).period == 1);
    auto L = kernel_lattice(pm1());
    CHECK(L.reachable(Vec{3, 0, 0, 0}, 5, 1));
    CHECK_FALSE(L.reachable(Vec{2, 0, 0, 0}, 5, 1));
    RenewalKernel det;
    det.entries = {{Vec{2, 0, 0, 0}, 1, 1.0}};
    CHECK_FALSE(kernel_lattice(det).full_rank());
}

TEST_CASE("complex-plane assumptions") {
    auto one = RenewalKernel::from_sequence({0, 1.0});
    auto r1 = check_complex_assumptions(one, 0.2);
    CHECK(r1.zeros_in_disk == 1);
    CHECK(r1.zeros_near_one == 1);
    CHECK(r1.fhat_prime_one == 1.0);

    // f(x, n) = 2^{-n}/2 for x = +-1
    RenewalKernel g;
    g.tail_nu = std::log(2.0) / 2;
    g.tail_C = 1;
    for (int n = 1; n <= 60; ++n)
        for (int x : {-1, 1}) g.entries.push_back({Vec{x, 0, 0, 0}, n, std::ldexp(0.5, -n)});
    RVec pi{M_PI, 0, 0, 0};
    auto rg = check_complex_assumptions(g, 0.2, &pi);
    CHECK(rg.zeros_in_disk == 1);
    CHECK(rg.zeros_near_one == 1);
    CHECK(rg.fhat_prime_one == doctest::Approx(2.0));
    CHECK(rg.twisted_ok);
    CHECK(rg.kappa == doctest::Approx(2 / 3.2).epsilon(1e-3));  // |2/(2 - z)| at z = 1.2

    RenewalKernel per;
    per.entries = {{Vec{2, 0, 0, 0}, 1, 1.0}};
    auto rp = check_complex_assumptions(per, 0.2, &pi);
    CHECK_FALSE(rp.twisted_ok);

    RenewalKernel heavy = g;
    heavy.tail_nu = 0.1;
    CHECK_THROWS_AS(check_complex_assumptions(heavy, 0.2), Error);
}

TEST_CASE("shape equation") {
    auto k = pm1();
    std::vector<RVec> grid;
    for (int i = -10; i <= 10; ++i) grid.push_back(RVec{i / 10.0, 0, 0, 0});
    auto sol = solve_shape_grid(k, grid);
    for (std::size_t i = 0; i < grid.size(); ++i) {
        double xi = grid[i][0];
        CHECK(std::abs(sol[i].lambda - std::log(std::cosh(xi))) <= 1e-10);
        CHECK(sol[i].grad[0] == doctest::Approx(std::tanh(xi)).epsilon(1e-10));
        CHECK(sol[i].residual <= 1e-12);
    }
    for (std::size_t i = 1; i + 1 < grid.size(); ++i)
        CHECK(sol[i].lambda <= 0.5 * (sol[i - 1].lambda + sol[i + 1].lambda) + 1e-14);
    auto s0 = solve_shape(k, RVec{});
    CHECK(s0.lambda == 0.0);
    CHECK(s0.h(0, 0) == doctest::Approx(1.0).epsilon(1e-12));

    // a kernel with drift, varying durations and two dimensions
    RenewalKernel m;
    m.d = 2;
    m.entries = {{Vec{0, 1, 0, 0}, 1, 0.3}, {Vec{2, 0, 0, 0}, 1, 0.2}, {Vec{3, -1, 0, 0}, 2, 0.4},
                 {Vec{-1, 0, 0, 0}, 3, 0.1}};
    auto sm = solve_shape(m, RVec{});
    CHECK(std::abs(sm.lambda) <= 1e-14);
    CHECK(sm.grad[0] == doctest::Approx((0.4 + 1.2 - 0.1) / (0.3 + 0.2 + 0.8 + 0.3)));
    auto fd = shape_hessian_fd(m, RVec{});
    for (int a = 0; a < 2; ++a)
        for (int b = 0; b < 2; ++b) {
            double an = sm.hess[a * kMaxDim + b];
            CHECK(std::abs(an - sm.hess_centered[a * kMaxDim + b]) <= 1e-12 * std::abs(an) + 1e-15);
            CHECK(std::abs(an - fd[a * kMaxDim + b]) <= 1e-6 * std::abs(an) + 1e-9);
        }
    // sub-probability kernel: lambda(0) < 0
    RenewalKernel sub = pm1();
    for (auto& e : sub.entries) e.f *= 0.9;
    CHECK(solve_shape(sub, RVec{}).lambda == doctest::Approx(std::log(0.9)));
    RenewalKernel tailed = pm1();
    tailed.tail_nu = 1.0;
    CHECK_THROWS_AS(solve_shape(tailed, RVec{2.0, 0, 0, 0}), Error);
}

TEST_CASE("tilting") {
    auto k = pm1();
    auto same = tilt_kernel(k, RVec{});
    for (std::size_t i = 0; i < k.entries.size(); ++i) CHECK(same.entries[i].f == doctest::Approx(k.entries[i].f));
    auto t1 = tilt_kernel(k, RVec{1, 0, 0, 0});
    CHECK(t1.entries[0].f == doctest::Approx(0.8807970779778823));
    CHECK(t1.entries[1].f == doctest::Approx(0.1192029220221176));
    CHECK(t1.is_probability());

    RenewalKernel m;
    m.d = 2;
    m.entries = {{Vec{0, 1, 0, 0}, 1, 0.3}, {Vec{2, 0, 0, 0}, 1, 0.2}, {Vec{3, -1, 0, 0}, 2, 0.4},
                 {Vec{-1, 0, 0, 0}, 3, 0.1}};
    RVec xi{0.2, -0.3, 0, 0};
    auto tm = tilt_kernel(m, xi);
    CHECK(tm.is_probability());
    double ex0 = 0, ex1 = 0, et = 0;
    for (const auto& e : tm.entries) {
        ex0 += e.f * e.x[0];
        ex1 += e.f * e.x[1];
        et += e.f * e.n;
    }
    auto sp = solve_shape(m, xi);
    CHECK(sp.grad[0] == doctest::Approx(ex0 / et).epsilon(1e-12));
    CHECK(sp.grad[1] == doctest::Approx(ex1 / et).epsilon(1e-12));
    auto round = tilt_kernel(tm, RVec{-0.2, 0.3, 0, 0});
    for (std::size_t i = 0; i < m.entries.size(); ++i) CHECK(std::abs(round.entries[i].f - m.entries[i].f) <= 1e-10);
}

TEST_CASE("csv exports") {
    auto a = renewal_multid(pm1(), 2);
    CHECK(array_to_csv(a) == "n,x1,t\n0,0,1\n1,-1,0.5\n1,1,0.5\n2,-2,0.25\n2,0,0.5\n2,2,0.25\n");
    auto csv = shape_table_csv({solve_shape(pm1(), RVec{})}, 1);
    CHECK(csv.rfind("xi1,lambda,grad1,Xi11,mu\n0,0,0,1,1", 0) == 0);
}

TEST_CASE("conditional laws") {
    RenewalKernel ball;
    ball.entries = {{Vec{1, 0, 0, 0}, 1, 1.0}};
    auto q = conditional_law(renewal_multid(ball, 5), 5);
    REQUIRE(q.size() == 1);
    CHECK(q[0].q == 1.0);
    CHECK(q[0].x == Vec{5, 0, 0, 0});

    auto a = renewal_multid(pm1(), 12);
    for (const auto& pm : conditional_law(a, 12))
        CHECK(pm.q == doctest::Approx(std::exp(log_binom_pmf(12, (12 + pm.x[0]) / 2))).epsilon(1e-12));

    // v_n = v - grad log mu(0) / n + o(1/n)
    RenewalKernel m;
    m.entries = {{Vec{0, 0, 0, 0}, 1, 0.3}, {Vec{2, 0, 0, 0}, 1, 0.2}, {Vec{3, 0, 0, 0}, 2, 0.5}};
    auto s0 = solve_shape(m, RVec{});
    auto t = renewal_multid(m, 400);
    for (int n : {100, 200, 400}) {
        double vn = conditional_mean(t, n)[0] / n;
        CHECK(n * (vn - s0.grad[0]) == doctest::Approx(-s0.grad_log_mu[0]).epsilon(1e-6));
    }
    RenewalKernel gap;
    gap.entries = {{Vec{1, 0, 0, 0}, 2, 1.0}};
    CHECK_THROWS_AS(conditional_law(renewal_multid(gap, 3), 3), Error);
}

TEST_CASE("local CLT") {
    auto k = pm1();
    auto a = renewal_multid(k, 200);
    auto rep = verify_local_clt(a, k, solve_shape(k, RVec{}), {50, 100, 200}, 1.0);
    CHECK_FALSE(rep.degenerate);
    CHECK(rep.period == 2);
    CHECK(rep.rows.back().max_rel_dev <= 0.05);
    CHECK(rep.rows[0].max_rel_dev > rep.rows[2].max_rel_dev);

    auto k2 = pm1_2d();
    auto a2 = renewal_multid(k2, 200);
    auto rep2 = verify_local_clt(a2, k2, solve_shape(k2, RVec{}), {200}, 1.0);
    CHECK(rep2.period == 4);
    CHECK(rep2.rows[0].max_rel_dev <= 0.08);
    CHECK(rep2.rows[0].points > 100);

    RenewalKernel ball;
    ball.entries = {{Vec{1, 0, 0, 0}, 1, 1.0}};
    auto rb = verify_local_clt(renewal_multid(ball, 10), ball, solve_shape(ball, RVec{}), {10}, 1.0);
    CHECK(rb.degenerate);

    // aperiodic lazy walk: characteristic function decays away from theta = 0
    RenewalKernel lazy;
    lazy.entries = {{Vec{1, 0, 0, 0}, 1, 0.25}, {Vec{-1, 0, 0, 0}, 1, 0.25}, {Vec{0, 0, 0, 0}, 1, 0.5}};
    auto cd = characteristic_decay(renewal_multid(lazy, 60), RVec{1.0, 0, 0, 0}, {10, 20, 40, 60});
    CHECK(cd.rate == doctest::Approx(-std::log(0.5 + 0.5 * std::cos(1.0))).epsilon(1e-9));
}

TEST_CASE("local large deviations") {
    auto k = pm1();
    auto a = renewal_multid(k, 200);
    auto ld = local_ld(k, a, RVec{0.5, 0, 0, 0}, 200);
    const double closed = 0.75 * std::log(1.5) + 0.25 * std::log(0.5);
    CHECK(ld.J == doctest::Approx(closed).epsilon(1e-6));
    CHECK(std::abs(ld.J - closed) <= 1e-6);
    CHECK(ld.J_dual == doctest::Approx(closed).epsilon(1e-6));
    CHECK(ld.xi_n[0] == doctest::Approx(std::atanh(0.5)));
    CHECK(ld.q_exact == doctest::Approx(std::exp(log_binom_pmf(200, 150))).epsilon(1e-10));
    CHECK(ld.rel_error <= 0.05);

    auto z = local_ld(k, a, RVec{}, 200);
    CHECK(std::abs(z.J) <= 1e-12);
    CHECK(z.rel_error <= 0.05);

    RenewalKernel m;
    m.entries = {{Vec{0, 0, 0, 0}, 1, 0.3}, {Vec{2, 0, 0, 0}, 1, 0.2}, {Vec{3, 0, 0, 0}, 2, 0.5}};
    auto lm = local_ld(m, renewal_multid(m, 300), RVec{1.6, 0, 0, 0}, 300);
    CHECK(lm.J == doctest::Approx(lm.J_dual).epsilon(1e-6));
    CHECK(lm.rel_error <= 0.05);
    CHECK_THROWS_AS(solve_velocity(k, RVec{1.5, 0, 0, 0}), Error);
}

TEST_CASE("kernel text round trip and truncation") {
    RenewalKernel m;
    m.d = 2;
    m.tail_nu = 0.7;
    m.tail_C = 2;
    m.entries = {{Vec{0, 1, 0, 0}, 1, 0.3}, {Vec{2, 0, 0, 0}, 1, 0.2}, {Vec{3, -1, 0, 0}, 2, 0.4999999999999}};
    auto back = RenewalKernel::from_text(2, m.to_text());
    CHECK(back.to_text() == m.to_text());
    CHECK(back.tail_nu == 0.7);
    CHECK_THROWS_AS(RenewalKernel::from_text(2, "1 2 1 0.5 9\n"), Error);
    CHECK_THROWS_AS(RenewalKernel::from_text(1, "1 0 0.5\n"), Error);
    CHECK_THROWS_AS(RenewalKernel::from_text(1, "1 1 0.7\n-1 1 0.7\n"), Error);

    RenewalKernel t;
    t.entries = {{Vec{0, 0, 0, 0}, 1, 0.5}, {Vec{1, 0, 0, 0}, 1, 1e-20}, {Vec{2, 0, 0, 0}, 2, 0.5}};
    CHECK(t.truncate() == 1e-20);
    CHECK(t.entries.size() == 2);
    CHECK(t.dropped_mass == 1e-20);
}
