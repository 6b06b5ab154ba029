#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "fjdgd/analysis.hpp"
#include "fjdgd/datagen.hpp"
#include "fjdgd/problem.hpp"
#include "fjdgd/topology.hpp"

using namespace fjdgd;

namespace {

Problem ring3_quadratics(std::initializer_list<double> h, std::initializer_list<double> c) {
    Problem pr;
    pr.kind = TaskKind::quadratic;
    pr.n_agents = 3;
    pr.dim = 1;
    pr.classes = 1;
    pr.quad_h.resize(1, 3);
    pr.quad_c.resize(1, 3);
    int i = 0;
    for (double v : h) pr.quad_h(0, i++) = v;
    i = 0;
    for (double v : c) pr.quad_c(0, i++) = v;
    return pr;
}

bool block_eq(const ParamBlock& a, const ParamBlock& b) {
    if (a.rows() != b.rows() || a.cols() != b.cols()) return false;
    return std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

} // namespace

TEST_CASE("rate certificate evaluates the three-way max exactly") {
    ConvexityConstants k{1.0, 2.0};
    RateCertificate c = convergence_rate(0.5, k, 0.5);
    CHECK(c.zeta == 0.5); // max{|1-0.5|, |1-1|, |0.5-1|}
    CHECK(c.convergent);
    CHECK(c.alpha == 0.5);
    CHECK(c.mu == 1.0);
    CHECK(c.big_l == 2.0);
    CHECK(c.lambda_min_w == 0.5);
}

TEST_CASE("zero step size is certified as non-contractive") {
    ConvexityConstants k{1.0, 2.0};
    RateCertificate c = convergence_rate(0.0, k, -0.25);
    CHECK(c.zeta == 1.0); // max{1, 1, 0.25}
    CHECK_FALSE(c.convergent);
    CHECK_THROWS_AS(convergence_rate(-0.1, k, 0.0), ConfigError);
}

TEST_CASE("rate certificate matches an independent re-evaluation on random inputs") {
    Rng rng(71);
    for (int rep = 0; rep < 50; ++rep) {
        double mu = rng.next_uniform(0.01, 1.0);
        double big_l = mu + rng.next_uniform(0.0, 3.0);
        double lam = rng.next_uniform(-1.0, 1.0);
        double alpha = rng.next_uniform(0.0, 1.5);
        RateCertificate c = convergence_rate(alpha, {mu, big_l}, lam);
        double expect = std::abs(1.0 - alpha * mu);
        expect = std::max(expect, std::abs(1.0 - alpha * big_l));
        expect = std::max(expect, std::abs(lam - alpha * big_l));
        CHECK(c.zeta == expect);
        CHECK(c.convergent == (expect < 1.0));
    }
}

TEST_CASE("auto step size balances the extreme terms and always contracts") {
    Rng rng(72);
    for (int rep = 0; rep < 30; ++rep) {
        double mu = rng.next_uniform(0.01, 1.0);
        double big_l = mu + rng.next_uniform(0.001, 3.0);
        double lam = rng.next_uniform(-0.999, 1.0);
        double a = auto_alpha({mu, big_l}, lam);
        RateCertificate c = convergence_rate(a, {mu, big_l}, lam);
        CHECK(c.convergent);
        CHECK(c.zeta == Catch::Approx((big_l - mu * lam) / (mu + big_l)).epsilon(1e-12));
        // the two extreme terms are equalized, which is what makes it optimal
        CHECK(std::abs(1.0 - a * mu) == Catch::Approx(std::abs(lam - a * big_l)).margin(1e-12));
        // nudging alpha either way cannot improve zeta
        CHECK(convergence_rate(a * 1.05, {mu, big_l}, lam).zeta >= c.zeta - 1e-12);
        CHECK(convergence_rate(a * 0.95, {mu, big_l}, lam).zeta >= c.zeta - 1e-12);
    }
    // ring of 10: lambda_min = -1/3, so auto alpha = (2/3)/(mu+L)
    MixingMatrix w = metropolis_weights(build_ring(10));
    double lam10 = min_eigenvalue(w);
    CHECK(lam10 == Catch::Approx(-1.0 / 3.0).margin(1e-12));
    CHECK(auto_alpha({1.0, 2.0}, lam10) == Catch::Approx((2.0 / 3.0) / 3.0).epsilon(1e-12));
}

TEST_CASE("centralized optimum solves quadratics in closed form") {
    // equal curvatures: optimum is the mean of the centers
    Problem pr = ring3_quadratics({1.0, 1.0, 1.0}, {1.0, 2.0, 6.0});
    ParamBlock x = centralized_optimum(pr);
    CHECK(x(0, 0) == Catch::Approx(3.0).margin(1e-9));

    // mixed curvatures: curvature-weighted mean
    Problem pm = ring3_quadratics({1.0, 2.0, 3.0}, {1.0, -2.0, 0.5});
    double expect = (1.0 * 1.0 + 2.0 * -2.0 + 3.0 * 0.5) / 6.0;
    CHECK(centralized_optimum(pm)(0, 0) == Catch::Approx(expect).margin(1e-9));
}

TEST_CASE("centralized optimum of identical agents equals the single-agent optimum") {
    auto data = gen_2d_linear(2, 1.0, 60, 0.01, 9);
    std::vector<AgentDataset> train{data[0], data[0]}, test{data[0], data[0]};
    Problem two = make_logistic_problem(TaskKind::binary, train, test, 0.1);
    Problem one = make_logistic_problem(TaskKind::binary, {data[0]}, {data[0]}, 0.1);
    ParamBlock a = centralized_optimum(two);
    ParamBlock b = centralized_optimum(one);
    CHECK((a - b).norm() < 1e-8);

    // defining property: the summed gradient vanishes
    ParamBlock g = two.local_gradient(0, a) + two.local_gradient(1, a);
    CHECK(g.norm() <= 1e-10);
}

TEST_CASE("oracle minimizers fail loudly when the budget is too small") {
    auto data = gen_2d_linear(2, 1.0, 60, 0.01, 9);
    Problem pr = make_logistic_problem(TaskKind::binary, {data[0], data[1]},
                                       {data[0], data[1]}, 0.01);
    CHECK_THROWS_AS(centralized_optimum(pr, 1e-10, 3), Error);
    CHECK_THROWS_AS(local_optima(pr, 1e-10, 3), Error);
}

TEST_CASE("local optima hit the per-agent quadratic centers") {
    Problem pr = ring3_quadratics({1.0, 2.0, 3.0}, {1.0, -2.0, 0.5});
    auto xs = local_optima(pr);
    REQUIRE(xs.size() == 3);
    for (int i = 0; i < 3; ++i)
        CHECK(xs[static_cast<std::size_t>(i)](0, 0) ==
              Catch::Approx(pr.quad_c(0, i)).margin(1e-10));

    // identical agents share the optimum; N=1 matches the centralized oracle
    Problem same = ring3_quadratics({2.0, 2.0, 2.0}, {1.5, 1.5, 1.5});
    auto ys = local_optima(same);
    CHECK(block_eq(ys[0], ys[1]));
    CHECK(block_eq(ys[1], ys[2]));

    Problem single;
    single.kind = TaskKind::quadratic;
    single.n_agents = 1;
    single.dim = 2;
    single.quad_h = Eigen::MatrixXd::Constant(2, 1, 2.0);
    single.quad_c.resize(2, 1);
    single.quad_c << 0.7, -0.3;
    CHECK((local_optima(single)[0] - centralized_optimum(single)).norm() < 1e-10);
}

TEST_CASE("dgd fixed point matches the direct linear solve on scalar quadratics") {
    Problem pr = ring3_quadratics({1.0, 2.0, 3.0}, {1.0, -2.0, 0.5});
    Graph g = build_ring(3);
    MixingMatrix w = metropolis_weights(g);
    double alpha = 0.1;

    auto xbar = dgd_fixed_point(pr, g, w, alpha);

    // (I - W + alpha*H) xbar = alpha*H*c
    Eigen::Matrix3d h = Eigen::Vector3d(1.0, 2.0, 3.0).asDiagonal();
    Eigen::Vector3d c(1.0, -2.0, 0.5);
    Eigen::Vector3d solve =
        (Eigen::Matrix3d::Identity() - w + alpha * h).partialPivLu().solve(alpha * h * c);
    for (int i = 0; i < 3; ++i)
        CHECK(xbar[static_cast<std::size_t>(i)](0, 0) == Catch::Approx(solve(i)).margin(1e-10));
}

TEST_CASE("identical agents give a consensus dgd fixed point") {
    Problem pr = ring3_quadratics({2.0, 2.0, 2.0}, {1.5, 1.5, 1.5});
    Graph g = build_ring(3);
    MixingMatrix w = metropolis_weights(g);
    auto xbar = dgd_fixed_point(pr, g, w, 0.2);
    for (const auto& x : xbar) CHECK(x(0, 0) == Catch::Approx(1.5).margin(1e-9));
}

TEST_CASE("dgd fixed point refuses non-contractive step sizes") {
    Problem pr = ring3_quadratics({1.0, 2.0, 3.0}, {1.0, -2.0, 0.5});
    Graph g = build_ring(3);
    MixingMatrix w = metropolis_weights(g);
    CHECK_THROWS_WITH(dgd_fixed_point(pr, g, w, 1.0),
                      Catch::Matchers::ContainsSubstring("not a contraction"));
}

TEST_CASE("fj fixed point is the per-agent convex combination with exact endpoints") {
    std::vector<ParamBlock> local(3), bar(3);
    for (int i = 0; i < 3; ++i) {
        local[static_cast<std::size_t>(i)] = ParamBlock::Constant(2, 1, 1.0 + i);
        bar[static_cast<std::size_t>(i)] = ParamBlock::Constant(2, 1, -2.0 * (i + 1));
    }
    auto at = [&](double lam) {
        return fj_fixed_point(Eigen::VectorXd::Constant(3, lam), local, bar);
    };
    auto zeros = at(0.0), ones = at(1.0), half = at(0.5);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(block_eq(zeros[i], bar[i]));  // endpoint short-circuit
        CHECK(block_eq(ones[i], local[i]));
        // affine in lambda: the midpoint is exactly the average of the endpoints
        ParamBlock mid = 0.5 * (local[i] + bar[i]);
        CHECK(block_eq(half[i], mid));
    }

    Eigen::VectorXd mixed(3);
    mixed << 0.25, 0.5, 0.75;
    auto m = fj_fixed_point(mixed, local, bar);
    CHECK(m[0](0, 0) == Catch::Approx(0.25 * 1.0 + 0.75 * -2.0).epsilon(1e-15));
    CHECK(m[2](1, 0) == Catch::Approx(0.75 * 3.0 + 0.25 * -6.0).epsilon(1e-15));

    CHECK_THROWS_AS(fj_fixed_point(Eigen::VectorXd::Constant(2, 0.5), local, bar), ContractError);
}

TEST_CASE("fixed point report carries small residuals on a logistic instance") {
    auto data = gen_2d_linear(5, 1.0, 80, 0.01, 14);
    std::vector<AgentDataset> train(data.begin(), data.end()), test = train;
    Problem pr = make_logistic_problem(TaskKind::binary, train, test, 0.05);
    Graph g = build_ring(5);
    MixingMatrix w = metropolis_weights(g);
    double alpha = auto_alpha(pr.constants(), min_eigenvalue(w));

    FixedPointReport rep = compute_fixed_points(pr, g, w, alpha,
                                                Eigen::VectorXd::Constant(5, 0.5));
    CHECK(rep.residual_star <= 1e-10);
    CHECK(rep.residual_local <= 1e-10);
    CHECK(rep.residual_bar <= 1e-9);
    REQUIRE(rep.x_hat.size() == 5);
    for (std::size_t i = 0; i < 5; ++i) {
        ParamBlock expect = 0.5 * (rep.x_star_local[i] + rep.x_bar[i]);
        CHECK((rep.x_hat[i] - expect).norm() < 1e-15);
    }
}

TEST_CASE("heterogeneity constants vanish for identical agents and grow with spread") {
    Graph g = build_ring(10);
    MixingMatrix w = metropolis_weights(g);

    auto report_for = [&](double theta) {
        auto data = gen_2d_linear(10, theta, 200, 0.01, 77);
        std::vector<AgentDataset> train(data.begin(), data.end()), test = train;
        Problem pr = make_logistic_problem(TaskKind::binary, train, test, 1e-3);
        double alpha = auto_alpha(pr.constants(), min_eigenvalue(w));
        FixedPointReport rep = compute_fixed_points(pr, g, w, alpha,
                                                    Eigen::VectorXd::Zero(10));
        return dgd_suboptimality_bound(rep, pr.constants(), pr);
    };

    HeterogeneityReport wide = report_for(1.0);
    HeterogeneityReport narrow = report_for(0.1);
    CHECK(wide.big_d > narrow.big_d); // more slope spread, larger D
    CHECK(wide.c_const >= 0.0);
    CHECK(narrow.c_const >= 0.0);
    CHECK(wide.distance > 0.0);

    // identical agents: x* equals every local optimum, so D = 0
    auto data = gen_2d_linear(2, 1.0, 100, 0.01, 5);
    std::vector<AgentDataset> same(3, data[0]);
    Problem ident = make_logistic_problem(TaskKind::binary, same, same, 0.1);
    Graph g3 = build_ring(3);
    MixingMatrix w3 = metropolis_weights(g3);
    double alpha = auto_alpha(ident.constants(), min_eigenvalue(w3));
    FixedPointReport rep = compute_fixed_points(ident, g3, w3, alpha, Eigen::VectorXd::Zero(3));
    HeterogeneityReport h = dgd_suboptimality_bound(rep, ident.constants(), ident);
    CHECK(h.big_d < 1e-6);

    // the reported distance is literally ||x_bar - 1 (x) x_star||
    double d2 = 0.0;
    for (const auto& xb : rep.x_bar) d2 += (xb - rep.x_star).squaredNorm();
    CHECK(h.distance == Catch::Approx(std::sqrt(d2)).epsilon(1e-15));
}

TEST_CASE("noise envelope evaluates the geometric bound") {
    Eigen::VectorXd lam0 = Eigen::VectorXd::Zero(3);
    Eigen::VectorXd lam1 = Eigen::VectorXd::Ones(3);
    Eigen::VectorXd mixed(3);
    mixed << 0.9, 0.3, 0.7;

    SECTION("tau = 0 is pure geometric decay") {
        for (long k : {0L, 1L, 5L, 20L})
            CHECK(noise_envelope(k, 0.8, 0.0, lam0, 4.0) ==
                  Catch::Approx(std::pow(0.8, static_cast<double>(k)) * 4.0).epsilon(1e-15));
    }
    SECTION("full stubbornness blocks the noise term") {
        CHECK(noise_envelope(7, 0.6, 5.0, lam1, 2.0) ==
              Catch::Approx(std::pow(0.6, 7.0) * 2.0).epsilon(1e-15));
    }
    SECTION("frozen spot values and the asymptote") {
        // k=3, zeta=0.5, tau=1, min lam=0, d0=4:
        // 0.125*4 + (1-0.125)/(0.5) = 0.5 + 1.75 = 2.25
        CHECK(noise_envelope(3, 0.5, 1.0, lam0, 4.0) == Catch::Approx(2.25).epsilon(1e-15));
        // k large: series sums to 1/(1-zeta) = 2
        CHECK(noise_envelope(200, 0.5, 1.0, lam0, 0.0) == Catch::Approx(2.0).epsilon(1e-12));
        // min over the profile is what matters
        CHECK(noise_envelope(200, 0.5, 1.0, mixed, 0.0) ==
              Catch::Approx((1.0 - 0.3) * 2.0).epsilon(1e-12));
    }
    SECTION("zeta = 1 degenerates to a linear-in-k bound") {
        CHECK(noise_envelope(10, 1.0, 0.5, lam0, 3.0) == Catch::Approx(3.0 + 5.0).epsilon(1e-15));
    }
    SECTION("contract violations throw") {
        CHECK_THROWS_AS(noise_envelope(-1, 0.5, 1.0, lam0, 0.0), ContractError);
        CHECK_THROWS_AS(noise_envelope(1, 0.5, 1.0, Eigen::VectorXd(), 0.0), ContractError);
    }
}

TEST_CASE("envelope dominates measured distances on clipped adversarial quadratics") {
    // Property form of the corruption bound: 20 random scalar instances.
    Rng seeds(88);
    for (int rep = 0; rep < 20; ++rep) {
        std::uint64_t seed = seeds.next_u64();
        Problem pr = make_quadratic_problem(3, 1, 1.0, 4.0, 1.0, seed);
        Graph g = build_ring(3);
        MixingMatrix w = metropolis_weights(g);
        double alpha = auto_alpha(pr.constants(), min_eigenvalue(w));
        RateCertificate cert = convergence_rate(alpha, pr.constants(), min_eigenvalue(w));
        REQUIRE(cert.convergent);

        auto xbar = dgd_fixed_point(pr, g, w, alpha);
        Eigen::VectorXd lam = Eigen::VectorXd::Zero(3); // plain DGD limit

        RunControls rc;
        rc.algorithm = Algorithm::dgd;
        rc.alpha = alpha;
        rc.iterations = 120;
        rc.capture_trajectory = true;
        AttackConfig atk;
        atk.malicious = {static_cast<int>(seed % 3)};
        atk.eta = 10.0;
        atk.kappa = 10.0;
        atk.tau = 0.3;
        atk.seed = seed ^ 0xBEEF;
        rc.attack = atk;
        RunResult r = run_loop(pr, g, w, rc);

        double d0 = 0.0;
        for (int i = 0; i < 3; ++i)
            d0 += (r.trajectory[0][static_cast<std::size_t>(i)] -
                   xbar[static_cast<std::size_t>(i)])
                      .squaredNorm();
        d0 = std::sqrt(d0);
        for (std::size_t k = 0; k < r.trajectory.size(); ++k) {
            double dk = 0.0;
            for (int i = 0; i < 3; ++i)
                dk += (r.trajectory[k][static_cast<std::size_t>(i)] -
                       xbar[static_cast<std::size_t>(i)])
                          .squaredNorm();
            dk = std::sqrt(dk);
            double bound = noise_envelope(static_cast<long>(k), cert.zeta, atk.tau, lam, d0);
            CHECK(dk <= bound + 1e-9);
        }
    }
}

TEST_CASE("trace summaries reproduce hand-computed statistics") {
    MetricsTrace t;
    auto add = [&](long it, int agent, double lloss, double gloss, double ltr, double lte,
                   double gte, int stop) {
        TraceRow r;
        r.iteration = it;
        r.agent = agent;
        r.local_train_loss = lloss;
        r.global_train_loss = gloss;
        r.local_train_acc = ltr;
        r.local_test_acc = lte;
        r.global_test_acc = gte;
        r.stopped = stop;
        t.rows.push_back(r);
    };
    // earlier iteration that must be ignored
    add(0, 0, 9.0, 9.0, 0.0, 0.0, 0.0, 0);
    add(0, 1, 9.0, 9.0, 0.0, 0.0, 0.0, 0);
    // final iteration
    add(5, 0, 1.0, 3.0, 0.8, 0.7, 0.75, 1);
    add(5, 1, 2.0, 3.0, 1.0, 0.9, 0.75, 0);

    TraceSummary s = summarize_trace(t);
    CHECK(s.iteration == 5);
    CHECK(s.agents == 2);
    CHECK(s.stopped_count == 1);
    CHECK(s.metrics.at("local_train_acc").mean == Catch::Approx(0.9));
    CHECK(s.metrics.at("local_train_acc").min == 0.8);
    CHECK(s.metrics.at("local_train_acc").max == 1.0);
    CHECK(s.metrics.at("local_train_acc").stddev == Catch::Approx(0.1));
    CHECK(s.metrics.at("global_train_loss").stddev == 0.0); // constant column
    CHECK(s.metrics.at("local_train_loss").mean == Catch::Approx(1.5));

    CHECK_THROWS_AS(summarize_trace(MetricsTrace{}), ContractError);
}

TEST_CASE("summary statistics match a brute-force recomputation on a random trace") {
    Rng rng(91);
    MetricsTrace t;
    const int n = 9;
    std::vector<double> col;
    for (int i = 0; i < n; ++i) {
        TraceRow r;
        r.iteration = 3;
        r.agent = i;
        r.local_train_loss = rng.next_uniform(0.0, 5.0);
        col.push_back(r.local_train_loss);
        t.rows.push_back(r);
    }
    TraceSummary s = summarize_trace(t);
    double mean = 0.0;
    for (double v : col) mean += v;
    mean /= n;
    double var = 0.0;
    for (double v : col) var += (v - mean) * (v - mean);
    var /= n;
    CHECK(s.metrics.at("local_train_loss").mean == Catch::Approx(mean).epsilon(1e-14));
    CHECK(s.metrics.at("local_train_loss").stddev == Catch::Approx(std::sqrt(var)).epsilon(1e-12));
    CHECK(s.metrics.at("local_train_loss").min == *std::min_element(col.begin(), col.end()));
    CHECK(s.metrics.at("local_train_loss").max == *std::max_element(col.begin(), col.end()));
}

TEST_CASE("percentile interval endpoints follow linear interpolation") {
    MetricsTrace t;
    for (int i = 1; i <= 9; ++i) {
        TraceRow r;
        r.iteration = 0;
        r.agent = i;
        r.local_train_loss = static_cast<double>(10 - i); // 9..1, order must not matter
        t.rows.push_back(r);
    }
    TraceSummary s = summarize_trace(t);
    // sorted values 1..9: rank 0.125*(9-1) = 1 -> 2.0; rank 0.875*8 = 7 -> 8.0
    CHECK(s.metrics.at("local_train_loss").p12_5 == Catch::Approx(2.0).epsilon(1e-15));
    CHECK(s.metrics.at("local_train_loss").p87_5 == Catch::Approx(8.0).epsilon(1e-15));

    // a fractional rank: 4 values 1..4, p12.5 at rank 0.375 -> 1.375
    MetricsTrace q;
    for (int i = 1; i <= 4; ++i) {
        TraceRow r;
        r.iteration = 0;
        r.agent = i;
        r.local_train_loss = static_cast<double>(i);
        q.rows.push_back(r);
    }
    CHECK(summarize_trace(q).metrics.at("local_train_loss").p12_5 ==
          Catch::Approx(1.375).epsilon(1e-15));
}
