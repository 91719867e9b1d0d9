// SPDX-License-Identifier: Apache-2.0
//
// Covered tests:
//   - OMP: exact recovery on orthonormal and coherent on-grid instances, tie breaking
//     at zero input, residual orthogonality after refits
//   - gain posterior against an explicit-adjugate oracle, the LS limit, covariance shape
//   - psi score against a term-by-term oracle, both closing-term conventions,
//     uniform-prior rank equivalence with the raw correlation
//   - greedy MAP: equivalence with OMP under flat priors, prior-forced selection,
//     posterior normalisation after updates
//   - posterior prediction against the dense Kronecker kernel, factored mode, marginals
//   - state initialisation (raw point masses, one-step prediction) and dense reconstruction
// ------------------------------------------------------------------------------------------------

#include "beamtrain/sparse_estimation.hpp"

#include <catch2/catch_amalgamated.hpp>
#include <unsupported/Eigen/KroneckerProduct>

using namespace beamtrain;

// Wraps an arbitrary dense matrix as a single-factor SensingMatrix (tx factor [1]).
static SensingMatrix wrap_dense(const CMat &m)
{
    SensingMatrix s;
    s.tx_factor = CMat::Ones(1, 1);
    s.rx_factor = m;
    s.tx_norm_sq = RVec::Ones(1);
    s.rx_norm_sq = m.colwise().squaredNorm().real().transpose();
    return s;
}

static SupportPosterior uniform_posterior(int L, int M_b, int M_m)
{
    SupportPosterior p;
    p.M_b = M_b;
    p.M_m = M_m;
    for (int i = 0; i < L; ++i)
        p.prob.push_back(RVec::Constant(M_b * M_m, 1.0 / (M_b * M_m)));
    return p;
}

TEST_CASE("omp recovers an orthonormal mixture exactly")
{
    ArrayGeometry g{4, 0.5};
    CMat u = dictionary_matrix(g, AngleGrid{4}); // unitary
    SensingMatrix phi = wrap_dense(u);
    CVec y = 2.0 * u.col(1) + 0.5 * u.col(3);
    ChannelEstimate est = omp_estimate(y, phi, 2);
    REQUIRE(est.support == std::vector<int>{1, 3});
    CHECK(std::abs(est.gains[0] - cx(2.0, 0.0)) < 1e-12);
    CHECK(std::abs(est.gains[1] - cx(0.5, 0.0)) < 1e-12);
    CHECK_FALSE(est.ill_conditioned);
}

TEST_CASE("omp recovers well-separated on-grid paths through the full pipeline")
{
    ArrayGeometry gb{4, 0.5}, gm{4, 0.5};
    AngleGrid grid{8};
    CMat ab = dictionary_matrix(gb, grid);
    CMat am = dictionary_matrix(gm, grid);
    CMat f = ab; // beams on the full AoD grid: circulant Gram, equal column norms
    CMat w = dft_combiner(4);
    SensingMatrix phi = build_sensing_matrix(f, w, ab, am);

    ChannelState s;
    s.paths.push_back({1, 2, cx(1.0, 0.0)});
    s.paths.push_back({5, 6, cx(0.0, 0.8)});
    Rng rng(7);
    MeasurementBatch b = simulate_measurement(s, gb, gm, grid, grid, f, w, 0.0, rng);
    CVec y = Eigen::Map<const CVec>(b.received.data(), b.received.size());

    ChannelEstimate est = omp_estimate(y, phi, 2);
    std::vector<int> sorted = est.support;
    std::sort(sorted.begin(), sorted.end());
    REQUIRE(sorted == std::vector<int>{1 * 8 + 2, 5 * 8 + 6});
    for (std::size_t k = 0; k < est.support.size(); ++k)
    {
        cx want = est.support[k] == 10 ? cx(1.0, 0.0) : cx(0.0, 0.8);
        CHECK(std::abs(est.gains[static_cast<Eigen::Index>(k)] - want) < 1e-10);
    }
}

TEST_CASE("omp tie breaking at zero input")
{
    ArrayGeometry g{4, 0.5};
    SensingMatrix phi = wrap_dense(dictionary_matrix(g, AngleGrid{6}));
    ChannelEstimate est = omp_estimate(CVec::Zero(4), phi, 3);
    CHECK(est.support == std::vector<int>{0, 1, 2});
    CHECK(est.gains.cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("omp residual is orthogonal to the selected columns")
{
    Rng rng(21);
    CMat m(6, 12);
    for (int c = 0; c < 12; ++c)
        for (int r = 0; r < 6; ++r)
            m(r, c) = rng.cgaussian();
    SensingMatrix phi = wrap_dense(m);
    CVec y(6);
    for (int i = 0; i < 6; ++i)
        y[i] = rng.cgaussian();
    ChannelEstimate est = omp_estimate(y, phi, 3);
    CMat cols(6, 3);
    for (int k = 0; k < 3; ++k)
        cols.col(k) = phi.column(est.support[static_cast<std::size_t>(k)]);
    CVec r = y - cols * est.gains;
    CHECK((cols.adjoint() * r).norm() < 1e-10 * y.norm());
}

TEST_CASE("gain posterior matches the explicit-adjugate oracle")
{
    CMat m(3, 2);
    m << cx(1.0, 0.5), cx(0.2, -0.1), cx(0.3, -0.2), cx(0.8, 0.4), cx(-0.5, 0.1), cx(0.1, 0.9);
    CVec y(3);
    y << cx(0.7, -0.3), cx(-0.2, 1.1), cx(0.4, 0.2);
    SensingMatrix phi = wrap_dense(m);
    GainPosterior gp = gain_posterior(y, phi, {0, 1}, 2.0, 0.5);
    // Frozen from the independent 2x2 adjugate inverse:
    CHECK(std::abs(gp.mean[0] - cx(-0.0895624498051698, -0.2754097385407061)) < 1e-12);
    CHECK(std::abs(gp.mean[1] - cx(0.3107766441595527, 0.3960558017787561)) < 1e-12);
    CHECK(std::abs(gp.cov(0, 0) - cx(0.2855528123977513, 0.0)) < 1e-12);
    CHECK(std::abs(gp.cov(1, 1) - cx(0.2810910497040364, 0.0)) < 1e-12);
    CHECK(std::abs(gp.cov(0, 1) - cx(-0.0520538980933401, 0.0565156607870549)) < 1e-12);
    CHECK((gp.cov - gp.cov.adjoint()).norm() < 1e-12);
}

TEST_CASE("gain posterior approaches least squares for a diffuse prior")
{
    Rng rng(33);
    CMat m(6, 3);
    for (int c = 0; c < 3; ++c)
        for (int r = 0; r < 6; ++r)
            m(r, c) = rng.cgaussian();
    CVec y(6);
    for (int i = 0; i < 6; ++i)
        y[i] = rng.cgaussian();
    SensingMatrix phi = wrap_dense(m);
    GainPosterior gp = gain_posterior(y, phi, {0, 1, 2}, 1e14, 0.5);
    CVec ls = m.colPivHouseholderQr().solve(y);
    CHECK((gp.mean - ls).norm() < 1e-8);
}

TEST_CASE("psi score matches the term-by-term oracle")
{
    CMat m(3, 2);
    m << cx(1.0, 0.5), cx(0.2, -0.1), cx(0.3, -0.2), cx(0.8, 0.4), cx(-0.5, 0.1), cx(0.1, 0.9);
    CVec r(3);
    r << cx(0.7, -0.3), cx(-0.2, 1.1), cx(0.4, 0.2);
    SensingMatrix phi = wrap_dense(m);
    RVec prior(2);
    prior << 0.3, 0.7;
    CHECK(std::abs(psi_score(0, r, phi, prior, 2.0, 0.5, true) -
                   (-4.2364141743014869)) < 1e-12);
    CHECK(std::abs(psi_score(0, r, phi, prior, 2.0, 0.5, false) -
                   (-3.2203108829030436)) < 1e-12);
}

TEST_CASE("psi ranking reduces to the correlation under a flat prior")
{
    ArrayGeometry g{5, 0.5};
    CMat u = dictionary_matrix(g, AngleGrid{5}); // unitary: equal column norms
    SensingMatrix phi = wrap_dense(u);
    Rng rng(9);
    CVec r(5);
    for (int i = 0; i < 5; ++i)
        r[i] = rng.cgaussian();
    RVec prior = RVec::Constant(5, 0.2);
    CVec c = phi.correlate(r);
    // score differences equal the data-term differences, so the rankings coincide
    double lam = 3.0, s2 = 0.4;
    double d01 = psi_score(0, r, phi, prior, lam, s2) - psi_score(1, r, phi, prior, lam, s2);
    double n2 = phi.col_norm_sq(0);
    double want = (std::norm(c[0]) - std::norm(c[1])) / (s2 * (n2 + s2 / lam));
    CHECK(std::abs(d01 - want) < 1e-10);
}

TEST_CASE("greedy MAP reduces to OMP under a flat prior and diffuse gains")
{
    ArrayGeometry gb{4, 0.5}, gm{4, 0.5};
    AngleGrid grid{8};
    CMat ab = dictionary_matrix(gb, grid);
    CMat am = dictionary_matrix(gm, grid);
    SensingMatrix phi = build_sensing_matrix(ab, dft_combiner(4), ab, am);

    EstimatorState st;
    st.posterior = uniform_posterior(3, 8, 8);
    st.T_b = RMat::Identity(8, 8);
    st.T_m = RMat::Identity(8, 8);
    st.gain_prior_var = 1e12;
    st.noise_var = 0.25;

    Rng rng(55);
    for (int rep = 0; rep < 20; ++rep)
    {
        CVec y(phi.rows());
        for (int i = 0; i < y.size(); ++i)
            y[i] = rng.cgaussian();
        ChannelEstimate omp = omp_estimate(y, phi, 3);
        auto [map, nxt] = greedy_map_estimate(y, phi, st);
        CHECK(map.support == omp.support); // same bins in the same selection order
    }
}

TEST_CASE("point-mass prior forces the MAP selection")
{
    ArrayGeometry g{4, 0.5};
    CMat u = dictionary_matrix(g, AngleGrid{4});
    SensingMatrix phi = build_sensing_matrix(u, dft_combiner(4), u, u);

    EstimatorState st;
    st.posterior.M_b = 4;
    st.posterior.M_m = 4;
    RVec point = RVec::Zero(16);
    point[7] = 1.0;
    st.posterior.prob.push_back(point);
    st.T_b = RMat::Identity(4, 4);
    st.T_m = RMat::Identity(4, 4);
    st.gain_prior_var = 1.0;
    st.noise_var = 0.1;

    // data strongly favours flat bin 2, but only bin 7 has prior mass
    CVec y = 5.0 * phi.column(2);
    auto [est, nxt] = greedy_map_estimate(y, phi, st);
    REQUIRE(est.support == std::vector<int>{7});
    CHECK(nxt.posterior.prob[0][7] == 1.0);
}

TEST_CASE("posterior updates stay normalised")
{
    ArrayGeometry gb{4, 0.5}, gm{4, 0.5};
    AngleGrid grid{8};
    CMat ab = dictionary_matrix(gb, grid);
    CMat am = dictionary_matrix(gm, grid);
    SensingMatrix phi = build_sensing_matrix(ab, dft_combiner(4), ab, am);

    EstimatorState st;
    st.posterior = uniform_posterior(2, 8, 8);
    st.T_b = transition_matrix(8, 1.0);
    st.T_m = transition_matrix(8, 1.0);
    st.gain_prior_var = 1.0;
    st.noise_var = 0.05;

    Rng rng(100);
    for (int rep = 0; rep < 10; ++rep)
    {
        CVec y(phi.rows());
        for (int i = 0; i < y.size(); ++i)
            y[i] = rng.cgaussian();
        auto [est, nxt] = greedy_map_estimate(y, phi, st);
        for (const RVec &p : nxt.posterior.prob)
        {
            CHECK(std::abs(p.sum() - 1.0) < 1e-9);
            CHECK(p.minCoeff() >= 0.0);
        }
        for (const RVec &p : nxt.predicted.prob)
            CHECK(std::abs(p.sum() - 1.0) < 1e-9);
        st = nxt;
    }
}

TEST_CASE("posterior prediction equals the dense Kronecker kernel")
{
    RMat tb = transition_matrix(4, 1.2);
    RMat tm = transition_matrix(3, 0.7);
    SupportPosterior p;
    p.M_b = 4;
    p.M_m = 3;
    Rng rng(3);
    RVec v(12);
    for (int i = 0; i < 12; ++i)
        v[i] = rng.uniform();
    v /= v.sum();
    p.prob.push_back(v);

    RMat joint = Eigen::kroneckerProduct(tb, tm);
    SupportPosterior one = posterior_predict(p, tb, tm);
    CHECK((one.prob[0] - joint * v).norm() < 1e-12);
    SupportPosterior two = posterior_predict(one, tb, tm);
    CHECK((two.prob[0] - joint * joint * v).norm() < 1e-10);
    CHECK(std::abs(one.prob[0].sum() - 1.0) < 1e-12);
}

TEST_CASE("factored posterior prediction and marginals")
{
    RMat tb = transition_matrix(5, 1.0);
    RMat tm = transition_matrix(4, 0.8);
    SupportPosterior p;
    p.mode = SupportPosterior::Mode::Factored;
    p.M_b = 5;
    p.M_m = 4;
    RVec pa = RVec::Zero(5), pm = RVec::Zero(4);
    pa[2] = 1.0;
    pm[1] = 1.0;
    p.aod_prob.push_back(pa);
    p.aoa_prob.push_back(pm);

    SupportPosterior nxt = posterior_predict(p, tb, tm);
    CHECK((nxt.aod_prob[0] - tb.col(2)).norm() < 1e-14);
    CHECK((nxt.aoa_prob[0] - tm.col(1)).norm() < 1e-14);
    CHECK(std::abs(nxt.joint_at(0, 2 * 4 + 1) - tb(2, 2) * tm(1, 1)) < 1e-14);
    CHECK((nxt.aod_marginal(0) - nxt.aod_prob[0]).norm() == 0.0);

    // joint-mode marginals are the row/column sums of the bin matrix
    SupportPosterior j;
    j.M_b = 2;
    j.M_m = 2;
    RVec v(4);
    v << 0.1, 0.2, 0.3, 0.4; // flat = aod*2 + aoa
    j.prob.push_back(v);
    RVec ma = j.aod_marginal(0);
    CHECK(std::abs(ma[0] - 0.3) < 1e-15);
    CHECK(std::abs(ma[1] - 0.7) < 1e-15);
    RVec mm = j.aoa_marginal(0);
    CHECK(std::abs(mm[0] - 0.4) < 1e-15);
    CHECK(std::abs(mm[1] - 0.6) < 1e-15);
}

TEST_CASE("estimator state initialisation keeps point masses and predicts one step")
{
    RMat tb = transition_matrix(6, 1.5);
    RMat tm = transition_matrix(5, 1.0);
    ChannelEstimate init;
    init.support = {2 * 5 + 3, 4 * 5 + 0};
    init.gains = CVec::Ones(2);
    EstimatorState st = init_estimator_state(init, 6, 5, tb, tm, 1.0, 0.1);
    REQUIRE(st.posterior.num_paths() == 2);
    RMat joint = Eigen::kroneckerProduct(tb, tm);
    CHECK(st.posterior.prob[0][2 * 5 + 3] == 1.0);
    CHECK(st.posterior.prob[0].sum() == 1.0);
    CHECK(st.posterior.prob[1][4 * 5 + 0] == 1.0);
    CHECK((st.predicted.prob[0] - joint.col(2 * 5 + 3)).norm() < 1e-12);
    CHECK((st.predicted.prob[1] - joint.col(4 * 5 + 0)).norm() < 1e-12);
}

TEST_CASE("dense reconstruction matches the assembled channel")
{
    ArrayGeometry gb{8, 0.5}, gm{4, 0.5};
    AngleGrid grid_b{16}, grid_m{8};
    CMat ab = dictionary_matrix(gb, grid_b);
    CMat am = dictionary_matrix(gm, grid_m);
    ChannelEstimate est;
    est.support = {3 * 8 + 5, 9 * 8 + 1};
    est.gains = CVec(2);
    est.gains << cx(1.2, -0.3), cx(0.0, 0.7);
    ChannelState s;
    s.paths.push_back({3, 5, cx(1.2, -0.3)});
    s.paths.push_back({9, 1, cx(0.0, 0.7)});
    CHECK((estimate_to_dense(est, ab, am) - assemble_dense(s, gb, gm, grid_b, grid_m)).norm() <
          1e-12);
}
