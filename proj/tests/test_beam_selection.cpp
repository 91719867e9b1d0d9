// SPDX-License-Identifier: Apache-2.0
//
// Covered tests:
//   - Fisher entries against a finite-difference oracle (frozen instance plus 50 random
//     operating points), zero-gain and gain-scaling homogeneity
//   - single-path CRLB: frozen value, rank-one degeneracy over 100 random single beams,
//     positivity, |alpha| scaling
//   - averaged cost: point-mass and two-bin reductions, direct-sum cross-check, infinite
//     bins only counted at positive probability
//   - 1D symmetric search vs the exhaustive oracle (equality in even-parity regimes,
//     never better otherwise), edge fallback, window counting, argmin gain-invariance
//   - multipath concatenation
//   - a small maximum-likelihood variance sanity run at high SNR
// ------------------------------------------------------------------------------------------------

#include "beamtrain/beam_selection.hpp"

#include <catch2/catch_amalgamated.hpp>

using namespace beamtrain;

namespace
{

RVec gaussian_dist(int bins, double center, double sigma)
{
    RVec d(bins);
    for (int m = 0; m < bins; ++m)
        d[m] = std::exp(-0.5 * (m - center) * (m - center) / (sigma * sigma));
    return d / d.sum();
}

// Finite-difference beam responses for the numerical Fisher cross-check.
CVec fd_response(const CMat &f, const ArrayGeometry &g, double theta, double h)
{
    CVec hi = f.transpose() * steering_vector(g, theta + h).conjugate();
    CVec lo = f.transpose() * steering_vector(g, theta - h).conjugate();
    return (hi - lo) / (2.0 * h);
}

} // namespace

TEST_CASE("fisher entries match the frozen finite-difference oracle")
{
    ArrayGeometry g{8, 0.5};
    CMat f(8, 2);
    f.col(0) = steering_vector(g, 0.15);
    f.col(1) = steering_vector(g, 0.25);
    FisherMatrix v = fisher_entries(f, g, 0.2, cx(1.0, 0.0), 0.01);
    CHECK(std::abs(v.v33() - 4.4896900448773355e+04) < 1e-5 * 4.49e4);
    CHECK(std::abs(v.v11() - 1.7538837142664150e+02) < 1e-10 * 1.75e2);
    CHECK(std::abs(std::abs(v.v31()) - 1.9284958671170884e+03) < 1e-5 * 1.93e3);
    CHECK(std::abs(crlb_single_path(f, g, 0.2, 0.01) - 4.0208096032360690e-04) < 1e-8);
    CHECK((v.entries - v.entries.adjoint()).norm() < 1e-12 * v.entries.norm());
}

TEST_CASE("fisher entries match numerical differentiation at random operating points")
{
    Rng rng(17);
    for (int rep = 0; rep < 50; ++rep)
    {
        int n = 4 + static_cast<int>(rng.raw() % 13);
        ArrayGeometry g{n, 0.5};
        double theta = -0.9 + 1.8 * rng.uniform();
        CMat f(n, 2);
        f.col(0) = steering_vector(g, std::clamp(theta - 0.1 * rng.uniform(), -1.0, 1.0));
        f.col(1) = steering_vector(g, std::clamp(theta + 0.1 * rng.uniform(), -1.0, 1.0));
        cx alpha = cx(0.3, 0.0) + rng.cgaussian();
        double s2 = 0.003 + rng.uniform();

        FisherMatrix v = fisher_entries(f, g, theta, alpha, s2);
        CVec dmu = fd_response(f, g, theta, 1e-6);
        CVec mu = f.transpose() * steering_vector(g, theta).conjugate();
        double v33 = 2.0 * std::norm(alpha) / s2 * dmu.squaredNorm();
        double v11 = mu.squaredNorm() / s2;
        double v31 = std::abs(alpha / s2 * mu.dot(dmu));
        CHECK(std::abs(v.v33() - v33) < 1e-3 * std::abs(v33));
        CHECK(std::abs(v.v11() - v11) < 1e-3 * std::abs(v11));
        CHECK(std::abs(std::abs(v.v31()) - v31) < 1e-3 * std::abs(v31) + 1e-12);
    }
}

TEST_CASE("zero gain and gain scaling")
{
    ArrayGeometry g{8, 0.5};
    CMat f(8, 2);
    f.col(0) = steering_vector(g, -0.3);
    f.col(1) = steering_vector(g, -0.1);
    FisherMatrix v0 = fisher_entries(f, g, -0.2, cx(0.0, 0.0), 0.1);
    CHECK(v0.v33() == 0.0);
    CHECK(std::abs(v0.v31()) == 0.0);

    FisherMatrix v1 = fisher_entries(f, g, -0.2, cx(0.7, -0.4), 0.1);
    FisherMatrix v2 = fisher_entries(f, g, -0.2, 2.0 * cx(0.7, -0.4), 0.1);
    CHECK(std::abs(v2.v33() - 4.0 * v1.v33()) < 1e-12 * v2.v33());
    CHECK(std::abs(std::abs(v2.v31()) - 2.0 * std::abs(v1.v31())) < 1e-12 * std::abs(v2.v31()));

    double c1 = crlb_single_path(f, g, -0.2, 0.1, 1.0);
    double c2 = crlb_single_path(f, g, -0.2, 0.1, 2.0);
    CHECK(std::abs(c2 - c1 / 4.0) < 1e-15);
}

TEST_CASE("rank-one beam sets carry no angle information")
{
    Rng rng(5);
    for (int rep = 0; rep < 100; ++rep)
    {
        int n = 2 + static_cast<int>(rng.raw() % 31);
        ArrayGeometry g{n, 0.5};
        double theta = -1.0 + 2.0 * rng.uniform();
        CMat f(n, 1);
        if (rep % 2 == 0)
            f.col(0) = steering_vector(g, -1.0 + 2.0 * rng.uniform());
        else
            for (int k = 0; k < n; ++k)
                f(k, 0) = rng.cgaussian();
        CHECK(std::isinf(crlb_single_path(f, g, theta, 0.01)));
        // duplicated column: still rank one
        CMat f2(n, 2);
        f2.col(0) = f.col(0);
        f2.col(1) = f.col(0) * cx(0.3, 0.8);
        CHECK(std::isinf(crlb_single_path(f2, g, theta, 0.01)));
    }
}

TEST_CASE("finite bounds are strictly positive")
{
    Rng rng(11);
    for (int rep = 0; rep < 50; ++rep)
    {
        ArrayGeometry g{16, 0.5};
        double theta = -0.8 + 1.6 * rng.uniform();
        CMat f(16, 2);
        f.col(0) = steering_vector(g, std::clamp(theta - 0.05 - 0.2 * rng.uniform(), -1.0, 1.0));
        f.col(1) = steering_vector(g, std::clamp(theta + 0.05 + 0.2 * rng.uniform(), -1.0, 1.0));
        double c = crlb_single_path(f, g, theta, 0.25);
        if (!std::isinf(c))
            CHECK(c > 0.0);
    }
}

TEST_CASE("averaged cost reduces to the pointwise bound")
{
    // beam offsets of +/-1 bin from the supported bins: no nulls involved
    ArrayGeometry g{16, 0.5};
    AngleGrid grid{32};
    CMat f(16, 2);
    f.col(0) = steering_vector(g, grid.angle(11));
    f.col(1) = steering_vector(g, grid.angle(13));

    RVec point = RVec::Zero(32);
    point[12] = 1.0;
    double c12 = crlb_single_path(f, g, grid.angle(12), 0.01);
    CHECK(std::abs(average_cost(f, g, grid, point, 0.01) - c12) < 1e-13 * c12);

    RVec two = RVec::Zero(32);
    two[11] = 0.5;
    two[13] = 0.5;
    double want = 0.5 * (crlb_single_path(f, g, grid.angle(11), 0.01) +
                         crlb_single_path(f, g, grid.angle(13), 0.01));
    CHECK(std::abs(average_cost(f, g, grid, two, 0.01) - want) < 1e-13 * want);
}

TEST_CASE("averaged cost matches a direct summation")
{
    // spacing 3 between the beams: no grid bin is a simultaneous null of both
    ArrayGeometry g{16, 0.5};
    AngleGrid grid{32};
    CMat f(16, 2);
    f.col(0) = steering_vector(g, grid.angle(13));
    f.col(1) = steering_vector(g, grid.angle(16));
    RVec d = gaussian_dist(32, 15.0, 2.5);
    double direct = 0.0;
    for (int m = 0; m < 32; ++m)
        direct += d[m] * crlb_single_path(f, g, grid.angle(m), 0.04);
    CHECK(std::abs(average_cost(f, g, grid, d, 0.04) - direct) < 1e-12 * direct);
}

TEST_CASE("infinite bins require positive probability")
{
    ArrayGeometry g{8, 0.5};
    AngleGrid grid{16};
    CMat rank1(8, 2);
    rank1.col(0) = steering_vector(g, grid.angle(4));
    rank1.col(1) = rank1.col(0); // degenerate everywhere
    RVec point = RVec::Zero(16);
    point[4] = 1.0;
    auto bd = average_cost_breakdown(rank1, g, grid, point, 0.01);
    CHECK(std::isinf(bd.value));
    CHECK(bd.infinite_bins == 1); // only the one supported bin counts
}

TEST_CASE("1D symmetric search against the exhaustive oracle")
{
    ArrayGeometry g{16, 0.5};
    AngleGrid grid{64};
    BeamCodebook cb = make_codebook(g, 64);

    // wide-posterior regime: the optimum has even spacing and the symmetric pair is
    // globally optimal in the window
    for (double sigma : {4.0})
        for (int center : {16, 32, 48})
        {
            RVec d = gaussian_dist(64, center, sigma);
            BeamSelection s1 = select_dual_beams_1d(cb, g, grid, d, 0.1);
            BeamSelection s2 = select_pair_exhaustive(cb, g, grid, d, 0.1, 33);
            REQUIRE(s1.indices.size() == 2);
            CHECK(s1.center == center);
            CHECK(s1.indices[0] == center - s1.delta);
            CHECK(s1.indices[1] == center + s1.delta);
            CHECK(std::abs(s1.cost - s2.cost) < 1e-12 * s2.cost);
        }

    // the exhaustive search is never worse, and it is strictly better whenever the
    // optimum has odd beam spacing, which symmetric pairs (spacing 2*delta) cannot reach
    int strictly_better = 0;
    for (int center = 8; center <= 56; center += 4)
        for (double sigma : {0.5, 1.0, 2.0, 4.0})
        {
            RVec d = gaussian_dist(64, center, sigma);
            double c1 = select_dual_beams_1d(cb, g, grid, d, 0.1).cost;
            double c2 = select_pair_exhaustive(cb, g, grid, d, 0.1, 33).cost;
            CHECK(c2 <= c1 * (1.0 + 1e-12));
            if (c2 < c1 * (1.0 - 1e-6))
                ++strictly_better;
        }
    CHECK(strictly_better >= 1);
}

TEST_CASE("point-mass distribution delta matches the symmetric-restricted exhaustive search")
{
    ArrayGeometry g{16, 0.5};
    AngleGrid grid{64};
    BeamCodebook cb = make_codebook(g, 64);
    RVec point = RVec::Zero(64);
    point[30] = 1.0;
    BeamSelection s = select_dual_beams_1d(cb, g, grid, point, 0.05);
    double best = std::numeric_limits<double>::infinity();
    int best_d = 0;
    CMat f(16, 2);
    for (int d = 1; d <= 30; ++d)
    {
        f.col(0) = cb.beams.col(30 - d);
        f.col(1) = cb.beams.col(30 + d);
        double c = average_cost(f, g, grid, point, 0.05);
        if (c < best)
        {
            best = c;
            best_d = d;
        }
    }
    CHECK(s.delta == best_d);
    CHECK(std::abs(s.cost - best) < 1e-12 * best);
}

TEST_CASE("edge centers fall back to the exhaustive window")
{
    ArrayGeometry g{16, 0.5};
    AngleGrid grid{64};
    BeamCodebook cb = make_codebook(g, 64);
    RVec point = RVec::Zero(64);
    point[0] = 1.0;
    BeamSelection s = select_dual_beams_1d(cb, g, grid, point, 0.1);
    REQUIRE(s.indices.size() == 2);
    CHECK(s.indices[0] != s.indices[1]);
    CHECK(s.delta == 0); // fallback marker
    CHECK(s.indices[0] >= 0);
    CHECK(s.indices[1] <= 32); // within the 2*16+1 window anchored at the edge
    CHECK(std::isfinite(s.cost));
}

TEST_CASE("window counts candidate indices")
{
    ArrayGeometry g{8, 0.5};
    AngleGrid grid{32};
    BeamCodebook cb = make_codebook(g, 32);
    RVec point = RVec::Zero(32);
    point[20] = 1.0;
    BeamSelection s = select_pair_exhaustive(cb, g, grid, point, 0.1, 2);
    CHECK(s.indices == std::vector<int>{20, 21}); // the single pair in a 2-index window
}

TEST_CASE("argmin is invariant to the gain magnitude")
{
    ArrayGeometry g{16, 0.5};
    AngleGrid grid{64};
    BeamCodebook cb = make_codebook(g, 64);
    RVec d = gaussian_dist(64, 25.0, 1.5);
    auto [a, da] = detail::steering_tables(g, grid);
    std::vector<int> picked;
    for (double amag : {0.1, 1.0, 10.0})
    {
        detail::CostBreakdown best{std::numeric_limits<double>::infinity(), 1 << 30};
        int best_d = 0;
        CMat f(16, 2);
        for (int dd = 1; dd <= 25; ++dd)
        {
            f.col(0) = cb.beams.col(25 - dd);
            f.col(1) = cb.beams.col(25 + dd);
            auto c = detail::cost_from_tables(f, a, da, d, 0.1, amag);
            if (detail::cost_better(c, best))
            {
                best = c;
                best_d = dd;
            }
        }
        picked.push_back(best_d);
    }
    CHECK(picked[0] == picked[1]);
    CHECK(picked[1] == picked[2]);
}

TEST_CASE("multipath selection concatenates per-path pairs")
{
    ArrayGeometry g{16, 0.5};
    AngleGrid grid{64};
    BeamCodebook cb = make_codebook(g, 64);

    RVec d1 = gaussian_dist(64, 12.0, 1.0);
    std::vector<int> one = select_multipath_beams(cb, g, grid, {d1}, 0.1);
    BeamSelection ref = select_dual_beams_1d(cb, g, grid, d1, 0.1);
    CHECK(one == ref.indices);

    std::vector<int> twin = select_multipath_beams(cb, g, grid, {d1, d1}, 0.1);
    REQUIRE(twin.size() == 4);
    CHECK(twin[0] == twin[2]);
    CHECK(twin[1] == twin[3]);

    RVec d2 = gaussian_dist(64, 32.0, 1.0);
    RVec d3 = gaussian_dist(64, 52.0, 1.0);
    std::vector<int> three = select_multipath_beams(cb, g, grid, {d1, d2, d3}, 0.1);
    REQUIRE(three.size() == 6);
    std::sort(three.begin(), three.end());
    CHECK(std::adjacent_find(three.begin(), three.end()) == three.end());
}

TEST_CASE("high-SNR maximum-likelihood variance sits near the bound")
{
    // light version of the acceptance run: beams from the 1D search on a narrow posterior
    // around theta = 0, then grid-refined ML on theta with alpha profiled out
    ArrayGeometry g{16, 0.5};
    AngleGrid grid{64};
    BeamCodebook cb = make_codebook(g, 64);
    double theta0 = 0.0, s2 = 1e-3;
    BeamSelection sel = select_dual_beams_1d(cb, g, grid, gaussian_dist(64, 32.0, 1.0), s2);
    REQUIRE(sel.indices.size() == 2);
    CMat f(16, 2);
    f.col(0) = cb.beams.col(sel.indices[0]);
    f.col(1) = cb.beams.col(sel.indices[1]);
    double crlb = crlb_single_path(f, g, theta0, s2);
    REQUIRE(std::isfinite(crlb));

    Rng rng(99);
    CVec mu0 = f.transpose() * steering_vector(g, theta0).conjugate();
    double acc = 0.0;
    int trials = 300;
    for (int t = 0; t < trials; ++t)
    {
        CVec y = mu0;
        for (int i = 0; i < y.size(); ++i)
            y[i] += rng.cgaussian(s2);
        double best = -1.0, best_th = 0.0;
        for (double th = -0.05; th <= 0.05; th += 1e-4)
        {
            CVec u = f.transpose() * steering_vector(g, th).conjugate();
            double score = std::norm(u.dot(y)) / u.squaredNorm();
            if (score > best)
            {
                best = score;
                best_th = th;
            }
        }
        acc += (best_th - theta0) * (best_th - theta0);
    }
    double var = acc / trials;
    CHECK(var < 2.5 * crlb);
    CHECK(var > 0.2 * crlb);
}
