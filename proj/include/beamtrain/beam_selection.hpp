// SPDX-License-Identifier: Apache-2.0
//
// Training-beam selection for the dedicated phase.
//
// The quality of a candidate beam pair F is scored by the Cramer-Rao lower bound on the
// AoD (directional sine) of a single path observed through y = alpha F^T a*(theta) + n.
// With the parameter vector [alpha, alpha*, theta] the Fisher matrix has entries
//
//   V_11 = (1/s2) ||F^T a*||^2
//   V_31 = (alpha/s2) (da/dtheta)^T F* F^T a*          V_13 = V_31*
//   V_33 = (2|alpha|^2/s2) ||F^T da*/dtheta||^2
//
// and the bound on theta is [V_33 - 2|V_31|^2/V_11]^{-1}.  A rank-one F makes the bracket
// vanish identically (the correction term is a tight Cauchy-Schwarz bound), so a single
// beam carries no angle information and the bound degenerates to +infinity.
//
// Candidates are ranked by the bound averaged over a discrete AoD distribution.  The
// average is scale-invariant in |alpha| and in s2, so the argmin does not depend on the
// unknown gain; costs are evaluated at |alpha| = 1 by default.  Candidates containing a
// positive-probability bin with an infinite bound sort after all finite candidates,
// ordered by the number of such bins.
// ------------------------------------------------------------------------------------------------

#ifndef beamtrain_beam_selection_H
#define beamtrain_beam_selection_H

#include "beamtrain/training_protocol.hpp"

#include <limits>
#include <utility>
#include <vector>

namespace beamtrain
{

// Fisher information over [gain, conjugate gain, AoD sine]. Hermitian by construction.
struct FisherMatrix
{
    CMat entries; // 3 x 3

    double v11() const { return entries(0, 0).real(); }
    cx v31() const { return entries(2, 0); }
    double v33() const { return entries(2, 2).real(); }
};

// Result of a pair search. In the symmetric mode indices = {center - delta, center + delta};
// an exhaustive (fallback) search reports delta = 0 and the pair in ascending order.
struct BeamSelection
{
    std::vector<int> indices;
    int center = 0;
    int delta = 0;
    double cost = std::numeric_limits<double>::infinity();
    int infinite_bins = 0;
};

inline FisherMatrix fisher_entries(const CMat &F, const ArrayGeometry &geom, double theta,
                                   cx alpha, double noise_var)
{
    require(F.size() > 0, "fisher_entries: empty beam matrix");
    require(noise_var > 0.0, "fisher_entries: noise variance must be positive");
    CVec u = F.transpose() * steering_vector(geom, theta).conjugate();
    CVec du = F.transpose() * steering_derivative(geom, theta).conjugate();
    double a2 = std::norm(alpha);
    FisherMatrix v;
    v.entries = CMat::Zero(3, 3);
    v.entries(0, 0) = v.entries(1, 1) = u.squaredNorm() / noise_var;
    cx v31 = alpha / noise_var * du.dot(u); // du^H u
    v.entries(2, 0) = v31;
    v.entries(0, 2) = std::conj(v31);
    v.entries(2, 1) = std::conj(v31);
    v.entries(1, 2) = v31;
    v.entries(2, 2) = 2.0 * a2 / noise_var * du.squaredNorm();
    return v;
}

namespace detail
{

// Bound on the AoD sine given the beam responses u = F^T a*, du = F^T da*/dtheta and the
// response scale ||F||_F^2 (steering vectors are unit norm). Two degeneracies map to
// +infinity. A vanishing u relative to that scale: at an exact beam null the first-order
// response is alpha*(theta - theta0)*du, so the gain and the angle are only jointly
// identifiable and the bound diverges; in floating point such nulls cancel to noise around
// 1e-32 of the scale instead of zero, hence the relative cutoff. And a vanishing Schur
// bracket relative to ||du||^2: for (near) rank-one F the correction term is a tight
// Cauchy-Schwarz bound and the subtraction leaves cancellation noise of that order.
inline double crlb_from_responses(const CVec &u, const CVec &du, double noise_var,
                                  double alpha_mag, double response_scale)
{
    constexpr double inf = std::numeric_limits<double>::infinity();
    double n_u = u.squaredNorm();
    double n_du = du.squaredNorm();
    if (n_u <= 1e-14 * response_scale || n_du <= 0.0 || alpha_mag <= 0.0)
        return inf;
    double bracket = n_du - std::norm(du.dot(u)) / n_u;
    if (bracket <= std::max(1e-15, 1e-12 * n_du))
        return inf;
    return noise_var / (2.0 * alpha_mag * alpha_mag * bracket);
}

// Steering and derivative tables over a grid, one column per bin.
inline std::pair<CMat, CMat> steering_tables(const ArrayGeometry &geom, const AngleGrid &grid)
{
    CMat a(geom.num_elements, grid.num_bins);
    CMat da(geom.num_elements, grid.num_bins);
    for (int m = 0; m < grid.num_bins; ++m)
    {
        a.col(m) = steering_vector(geom, grid.angle(m));
        da.col(m) = steering_derivative(geom, grid.angle(m));
    }
    return {a, da};
}

struct CostBreakdown
{
    double value = 0.0;
    int infinite_bins = 0;
};

inline CostBreakdown cost_from_tables(const CMat &F, const CMat &a_table, const CMat &da_table,
                                      const RVec &dist, double noise_var, double alpha_mag)
{
    CMat u = F.transpose() * a_table.conjugate();
    CMat du = F.transpose() * da_table.conjugate();
    double scale = F.squaredNorm();
    CostBreakdown out;
    for (Eigen::Index m = 0; m < dist.size(); ++m)
    {
        if (dist[m] <= 0.0)
            continue;
        double c = crlb_from_responses(u.col(m), du.col(m), noise_var, alpha_mag, scale);
        if (std::isinf(c))
        {
            out.value = std::numeric_limits<double>::infinity();
            ++out.infinite_bins;
        }
        else if (!std::isinf(out.value))
            out.value += dist[m] * c;
    }
    return out;
}

// Fewer infinite bins wins; equal counts compare by value (two infinities tie, keeping
// the earlier candidate, which is the smaller delta or the lexicographically first pair).
inline bool cost_better(const CostBreakdown &a, const CostBreakdown &b)
{
    if (a.infinite_bins != b.infinite_bins)
        return a.infinite_bins < b.infinite_bins;
    return a.value < b.value;
}

// Codebook index nearest to the distribution mean, ties to the lower index.
inline int center_index(const BeamCodebook &cb, const AngleGrid &grid, const RVec &dist)
{
    double mean_bin = 0.0;
    for (Eigen::Index m = 0; m < dist.size(); ++m)
        mean_bin += dist[m] * static_cast<double>(m);
    double x = mean_bin * static_cast<double>(cb.grid.num_bins) / grid.num_bins;
    int lo = static_cast<int>(std::floor(x));
    int i0 = (x - lo > 0.5) ? lo + 1 : lo;
    return std::clamp(i0, 0, cb.grid.num_bins - 1);
}

} // namespace detail

inline double crlb_single_path(const CMat &F, const ArrayGeometry &geom, double theta,
                               double noise_var, double alpha_mag = 1.0)
{
    require(F.size() > 0, "crlb_single_path: empty beam matrix");
    require(noise_var > 0.0, "crlb_single_path: noise variance must be positive");
    CVec u = F.transpose() * steering_vector(geom, theta).conjugate();
    CVec du = F.transpose() * steering_derivative(geom, theta).conjugate();
    return detail::crlb_from_responses(u, du, noise_var, alpha_mag, F.squaredNorm());
}

// CRLB averaged over a discrete AoD distribution on the grid. +infinity iff some bin with
// positive probability is degenerate; zero-probability bins never contribute.
inline detail::CostBreakdown average_cost_breakdown(const CMat &F, const ArrayGeometry &geom,
                                                    const AngleGrid &grid, const RVec &dist,
                                                    double noise_var, double alpha_mag = 1.0)
{
    require(dist.size() == grid.num_bins, "average_cost: distribution size mismatch");
    require(std::abs(dist.sum() - 1.0) < 1e-6, "average_cost: distribution not normalised");
    auto [a, da] = detail::steering_tables(geom, grid);
    return detail::cost_from_tables(F, a, da, dist, noise_var, alpha_mag);
}

inline double average_cost(const CMat &F, const ArrayGeometry &geom, const AngleGrid &grid,
                           const RVec &dist, double noise_var, double alpha_mag = 1.0)
{
    return average_cost_breakdown(F, geom, grid, dist, noise_var, alpha_mag).value;
}

// Exhaustive pair search over the `window` codebook indices centred on the distribution
// mean (16 to each side at the default 33). Pairs are scanned in lexicographic order.
inline BeamSelection select_pair_exhaustive(const BeamCodebook &cb, const ArrayGeometry &geom,
                                            const AngleGrid &grid, const RVec &dist,
                                            double noise_var, int window = 33)
{
    int r = cb.grid.num_bins;
    require(window >= 2 && window <= r, "select_pair_exhaustive: window out of range");
    require(dist.size() == grid.num_bins, "select_pair_exhaustive: distribution size mismatch");
    int i0 = detail::center_index(cb, grid, dist);
    int first = std::clamp(i0 - (window - 1) / 2, 0, r - window);
    auto [a, da] = detail::steering_tables(geom, grid);

    BeamSelection best;
    best.center = i0;
    detail::CostBreakdown best_cost{std::numeric_limits<double>::infinity(),
                                    std::numeric_limits<int>::max()};
    CMat f(cb.beams.rows(), 2);
    for (int i = first; i < first + window; ++i)
        for (int j = i + 1; j < first + window; ++j)
        {
            f.col(0) = cb.beams.col(i);
            f.col(1) = cb.beams.col(j);
            detail::CostBreakdown c = detail::cost_from_tables(f, a, da, dist, noise_var, 1.0);
            if (detail::cost_better(c, best_cost))
            {
                best_cost = c;
                best.indices = {i, j};
            }
        }
    best.cost = best_cost.value;
    best.infinite_bins = best_cost.infinite_bins;
    return best;
}

// One-dimensional symmetric search: beams at center +/- delta for every feasible delta.
// A center on the codebook edge admits no symmetric pair and falls back to the exhaustive
// search over a window of 2*edge_window + 1 indices.
inline BeamSelection select_dual_beams_1d(const BeamCodebook &cb, const ArrayGeometry &geom,
                                          const AngleGrid &grid, const RVec &dist,
                                          double noise_var, int edge_window = 16)
{
    int r = cb.grid.num_bins;
    require(dist.size() == grid.num_bins, "select_dual_beams_1d: distribution size mismatch");
    int i0 = detail::center_index(cb, grid, dist);
    int delta_max = std::min(i0, r - 1 - i0);
    if (delta_max < 1)
        return select_pair_exhaustive(cb, geom, grid, dist, noise_var,
                                      std::min(r, 2 * edge_window + 1));

    auto [a, da] = detail::steering_tables(geom, grid);
    BeamSelection best;
    best.center = i0;
    detail::CostBreakdown best_cost{std::numeric_limits<double>::infinity(),
                                    std::numeric_limits<int>::max()};
    CMat f(cb.beams.rows(), 2);
    for (int d = 1; d <= delta_max; ++d)
    {
        f.col(0) = cb.beams.col(i0 - d);
        f.col(1) = cb.beams.col(i0 + d);
        detail::CostBreakdown c = detail::cost_from_tables(f, a, da, dist, noise_var, 1.0);
        if (detail::cost_better(c, best_cost))
        {
            best_cost = c;
            best.indices = {i0 - d, i0 + d};
            best.delta = d;
        }
    }
    best.cost = best_cost.value;
    best.infinite_bins = best_cost.infinite_bins;
    return best;
}

// Per-path dual selection: each path's AoD marginal is handled independently and the
// pairs are concatenated in path order. Duplicates across paths are kept.
inline std::vector<int> select_multipath_beams(const BeamCodebook &cb, const ArrayGeometry &geom,
                                               const AngleGrid &grid,
                                               const std::vector<RVec> &aod_marginals,
                                               double noise_var, int edge_window = 16)
{
    require(!aod_marginals.empty(), "select_multipath_beams: no marginals");
    std::vector<int> out;
    out.reserve(2 * aod_marginals.size());
    for (const RVec &dist : aod_marginals)
    {
        BeamSelection s = select_dual_beams_1d(cb, geom, grid, dist, noise_var, edge_window);
        out.insert(out.end(), s.indices.begin(), s.indices.end());
    }
    return out;
}

} // namespace beamtrain

#endif
