// SPDX-License-Identifier: Apache-2.0
//
// beamtrain - beam training and channel tracking for mmWave links
//
// Licensed under the Apache License, Version 2.0 (the "License"); you may not use this file
// except in compliance with the License. You may obtain a copy of the License at
// http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software distributed under the License
// is distributed on an "AS IS" BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express
// or implied. See the License for the specific language governing permissions and limitations under
// the License.
// ------------------------------------------------------------------------------------------------

#ifndef beamtrain_sparse_estimation_H
#define beamtrain_sparse_estimation_H

#include "beamtrain/training_protocol.hpp"

#include <limits>

namespace beamtrain
{

// Sparse estimate of the virtual channel: flat support indices (aod*M_m + aoa) in
// selection order with the matching refit gains.
struct ChannelEstimate
{
    std::vector<int> support;
    CVec gains;
    std::vector<int> prior_slot;  // per selection, the path-prior slot it was assigned to
    bool ill_conditioned = false; // a Gram solve needed the 1e-12 jitter fallback
};

// Gaussian posterior of the gains on a fixed support.
struct GainPosterior
{
    CVec mean;
    CMat cov;
};

// Per-path distributions over support bins. Joint mode stores one vector over all
// M_b*M_m bins per path; factored mode stores AoD and AoA marginals whose product is
// the implied joint (memory-friendly at large grids, an approximation otherwise).
struct SupportPosterior
{
    enum class Mode
    {
        Joint,
        Factored
    };

    Mode mode = Mode::Joint;
    int M_b = 0, M_m = 0;
    std::vector<RVec> prob;     // joint mode: per path, flat = aod*M_m + aoa
    std::vector<RVec> aod_prob; // factored mode: per path, M_b
    std::vector<RVec> aoa_prob; // factored mode: per path, M_m

    int num_paths() const
    {
        return static_cast<int>(mode == Mode::Joint ? prob.size() : aod_prob.size());
    }

    double joint_at(int p, int flat) const
    {
        int aod = flat / M_m, aoa = flat % M_m;
        if (mode == Mode::Joint)
            return prob[p][flat];
        return aod_prob[p][aod] * aoa_prob[p][aoa];
    }

    // AoD marginal of path p (column sums of the bin matrix in joint mode).
    RVec aod_marginal(int p) const
    {
        if (mode == Mode::Factored)
            return aod_prob[p];
        Eigen::Map<const RMat> m(prob[p].data(), M_m, M_b);
        return m.colwise().sum().transpose();
    }

    RVec aoa_marginal(int p) const
    {
        if (mode == Mode::Factored)
            return aoa_prob[p];
        Eigen::Map<const RMat> m(prob[p].data(), M_m, M_b);
        return m.rowwise().sum();
    }
};

// Tracker state carried between training bursts. `posterior` is the per-path support
// law conditioned on everything up to and including the last burst; `predicted` is that
// law pushed one inter-burst step ahead (what beam selection consumes).
struct EstimatorState
{
    SupportPosterior posterior;
    SupportPosterior predicted;
    RMat T_b, T_m;               // inter-burst transition kernels
    double gain_prior_var = 1.0; // lambda, prior variance of each path gain
    double noise_var = 1.0;      // sigma_n^2
    bool psi_literal_last_term = true; // keep the -pi*sigma^2/(...) score term verbatim
};

namespace detail
{

// Hermitian solve of (G + shift*I) x = b columns with a 1e-12 jitter fallback when the
// factorisation looks numerically singular. Returns the solution of the (possibly
// jittered) system and flags the fallback.
inline CMat regularised_solve(CMat g, const CMat &rhs, double shift, bool *jittered)
{
    const int n = static_cast<int>(g.rows());
    g.diagonal().array() += shift;
    Eigen::LDLT<CMat> ldlt(g);
    bool bad = ldlt.info() != Eigen::Success;
    if (!bad)
    {
        RVec d = ldlt.vectorD().real();
        double dmax = d.cwiseAbs().maxCoeff();
        bad = dmax <= 0.0 || d.cwiseAbs().minCoeff() < 1e-12 * dmax;
    }
    if (bad)
    {
        if (jittered != nullptr)
            *jittered = true;
        g.diagonal().array() += 1e-12 * (1.0 + g.diagonal().real().cwiseAbs().maxCoeff());
        ldlt.compute(g);
    }
    (void)n;
    return ldlt.solve(rhs);
}

inline CMat support_columns(const SensingMatrix &phi, const std::vector<int> &support)
{
    CMat cols(phi.rows(), static_cast<Eigen::Index>(support.size()));
    for (std::size_t k = 0; k < support.size(); ++k)
        cols.col(static_cast<Eigen::Index>(k)) = phi.column(support[k]);
    return cols;
}

// All squared column norms of Phi (outer product of the factor norms).
inline RVec all_col_norms_sq(const SensingMatrix &phi)
{
    RVec out(phi.cols());
    for (int j = 0; j < phi.aod_bins(); ++j)
        out.segment(j * phi.aoa_bins(), phi.aoa_bins()) = phi.tx_norm_sq[j] * phi.rx_norm_sq;
    return out;
}

} // namespace detail

// Orthogonal matching pursuit over the flattened virtual channel: L rounds of
// correlation argmax (ties to the lowest flat index, previously selected bins excluded),
// each followed by a least-squares refit on the accumulated support.
inline ChannelEstimate omp_estimate(const CVec &y, const SensingMatrix &phi, int L)
{
    require(L >= 1 && L <= phi.cols(), "omp_estimate: need 1 <= L <= columns");
    ChannelEstimate est;
    CVec r = y;
    std::vector<char> used(static_cast<std::size_t>(phi.cols()), 0);
    for (int it = 0; it < L; ++it)
    {
        CVec c = phi.correlate(r);
        int best = -1;
        double best_val = -1.0;
        for (int f = 0; f < phi.cols(); ++f)
        {
            if (used[static_cast<std::size_t>(f)])
                continue;
            double v = std::norm(c[f]);
            if (v > best_val)
            {
                best_val = v;
                best = f;
            }
        }
        est.support.push_back(best);
        est.prior_slot.push_back(it);
        used[static_cast<std::size_t>(best)] = 1;

        CMat cols = detail::support_columns(phi, est.support);
        bool jit = false;
        CMat sol = detail::regularised_solve(cols.adjoint() * cols, cols.adjoint() * y, 0.0, &jit);
        est.ill_conditioned = est.ill_conditioned || jit;
        est.gains = sol.col(0);
        r = y - cols * est.gains;
    }
    return est;
}

// Gaussian gain posterior on a fixed support under the CN(0, lambda) gain prior:
// mean = (Phi_S^H Phi_S + (sigma^2/lambda) I)^{-1} Phi_S^H y, cov = sigma^2 (...)^{-1}.
inline GainPosterior gain_posterior(const CVec &y, const SensingMatrix &phi,
                                    const std::vector<int> &support, double lambda,
                                    double sigma2, bool *jittered = nullptr)
{
    require(lambda > 0.0, "gain_posterior: lambda must be > 0");
    require(sigma2 > 0.0, "gain_posterior: sigma2 must be > 0");
    CMat cols = detail::support_columns(phi, support);
    const int k = static_cast<int>(support.size());
    CMat rhs(k, k + 1);
    rhs.leftCols(k) = CMat::Identity(k, k);
    rhs.col(k) = cols.adjoint() * y;
    CMat sol = detail::regularised_solve(cols.adjoint() * cols, rhs, sigma2 / lambda, jittered);
    GainPosterior out;
    out.mean = sol.col(k);
    out.cov = sigma2 * sol.leftCols(k);
    return out;
}

// Selection score of bin omega given the current residual and a transition-predicted
// prior: data fit + model-complexity penalty + log prior + the literal closing term
// (or its log-variance variant when literal_last_term is false).
inline double psi_score(int omega, const CVec &residual, const SensingMatrix &phi,
                        const RVec &predicted_prior, double lambda, double sigma2,
                        bool literal_last_term = true)
{
    double n2 = phi.col_norm_sq(omega);
    cx corr = phi.column(omega).dot(residual); // phi_w^H r
    double post_var_inv = n2 + sigma2 / lambda;
    double data = std::norm(corr) / (sigma2 * post_var_inv);
    double logdet = -std::log(pi * (sigma2 + lambda * n2));
    double prior = std::log(predicted_prior[omega]);
    double last = literal_last_term ? -pi * sigma2 / post_var_inv
                                    : -std::log(pi * sigma2 / post_var_inv);
    return data + logdet + prior + last;
}

// One transition step of every path posterior. Joint mode uses the identity
// (T_b kron T_m) vec(P) = vec(T_m P T_b^T) on the M_m x M_b bin matrix.
inline SupportPosterior posterior_predict(const SupportPosterior &post, const RMat &T_b,
                                          const RMat &T_m)
{
    require(T_b.rows() == post.M_b && T_b.cols() == post.M_b, "posterior_predict: T_b size");
    require(T_m.rows() == post.M_m && T_m.cols() == post.M_m, "posterior_predict: T_m size");
    SupportPosterior out = post;
    if (post.mode == SupportPosterior::Mode::Joint)
    {
        for (std::size_t p = 0; p < post.prob.size(); ++p)
        {
            Eigen::Map<const RMat> m(post.prob[p].data(), post.M_m, post.M_b);
            RMat nxt = T_m * m * T_b.transpose();
            out.prob[p] = Eigen::Map<const RVec>(nxt.data(), nxt.size());
        }
    }
    else
    {
        for (std::size_t p = 0; p < post.aod_prob.size(); ++p)
        {
            out.aod_prob[p] = T_b * post.aod_prob[p];
            out.aoa_prob[p] = T_m * post.aoa_prob[p];
        }
    }
    return out;
}

// Fresh tracker state from an initial (typically OMP) estimate: each path posterior is
// the point mass at its support bin, dated to the burst that produced the estimate; the
// stored prediction pushes it one inter-burst step ahead for the next beam selection.
inline EstimatorState init_estimator_state(const ChannelEstimate &init, int M_b, int M_m,
                                           const RMat &T_b, const RMat &T_m, double lambda,
                                           double sigma2,
                                           SupportPosterior::Mode mode = SupportPosterior::Mode::Joint)
{
    EstimatorState st;
    st.T_b = T_b;
    st.T_m = T_m;
    st.gain_prior_var = lambda;
    st.noise_var = sigma2;
    st.posterior.mode = mode;
    st.posterior.M_b = M_b;
    st.posterior.M_m = M_m;
    for (int s : init.support)
    {
        int aod = s / M_m, aoa = s % M_m;
        if (mode == SupportPosterior::Mode::Joint)
        {
            RVec point = RVec::Zero(M_b * M_m);
            point[s] = 1.0;
            st.posterior.prob.push_back(point);
        }
        else
        {
            RVec pa = RVec::Zero(M_b), pm = RVec::Zero(M_m);
            pa[aod] = 1.0;
            pm[aoa] = 1.0;
            st.posterior.aod_prob.push_back(pa);
            st.posterior.aoa_prob.push_back(pm);
        }
    }
    st.predicted = posterior_predict(st.posterior, T_b, T_m);
    return st;
}

namespace detail
{

// Log of the predicted prior of path p evaluated at every flat bin.
inline RVec log_predicted_prior(const SupportPosterior &pred, int p)
{
    const int total = pred.M_b * pred.M_m;
    RVec out(total);
    if (pred.mode == SupportPosterior::Mode::Joint)
        out = pred.prob[p].array().log();
    else
        for (int f = 0; f < total; ++f)
            out[f] = std::log(pred.aod_prob[p][f / pred.M_m]) +
                     std::log(pred.aoa_prob[p][f % pred.M_m]);
    return out;
}

// Normalised posterior from log scores; factored mode keeps the two marginals.
inline void store_posterior(SupportPosterior &post, int p, const RVec &log_scores)
{
    double m = log_scores.maxCoeff();
    require(std::isfinite(m), "greedy_map_estimate: posterior update degenerate");
    RVec w = (log_scores.array() - m).exp();
    w /= w.sum();
    if (post.mode == SupportPosterior::Mode::Joint)
        post.prob[p] = w;
    else
    {
        Eigen::Map<const RMat> mat(w.data(), post.M_m, post.M_b);
        post.aod_prob[p] = mat.colwise().sum().transpose();
        post.aoa_prob[p] = mat.rowwise().sum();
    }
}

} // namespace detail

// Sequential MAP support tracking. Per round: score every bin with the shared residual
// (data fit + complexity penalty, plus the closing score term for selection only), add
// each unassigned path's log predicted prior, and take the best (bin, path) pair - ties
// to the lowest bin then lowest path. The winning path's posterior is refreshed from the
// same scores (without the closing term), gains are ridge-refit on the grown support and
// the residual is rebuilt from the posterior-mean gains. Afterwards every posterior is
// pushed one inter-burst step ahead for the next beam selection.
inline std::pair<ChannelEstimate, EstimatorState>
greedy_map_estimate(const CVec &y, const SensingMatrix &phi, const EstimatorState &state)
{
    const int L = state.posterior.num_paths();
    require(L >= 1, "greedy_map_estimate: state tracks no paths");
    require(state.posterior.M_b == phi.aod_bins() && state.posterior.M_m == phi.aoa_bins(),
            "greedy_map_estimate: grid mismatch between state and sensing matrix");
    const double lambda = state.gain_prior_var;
    const double sigma2 = state.noise_var;
    require(lambda > 0.0 && sigma2 > 0.0, "greedy_map_estimate: lambda and sigma2 must be > 0");

    SupportPosterior pred = posterior_predict(state.posterior, state.T_b, state.T_m);
    std::vector<RVec> log_prior(static_cast<std::size_t>(L));
    for (int p = 0; p < L; ++p)
        log_prior[static_cast<std::size_t>(p)] = detail::log_predicted_prior(pred, p);

    const RVec n2 = detail::all_col_norms_sq(phi);
    const RVec post_var_inv = n2.array() + sigma2 / lambda;
    const RVec logdet = -(pi * (sigma2 + lambda * n2.array())).log();
    RVec closing(phi.cols());
    if (state.psi_literal_last_term)
        closing = -pi * sigma2 / post_var_inv.array();
    else
        closing = -(pi * sigma2 / post_var_inv.array()).log();

    EstimatorState out_state = state;
    ChannelEstimate est;
    CVec r = y;
    std::vector<char> used(static_cast<std::size_t>(phi.cols()), 0);
    std::vector<char> assigned(static_cast<std::size_t>(L), 0);
    const double ninf = -std::numeric_limits<double>::infinity();

    for (int it = 0; it < L; ++it)
    {
        CVec c = phi.correlate(r);
        RVec base = c.cwiseAbs2().real().array() / (sigma2 * post_var_inv.array()) +
                    logdet.array();
        int best_f = -1, best_p = -1;
        double best_score = ninf;
        for (int p = 0; p < L; ++p)
        {
            if (assigned[static_cast<std::size_t>(p)])
                continue;
            const RVec &lp = log_prior[static_cast<std::size_t>(p)];
            for (int f = 0; f < phi.cols(); ++f)
            {
                if (used[static_cast<std::size_t>(f)])
                    continue;
                double s = base[f] + closing[f] + lp[f];
                if (s > best_score)
                {
                    best_score = s;
                    best_f = f;
                    best_p = p;
                }
            }
        }
        if (best_f < 0) // every admissible score is -inf: fall back deterministically
        {
            for (int f = 0; f < phi.cols() && best_f < 0; ++f)
                if (!used[static_cast<std::size_t>(f)])
                    best_f = f;
            for (int p = 0; p < L && best_p < 0; ++p)
                if (!assigned[static_cast<std::size_t>(p)])
                    best_p = p;
        }
        used[static_cast<std::size_t>(best_f)] = 1;
        assigned[static_cast<std::size_t>(best_p)] = 1;
        est.support.push_back(best_f);
        est.prior_slot.push_back(best_p);

        detail::store_posterior(out_state.posterior, best_p,
                                RVec(base + log_prior[static_cast<std::size_t>(best_p)]));

        bool jit = false;
        GainPosterior gp = gain_posterior(y, phi, est.support, lambda, sigma2, &jit);
        est.ill_conditioned = est.ill_conditioned || jit;
        est.gains = gp.mean;
        r = y - detail::support_columns(phi, est.support) * gp.mean;
    }

    out_state.predicted = posterior_predict(out_state.posterior, state.T_b, state.T_m);
    return {est, out_state};
}

// Dense reconstruction sum_k g_k a_m(aoa_k) a_b(aod_k)^H from dictionary columns.
inline CMat estimate_to_dense(const ChannelEstimate &est, const CMat &A_b, const CMat &A_m)
{
    const int M_m = static_cast<int>(A_m.cols());
    CMat h = CMat::Zero(A_m.rows(), A_b.rows());
    for (std::size_t k = 0; k < est.support.size(); ++k)
    {
        int aod = est.support[k] / M_m, aoa = est.support[k] % M_m;
        h.noalias() += est.gains[static_cast<Eigen::Index>(k)] * A_m.col(aoa) * A_b.col(aod).adjoint();
    }
    return h;
}

} // namespace beamtrain

#endif
