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

#ifndef beamtrain_array_channel_H
#define beamtrain_array_channel_H

#include "beamtrain/common.hpp"

namespace beamtrain
{

// Uniform linear array. Angles throughout the library are directional sines in [-1, 1]
// (theta = sin of the physical angle), so steering phases are linear in theta.
struct ArrayGeometry
{
    int num_elements = 1;          // antenna count N
    double element_spacing = 0.5;  // spacing in carrier wavelengths d/lambda
};

// Uniform grid of directional sines theta_k = -1 + 2k/M, k = 0..M-1. Dictionary columns,
// codebook beams and Markov angle states all live on this grid.
struct AngleGrid
{
    int num_bins = 1; // M

    double angle(int k) const
    {
        require(k >= 0 && k < num_bins, "AngleGrid: bin index out of range");
        return -1.0 + 2.0 * static_cast<double>(k) / static_cast<double>(num_bins);
    }

    // Grid bin whose centre is nearest to theta; ties resolve to the lower index.
    int nearest_bin(double theta) const
    {
        double pos = (theta + 1.0) * static_cast<double>(num_bins) / 2.0;
        int k = static_cast<int>(std::floor(pos + 0.5));
        if (k > 0 && std::abs((pos - (k - 1)) - (k - pos)) < 1e-12)
            k = k - 1; // exact midpoint, take the lower bin
        if (k < 0)
            k = 0;
        if (k >= num_bins)
            k = num_bins - 1;
        return k;
    }
};

// One propagation path: grid bins of the departure/arrival sines plus a complex gain.
struct PathState
{
    int aod_bin = 0;  // transmit-side bin into the M_b grid
    int aoa_bin = 0;  // receive-side bin into the M_m grid
    cx gain = 0.0;    // complex path gain alpha
};

// Sparse channel as a set of paths. Paths are ordered; duplicate (aod, aoa) pairs are
// invalid for virtual-domain assembly but may appear transiently after angle evolution.
struct ChannelState
{
    std::vector<PathState> paths;
};

// Temporal statistics of the user channel. beta is the per-symbol diffusion std of each
// directional sine; rho is the per-symbol AR(1) coefficient of the path gains. A step of
// T symbols aggregates to angle variance sigma_l^2 = T * beta^2 (random-walk additivity);
// sigma_bins converts that width into grid-bin units (one bin spans 2/M in sine).
struct MobilityModel
{
    double beta = 0.0;  // per-symbol angle diffusion std (sine units)
    double rho = 1.0;   // per-symbol gain AR(1) coefficient in [0, 1]

    double sigma_l_sq(double T) const
    {
        require(T >= 0.0, "MobilityModel: step length must be >= 0");
        return T * beta * beta;
    }

    double sigma_bins(double T, int M) const
    {
        return std::sqrt(sigma_l_sq(T)) * static_cast<double>(M) / 2.0;
    }
};

// Array steering vector a(theta), element k = exp(j*2*pi*k*(d/lambda)*theta) / sqrt(N).
// theta is a directional sine and must lie in [-1, 1].
inline CVec steering_vector(const ArrayGeometry &geom, double theta)
{
    require(geom.num_elements >= 1, "steering_vector: array needs at least one element");
    if (std::abs(theta) > 1.0)
        throw std::domain_error("steering_vector: |theta| > 1");
    const int n = geom.num_elements;
    const double scale = 1.0 / std::sqrt(static_cast<double>(n));
    const double step = 2.0 * pi * geom.element_spacing * theta;
    CVec a(n);
    for (int k = 0; k < n; ++k)
        a[k] = std::polar(scale, step * static_cast<double>(k));
    return a;
}

// Elementwise derivative of the steering vector with respect to theta:
// da_k/dtheta = j*2*pi*k*(d/lambda) * a_k(theta).
inline CVec steering_derivative(const ArrayGeometry &geom, double theta)
{
    CVec a = steering_vector(geom, theta);
    const double c = 2.0 * pi * geom.element_spacing;
    for (int k = 0; k < a.size(); ++k)
        a[k] *= cx(0.0, c * static_cast<double>(k));
    return a;
}

// N x M dictionary whose column k is the steering vector at grid angle theta_k. Columns
// have unit norm; for M = N the dictionary is unitary (a DFT up to phase convention).
inline CMat dictionary_matrix(const ArrayGeometry &geom, const AngleGrid &grid)
{
    require(grid.num_bins >= 1, "dictionary_matrix: grid needs at least one bin");
    CMat d(geom.num_elements, grid.num_bins);
    for (int k = 0; k < grid.num_bins; ++k)
        d.col(k) = steering_vector(geom, grid.angle(k));
    return d;
}

// Dense N_m x N_b channel H = sum_l alpha_l a_m(theta_aoa) a_b(theta_aod)^H with all
// angles taken at grid-bin centres.
inline CMat assemble_dense(const ChannelState &state, const ArrayGeometry &geom_b,
                           const ArrayGeometry &geom_m, const AngleGrid &grid_b,
                           const AngleGrid &grid_m)
{
    CMat h = CMat::Zero(geom_m.num_elements, geom_b.num_elements);
    for (const auto &p : state.paths)
    {
        CVec am = steering_vector(geom_m, grid_m.angle(p.aoa_bin));
        CVec ab = steering_vector(geom_b, grid_b.angle(p.aod_bin));
        h.noalias() += p.gain * am * ab.adjoint();
    }
    return h;
}

// Virtual-domain representation H_v (M_m x M_b) with H_v(aoa, aob) = gain. The flattened
// coefficient vector used by the estimators is vec(H_v), i.e. flat = aod*M_m + aoa
// (column-major). Duplicate (aod, aoa) pairs are a precondition violation here.
inline SpCMat to_virtual(const ChannelState &state, int M_b, int M_m)
{
    require(M_b >= 1 && M_m >= 1, "to_virtual: grid sizes must be >= 1");
    std::vector<Eigen::Triplet<cx>> trip;
    trip.reserve(state.paths.size());
    for (std::size_t i = 0; i < state.paths.size(); ++i)
    {
        const auto &p = state.paths[i];
        require(p.aod_bin >= 0 && p.aod_bin < M_b, "to_virtual: aod bin out of range");
        require(p.aoa_bin >= 0 && p.aoa_bin < M_m, "to_virtual: aoa bin out of range");
        for (std::size_t j = 0; j < i; ++j)
            require(state.paths[j].aod_bin != p.aod_bin || state.paths[j].aoa_bin != p.aoa_bin,
                    "to_virtual: duplicate (aod, aoa) pair");
        trip.emplace_back(p.aoa_bin, p.aod_bin, p.gain);
    }
    SpCMat hv(M_m, M_b);
    hv.setFromTriplets(trip.begin(), trip.end());
    return hv;
}

// Column-stochastic M x M transition kernel T(m|n) = exp(-|m-n|^2 / sigma_l^2) / C_n over
// bin indices, truncated at the grid edges (no wrap-around; the normalisation reassigns
// clipped mass). sigma_l = 0 degenerates to the identity.
inline RMat transition_matrix(int M, double sigma_l)
{
    require(M >= 1, "transition_matrix: M must be >= 1");
    require(sigma_l >= 0.0, "transition_matrix: sigma_l must be >= 0");
    if (sigma_l == 0.0)
        return RMat::Identity(M, M);
    RMat t(M, M);
    const double inv = 1.0 / (sigma_l * sigma_l);
    for (int n = 0; n < M; ++n)
    {
        double sum = 0.0;
        for (int m = 0; m < M; ++m)
        {
            double d = static_cast<double>(m - n);
            t(m, n) = std::exp(-d * d * inv);
            sum += t(m, n);
        }
        t.col(n) /= sum;
    }
    return t;
}

// One Markov step of every path's angle pair: the new aod bin is drawn from column
// aod_bin of T_b, the new aoa bin from column aoa_bin of T_m (independent draws, paths
// processed in order). A path colliding with an earlier one is re-sampled once; if the
// collision persists the paths are left merged and *merged is set.
inline ChannelState evolve_angles(const ChannelState &state, const RMat &T_b, const RMat &T_m,
                                  Rng &rng, bool *merged = nullptr)
{
    require(T_b.rows() == T_b.cols() && T_m.rows() == T_m.cols(),
            "evolve_angles: transition matrices must be square");
    if (merged != nullptr)
        *merged = false;
    ChannelState out = state;
    for (std::size_t i = 0; i < out.paths.size(); ++i)
    {
        auto &p = out.paths[i];
        require(p.aod_bin >= 0 && p.aod_bin < T_b.cols(), "evolve_angles: aod bin out of range");
        require(p.aoa_bin >= 0 && p.aoa_bin < T_m.cols(), "evolve_angles: aoa bin out of range");
        auto collides = [&](int aod, int aoa) {
            for (std::size_t j = 0; j < i; ++j)
                if (out.paths[j].aod_bin == aod && out.paths[j].aoa_bin == aoa)
                    return true;
            return false;
        };
        int aod = rng.discrete(T_b.col(p.aod_bin));
        int aoa = rng.discrete(T_m.col(p.aoa_bin));
        if (collides(aod, aoa))
        {
            aod = rng.discrete(T_b.col(p.aod_bin));
            aoa = rng.discrete(T_m.col(p.aoa_bin));
            if (collides(aod, aoa) && merged != nullptr)
                *merged = true;
        }
        p.aod_bin = aod;
        p.aoa_bin = aoa;
    }
    return out;
}

// One AR(1) step of a path gain: alpha' = rho*alpha + sqrt(1-rho^2)*v, v ~ CN(0,1).
// The unit-variance stationary law is preserved for any rho in [0, 1].
inline cx evolve_gain(cx alpha, const MobilityModel &model, Rng &rng)
{
    require(model.rho >= 0.0 && model.rho <= 1.0, "evolve_gain: rho must lie in [0, 1]");
    return model.rho * alpha + std::sqrt(1.0 - model.rho * model.rho) * rng.cgaussian();
}

} // namespace beamtrain

#endif
