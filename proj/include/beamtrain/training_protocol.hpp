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

#ifndef beamtrain_training_protocol_H
#define beamtrain_training_protocol_H

#include "beamtrain/array_channel.hpp"

#include <algorithm>

namespace beamtrain
{

// Transmit codebook aligned with the AoD grid: column r is the steering beam at grid
// angle r, so codebook indices and dictionary bins coincide.
struct BeamCodebook
{
    CMat beams;     // N_b x R, unit-norm columns
    AngleGrid grid; // R bins, shared with the AoD dictionary
};

inline BeamCodebook make_codebook(const ArrayGeometry &geom_b, int R)
{
    BeamCodebook cb;
    cb.grid = AngleGrid{R};
    cb.beams = dictionary_matrix(geom_b, cb.grid);
    return cb;
}

// N_b x N_c cycling matrix; beam k (0-based) points at the sine -1 + 2k/N_c.
inline CMat cycling_beams(int N_c, const ArrayGeometry &geom_b)
{
    require(N_c >= 1, "cycling_beams: N_c must be >= 1");
    CMat f(geom_b.num_elements, N_c);
    for (int k = 0; k < N_c; ++k)
        f.col(k) = steering_vector(geom_b, -1.0 + 2.0 * static_cast<double>(k) / N_c);
    return f;
}

// Unitary N_m x N_m combining bank: steering vectors on the N_m-point sine grid, which is
// a DFT matrix up to a per-column phase convention. W^H W = I, so combined noise stays white.
inline CMat dft_combiner(int N_m)
{
    ArrayGeometry g{N_m, 0.5};
    return dictionary_matrix(g, AngleGrid{N_m});
}

// Single matched combining column w = a_m(theta); w^H a_m(theta) = 1.
inline CVec ideal_combiner(const ArrayGeometry &geom_m, double theta)
{
    return steering_vector(geom_m, theta);
}

// One training burst worth of measurements, all taken against the same (frozen) channel.
struct MeasurementBatch
{
    CMat received;    // Y = W^H H F + W^H N, (combiner columns) x (beams)
    CMat beams;       // F used for the burst
    CMat combiner;    // W used for the burst
    double noise_var; // per-antenna complex noise variance sigma_n^2
};

// Y = W^H H F + W^H N with N elementwise CN(0, noise_var). The channel state is used
// as-is for every beam of the burst (block fading across one training period).
inline MeasurementBatch simulate_measurement(const ChannelState &state,
                                             const ArrayGeometry &geom_b,
                                             const ArrayGeometry &geom_m,
                                             const AngleGrid &grid_b, const AngleGrid &grid_m,
                                             const CMat &F, const CMat &W, double noise_var,
                                             Rng &rng)
{
    require(noise_var >= 0.0, "simulate_measurement: noise variance must be >= 0");
    require(F.rows() == geom_b.num_elements, "simulate_measurement: F row count mismatch");
    require(W.rows() == geom_m.num_elements, "simulate_measurement: W row count mismatch");
    CMat h = assemble_dense(state, geom_b, geom_m, grid_b, grid_m);
    MeasurementBatch out;
    out.beams = F;
    out.combiner = W;
    out.noise_var = noise_var;
    out.received = W.adjoint() * h * F;
    if (noise_var > 0.0)
    {
        CMat n(geom_m.num_elements, F.cols());
        for (int c = 0; c < n.cols(); ++c)
            for (int r = 0; r < n.rows(); ++r)
                n(r, c) = rng.cgaussian(noise_var);
        out.received += W.adjoint() * n;
    }
    return out;
}

// Sensing matrix Phi = (F^T A_b^*) kron (W^H A_m) relating vec(Y) to the flattened
// virtual channel: vec(Y) = Phi vec(H_v) + vec(W^H N). The two Kronecker factors are kept
// separate; correlations, single columns and column norms are evaluated through them,
// which turns the (rows x M_b M_m) products the estimators need into small dense ones.
struct SensingMatrix
{
    CMat tx_factor; // F^T A_b^*, (beams) x M_b
    CMat rx_factor; // W^H A_m,  (combiner cols) x M_m
    RVec tx_norm_sq; // squared column norms of tx_factor
    RVec rx_norm_sq; // squared column norms of rx_factor

    int rows() const { return static_cast<int>(tx_factor.rows() * rx_factor.rows()); }
    int cols() const { return static_cast<int>(tx_factor.cols() * rx_factor.cols()); }
    int aod_bins() const { return static_cast<int>(tx_factor.cols()); }
    int aoa_bins() const { return static_cast<int>(rx_factor.cols()); }

    int flat(int aod, int aoa) const { return aod * aoa_bins() + aoa; }
    int flat_aod(int f) const { return f / aoa_bins(); }
    int flat_aoa(int f) const { return f % aoa_bins(); }

    // Column aod*M_m + aoa equals tx_factor.col(aod) kron rx_factor.col(aoa).
    CVec column(int f) const
    {
        const int j = flat_aod(f), i = flat_aoa(f);
        const int nr = static_cast<int>(rx_factor.rows());
        CVec c(rows());
        for (int b = 0; b < tx_factor.rows(); ++b)
            c.segment(b * nr, nr) = tx_factor(b, j) * rx_factor.col(i);
        return c;
    }

    double col_norm_sq(int f) const { return tx_norm_sq[flat_aod(f)] * rx_norm_sq[flat_aoa(f)]; }

    // Phi^H y for y = vec(Y), computed as vec(rx_factor^H Y tx_factor^*).
    CVec correlate(const CVec &y) const
    {
        const int nr = static_cast<int>(rx_factor.rows());
        const int nb = static_cast<int>(tx_factor.rows());
        require(static_cast<int>(y.size()) == nr * nb, "SensingMatrix: vec(Y) size mismatch");
        Eigen::Map<const CMat> ymat(y.data(), nr, nb);
        CMat z = rx_factor.adjoint() * ymat * tx_factor.conjugate();
        return Eigen::Map<const CVec>(z.data(), z.size());
    }

    // Densification for small problems and for tests; row index is beam*rows(W) + col(W).
    CMat dense() const
    {
        CMat phi(rows(), cols());
        for (int f = 0; f < cols(); ++f)
            phi.col(f) = column(f);
        return phi;
    }
};

inline SensingMatrix build_sensing_matrix(const CMat &F, const CMat &W, const CMat &A_b,
                                          const CMat &A_m)
{
    require(F.rows() == A_b.rows(), "build_sensing_matrix: F and A_b row mismatch");
    require(W.rows() == A_m.rows(), "build_sensing_matrix: W and A_m row mismatch");
    SensingMatrix s;
    s.tx_factor = F.transpose() * A_b.conjugate();
    s.rx_factor = W.adjoint() * A_m;
    s.tx_norm_sq = s.tx_factor.colwise().squaredNorm().real().transpose();
    s.rx_norm_sq = s.rx_factor.colwise().squaredNorm().real().transpose();
    return s;
}

enum class SlotLabel
{
    Data,
    CommonTraining,
    DedicatedTraining
};

struct Burst
{
    int start = 0;               // first symbol index of the burst
    int length = 0;              // number of training slots
    SlotLabel type = SlotLabel::CommonTraining;
};

// Deterministic frame plan over total_symbols. Common bursts of N_c slots start at every
// multiple of T_c; dedicated bursts of N_d slots start at every multiple of T_d except
// where they would overlap a common burst (those are skipped, not deferred). Bursts that
// do not fit before total_symbols are dropped.
struct FrameSchedule
{
    int total_symbols = 0;
    int T_c = 0, N_c = 0;        // common period and burst width
    int T_d = 0, N_d = 0;        // dedicated period and burst width, T_d = 0 when disabled
    std::vector<Burst> bursts;   // sorted by start, non-overlapping
    int common_slots = 0;
    int dedicated_slots = 0;

    int data_slots() const { return total_symbols - common_slots - dedicated_slots; }

    SlotLabel label(int symbol) const
    {
        require(symbol >= 0 && symbol < total_symbols, "FrameSchedule: symbol out of range");
        auto it = std::upper_bound(bursts.begin(), bursts.end(), symbol,
                                   [](int s, const Burst &b) { return s < b.start; });
        if (it != bursts.begin())
        {
            const Burst &b = *std::prev(it);
            if (symbol < b.start + b.length)
                return b.type;
        }
        return SlotLabel::Data;
    }
};

inline FrameSchedule schedule_frames(int total_symbols, int T_c, int N_c, int T_d = 0,
                                     int N_d = 0)
{
    require(total_symbols >= 0, "schedule_frames: total_symbols must be >= 0");
    require(T_c >= 1, "schedule_frames: T_c must be >= 1");
    require(N_c >= 1 && N_c <= T_c, "schedule_frames: need 1 <= N_c <= T_c");
    const bool dedicated = T_d > 0;
    if (dedicated)
    {
        require(N_d >= 1 && N_d <= T_d, "schedule_frames: need 1 <= N_d <= T_d");
        require(T_d <= T_c, "schedule_frames: T_d must not exceed T_c");
    }

    FrameSchedule s;
    s.total_symbols = total_symbols;
    s.T_c = T_c;
    s.N_c = N_c;
    s.T_d = dedicated ? T_d : 0;
    s.N_d = dedicated ? N_d : 0;

    for (int c = 0; c + N_c <= total_symbols; c += T_c)
    {
        s.bursts.push_back({c, N_c, SlotLabel::CommonTraining});
        s.common_slots += N_c;
    }
    if (dedicated)
    {
        auto overlaps_common = [&](int d) {
            // common bursts live at floor(d/T_c)*T_c and the next multiple
            for (int c = (d / T_c) * T_c; c <= d + N_d - 1; c += T_c)
                if (d < c + N_c && c < d + N_d)
                    return true;
            return false;
        };
        for (int d = 0; d + N_d <= total_symbols; d += T_d)
        {
            if (overlaps_common(d))
                continue;
            s.bursts.push_back({d, N_d, SlotLabel::DedicatedTraining});
            s.dedicated_slots += N_d;
        }
        std::sort(s.bursts.begin(), s.bursts.end(),
                  [](const Burst &a, const Burst &b) { return a.start < b.start; });
    }
    return s;
}

} // namespace beamtrain

#endif
