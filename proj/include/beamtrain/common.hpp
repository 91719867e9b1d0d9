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

#ifndef beamtrain_common_H
#define beamtrain_common_H

#include <Eigen/Dense>
#include <Eigen/SparseCore>

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

namespace beamtrain
{

using cx = std::complex<double>;
using CVec = Eigen::VectorXcd;
using CMat = Eigen::MatrixXcd;
using RVec = Eigen::VectorXd;
using RMat = Eigen::MatrixXd;
using SpCMat = Eigen::SparseMatrix<cx>;

constexpr double pi = 3.141592653589793238462643383279502884;

// Throws std::invalid_argument when a caller-supplied value violates a precondition.
inline void require(bool condition, const char *message)
{
    if (!condition)
        throw std::invalid_argument(message);
}

// Deterministic random stream. All draws reduce to raw mt19937_64 output so that two runs
// with the same seed produce bit-identical streams regardless of platform libstdc++ details
// (std::normal_distribution is implementation-defined; Box-Muller below is not).
class Rng
{
  public:
    explicit Rng(std::uint64_t seed) : eng_(seed) {}

    // Uniform double in [0, 1), 53 random bits.
    double uniform()
    {
        return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
    }

    // Standard real Gaussian, Box-Muller cosine branch (no cached spare).
    double gaussian()
    {
        double u1 = 1.0 - uniform(); // (0, 1], keeps log() finite
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * pi * u2);
    }

    // Circularly-symmetric complex Gaussian CN(0, var), polar form.
    cx cgaussian(double var = 1.0)
    {
        double u1 = 1.0 - uniform();
        double u2 = uniform();
        double r = std::sqrt(-var * std::log(u1));
        return {r * std::cos(2.0 * pi * u2), r * std::sin(2.0 * pi * u2)};
    }

    // Index in [0, n) with probability weights[i] / sum(weights). Weights need not be
    // normalised; they must be non-negative with a positive sum.
    int discrete(const RVec &weights)
    {
        double total = weights.sum();
        require(total > 0.0, "discrete: weights must have positive sum");
        double u = uniform() * total;
        double acc = 0.0;
        int last = static_cast<int>(weights.size()) - 1;
        for (int i = 0; i < last; ++i)
        {
            acc += weights[i];
            if (u < acc)
                return i;
        }
        return last;
    }

    std::uint64_t raw() { return eng_(); }

  private:
    std::mt19937_64 eng_;
};

} // namespace beamtrain

#endif
