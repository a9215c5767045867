#pragma once

#include "stbhm/common.hpp"
#include "stbhm/rng.hpp"

namespace stbhm {

/// Draw from IW(nu, Phi) with density proportional to
/// |X|^{-(nu+r+1)/2} exp(-tr(Phi X^{-1}) / 2); mean Phi / (nu - r - 1).
/// Bartlett decomposition of the Wishart(nu, Phi^{-1}) precision.
Matrix sample_inverse_wishart(double nu, const Matrix& phi, Rng& rng);

/// Mean of IW(nu, Phi); requires nu > r + 1.
Matrix inverse_wishart_mean(double nu, const Matrix& phi);

}  // namespace stbhm
