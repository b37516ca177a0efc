// FFTW-backed complex transforms with cached per-shape plans.
#ifndef KGMO_FFT_HPP
#define KGMO_FFT_HPP

#include <complex>
#include <vector>

#include "kgmo/grid.hpp"

namespace kgmo {

// Forward transform produces Fourier coefficients c_m with f(x) = sum_m c_m e^{i xi_m . x}
// (forward output scaled by 1/n^dim). Inverse is the unscaled FFTW backward transform.
namespace fft {
void forward(const Grid& g, std::vector<std::complex<double>>& data);
void inverse(const Grid& g, std::vector<std::complex<double>>& data);
} // namespace fft

} // namespace kgmo

#endif
