#pragma once

#include <complex>
#include <vector>

namespace spontts::fft {

using cplx = std::complex<double>;

// In-place complex FFT/IFFT of arbitrary length (radix-2 when the length is
// a power of two, Bluestein otherwise). IFFT includes the 1/N scale.
void fft(std::vector<cplx>& a);
void ifft(std::vector<cplx>& a);

// Forward transform of a real frame; returns n/2+1 bins.
std::vector<cplx> rfft(const std::vector<double>& frame);

}  // namespace spontts::fft
