#pragma once

#include <array>
#include <complex>
#include <span>

namespace semflow {

/// Thin FFTW wrappers with an internal plan cache (keyed by extent), all in
/// double precision and unnormalized in the forward direction.  The inverse
/// transforms divide by the point count.  Not thread-safe; the whole code
/// base runs transforms from one thread.
namespace fft {

/// In-place-style interfaces: src and dst may alias.  Extents are row-major
/// [n1, n2] / [n1, n2, n3]; complex data interleaved std::complex layout.
void c2c_2d(std::array<int, 2> n, const std::complex<double>* src, std::complex<double>* dst,
            bool forward);
void c2c_3d(std::array<int, 3> n, const std::complex<double>* src, std::complex<double>* dst,
            bool forward);

/// Real transforms: real array n1 x n2 (x n3), half-spectrum with the last
/// axis truncated to n_last/2 + 1.  The c2r direction normalizes.
void r2c_2d(std::array<int, 2> n, const double* src, std::complex<double>* dst);
void c2r_2d(std::array<int, 2> n, const std::complex<double>* src, double* dst);
void r2c_3d(std::array<int, 3> n, const double* src, std::complex<double>* dst);
void c2r_3d(std::array<int, 3> n, const std::complex<double>* src, double* dst);

}  // namespace fft
}  // namespace semflow
