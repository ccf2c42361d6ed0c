#include "semflow/core/fft.hpp"

#include <fftw3.h>

#include <cstring>
#include <map>

namespace semflow::fft {

namespace {

// One cached plan per (rank, extents, kind).  Each entry owns aligned
// buffers; callers' data is copied through them, which keeps planning out
// of hot loops and sidesteps FFTW's alignment and input-destruction rules.
struct Entry {
    fftw_plan plan = nullptr;
    void* in = nullptr;
    void* out = nullptr;

    ~Entry() {
        if (plan) fftw_destroy_plan(plan);
        if (in) fftw_free(in);
        if (out && out != in) fftw_free(out);
    }
};

using Key = std::array<int, 5>;  // {kind, n1, n2, n3, dir}
std::map<Key, Entry>& cache() {
    static std::map<Key, Entry> c;
    return c;
}

enum Kind { kC2C2 = 0, kC2C3, kR2C2, kC2R2, kR2C3, kC2R3 };

Entry& get_c2c(Kind kind, std::array<int, 3> n, bool forward) {
    const Key key{kind, n[0], n[1], n[2], forward ? 1 : 0};
    auto it = cache().find(key);
    if (it != cache().end()) return it->second;
    Entry& e = cache()[key];
    const std::size_t total = static_cast<std::size_t>(n[0]) * n[1] * (n[2] ? n[2] : 1);
    e.in = fftw_malloc(sizeof(fftw_complex) * total);
    e.out = e.in;  // in-place c2c
    const int sign = forward ? FFTW_FORWARD : FFTW_BACKWARD;
    auto* buf = static_cast<fftw_complex*>(e.in);
    e.plan = kind == kC2C2 ? fftw_plan_dft_2d(n[0], n[1], buf, buf, sign, FFTW_ESTIMATE)
                           : fftw_plan_dft_3d(n[0], n[1], n[2], buf, buf, sign, FFTW_ESTIMATE);
    return e;
}

Entry& get_real(Kind kind, std::array<int, 3> n) {
    const Key key{kind, n[0], n[1], n[2], 0};
    auto it = cache().find(key);
    if (it != cache().end()) return it->second;
    Entry& e = cache()[key];
    const int last = kind == kR2C2 || kind == kC2R2 ? n[1] : n[2];
    const std::size_t lead = kind == kR2C2 || kind == kC2R2
                                 ? static_cast<std::size_t>(n[0])
                                 : static_cast<std::size_t>(n[0]) * n[1];
    const std::size_t real_total = lead * last;
    const std::size_t cplx_total = lead * (last / 2 + 1);
    switch (kind) {
        case kR2C2:
            e.in = fftw_malloc(sizeof(double) * real_total);
            e.out = fftw_malloc(sizeof(fftw_complex) * cplx_total);
            e.plan = fftw_plan_dft_r2c_2d(n[0], n[1], static_cast<double*>(e.in),
                                          static_cast<fftw_complex*>(e.out), FFTW_ESTIMATE);
            break;
        case kC2R2:
            e.in = fftw_malloc(sizeof(fftw_complex) * cplx_total);
            e.out = fftw_malloc(sizeof(double) * real_total);
            e.plan = fftw_plan_dft_c2r_2d(n[0], n[1], static_cast<fftw_complex*>(e.in),
                                          static_cast<double*>(e.out), FFTW_ESTIMATE);
            break;
        case kR2C3:
            e.in = fftw_malloc(sizeof(double) * real_total);
            e.out = fftw_malloc(sizeof(fftw_complex) * cplx_total);
            e.plan = fftw_plan_dft_r2c_3d(n[0], n[1], n[2], static_cast<double*>(e.in),
                                          static_cast<fftw_complex*>(e.out), FFTW_ESTIMATE);
            break;
        default:
            e.in = fftw_malloc(sizeof(fftw_complex) * cplx_total);
            e.out = fftw_malloc(sizeof(double) * real_total);
            e.plan = fftw_plan_dft_c2r_3d(n[0], n[1], n[2], static_cast<fftw_complex*>(e.in),
                                          static_cast<double*>(e.out), FFTW_ESTIMATE);
            break;
    }
    return e;
}

}  // namespace

void c2c_2d(std::array<int, 2> n, const std::complex<double>* src, std::complex<double>* dst,
            bool forward) {
    Entry& e = get_c2c(kC2C2, {n[0], n[1], 0}, forward);
    const std::size_t total = static_cast<std::size_t>(n[0]) * n[1];
    std::memcpy(e.in, src, sizeof(std::complex<double>) * total);
    fftw_execute(e.plan);
    auto* out = static_cast<std::complex<double>*>(e.out);
    if (forward) {
        std::memcpy(dst, out, sizeof(std::complex<double>) * total);
    } else {
        const double s = 1.0 / static_cast<double>(total);
        for (std::size_t i = 0; i < total; ++i) dst[i] = out[i] * s;
    }
}

void c2c_3d(std::array<int, 3> n, const std::complex<double>* src, std::complex<double>* dst,
            bool forward) {
    Entry& e = get_c2c(kC2C3, n, forward);
    const std::size_t total = static_cast<std::size_t>(n[0]) * n[1] * n[2];
    std::memcpy(e.in, src, sizeof(std::complex<double>) * total);
    fftw_execute(e.plan);
    auto* out = static_cast<std::complex<double>*>(e.out);
    if (forward) {
        std::memcpy(dst, out, sizeof(std::complex<double>) * total);
    } else {
        const double s = 1.0 / static_cast<double>(total);
        for (std::size_t i = 0; i < total; ++i) dst[i] = out[i] * s;
    }
}

void r2c_2d(std::array<int, 2> n, const double* src, std::complex<double>* dst) {
    Entry& e = get_real(kR2C2, {n[0], n[1], 0});
    const std::size_t total = static_cast<std::size_t>(n[0]) * n[1];
    const std::size_t ctotal = static_cast<std::size_t>(n[0]) * (n[1] / 2 + 1);
    std::memcpy(e.in, src, sizeof(double) * total);
    fftw_execute(e.plan);
    std::memcpy(dst, e.out, sizeof(std::complex<double>) * ctotal);
}

void c2r_2d(std::array<int, 2> n, const std::complex<double>* src, double* dst) {
    Entry& e = get_real(kC2R2, {n[0], n[1], 0});
    const std::size_t total = static_cast<std::size_t>(n[0]) * n[1];
    const std::size_t ctotal = static_cast<std::size_t>(n[0]) * (n[1] / 2 + 1);
    std::memcpy(e.in, src, sizeof(std::complex<double>) * ctotal);
    fftw_execute(e.plan);
    const double s = 1.0 / static_cast<double>(total);
    auto* out = static_cast<double*>(e.out);
    for (std::size_t i = 0; i < total; ++i) dst[i] = out[i] * s;
}

void r2c_3d(std::array<int, 3> n, const double* src, std::complex<double>* dst) {
    Entry& e = get_real(kR2C3, n);
    const std::size_t total = static_cast<std::size_t>(n[0]) * n[1] * n[2];
    const std::size_t ctotal = static_cast<std::size_t>(n[0]) * n[1] * (n[2] / 2 + 1);
    std::memcpy(e.in, src, sizeof(double) * total);
    fftw_execute(e.plan);
    std::memcpy(dst, e.out, sizeof(std::complex<double>) * ctotal);
}

void c2r_3d(std::array<int, 3> n, const std::complex<double>* src, double* dst) {
    Entry& e = get_real(kC2R3, n);
    const std::size_t total = static_cast<std::size_t>(n[0]) * n[1] * n[2];
    const std::size_t ctotal = static_cast<std::size_t>(n[0]) * n[1] * (n[2] / 2 + 1);
    std::memcpy(e.in, src, sizeof(std::complex<double>) * ctotal);
    fftw_execute(e.plan);
    const double s = 1.0 / static_cast<double>(total);
    auto* out = static_cast<double*>(e.out);
    for (std::size_t i = 0; i < total; ++i) dst[i] = out[i] * s;
}

}  // namespace semflow::fft
