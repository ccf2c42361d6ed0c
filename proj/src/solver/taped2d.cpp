#include "semflow/solver/taped2d.hpp"

#include <cmath>
#include <numbers>

#include "spectral_util.hpp"

namespace semflow {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
using cplx = std::complex<double>;

}  // namespace

TapedSolver2D::TapedSolver2D(const SolverConfig& cfg) : cfg_(cfg) {
    ensure(cfg.kind == FlowKind::Kolmogorov2D, "the taped stepper covers the 2D flow only");
    cfg.validate();
    n1_ = cfg.res[0];
    n2_ = cfg.res[1];
    const double ku1 = kTwoPi / cfg.length[0], ku2 = kTwoPi / cfg.length[1];
    const std::size_t n = static_cast<std::size_t>(n1_) * n2_;
    mult_ux_.resize(n);
    mult_uy_.resize(n);
    mult_dx_.resize(n);
    mult_dy_.resize(n);
    filter_.resize(n);
    const double m_nyq = 0.5 * std::min(n1_, n2_);
    for (int i1 = 0; i1 < n1_; ++i1) {
        double k1 = ku1 * detail::deriv_mode(i1, n1_);
        double m1 = detail::signed_mode(i1, n1_);
        for (int i2 = 0; i2 < n2_; ++i2) {
            double k2 = ku2 * detail::deriv_mode(i2, n2_);
            double m2 = detail::signed_mode(i2, n2_);
            std::size_t id = static_cast<std::size_t>(i1) * n2_ + i2;
            double kk = k1 * k1 + k2 * k2;
            if (kk == 0.0) {
                mult_ux_[id] = mult_uy_[id] = 0.0;
            } else {
                mult_ux_[id] = cplx(0.0, k2 / kk);
                mult_uy_[id] = cplx(0.0, -k1 / kk);
            }
            mult_dx_[id] = cplx(0.0, k1);
            mult_dy_[id] = cplx(0.0, k2);
            double ratio = std::sqrt(m1 * m1 + m2 * m2) / m_nyq;
            filter_[id] = detail::smooth_filter(ratio, cfg.dealias_coeff, cfg.dealias_order);
        }
    }
    if (cfg.forcing_k > 0) {
        // Physical wavenumber -> cycles per domain, matching the fast path.
        const double cycles = cfg.forcing_k / ku1;
        const int m = static_cast<int>(std::llround(cycles));
        ensure(std::abs(cycles - m) <= 1e-9 * std::max(1.0, cycles),
               "the domain must hold a whole number of forcing periods");
        ensure(m >= 1 && 2 * m < n1_, "forcing wavenumber must sit below the grid Nyquist");
        forcing_.assign(2 * n, 0.0);
        double amp = 0.5 * cfg.forcing_k * static_cast<double>(n1_) * n2_;
        forcing_[2 * (static_cast<std::size_t>(m) * n2_)] = amp;
        forcing_[2 * (static_cast<std::size_t>(n1_ - m) * n2_)] = amp;
    }
}

std::vector<cplx> TapedSolver2D::cn_factor(double dt) const {
    const double ku1 = kTwoPi / cfg_.length[0], ku2 = kTwoPi / cfg_.length[1];
    std::vector<cplx> f(static_cast<std::size_t>(n1_) * n2_);
    for (int i1 = 0; i1 < n1_; ++i1) {
        double k1 = ku1 * detail::signed_mode(i1, n1_);
        for (int i2 = 0; i2 < n2_; ++i2) {
            double k2 = ku2 * detail::signed_mode(i2, n2_);
            double a = 0.25 * cfg_.nu * (k1 * k1 + k2 * k2) * dt;
            f[static_cast<std::size_t>(i1) * n2_ + i2] = (1.0 - a) / (1.0 + a);
        }
    }
    return f;
}

Tensor TapedSolver2D::spectrum(Tensor w_phys) const {
    return ops::fft2(ops::make_complex(w_phys), true);
}

Tensor TapedSolver2D::physical(Tensor w_hat) const {
    return ops::real_part(ops::fft2(w_hat, false));
}

Tensor TapedSolver2D::tendency(Tensor w_hat) const {
    Tensor ux = ops::real_part(ops::fft2(ops::cmul_const(w_hat, mult_ux_), false));
    Tensor uy = ops::real_part(ops::fft2(ops::cmul_const(w_hat, mult_uy_), false));
    Tensor wx = ops::real_part(ops::fft2(ops::cmul_const(w_hat, mult_dx_), false));
    Tensor wy = ops::real_part(ops::fft2(ops::cmul_const(w_hat, mult_dy_), false));
    Tensor adv = ops::neg(ops::add(ops::mul(ux, wx), ops::mul(uy, wy)));
    Tensor t = ops::cmul_const(ops::fft2(ops::make_complex(adv), true), filter_);
    t = ops::add(t, ops::scale(w_hat, -cfg_.damping));
    if (!forcing_.empty()) {
        Tensor f = w_hat.tape->constant(
            TensorData::from(w_hat.tape->dtype(), {n1_, n2_, 2}, forcing_));
        t = ops::add(t, f);
    }
    return t;
}

Tensor TapedSolver2D::step(Tensor w_hat, double dt) const {
    ensure(w_hat.valid() && w_hat.shape() == std::vector<std::int64_t>({n1_, n2_, 2}),
           "taped step expects a full-spectrum state [n1, n2, 2]");
    std::vector<cplx> cn = cn_factor(dt);

    Tensor w1 = ops::cmul_const(w_hat, cn);
    Tensor k1 = tendency(w1);
    Tensor k2 = tendency(ops::add(w1, ops::scale(k1, 0.5 * dt)));
    Tensor k3 = tendency(ops::add(w1, ops::scale(k2, 0.5 * dt)));
    Tensor k4 = tendency(ops::add(w1, ops::scale(k3, dt)));
    Tensor incr = ops::add(ops::add(k1, k4), ops::scale(ops::add(k2, k3), 2.0));
    Tensor w2 = ops::add(w1, ops::scale(incr, dt / 6.0));
    return ops::cmul_const(w2, cn);
}

}  // namespace semflow
