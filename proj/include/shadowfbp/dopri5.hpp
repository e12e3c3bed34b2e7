#pragma once

#include <algorithm>
#include <array>
#include <cmath>

namespace shadowfbp {

/// Continuous extension of one Dormand-Prince step (fourth-order accurate).
template <std::size_t N>
struct DenseSegment {
    double x0 = 0, h = 0;
    std::array<std::array<double, 5>, N> rc{};

    double x1() const { return x0 + h; }

    double value(std::size_t i, double x) const {
        const double t = (x - x0) / h, t1 = 1 - t;
        const auto& r = rc[i];
        return r[0] + t * (r[1] + t1 * (r[2] + t * (r[3] + t1 * r[4])));
    }

    double derivative(std::size_t i, double x) const {
        const double t = (x - x0) / h, t1 = 1 - t;
        const auto& r = rc[i];
        return (r[1] + (1 - 2 * t) * r[2] + t * (2 - 3 * t) * r[3] + 2 * t * t1 * (t1 - t) * r[4]) / h;
    }
};

struct Dopri5Options {
    double rtol = 1e-10;
    double atol = 1e-12;
    double h_min = 1e-14;
    double h_max = 1e300;
};

/// Adaptive Dormand-Prince 5(4) with stabilized step-size control.
/// F is callable as f(x, y, dydx) with std::array<double, N> arguments.
template <std::size_t N, class F>
class Dopri5 {
public:
    using State = std::array<double, N>;

    Dopri5(F f, Dopri5Options opt) : f_(std::move(f)), opt_(opt) {}

    void reset(double x, const State& y, double h0) {
        x_ = x;
        y_ = y;
        f_(x_, y_, k1_);
        h_ = h0;
        facold_ = 1e-4;
        last_rejected_ = false;
    }

    double x() const { return x_; }
    const State& y() const { return y_; }
    const State& dydx() const { return k1_; }
    double suggested_h() const { return h_; }
    const DenseSegment<N>& segment() const { return seg_; }
    long rejected() const { return n_rejected_; }

    /// Takes one accepted step without passing x_end. Returns false if the
    /// step size underflows h_min.
    bool step(double x_end) {
        constexpr double c2 = 1.0 / 5, c3 = 3.0 / 10, c4 = 4.0 / 5, c5 = 8.0 / 9;
        constexpr double a21 = 1.0 / 5;
        constexpr double a31 = 3.0 / 40, a32 = 9.0 / 40;
        constexpr double a41 = 44.0 / 45, a42 = -56.0 / 15, a43 = 32.0 / 9;
        constexpr double a51 = 19372.0 / 6561, a52 = -25360.0 / 2187, a53 = 64448.0 / 6561,
                         a54 = -212.0 / 729;
        constexpr double a61 = 9017.0 / 3168, a62 = -355.0 / 33, a63 = 46732.0 / 5247,
                         a64 = 49.0 / 176, a65 = -5103.0 / 18656;
        constexpr double a71 = 35.0 / 384, a73 = 500.0 / 1113, a74 = 125.0 / 192,
                         a75 = -2187.0 / 6784, a76 = 11.0 / 84;
        constexpr double e1 = 71.0 / 57600, e3 = -71.0 / 16695, e4 = 71.0 / 1920,
                         e5 = -17253.0 / 339200, e6 = 22.0 / 525, e7 = -1.0 / 40;
        constexpr double d1 = -12715105075.0 / 11282082432.0, d3 = 87487479700.0 / 32700410799.0,
                         d4 = -10690763975.0 / 1880347072.0, d5 = 701980252875.0 / 199316789632.0,
                         d6 = -1453857185.0 / 822651844.0, d7 = 69997945.0 / 29380423.0;
        constexpr double beta = 0.04, expo1 = 0.2 - beta * 0.75, safe = 0.9;

        State yt, k2, k3, k4, k5, k6, k7, y1;
        for (;;) {
            double h = std::min(h_, opt_.h_max);
            bool clipped = false;
            if (x_ + h >= x_end) {
                h = x_end - x_;
                clipped = true;
            }
            if (!(h >= opt_.h_min) && !clipped) return false;
            if (!(h > 0)) return false;

            for (std::size_t i = 0; i < N; ++i) yt[i] = y_[i] + h * a21 * k1_[i];
            f_(x_ + c2 * h, yt, k2);
            for (std::size_t i = 0; i < N; ++i) yt[i] = y_[i] + h * (a31 * k1_[i] + a32 * k2[i]);
            f_(x_ + c3 * h, yt, k3);
            for (std::size_t i = 0; i < N; ++i)
                yt[i] = y_[i] + h * (a41 * k1_[i] + a42 * k2[i] + a43 * k3[i]);
            f_(x_ + c4 * h, yt, k4);
            for (std::size_t i = 0; i < N; ++i)
                yt[i] = y_[i] + h * (a51 * k1_[i] + a52 * k2[i] + a53 * k3[i] + a54 * k4[i]);
            f_(x_ + c5 * h, yt, k5);
            for (std::size_t i = 0; i < N; ++i)
                yt[i] = y_[i] + h * (a61 * k1_[i] + a62 * k2[i] + a63 * k3[i] + a64 * k4[i] + a65 * k5[i]);
            const double xph = clipped ? x_end : x_ + h;
            f_(xph, yt, k6);
            for (std::size_t i = 0; i < N; ++i)
                y1[i] = y_[i] + h * (a71 * k1_[i] + a73 * k3[i] + a74 * k4[i] + a75 * k5[i] + a76 * k6[i]);
            f_(xph, y1, k7);

            double err = 0;
            bool finite = true;
            for (std::size_t i = 0; i < N; ++i) {
                const double sk = opt_.atol + opt_.rtol * std::max(std::abs(y_[i]), std::abs(y1[i]));
                const double e =
                    h * (e1 * k1_[i] + e3 * k3[i] + e4 * k4[i] + e5 * k5[i] + e6 * k6[i] + e7 * k7[i]) / sk;
                err += e * e;
                finite = finite && std::isfinite(y1[i]) && std::isfinite(k7[i]);
            }
            err = finite ? std::sqrt(err / N) : 1e10;

            const double fac11 = std::pow(std::max(err, 1e-300), expo1);
            if (err <= 1.0) {
                double fac = fac11 / std::pow(facold_, beta);
                fac = std::clamp(fac / safe, 0.1, 5.0);
                double hnew = h / fac;
                if (last_rejected_) hnew = std::min(hnew, h);
                facold_ = std::max(err, 1e-4);
                last_rejected_ = false;

                seg_.x0 = x_;
                seg_.h = h;
                for (std::size_t i = 0; i < N; ++i) {
                    const double ydiff = y1[i] - y_[i];
                    const double bspl = h * k1_[i] - ydiff;
                    auto& r = seg_.rc[i];
                    r[0] = y_[i];
                    r[1] = ydiff;
                    r[2] = bspl;
                    r[3] = ydiff - h * k7[i] - bspl;
                    r[4] = h * (d1 * k1_[i] + d3 * k3[i] + d4 * k4[i] + d5 * k5[i] + d6 * k6[i] + d7 * k7[i]);
                }
                x_ = xph;
                y_ = y1;
                k1_ = k7;
                if (!clipped || hnew < h_) h_ = hnew;
                return true;
            }
            ++n_rejected_;
            h_ = h / std::min(10.0, fac11 / safe);
            last_rejected_ = true;
            if (h_ < opt_.h_min) return false;
        }
    }

private:
    F f_;
    Dopri5Options opt_;
    double x_ = 0, h_ = 0, facold_ = 1e-4;
    bool last_rejected_ = false;
    long n_rejected_ = 0;
    State y_{}, k1_{};
    DenseSegment<N> seg_;
};

}  // namespace shadowfbp
