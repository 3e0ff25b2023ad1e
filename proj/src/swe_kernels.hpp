#pragma once

// Two-step (Richtmyer) Lax-Wendroff finite-volume step for the 2D shallow-water
// equations on a periodic grid, and its hand-derived discrete adjoint.
//
// Both kernels are templated on the scalar type. With T = double they are the
// forward step and first-order adjoint; with T = Dual the forward kernel is the
// tangent-linear step and the adjoint kernel is the second-order adjoint step
// (forward-over-reverse).

#include <cstddef>
#include <span>
#include <vector>

namespace swe4dvar::detail {

struct StepParams {
    std::size_t q;
    double cx;  // dt / dx
    double cy;  // dt / dy
    double g;
};

template <typename T>
struct Cons {
    T h, m, n;
};

template <typename T>
inline Cons<T> operator+(const Cons<T>& a, const Cons<T>& b) { return {a.h + b.h, a.m + b.m, a.n + b.n}; }
template <typename T>
inline Cons<T> operator-(const Cons<T>& a, const Cons<T>& b) { return {a.h - b.h, a.m - b.m, a.n - b.n}; }
template <typename T>
inline Cons<T> operator*(double s, const Cons<T>& a) { return {s * a.h, s * a.m, s * a.n}; }
template <typename T>
inline Cons<T>& operator+=(Cons<T>& a, const Cons<T>& b) {
    a.h += b.h; a.m += b.m; a.n += b.n;
    return a;
}

// x-flux F(h, hu, hv) = (hu, hu^2/h + g h^2/2, hu hv / h)
template <typename T>
inline Cons<T> flux_x(const Cons<T>& s, double g) {
    const T u = s.m / s.h;
    return {s.m, s.m * u + 0.5 * g * s.h * s.h, s.n * u};
}

// y-flux G(h, hu, hv) = (hv, hu hv / h, hv^2/h + g h^2/2)
template <typename T>
inline Cons<T> flux_y(const Cons<T>& s, double g) {
    const T v = s.n / s.h;
    return {s.n, s.m * v, s.n * v + 0.5 * g * s.h * s.h};
}

// dF/dU^T w
template <typename T>
inline Cons<T> flux_x_jt(const Cons<T>& s, const Cons<T>& w, double g) {
    const T u = s.m / s.h;
    const T v = s.n / s.h;
    return {w.m * (g * s.h - u * u) - w.n * (u * v), w.h + 2.0 * (u * w.m) + v * w.n, u * w.n};
}

// dG/dU^T w
template <typename T>
inline Cons<T> flux_y_jt(const Cons<T>& s, const Cons<T>& w, double g) {
    const T u = s.m / s.h;
    const T v = s.n / s.h;
    return {w.n * (g * s.h - v * v) - w.m * (u * v), v * w.m, w.h + u * w.m + 2.0 * (v * w.n)};
}

template <typename T>
struct StepWork {
    std::vector<Cons<T>> cell;     // conservative state at step start
    std::vector<Cons<T>> fx_cell;  // F at cells
    std::vector<Cons<T>> gy_cell;  // G at cells
    std::vector<Cons<T>> xface;    // predicted state on face (i+1/2, j)
    std::vector<Cons<T>> yface;    // predicted state on face (i, j+1/2)
    std::vector<Cons<T>> next;     // conservative state at step end

    void resize(std::size_t n) {
        cell.resize(n);
        fx_cell.resize(n);
        gy_cell.resize(n);
        xface.resize(n);
        yface.resize(n);
        next.resize(n);
    }
};

// Forward sweep; fills every intermediate in work. in holds primitive (h, u, v).
template <typename T>
void step_forward(const StepParams& p, std::span<const T> in, StepWork<T>& work) {
    const std::size_t q = p.q;
    const std::size_t nc = q * q;
    work.resize(nc);
    for (std::size_t c = 0; c < nc; ++c) {
        const T& h = in[c];
        work.cell[c] = {h, h * in[nc + c], h * in[2 * nc + c]};
        work.fx_cell[c] = flux_x(work.cell[c], p.g);
        work.gy_cell[c] = flux_y(work.cell[c], p.g);
    }
    const double hx = 0.5 * p.cx;
    const double hy = 0.5 * p.cy;
    for (std::size_t i = 0; i < q; ++i) {
        const std::size_t ip = (i + 1) % q;
        for (std::size_t j = 0; j < q; ++j) {
            const std::size_t jp = (j + 1) % q;
            const std::size_t c = i * q + j;
            const std::size_t cxn = ip * q + j;
            const std::size_t cyn = i * q + jp;
            work.xface[c] = 0.5 * (work.cell[c] + work.cell[cxn]) - hx * (work.fx_cell[cxn] - work.fx_cell[c]);
            work.yface[c] = 0.5 * (work.cell[c] + work.cell[cyn]) - hy * (work.gy_cell[cyn] - work.gy_cell[c]);
        }
    }
    std::vector<Cons<T>> fx(nc);
    std::vector<Cons<T>> gy(nc);
    for (std::size_t c = 0; c < nc; ++c) {
        fx[c] = flux_x(work.xface[c], p.g);
        gy[c] = flux_y(work.yface[c], p.g);
    }
    for (std::size_t i = 0; i < q; ++i) {
        const std::size_t im = (i + q - 1) % q;
        for (std::size_t j = 0; j < q; ++j) {
            const std::size_t jm = (j + q - 1) % q;
            const std::size_t c = i * q + j;
            work.next[c] = work.cell[c] - p.cx * (fx[c] - fx[im * q + j]) - p.cy * (gy[c] - gy[i * q + jm]);
        }
    }
}

template <typename T>
void step_primitive_out(const StepWork<T>& work, std::span<T> out) {
    const std::size_t nc = work.next.size();
    for (std::size_t c = 0; c < nc; ++c) {
        const Cons<T>& s = work.next[c];
        out[c] = s.h;
        out[nc + c] = s.m / s.h;
        out[2 * nc + c] = s.n / s.h;
    }
}

// Reverse sweep of one step linearized about the primitive state `in`:
// lam_in = (d step / d in)^T lam_out.
template <typename T>
void step_adjoint(const StepParams& p, std::span<const T> in, std::span<const T> lam_out, std::span<T> lam_in,
                  StepWork<T>& work) {
    const std::size_t q = p.q;
    const std::size_t nc = q * q;
    step_forward(p, in, work);

    // primitive output (h, m/h, n/h) -> conservative adjoint
    std::vector<Cons<T>> lam_next(nc);
    for (std::size_t c = 0; c < nc; ++c) {
        const Cons<T>& s = work.next[c];
        const T inv_h = 1.0 / s.h;
        const T u = s.m * inv_h;
        const T v = s.n * inv_h;
        const T& lu = lam_out[nc + c];
        const T& lv = lam_out[2 * nc + c];
        lam_next[c] = {lam_out[c] - (lu * u + lv * v) * inv_h, lu * inv_h, lv * inv_h};
    }

    std::vector<Cons<T>> lam_cell(lam_next);
    const double hx = 0.5 * p.cx;
    const double hy = 0.5 * p.cy;
    for (std::size_t i = 0; i < q; ++i) {
        const std::size_t ip = (i + 1) % q;
        for (std::size_t j = 0; j < q; ++j) {
            const std::size_t jp = (j + 1) % q;
            const std::size_t c = i * q + j;

            // x-face between c (left) and cxn (right)
            const std::size_t cxn = ip * q + j;
            const Cons<T> lam_fx = p.cx * (lam_next[cxn] - lam_next[c]);
            const Cons<T> lam_xf = flux_x_jt(work.xface[c], lam_fx, p.g);
            lam_cell[c] += 0.5 * lam_xf + hx * flux_x_jt(work.cell[c], lam_xf, p.g);
            lam_cell[cxn] += 0.5 * lam_xf - hx * flux_x_jt(work.cell[cxn], lam_xf, p.g);

            // y-face between c (below) and cyn (above)
            const std::size_t cyn = i * q + jp;
            const Cons<T> lam_gy = p.cy * (lam_next[cyn] - lam_next[c]);
            const Cons<T> lam_yf = flux_y_jt(work.yface[c], lam_gy, p.g);
            lam_cell[c] += 0.5 * lam_yf + hy * flux_y_jt(work.cell[c], lam_yf, p.g);
            lam_cell[cyn] += 0.5 * lam_yf - hy * flux_y_jt(work.cell[cyn], lam_yf, p.g);
        }
    }

    // conservative input (h, h u, h v) -> primitive adjoint
    for (std::size_t c = 0; c < nc; ++c) {
        const T& h = in[c];
        const T& u = in[nc + c];
        const T& v = in[2 * nc + c];
        const Cons<T>& l = lam_cell[c];
        lam_in[c] = l.h + u * l.m + v * l.n;
        lam_in[nc + c] = h * l.m;
        lam_in[2 * nc + c] = h * l.n;
    }
}

}  // namespace swe4dvar::detail
