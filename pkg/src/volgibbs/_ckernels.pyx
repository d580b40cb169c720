# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels; mirrors volgibbs._pykernels exactly."""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log1p, expm1, pow, exp, fabs, isfinite

cnp.import_array()

DEF OK = 0
DEF BAD_SHIFTED_RATE = 1
DEF BAD_XHAT = 2


cdef inline double _powb(double x, double e) noexcept nogil:
    # beta is 0, 1/2 or 1 in practice; sqrt and friends are far cheaper than pow
    if e == 0.5:
        return sqrt(x)
    if e == -0.5:
        return 1.0 / sqrt(x)
    if e == 0.0:
        return 1.0
    if e == 1.0:
        return x
    if e == -1.0:
        return 1.0 / x
    return pow(x, e)


cdef inline void _one(double a, double be, double v, double r, double b,
                      double F, double K, double T, double atm_eps, bint want,
                      double* sig_out, double* dsig_out, signed char* st_out) noexcept nogil:
    cdef double fb = F + b, kb = K + b, diff = F - K
    cdef double c = (2.0 - 3.0 * r * r) * v * v / 24.0
    cdef double fb_bm1, g, h, sig, kappa, tau_t
    cdef double u, one_m, y, zeta, disc, s, w, q, ratio, xhat, A, fk
    if not (fb > 0 and kb > 0):
        st_out[0] = BAD_SHIFTED_RATE
        sig_out[0] = 0.0 / 0.0
        dsig_out[0] = 0.0 / 0.0
        return
    st_out[0] = OK
    if fabs(diff) <= atm_eps:
        fb_bm1 = _powb(fb, be - 1.0)
        g = (be * be - 2.0 * be) / 24.0 * fb_bm1 * fb_bm1 * a * a
        h = 0.25 * r * v * a * be * fb_bm1
        sig = a * _powb(fb, be) * (1.0 + (g + h + c) * T)
        sig_out[0] = sig
        if want:
            kappa = 0.5 * (be / fb - r * v / a * _powb(fb, -be))
            tau_t = a * (be - 1.0) * fb_bm1 * (g + 0.125 * r * v * a * be * fb_bm1) * T
            dsig_out[0] = sig * kappa + tau_t
        return
    u = log1p(diff / kb)
    one_m = 1.0 - be
    if be == 1.0:
        y = u / a
    elif be == 0.0:
        y = diff / a
    else:
        y = _powb(kb, one_m) * expm1(one_m * u) / (a * one_m)
    zeta = v * y
    disc = 1.0 - 2.0 * r * zeta + zeta * zeta
    s = sqrt(disc)
    w = zeta * (zeta - 2.0 * r) / (s + 1.0)
    if zeta < 0.0:
        q = (w - zeta) / (1.0 + r)
        ratio = -log1p(q) / zeta
    else:
        q = (w + zeta) / (1.0 - r)
        ratio = 1.0 if zeta == 0.0 else log1p(q) / zeta
    xhat = y * ratio
    if disc <= 0 or q <= -1.0 or xhat == 0 or not isfinite(xhat):
        st_out[0] = BAD_XHAT
    A = diff / xhat
    fk = _powb(fb * kb, be - 1.0)
    g = (be * be - 2.0 * be) / 24.0 * fk * a * a
    h = 0.25 * r * v * a * be * sqrt(fk)
    sig = A * (1.0 + (g + h + c) * T)
    sig_out[0] = sig
    if want:
        kappa = 1.0 / diff - _powb(fb, -be) / (a * xhat * s)
        tau_t = A / fb * (be - 1.0) * (g + 0.5 * h) * T
        dsig_out[0] = sig * kappa + tau_t


def normal_vol(const double[::1] alpha, const double[::1] beta, const double[::1] nu, const double[::1] rho,
               const double[::1] shift, const double[::1] forward, const double[::1] strike, const double[::1] tau,
               double atm_eps, bint want_deriv):
    cdef Py_ssize_t n = alpha.shape[0], i
    sigma = np.empty(n)
    dsig = np.empty(n)
    status = np.empty(n, dtype=np.int8)
    cdef double[::1] sv = sigma
    cdef double[::1] dv = dsig
    cdef signed char[::1] stv = status
    with nogil:
        for i in range(n):
            _one(alpha[i], beta[i], nu[i], rho[i], shift[i], forward[i], strike[i], tau[i],
                 atm_eps, want_deriv, &sv[i], &dv[i], &stv[i])
    return sigma, (dsig if want_deriv else None), status


def sabr_paths(const double[::1] F0, const double[::1] alpha, const double[::1] nu, const double[::1] rho,
               double beta, double shift, double floor_eps, double dt,
               const long[::1] active_steps, const double[:, ::1] z1, const double[:, ::1] z2,
               const long[::1] record_steps, Py_ssize_t track_node):
    cdef Py_ssize_t n_paths = z1.shape[0], n_steps = z1.shape[1]
    cdef Py_ssize_t n_nodes = F0.shape[0], n_rec = record_steps.shape[0]
    cdef Py_ssize_t p, s, n, ri
    cdef double sq = sqrt(dt), floor = -shift + floor_eps
    cdef double dz1, dz2, Fn
    rec = np.empty((n_paths, n_rec, n_nodes))
    track = np.empty((n_paths, n_steps + 1))
    cdef double[:, :, ::1] rv = rec
    cdef double[:, ::1] tv = track
    cdef double[::1] F = np.empty(n_nodes)
    cdef double[::1] sig = np.empty(n_nodes)
    cdef double[::1] rbar = np.empty(n_nodes)
    cdef double[::1] vdrift = np.empty(n_nodes)
    cdef double[::1] nsq = np.empty(n_nodes)
    for n in range(n_nodes):
        rbar[n] = sqrt(1.0 - rho[n] * rho[n])
        vdrift[n] = -0.5 * nu[n] * nu[n] * dt
        nsq[n] = nu[n] * sq
    with nogil:
        for p in range(n_paths):
            for n in range(n_nodes):
                F[n] = F0[n]
                sig[n] = alpha[n]
            tv[p, 0] = F[track_node]
            ri = 0
            while ri < n_rec and record_steps[ri] == 0:
                for n in range(n_nodes):
                    rv[p, ri, n] = F[n]
                ri += 1
            for s in range(n_steps):
                dz1 = z1[p, s]
                for n in range(n_nodes):
                    if s < active_steps[n] and F[n] + shift > floor_eps:
                        dz2 = rho[n] * dz1 + rbar[n] * z2[p, s]
                        Fn = F[n] + sig[n] * _powb(fabs(F[n] + shift), beta) * sq * dz1
                        if Fn < floor:
                            Fn = floor
                        F[n] = Fn
                        sig[n] = sig[n] * exp(nsq[n] * dz2 + vdrift[n])
                tv[p, s + 1] = F[track_node]
                while ri < n_rec and record_steps[ri] == s + 1:
                    for n in range(n_nodes):
                        rv[p, ri, n] = F[n]
                    ri += 1
    return rec, track
