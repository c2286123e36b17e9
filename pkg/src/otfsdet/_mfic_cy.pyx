# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled serial sweep; semantics match otfsdet._mfic_py.sweep."""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp

cnp.import_array()

cdef double VAR_FLOOR = 1e-12
cdef double DENOM_FLOOR = 1e-12
cdef double Q_CAP = 1e12


def sweep(double complex[:, ::1] ht, double[:, ::1] abs2t,
          double complex[::1] y_bar, double gamma,
          double complex[::1] points, double[:, ::1] log_prior,
          cnp.int64_t[::1] order,
          double complex[:, ::1] mu_edge, double[::1] eta_hat,
          double complex[::1] mu_hat, double complex[::1] f_mean,
          double[::1] f_var, double[:, ::1] posterior):
    cdef Py_ssize_t mn = y_bar.shape[0]
    cdef Py_ssize_t na = points.shape[0]
    s_buf = np.empty(mn, dtype=np.complex128)
    p_buf = np.empty(na, dtype=np.float64)
    cdef double complex[::1] s = s_buf
    cdef double[::1] p = p_buf
    with nogil:
        _sweep_impl(ht, abs2t, y_bar, gamma, points, log_prior, order,
                    mu_edge, eta_hat, mu_hat, f_mean, f_var, posterior,
                    s, p, mn, na)


cdef void _sweep_impl(double complex[:, ::1] ht, double[:, ::1] abs2t,
                      double complex[::1] y_bar, double gamma,
                      double complex[::1] points, double[:, ::1] log_prior,
                      cnp.int64_t[::1] order,
                      double complex[:, ::1] mu_edge, double[::1] eta_hat,
                      double complex[::1] mu_hat, double complex[::1] f_mean,
                      double[::1] f_var, double[:, ::1] posterior,
                      double complex[::1] s, double[::1] p,
                      Py_ssize_t mn, Py_ssize_t na) nogil:
    cdef Py_ssize_t i, c, d, a
    cdef double denom, q, q_eff, a2, lmax, psum, second, w, dr, di
    cdef double eta_new, eta_old
    cdef double complex b, chi, mu_new, h, chs, me_new, pt

    for i in range(mn):
        c = order[i]

        # factor scores against the current interference sums
        q = 0.0
        b = 0
        for d in range(mn):
            denom = f_var[d] + gamma
            if denom < DENOM_FLOOR:
                denom = DENOM_FLOOR
            s[d] = (y_bar[d] - f_mean[d]) / denom
            a2 = abs2t[c, d]
            if a2 > 0.0:
                q += a2 / denom
                b += ht[c, d].conjugate() * s[d]

        if q <= 0.0:
            # unobserved symbol: posterior falls back to the prior
            lmax = -INFINITY
            for a in range(na):
                if log_prior[c, a] > lmax:
                    lmax = log_prior[c, a]
            psum = 0.0
            for a in range(na):
                w = exp(log_prior[c, a] - lmax)
                p[a] = w
                psum += w
            mu_new = 0
            second = 0.0
            for a in range(na):
                p[a] /= psum
                posterior[c, a] = p[a]
                pt = points[a]
                mu_new += p[a] * pt
                second += p[a] * (pt.real * pt.real + pt.imag * pt.imag)
            mu_hat[c] = mu_new
            eta_new = second - (mu_new.real * mu_new.real + mu_new.imag * mu_new.imag)
            if eta_new < VAR_FLOOR:
                eta_new = VAR_FLOOR
            eta_hat[c] = eta_new
            continue

        chi = mu_hat[c] + b / q
        q_eff = q
        if q_eff > Q_CAP:
            q_eff = Q_CAP

        # posterior over the alphabet, log domain with max subtraction
        lmax = -INFINITY
        for a in range(na):
            pt = points[a]
            dr = pt.real - chi.real
            di = pt.imag - chi.imag
            w = log_prior[c, a] - q_eff * (dr * dr + di * di)
            p[a] = w
            if w > lmax:
                lmax = w
        psum = 0.0
        for a in range(na):
            w = exp(p[a] - lmax)
            p[a] = w
            psum += w
        mu_new = 0
        for a in range(na):
            p[a] /= psum
            posterior[c, a] = p[a]
            mu_new += p[a] * points[a]
        eta_new = 0.0
        for a in range(na):
            pt = points[a]
            dr = pt.real - mu_new.real
            di = pt.imag - mu_new.imag
            eta_new += p[a] * (dr * dr + di * di)
        if eta_new < VAR_FLOOR:
            eta_new = VAR_FLOOR

        # push the update into the running interference sums
        eta_old = eta_hat[c]
        for d in range(mn):
            a2 = abs2t[c, d]
            if a2 > 0.0:
                h = ht[c, d]
                chs = h.conjugate() * s[d]
                me_new = mu_new - eta_new * chs
                f_mean[d] += h * (me_new - mu_edge[c, d])
                mu_edge[c, d] = me_new
                f_var[d] += a2 * (eta_new - eta_old)
                if f_var[d] < 0.0:
                    f_var[d] = 0.0
        mu_hat[c] = mu_new
        eta_hat[c] = eta_new
