# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels matching nhvmc.kernels._ref semantics.

The Metropolis sweep and the per-site flip statistics are the two inner
loops that dominate sampled runs; everything else stays in NumPy.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport log

cnp.import_array()

cdef extern from "complex.h" nogil:
    double complex cexp(double complex)
    double complex clog(double complex)
    double complex ctanh(double complex)
    double creal(double complex)


cdef inline double complex c_log2cosh(double complex z) nogil:
    cdef double complex s = z
    if creal(z) < 0.0:
        s = -z
    return s + clog(1.0 + cexp(-2.0 * s))


def log2cosh(z):
    """Overflow-safe log(2 cosh z) for complex arrays (see _ref.log2cosh)."""
    zarr = np.ascontiguousarray(np.asarray(z, dtype=np.complex128))
    out = np.empty_like(zarr)
    cdef double complex[::1] zv = zarr.reshape(-1)
    cdef double complex[::1] ov = out.reshape(-1)
    cdef Py_ssize_t n = zv.shape[0], idx
    with nogil:
        for idx in range(n):
            ov[idx] = c_log2cosh(zv[idx])
    if np.ndim(z) == 0:
        return out.reshape(())[()]
    return out


def rbm_theta_logpsi(configs, a, b, w):
    """Hidden-unit arguments and log-amplitudes (see _ref.rbm_theta_logpsi)."""
    sig = np.asarray(configs, dtype=np.float64)
    theta = np.ascontiguousarray(sig @ np.asarray(w).T + b)
    logpsi = np.ascontiguousarray(sig @ np.asarray(a), dtype=np.complex128)
    cdef double complex[:, ::1] tv = theta
    cdef double complex[::1] lv = logpsi
    cdef Py_ssize_t ns = tv.shape[0], nh = tv.shape[1], s, j
    cdef double complex acc
    with nogil:
        for s in range(ns):
            acc = 0.0
            for j in range(nh):
                acc = acc + c_log2cosh(tv[s, j])
            lv[s] = lv[s] + acc
    return theta, logpsi


def rbm_flip_stats(configs, theta, a, w, with_tanh=False):
    """Per-site single-flip statistics (see _ref.rbm_flip_stats)."""
    sig = np.ascontiguousarray(configs, dtype=np.float64)
    theta_c = np.ascontiguousarray(theta)
    a_c = np.ascontiguousarray(a, dtype=np.complex128)
    w_c = np.ascontiguousarray(w, dtype=np.complex128)
    cdef double[:, ::1] sv = sig
    cdef double complex[:, ::1] tv = theta_c
    cdef double complex[::1] av = a_c
    cdef double complex[:, ::1] wv = w_c
    cdef Py_ssize_t ns = sv.shape[0], n = sv.shape[1], nh = tv.shape[1]
    cdef Py_ssize_t s, i, j
    cdef int want_tanh = 1 if with_tanh else 0

    dlog = np.empty((ns, n), dtype=np.complex128)
    cdef double complex[:, ::1] dv = dlog
    tanh_flip = np.empty((ns, n, nh), dtype=np.complex128) if with_tanh \
        else None
    cdef double complex[:, :, ::1] tfv
    if with_tanh:
        tfv = tanh_flip

    cdef double complex lcsum, acc, th
    with nogil:
        for s in range(ns):
            lcsum = 0.0
            for j in range(nh):
                lcsum = lcsum + c_log2cosh(tv[s, j])
            for i in range(n):
                acc = 0.0
                for j in range(nh):
                    th = tv[s, j] - 2.0 * sv[s, i] * wv[j, i]
                    acc = acc + c_log2cosh(th)
                    if want_tanh:
                        tfv[s, i, j] = ctanh(th)
                dv[s, i] = -2.0 * sv[s, i] * av[i] + acc - lcsum
    return dlog, tanh_flip


def metropolis_sweep(spins, a, b, w, a2, b2, w2, sites, unifs):
    """Single-spin-flip Metropolis updates (see _ref.metropolis_sweep)."""
    cdef bint pair = a2 is not None

    theta_np, _ = rbm_theta_logpsi(spins, a, b, w)
    a_c = np.ascontiguousarray(a, dtype=np.complex128)
    w_c = np.ascontiguousarray(w, dtype=np.complex128)
    if pair:
        theta2_np, _ = rbm_theta_logpsi(spins, a2, b2, w2)
        a2_c = np.ascontiguousarray(a2, dtype=np.complex128)
        w2_c = np.ascontiguousarray(w2, dtype=np.complex128)
    else:
        theta2_np = np.zeros((0, 0), dtype=np.complex128)
        a2_c = np.zeros(0, dtype=np.complex128)
        w2_c = np.zeros((0, 0), dtype=np.complex128)

    cdef signed char[:, ::1] spv = spins
    cdef double complex[:, ::1] tv = theta_np
    cdef double complex[:, ::1] t2v = theta2_np
    cdef double complex[::1] av = a_c
    cdef double complex[:, ::1] wv = w_c
    cdef double complex[::1] a2v = a2_c
    cdef double complex[:, ::1] w2v = w2_c
    cdef long long[:, ::1] stv = np.ascontiguousarray(sites, dtype=np.int64)
    cdef double[:, ::1] uv = np.ascontiguousarray(unifs, dtype=np.float64)

    cdef Py_ssize_t n_chains = stv.shape[0], n_props = stv.shape[1]
    cdef Py_ssize_t nh = tv.shape[1]
    cdef Py_ssize_t c, t, j, i
    cdef double s_i, dlogw
    cdef double complex lcsum, lcsum_cand, lcsum2, lcsum2_cand, dlc
    cdef long accepted = 0

    theta_cand = np.empty(nh, dtype=np.complex128)
    theta2_cand = np.empty(nh if pair else 0, dtype=np.complex128)
    cdef double complex[::1] tcv = theta_cand
    cdef double complex[::1] t2cv = theta2_cand

    with nogil:
        for c in range(n_chains):
            lcsum = 0.0
            for j in range(nh):
                lcsum = lcsum + c_log2cosh(tv[c, j])
            if pair:
                lcsum2 = 0.0
                for j in range(nh):
                    lcsum2 = lcsum2 + c_log2cosh(t2v[c, j])
            for t in range(n_props):
                i = stv[c, t]
                s_i = spv[c, i]
                lcsum_cand = 0.0
                for j in range(nh):
                    tcv[j] = tv[c, j] - 2.0 * s_i * wv[j, i]
                    lcsum_cand = lcsum_cand + c_log2cosh(tcv[j])
                dlc = -2.0 * s_i * av[i] + lcsum_cand - lcsum
                if pair:
                    lcsum2_cand = 0.0
                    for j in range(nh):
                        t2cv[j] = t2v[c, j] - 2.0 * s_i * w2v[j, i]
                        lcsum2_cand = lcsum2_cand + c_log2cosh(t2cv[j])
                    dlogw = creal(dlc) + creal(
                        -2.0 * s_i * a2v[i] + lcsum2_cand - lcsum2)
                else:
                    dlogw = 2.0 * creal(dlc)
                if log(uv[c, t]) < dlogw:
                    spv[c, i] = -spv[c, i]
                    for j in range(nh):
                        tv[c, j] = tcv[j]
                    lcsum = lcsum_cand
                    if pair:
                        for j in range(nh):
                            t2v[c, j] = t2cv[j]
                        lcsum2 = lcsum2_cand
                    accepted += 1
    return int(accepted)
