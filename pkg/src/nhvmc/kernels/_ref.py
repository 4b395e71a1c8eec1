"""NumPy reference implementation of the hot kernels.

Semantics here are the contract; the compiled backend in ``_fast.pyx`` must
reproduce these functions (same random-stream consumption, same update
order), differing only in floating-point association.
"""

import numpy as np


def log2cosh(z):
    """Overflow-safe log(2 cosh z) for complex arrays.

    Uses 2 cosh z = e^s (1 + e^{-2s}) with s = z where Re z >= 0 and s = -z
    otherwise, so the exponential never overflows.  The branch of the result
    follows the per-factor principal value of log(1 + e^{-2s}).
    """
    z = np.asarray(z)
    s = np.where(z.real >= 0.0, z, -z)
    return s + np.log(1.0 + np.exp(-2.0 * s))


def rbm_theta_logpsi(configs, a, b, w):
    """Hidden-unit arguments and log-amplitudes for a batch of configurations.

    Parameters
    ----------
    configs : (S, N) array of +-1 spins (any real or integer dtype).
    a, b, w : RBM parameters, shapes (N,), (H,), (H, N).

    Returns
    -------
    theta : (S, H) complex array, w @ sigma + b per sample.
    logpsi : (S,) complex array, a . sigma + sum_j log 2 cosh(theta_j).
    """
    sig = np.asarray(configs, dtype=np.float64)
    theta = sig @ w.T + b
    logpsi = sig @ a + log2cosh(theta).sum(axis=1)
    return theta, logpsi


def rbm_flip_stats(configs, theta, a, w, with_tanh=False):
    """Per-site single-flip statistics for a batch of configurations.

    Returns
    -------
    dlog : (S, N) complex array with dlog[s, i] = log psi(sigma^(i)) -
        log psi(sigma), where sigma^(i) is sample s with spin i flipped.
    tanh_flip : (S, N, H) complex array of tanh(theta) at each flipped
        configuration, or None unless ``with_tanh``.
    """
    sig = np.asarray(configs, dtype=np.float64)
    lc = log2cosh(theta)
    # theta after flipping site i: theta - 2 sigma_i w[:, i]
    theta_flip = theta[:, None, :] - 2.0 * sig[:, :, None] * w.T[None, :, :]
    dlog = (-2.0 * sig * a[None, :]
            + log2cosh(theta_flip).sum(axis=2) - lc.sum(axis=1)[:, None])
    tanh_flip = np.tanh(theta_flip) if with_tanh else None
    return dlog, tanh_flip


def metropolis_sweep(spins, a, b, w, a2, b2, w2, sites, unifs):
    """Run single-spin-flip Metropolis updates for a set of chains, in place.

    The stationary weight is |psi|^2 when the second parameter set is None,
    and |psi2 * psi| (both log-amplitudes' real parts summed) otherwise.
    Proposal t of chain c flips ``sites[c, t]`` and accepts when
    log(unifs[c, t]) < d log w.  Chains are advanced independently but in
    lockstep over t; the reference backend vectorizes over chains.

    Returns the total number of accepted proposals.
    """
    n_chains, n_props = sites.shape
    pair = a2 is not None
    rows = np.arange(n_chains)

    theta, _ = rbm_theta_logpsi(spins, a, b, w)
    lcsum = log2cosh(theta).sum(axis=1)
    if pair:
        theta2, _ = rbm_theta_logpsi(spins, a2, b2, w2)
        lcsum2 = log2cosh(theta2).sum(axis=1)

    log_unifs = np.log(unifs)
    accepted = 0
    for t in range(n_props):
        i = sites[:, t]
        s_i = spins[rows, i].astype(np.float64)
        theta_cand = theta - 2.0 * s_i[:, None] * w.T[i]
        lcsum_cand = log2cosh(theta_cand).sum(axis=1)
        dlogw = (-2.0 * s_i * a[i] + lcsum_cand - lcsum).real
        if pair:
            theta2_cand = theta2 - 2.0 * s_i[:, None] * w2.T[i]
            lcsum2_cand = log2cosh(theta2_cand).sum(axis=1)
            dlogw = dlogw + (-2.0 * s_i * a2[i] + lcsum2_cand - lcsum2).real
        else:
            dlogw = 2.0 * dlogw

        acc = log_unifs[:, t] < dlogw
        if acc.any():
            spins[acc, i[acc]] = -spins[acc, i[acc]]
            theta[acc] = theta_cand[acc]
            lcsum[acc] = lcsum_cand[acc]
            if pair:
                theta2[acc] = theta2_cand[acc]
                lcsum2[acc] = lcsum2_cand[acc]
            accepted += int(acc.sum())
    return accepted
