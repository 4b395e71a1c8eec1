"""Local energies, variance losses, the biorthogonal energy and
observable estimators, and the Wirtinger gradient of the joint loss.

Every quantity has two evaluation paths selected by the ``measure``
argument:

* a ``FullSummation`` workspace -- exact sums over the whole basis.  Losses
  are evaluated in amplitude space as ||(H - eps) psi||^2 / ||psi||^2,
  which coincides with the expectation of |E_loc - eps|^2 under |psi|^2
  wherever psi has full support and stays exact for states with zero
  amplitudes (e.g. exact eigenvectors in a symmetry sector).
* a ``SampleBatch`` -- Monte Carlo estimates with standard errors computed
  from independent-chain means.

For biorthogonal quantities <psi~|O|psi>/<psi~|psi> three sampling
distributions are supported; with samples sigma ~ p and the local value
O_loc(sigma) = [O psi](sigma) / psi(sigma):

* born_right, p ~ |psi|^2:      E[t O_loc] / E[t],  t = conj(psi~/psi)
* born_left,  p ~ |psi~|^2:     E[u O_loc] / E[u],  u = psi/psi~
* product_abs, p ~ |psi~ psi|:  E[e^{i phi} O_loc] / E[e^{i phi}],
  phi = arg(conj(psi~) psi)

All three are exact on eigenstates sample-by-sample (zero variance).  When
the overlap denominator is consistent with zero at the 5-sigma level an
``OverlapCollapseError`` carrying the estimate and its error is raised.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import model
from .ansatz import (RBM, DualMode, ExactVectorAnsatz, StatePair,
                     config_to_index)
from .sampler import Distribution, FullSummation, SampleBatch

__all__ = [
    "LossValue",
    "EnergyEstimate",
    "OverlapCollapseError",
    "LocalOperator",
    "HamiltonianOperator",
    "IdentityOperator",
    "DiagonalOperator",
    "TotalSx",
    "local_energy",
    "local_energy_batch",
    "variance_loss_right",
    "variance_loss_left",
    "biorthogonal_energy",
    "biorthogonal_observable",
    "gradient_variance",
    "energy_rr",
    "VarianceGradient",
]


class OverlapCollapseError(ArithmeticError):
    """<psi~|psi> estimate consistent with zero at the 5-sigma level."""

    def __init__(self, magnitude, stderr):
        self.magnitude = magnitude
        self.stderr = stderr
        super().__init__(
            f"overlap denominator |<psi~|psi>| = {magnitude:.3e} "
            f"+- {stderr:.3e} is consistent with zero")


@dataclass
class LossValue:
    l_right: float = 0.0
    l_left: float = 0.0
    stderr: float = 0.0

    @property
    def total(self):
        return self.l_right + self.l_left


@dataclass
class EnergyEstimate:
    epsilon: complex
    stderr_re: float = 0.0
    stderr_im: float = 0.0


# ---------------------------------------------------------------------------
# operators with diagonal + single-site-flip row structure

class LocalOperator:
    """Row access: O = diag(sigma) + sum_i flip_coeff_i(sigma) |sigma^i><sigma|
    adjacency; flip_coeff[s, i] = <sigma_s|O|sigma_s with spin i flipped>."""

    def diag_batch(self, configs):
        raise NotImplementedError

    def flip_coeff_batch(self, configs):
        return None


class HamiltonianOperator(LocalOperator):
    def __init__(self, lattice, params, dagger=False):
        self.lattice = lattice
        self.params = params
        self.dagger = dagger

    def diag_batch(self, configs):
        return model.diag_batch(self.lattice, self.params, configs,
                                dagger=self.dagger)

    def flip_coeff_batch(self, configs):
        shape = np.asarray(configs).shape
        return np.full(shape, -self.params.h, dtype=np.complex128)


class IdentityOperator(LocalOperator):
    def diag_batch(self, configs):
        return np.ones(np.asarray(configs).shape[0], dtype=np.complex128)


class DiagonalOperator(LocalOperator):
    """Diagonal observable defined by a function of the configurations."""

    def __init__(self, fn):
        self.fn = fn

    def diag_batch(self, configs):
        return np.asarray(self.fn(np.asarray(configs, dtype=np.float64)),
                          dtype=np.complex128)


class TotalSx(LocalOperator):
    """sum_i sigma^x_i: purely off-diagonal, coefficient 1 per flip."""

    def diag_batch(self, configs):
        return np.zeros(np.asarray(configs).shape[0], dtype=np.complex128)

    def flip_coeff_batch(self, configs):
        return np.ones(np.asarray(configs).shape, dtype=np.complex128)


# ---------------------------------------------------------------------------
# local values

def _flip_ratios(state, configs, theta=None):
    """psi(sigma^i)/psi(sigma) for every sample and site."""
    if isinstance(state, RBM):
        dlog, _ = state.flip_stats(configs, theta)
        return np.exp(dlog)
    if isinstance(state, ExactVectorAnsatz):
        idx = config_to_index(configs)
        n = state.n_sites
        flip_idx = idx[:, None] ^ (1 << np.arange(n, dtype=np.int64))
        amp = state.amplitudes[idx]
        if np.any(amp == 0):
            raise ZeroDivisionError("flip ratio at zero-amplitude sigma")
        return state.amplitudes[flip_idx] / amp[:, None]
    raise TypeError(f"unsupported ansatz {type(state).__name__}")


def local_value_batch(state, operator, configs, theta=None):
    """[O psi](sigma)/psi(sigma) for a diagonal-plus-flip operator."""
    out = operator.diag_batch(configs).astype(np.complex128)
    coeff = operator.flip_coeff_batch(configs)
    if coeff is not None:
        out = out + (coeff * _flip_ratios(state, configs, theta)).sum(axis=1)
    return out


def local_energy_batch(state, lattice, params, configs, dagger=False,
                       theta=None):
    return local_value_batch(
        state, HamiltonianOperator(lattice, params, dagger), configs, theta)


def local_energy(state, lattice, params, config):
    """E_loc(sigma) = <sigma|H|psi> / psi(sigma) at one configuration."""
    config = model.validate_config(config, lattice.num_sites)
    if isinstance(state, ExactVectorAnsatz):
        state.log_psi(config)  # raises ZeroAmplitudeError on zero support
    return complex(local_energy_batch(state, lattice, params,
                                      config[None, :])[0])


# ---------------------------------------------------------------------------
# sampled-batch helpers

def _chain_means(values, chain_ids, n_chains):
    sums = np.zeros(n_chains, dtype=values.dtype)
    np.add.at(sums, chain_ids, values)
    counts = np.bincount(chain_ids, minlength=n_chains)
    return sums / counts


def _mean_with_stderr(values, batch):
    mean = values.mean()
    per_chain = _chain_means(values, batch.chain_ids, batch.n_chains)
    if batch.n_chains < 2:
        return mean, 0.0, 0.0
    scale = np.sqrt(batch.n_chains)
    se_im = (per_chain.imag.std(ddof=1) / scale
             if np.iscomplexobj(values) else 0.0)
    return mean, per_chain.real.std(ddof=1) / scale, se_im


def _ratio_with_stderr(num, den, batch):
    """Ratio of means with delta-method errors over independent chains.

    Raises OverlapCollapseError when |mean(den)| is below 5 times the
    chain-to-chain spread of the denominator.
    """
    num_c = _chain_means(num.astype(np.complex128), batch.chain_ids,
                         batch.n_chains)
    den_c = _chain_means(den.astype(np.complex128), batch.chain_ids,
                         batch.n_chains)
    den_mean = den_c.mean()
    scale = np.sqrt(batch.n_chains)
    if batch.n_chains >= 2:
        den_err = np.sqrt(den_c.real.var(ddof=1)
                          + den_c.imag.var(ddof=1)) / scale
        if np.abs(den_mean) < 5.0 * den_err:
            raise OverlapCollapseError(float(np.abs(den_mean)),
                                       float(den_err))
    ratio = num_c.mean() / den_mean
    if batch.n_chains < 2:
        return ratio, 0.0, 0.0
    resid = (num_c - ratio * den_c) / den_mean
    return (ratio,
            resid.real.std(ddof=1) / scale,
            resid.imag.std(ddof=1) / scale)


def _reweight_factors(batch):
    """Per-sample factors (t_s) with <psi~|O|psi>/<psi~|psi> =
    E[t O_loc]/E[t] under the batch's distribution."""
    if batch.distribution == Distribution.BORN_RIGHT:
        return np.exp(np.conj(batch.log_psi_tilde - batch.log_psi))
    if batch.distribution == Distribution.BORN_LEFT:
        return np.exp(batch.log_psi - batch.log_psi_tilde)
    phase = (np.conj(batch.log_psi_tilde) + batch.log_psi).imag
    return np.exp(1j * phase)


# ---------------------------------------------------------------------------
# biorthogonal energy and observables

def _full_overlap_guard(psi_t, psi):
    den = np.vdot(psi_t, psi)
    scale = np.linalg.norm(psi_t) * np.linalg.norm(psi)
    if np.abs(den) < 1e-12 * scale:
        raise OverlapCollapseError(float(np.abs(den)), 0.0)
    return den


def biorthogonal_energy(pair, lattice, params, measure):
    """eps = <psi~|H|psi> / <psi~|psi> (exact or sampled)."""
    return biorthogonal_observable(
        pair, HamiltonianOperator(lattice, params), measure, mode="LR")


def biorthogonal_observable(pair, operator, measure, mode="LR"):
    """LR or RR expectation of a diagonal-plus-flip operator.

    Sampled RR estimation requires a born_right batch (it is the standard
    |psi|^2 average); LR works with any of the three distributions.
    Returns an EnergyEstimate (value with real/imag standard errors).
    """
    if isinstance(measure, FullSummation):
        psi = measure.amplitudes(pair.psi)
        opsi = measure.apply_operator(operator, psi)
        if mode == "RR":
            value = np.vdot(psi, opsi) / np.vdot(psi, psi)
        else:
            psi_t = measure.amplitudes(pair.tilde)
            den = _full_overlap_guard(psi_t, psi)
            value = np.vdot(psi_t, opsi) / den
        return EnergyEstimate(complex(value))

    batch: SampleBatch = measure
    oloc = local_value_batch(pair.psi, operator, batch.configs)
    if mode == "RR":
        if batch.distribution != Distribution.BORN_RIGHT:
            raise ValueError("sampled RR expectation needs a born_right "
                             f"batch, got {batch.distribution}")
        value, se_re, se_im = _mean_with_stderr(oloc, batch)
        return EnergyEstimate(complex(value), se_re, se_im)
    t = _reweight_factors(batch)
    value, se_re, se_im = _ratio_with_stderr(t * oloc, t, batch)
    return EnergyEstimate(complex(value), se_re, se_im)


def energy_rr(pair, lattice, params, measure):
    """<psi|H|psi>/<psi|psi>, the plain right-state energy."""
    return biorthogonal_observable(
        pair, HamiltonianOperator(lattice, params), measure, mode="RR")


# ---------------------------------------------------------------------------
# variance losses

def _loss_full(state, lattice, params, eps, ws, dagger):
    psi = ws.amplitudes(state)
    hpsi = ws.apply_operator(
        HamiltonianOperator(lattice, params, dagger=dagger), psi)
    eps_eff = np.conj(eps) if dagger else eps
    resid = hpsi - eps_eff * psi
    return float(np.vdot(resid, resid).real / np.vdot(psi, psi).real)


def variance_loss_right(state, lattice, params, eps, measure):
    """L_R = <psi|(H+ - eps*)(H - eps)|psi> / <psi|psi> >= 0."""
    state = state.psi if isinstance(state, StatePair) else state
    if isinstance(measure, FullSummation):
        return LossValue(l_right=_loss_full(state, lattice, params, eps,
                                            measure, dagger=False))
    batch: SampleBatch = measure
    if batch.n_samples == 0:
        raise ValueError("empty sample batch")
    if batch.distribution != Distribution.BORN_RIGHT:
        raise ValueError("sampled right loss needs a born_right batch")
    eloc = local_energy_batch(state, lattice, params, batch.configs)
    values = np.abs(eloc - eps) ** 2
    mean, se, _ = _mean_with_stderr(values, batch)
    return LossValue(l_right=float(mean.real), stderr=se)


def variance_loss_left(pair, lattice, params, eps, measure):
    """L_L = <psi~|(H - eps)(H+ - eps*)|psi~> / <psi~|psi~>, the mirror of
    the right loss under (psi -> psi~, H -> H+, eps -> eps*)."""
    tilde = pair.tilde if isinstance(pair, StatePair) else pair
    if isinstance(measure, FullSummation):
        return LossValue(l_left=_loss_full(tilde, lattice, params, eps,
                                           measure, dagger=True))
    batch: SampleBatch = measure
    if batch.n_samples == 0:
        raise ValueError("empty sample batch")
    if batch.distribution not in (Distribution.BORN_LEFT,):
        # for the conjugate dual |psi~|^2 == |psi|^2, so born_right works too
        is_pt = (isinstance(pair, StatePair)
                 and pair.dual_mode is DualMode.PT_CONJUGATE)
        if not (is_pt and batch.distribution == Distribution.BORN_RIGHT):
            raise ValueError("sampled left loss needs a born_left batch")
    eloc_t = local_energy_batch(tilde, lattice, params, batch.configs,
                                dagger=True)
    values = np.abs(eloc_t - np.conj(eps)) ** 2
    mean, se, _ = _mean_with_stderr(values, batch)
    return LossValue(l_left=float(mean.real), stderr=se)


# ---------------------------------------------------------------------------
# gradient of the joint variance loss

@dataclass
class VarianceGradient:
    """Per-block Wirtinger gradients (w.r.t. conjugate parameters) of the
    joint loss at fixed eps, plus what stochastic reconfiguration needs."""

    grad: dict                 # block name -> (P,) complex
    o_matrices: dict           # block name -> (S, P) log-derivative matrix
    weights: dict              # block name -> (S,) probability weights
    loss: LossValue

    @property
    def grad_norm(self):
        return float(np.sqrt(sum(
            float(np.vdot(g, g).real) for g in self.grad.values())))


def _variance_algebra(sig, weights, diag, ratios, tanh, tanh_flip, eps_eff,
                      h):
    """loss, gradient, O matrix from per-configuration ingredients.

    The gradient of E_p[|E_loc - eps|^2] w.r.t. conjugate parameters is

        cov(conj(O_j), |d|^2) + E[d * conj(DE_j)],   d = E_loc - eps,

    where DE_j(sigma) = sum_i H_{sigma, sigma^i} R_i (O_j(sigma^i) -
    O_j(sigma)) collects the change of the log-derivatives over the
    Hamiltonian's off-diagonal connections (R_i = psi(sigma^i)/psi(sigma)).
    For the RBM the three blocks reduce to

        DE_a[l] = 2 h R_l sigma_l
        DE_b[j] = -h sum_i R_i (T^i_j - T_j)
        DE_W[j, l] = sigma_l DE_b[j] + 2 h sigma_l R_l T^l_j

    with T = tanh(theta) and T^i the same at the flipped configuration.
    """
    n_samples = sig.shape[0]
    eloc = diag - h * ratios.sum(axis=1)
    d = eloc - eps_eff
    abs_d2 = (d * d.conj()).real
    loss = float(weights @ abs_d2)

    o_mat = np.concatenate(
        [sig.astype(np.complex128), tanh,
         (tanh[:, :, None] * sig[:, None, :]).reshape(n_samples, -1)], axis=1)

    de_a = 2.0 * h * ratios * sig
    de_b = -h * np.einsum("si,sij->sj", ratios, tanh_flip - tanh[:, None, :])
    de_w = (np.einsum("sl,sj->sjl", sig, de_b)
            + 2.0 * h * np.einsum("sl,slj->sjl", sig * ratios, tanh_flip))
    de = np.concatenate([de_a, de_b, de_w.reshape(n_samples, -1)], axis=1)

    mean_o = weights @ o_mat
    grad = (o_mat.conj().T @ (weights * abs_d2)
            - mean_o.conj() * loss
            + de.conj().T @ (weights * d))
    return loss, grad, o_mat, eloc


def _state_variance_terms(state, lattice, params, eps, measure, dagger=False):
    """loss, gradient, O matrix, weights for one state.

    On the exact path all flip quantities are gathers into the state
    table; on the sampled path they come from the flip-statistics kernel.
    """
    if not state.has_derivatives:
        raise TypeError("gradient needs an ansatz with derivatives")
    eps_eff = np.conj(eps) if dagger else eps

    if isinstance(measure, FullSummation):
        ws = measure
        tab = ws.table(state)
        amp2 = (tab.amplitudes * tab.amplitudes.conj()).real
        weights = amp2 / amp2.sum()
        sig = ws.configs.astype(np.float64)
        diag = model.diag_batch(lattice, params, ws.configs, dagger=dagger)
        loss, grad, o_mat, eloc = _variance_algebra(
            sig, weights, diag, tab.flip_ratios(), tab.tanh_theta,
            tab.flip_tanh(), eps_eff, params.h)
        return loss, grad, o_mat, weights, eloc

    batch: SampleBatch = measure
    configs = batch.configs
    n = batch.n_samples
    weights = np.full(n, 1.0 / n)
    sig = np.asarray(configs, dtype=np.float64)
    diag = model.diag_batch(lattice, params, configs, dagger=dagger)
    theta = state.theta_batch(configs)
    dlog, tanh_flip = state.flip_stats(configs, theta, with_tanh=True)
    loss, grad, o_mat, eloc = _variance_algebra(
        sig, weights, diag, np.exp(dlog), np.tanh(theta), tanh_flip,
        eps_eff, params.h)
    return loss, grad, o_mat, weights, eloc


def _check_batch(measure, expected_distribution):
    if isinstance(measure, SampleBatch):
        if measure.distribution != expected_distribution:
            raise ValueError(f"batch sampled from {measure.distribution}, "
                             f"needed {expected_distribution}")
        if measure.n_samples == 0:
            raise ValueError("empty sample batch")


def gradient_variance(pair, lattice, params, eps, measure, measure_left=None):
    """Gradient of L = L_R + L_L at fixed eps.

    In pt_conjugate mode L_L is pointwise identical to L_R as a function of
    the single parameter set, so the joint gradient is exactly twice the
    right gradient.  In independent mode both blocks are returned;
    ``measure_left`` must then supply the |psi~|^2 measure when sampling
    (full summation serves both sides).
    """
    pt = pair.dual_mode is DualMode.PT_CONJUGATE
    _check_batch(measure, Distribution.BORN_RIGHT)
    l_r, g_r, o_r, w, _ = _state_variance_terms(
        pair.psi, lattice, params, eps, measure, dagger=False)

    if pt:
        return VarianceGradient(
            grad={"psi": 2.0 * g_r},
            o_matrices={"psi": o_r},
            weights={"psi": w},
            loss=LossValue(l_right=l_r, l_left=l_r),
        )

    if measure_left is None:
        if not isinstance(measure, FullSummation):
            raise ValueError("independent mode needs measure_left when "
                             "sampling")
        measure_left = measure
    _check_batch(measure_left, Distribution.BORN_LEFT)
    l_l, g_l, o_l, w_l, _ = _state_variance_terms(
        pair.psi_tilde, lattice, params, eps, measure_left, dagger=True)
    return VarianceGradient(
        grad={"psi": g_r, "tilde": g_l},
        o_matrices={"psi": o_r, "tilde": o_l},
        weights={"psi": w, "tilde": w_l},
        loss=LossValue(l_right=l_r, l_left=l_l),
    )


def gradient_energy(pair, lattice, params, measure):
    """Gradient of the plain energy <H>_{|psi|^2} (Hermitian minimization
    used for the warm-start seed at zero non-Hermitian coupling)."""
    state = pair.psi
    if not state.has_derivatives:
        raise TypeError("gradient needs an ansatz with derivatives")
    _check_batch(measure, Distribution.BORN_RIGHT)
    if isinstance(measure, FullSummation):
        ws = measure
        tab = ws.table(state)
        amp2 = (tab.amplitudes * tab.amplitudes.conj()).real
        w = amp2 / amp2.sum()
        configs = ws.configs
        diag = model.diag_batch(lattice, params, configs)
        eloc = diag - params.h * tab.flip_ratios().sum(axis=1)
        sig = configs.astype(np.float64)
        tanh = tab.tanh_theta
        o_mat = np.concatenate(
            [sig.astype(np.complex128), tanh,
             (tanh[:, :, None] * sig[:, None, :]).reshape(ws.size, -1)],
            axis=1)
    else:
        configs = measure.configs
        n = measure.n_samples
        w = np.full(n, 1.0 / n)
        theta = state.theta_batch(configs)
        eloc = local_energy_batch(state, lattice, params, configs,
                                  theta=theta)
        o_mat = state.log_derivatives_batch(configs)
    e_mean = w @ eloc
    grad = o_mat.conj().T @ (w * (eloc - e_mean))
    return VarianceGradient(
        grad={"psi": grad},
        o_matrices={"psi": o_mat},
        weights={"psi": w},
        loss=LossValue(l_right=float((w @ np.abs(eloc - e_mean) ** 2).real)),
    ), complex(e_mean)
