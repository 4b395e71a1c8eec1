"""Wavefunction representations.

Two ansatz classes share one small interface (``log_psi_batch`` and, when
available, derivative/flip statistics):

* ``RBM`` -- complex restricted Boltzmann machine, log psi(sigma) =
  a . sigma + sum_j log 2 cosh((W sigma + b)_j).  Parameters are complex
  and psi is holomorphic in them; all gradients elsewhere in the package
  are Wirtinger derivatives with respect to the conjugate parameters.
* ``ExactVectorAnsatz`` -- a frozen amplitude vector over all 2^N
  configurations, used to load exact-diagonalization eigenvectors into the
  estimator machinery for zero-variance checks.  It has no derivatives.

A state and its dual are bundled by ``StatePair``.  In ``pt_conjugate``
mode the dual is psi~(sigma) = conj(psi(sigma)), which for a complex-
symmetric Hamiltonian (our model at h_z = 0) is exactly the matching left
state; in ``independent`` mode the dual carries its own parameter set.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import kernels

__all__ = [
    "RBM",
    "ExactVectorAnsatz",
    "DualMode",
    "StatePair",
    "DerivativesUnavailableError",
    "ZeroAmplitudeError",
    "dual_log_psi",
    "init_params",
    "save_snapshot",
    "load_snapshot",
    "config_to_index",
    "index_to_config",
]


class DerivativesUnavailableError(TypeError):
    """The ansatz does not define logarithmic parameter derivatives."""


class ZeroAmplitudeError(ZeroDivisionError):
    """A quantity was requested at a configuration with psi(sigma) = 0."""


class DualMode(str, Enum):
    INDEPENDENT = "independent"
    PT_CONJUGATE = "pt_conjugate"


class RBM:
    """Complex RBM with visible biases a (N,), hidden biases b (H,) and
    weights W (H, N), H = alpha * N.

    Parameter vector order everywhere is (a, b, W row-major).
    """

    def __init__(self, a, b, w):
        self.a = np.ascontiguousarray(a, dtype=np.complex128)
        self.b = np.ascontiguousarray(b, dtype=np.complex128)
        self.w = np.ascontiguousarray(w, dtype=np.complex128)
        n, h = self.a.shape[0], self.b.shape[0]
        if self.w.shape != (h, n):
            raise ValueError(f"W has shape {self.w.shape}, expected {(h, n)}")
        if h % n != 0:
            raise ValueError(f"hidden size {h} is not a multiple of N={n}")
        if not (np.all(np.isfinite(self.a)) and np.all(np.isfinite(self.b))
                and np.all(np.isfinite(self.w))):
            raise ValueError("RBM parameters must be finite")

    @property
    def n_sites(self):
        return self.a.shape[0]

    @property
    def n_hidden(self):
        return self.b.shape[0]

    @property
    def alpha(self):
        return self.n_hidden // self.n_sites

    @property
    def n_params(self):
        return self.n_sites + self.n_hidden + self.n_hidden * self.n_sites

    @property
    def has_derivatives(self):
        return True

    def to_vector(self):
        return np.concatenate([self.a, self.b, self.w.ravel()])

    @classmethod
    def from_vector(cls, vec, n_sites, alpha):
        n, h = n_sites, alpha * n_sites
        if vec.shape != (n + h + h * n,):
            raise ValueError("parameter vector has wrong length")
        return cls(vec[:n], vec[n:n + h], vec[n + h:].reshape(h, n))

    def updated(self, delta):
        """New RBM with parameters shifted by ``delta`` (copy-on-write)."""
        return RBM.from_vector(self.to_vector() + delta,
                               self.n_sites, self.alpha)

    def conjugate(self):
        return RBM(self.a.conj(), self.b.conj(), self.w.conj())

    def theta_batch(self, configs):
        theta, _ = kernels.rbm_theta_logpsi(configs, self.a, self.b, self.w)
        return theta

    def log_psi_batch(self, configs):
        _, logpsi = kernels.rbm_theta_logpsi(configs, self.a, self.b, self.w)
        return logpsi

    def log_psi(self, config):
        return complex(self.log_psi_batch(np.asarray(config)[None, :])[0])

    def log_derivatives_batch(self, configs):
        """O_j(sigma) = d log psi / d theta_j, shape (S, n_params).

        O_a = sigma, O_b = tanh(theta), O_W[j, i] = sigma_i tanh(theta_j).
        """
        sig = np.asarray(configs, dtype=np.float64)
        tanh = np.tanh(self.theta_batch(configs))
        o_w = (tanh[:, :, None] * sig[:, None, :]).reshape(sig.shape[0], -1)
        return np.concatenate(
            [sig.astype(np.complex128), tanh, o_w], axis=1)

    def log_derivatives(self, config):
        return self.log_derivatives_batch(np.asarray(config)[None, :])[0]

    def flip_stats(self, configs, theta=None, with_tanh=False):
        """Single-flip log-amplitude differences (and optionally tanh at the
        flipped hidden arguments); see kernels.rbm_flip_stats."""
        if theta is None:
            theta = self.theta_batch(configs)
        return kernels.rbm_flip_stats(configs, theta, self.a, self.w,
                                      with_tanh=with_tanh)


class ExactVectorAnsatz:
    """Wavefunction given by an explicit amplitude vector of length 2^N.

    Amplitude index convention: configuration sigma maps to
    sum_i (1 - sigma_i) / 2 * 2^i, i.e. all-up is index 0 and flipping
    site i toggles bit i.
    """

    def __init__(self, amplitudes):
        amp = np.ascontiguousarray(amplitudes, dtype=np.complex128)
        n = int(np.log2(amp.shape[0]))
        if 2 ** n != amp.shape[0]:
            raise ValueError("amplitude vector length must be a power of 2")
        self.amplitudes = amp
        self.n_sites = n
        self.has_zero_amplitudes = bool(np.any(amp == 0))

    @property
    def has_derivatives(self):
        return False

    def conjugate(self):
        return ExactVectorAnsatz(self.amplitudes.conj())

    def log_psi_batch(self, configs):
        idx = config_to_index(configs)
        amp = self.amplitudes[idx]
        with np.errstate(divide="ignore", invalid="ignore"):
            out = np.log(amp.astype(np.complex128))
        out[amp == 0] = complex("-inf")
        return out

    def log_psi(self, config):
        val = self.log_psi_batch(np.asarray(config)[None, :])[0]
        if not np.isfinite(val.real):
            raise ZeroAmplitudeError("psi(sigma) = 0 at the queried sigma")
        return complex(val)

    def log_derivatives_batch(self, configs):
        raise DerivativesUnavailableError(
            "exact-vector ansatz has no parameter derivatives")

    log_derivatives = log_derivatives_batch


def config_to_index(configs):
    """Map +-1 configurations (..., N) to basis indices (bit i = site i down)."""
    sig = np.asarray(configs)
    n = sig.shape[-1]
    bits = ((1 - sig) // 2).astype(np.int64)
    weights = (1 << np.arange(n, dtype=np.int64))
    return bits @ weights


def index_to_config(indices, n_sites):
    """Inverse of config_to_index, returning int8 +-1 spins."""
    idx = np.asarray(indices, dtype=np.int64)
    bits = (idx[..., None] >> np.arange(n_sites, dtype=np.int64)) & 1
    return (1 - 2 * bits).astype(np.int8)


def dual_log_psi(ansatz, config, dual_mode, second=None,
                 hamiltonian_pt_symmetric=True):
    """Log-amplitude of the dual state at one configuration.

    pt_conjugate returns conj(log psi(sigma)) and requires the Hamiltonian
    to be PT pseudo-Hermitian (anti-linear metric = conjugation in the sz
    basis); independent mode evaluates the second parameter set.
    """
    mode = DualMode(dual_mode)
    if mode is DualMode.PT_CONJUGATE:
        if not hamiltonian_pt_symmetric:
            raise ValueError("pt_conjugate dual requires a PT pseudo-"
                             "Hermitian Hamiltonian (h_z = 0)")
        return np.conj(ansatz.log_psi(config))
    if second is None:
        raise ValueError("independent dual mode needs a second state")
    return second.log_psi(config)


@dataclass
class StatePair:
    """A variational state together with its dual complement."""

    psi: object
    dual_mode: DualMode = DualMode.PT_CONJUGATE
    psi_tilde: object = None

    def __post_init__(self):
        self.dual_mode = DualMode(self.dual_mode)
        if self.dual_mode is DualMode.INDEPENDENT and self.psi_tilde is None:
            raise ValueError("independent dual mode needs psi_tilde")
        self._tilde_cache = None

    @property
    def tilde(self):
        """The dual state as a standalone ansatz object (cached)."""
        if self.dual_mode is DualMode.PT_CONJUGATE:
            if self._tilde_cache is None:
                self._tilde_cache = self.psi.conjugate()
            return self._tilde_cache
        return self.psi_tilde

    def log_tilde_batch(self, configs):
        if self.dual_mode is DualMode.PT_CONJUGATE:
            return np.conj(self.psi.log_psi_batch(configs))
        return self.psi_tilde.log_psi_batch(configs)

    def replaced(self, psi=None, psi_tilde=None):
        return StatePair(psi if psi is not None else self.psi,
                         self.dual_mode,
                         psi_tilde if psi_tilde is not None
                         else self.psi_tilde)


def init_params(seed, scale, n_sites, alpha=1):
    """Random RBM with i.i.d. complex Gaussian entries, standard deviation
    ``scale`` per real component, deterministic in ``seed``."""
    if scale <= 0:
        raise ValueError("scale must be positive")
    rng = np.random.default_rng(seed)
    n, h = n_sites, alpha * n_sites
    total = n + h + h * n
    vec = rng.normal(0.0, scale, total) + 1j * rng.normal(0.0, scale, total)
    return RBM.from_vector(vec, n_sites, alpha)


def save_snapshot(path, rbm, dual_mode, seed, rbm_tilde=None):
    """Text snapshot of RBM parameters, exact to 17 significant digits."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write(f"nhvmc-params n_sites={rbm.n_sites} alpha={rbm.alpha} "
                 f"dual_mode={DualMode(dual_mode).value} seed={seed}\n")
        for block in ([rbm] if rbm_tilde is None else [rbm, rbm_tilde]):
            for z in block.to_vector():
                fh.write(f"{z.real:.17g} {z.imag:.17g}\n")


def load_snapshot(path):
    """Load a snapshot; returns (StatePair, header dict)."""
    with open(path, encoding="ascii") as fh:
        header = fh.readline().split()
        if not header or header[0] != "nhvmc-params":
            raise ValueError(f"{path} is not a parameter snapshot")
        meta = dict(item.split("=", 1) for item in header[1:])
        values = [complex(float(r), float(i))
                  for r, i in (line.split() for line in fh if line.strip())]
    n, alpha = int(meta["n_sites"]), int(meta["alpha"])
    mode = DualMode(meta["dual_mode"])
    per_state = n + alpha * n + alpha * n * n
    vec = np.asarray(values, dtype=np.complex128)
    if mode is DualMode.INDEPENDENT:
        if vec.shape[0] != 2 * per_state:
            raise ValueError("snapshot length does not match two states")
        pair = StatePair(RBM.from_vector(vec[:per_state], n, alpha), mode,
                         RBM.from_vector(vec[per_state:], n, alpha))
    else:
        if vec.shape[0] != per_state:
            raise ValueError("snapshot length does not match header")
        pair = StatePair(RBM.from_vector(vec, n, alpha), mode)
    return pair, meta
