"""Metropolis-Hastings sampling and exact full-basis enumeration.

Three unnormalized target weights are supported, matching the estimator
variants built on them:

* ``born_right``   w(sigma) = |psi(sigma)|^2
* ``born_left``    w(sigma) = |psi~(sigma)|^2
* ``product_abs``  w(sigma) = |psi~(sigma) psi(sigma)|

Proposals flip one uniformly chosen spin; one sweep is N proposals.  Chains
are independent, each driven by its own generator spawned from
(seed, stream_key, chain_id), so batches are reproducible bit-for-bit for a
given backend.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kernels
from .ansatz import RBM, DualMode, StatePair

__all__ = [
    "Distribution",
    "SamplerConfig",
    "SampleBatch",
    "FullSummation",
    "run_chains",
    "full_summation_enumerate",
]

DISTRIBUTIONS = ("born_right", "born_left", "product_abs")


class Distribution:
    BORN_RIGHT = "born_right"
    BORN_LEFT = "born_left"
    PRODUCT_ABS = "product_abs"


@dataclass
class SamplerConfig:
    n_chains: int = 16
    n_samples_per_chain: int = 64
    n_burnin: int = 100          # sweeps discarded before recording
    thinning: int = 1            # sweeps between records
    seed: int = 0
    distribution: str = Distribution.BORN_RIGHT

    def __post_init__(self):
        if self.n_chains <= 0 or self.n_samples_per_chain <= 0:
            raise ValueError("chain and sample counts must be positive")
        if self.n_burnin < 0 or self.thinning <= 0:
            raise ValueError("n_burnin must be >= 0 and thinning > 0")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown distribution {self.distribution!r}")


@dataclass
class SampleBatch:
    """Recorded configurations with cached log-amplitudes."""

    configs: np.ndarray            # (S, N) int8
    log_psi: np.ndarray            # (S,) complex
    log_psi_tilde: np.ndarray      # (S,) complex
    chain_ids: np.ndarray          # (S,) int
    acceptance_rate: float
    distribution: str

    @property
    def n_samples(self):
        return self.configs.shape[0]

    @property
    def n_chains(self):
        return int(self.chain_ids.max()) + 1 if self.n_samples else 0


def _weight_states(pair: StatePair, distribution):
    """States whose log-amplitudes enter the target weight.

    Returns (state, second_state_or_None); the weight is |psi|^2 for a
    single state and |psi_a psi_b| for a pair.
    """
    if distribution == Distribution.BORN_RIGHT:
        return pair.psi, None
    if distribution == Distribution.BORN_LEFT:
        return pair.tilde, None
    if pair.dual_mode is DualMode.PT_CONJUGATE:
        # |psi~ psi| = |psi|^2 when psi~ = conj(psi)
        return pair.psi, None
    return pair.psi, pair.tilde


def _log_weight(state, second, configs):
    lw = 2.0 * state.log_psi_batch(configs).real
    if second is not None:
        lw = 0.5 * lw + second.log_psi_batch(configs).real
    return lw


def _chain_rngs(seed, n_chains, stream_key=0):
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFF, int(stream_key)])
    return [np.random.default_rng(child) for child in ss.spawn(n_chains)]


def _draw_initial(state, second, rngs, n_sites, max_retries=100):
    spins = np.empty((len(rngs), n_sites), dtype=np.int8)
    for c, rng in enumerate(rngs):
        for attempt in range(max_retries + 1):
            cand = (1 - 2 * rng.integers(0, 2, n_sites)).astype(np.int8)
            if np.isfinite(_log_weight(state, second, cand[None, :])[0]):
                spins[c] = cand
                break
        else:
            raise RuntimeError("could not find an initial configuration "
                               "with nonzero weight")
    return spins


def _sweep_segment(spins, state, second, rngs, n_sweeps):
    """Advance every chain by n_sweeps sweeps; returns accepted count."""
    n_chains, n_sites = spins.shape
    n_props = n_sweeps * n_sites
    if n_props == 0:
        return 0
    sites = np.empty((n_chains, n_props), dtype=np.int64)
    unifs = np.empty((n_chains, n_props), dtype=np.float64)
    for c, rng in enumerate(rngs):
        sites[c] = rng.integers(0, n_sites, n_props)
        unifs[c] = rng.random(n_props)

    if isinstance(state, RBM) and (second is None or isinstance(second, RBM)):
        if second is None:
            return kernels.metropolis_sweep(spins, state.a, state.b, state.w,
                                            None, None, None, sites, unifs)
        return kernels.metropolis_sweep(spins, state.a, state.b, state.w,
                                        second.a, second.b, second.w,
                                        sites, unifs)

    # generic ansatz path (e.g. exact vectors): same stream consumption
    rows = np.arange(n_chains)
    logw = _log_weight(state, second, spins)
    accepted = 0
    log_unifs = np.log(unifs)
    for t in range(n_props):
        i = sites[:, t]
        cand = spins.copy()
        cand[rows, i] = -cand[rows, i]
        logw_cand = _log_weight(state, second, cand)
        acc = log_unifs[:, t] < (logw_cand - logw)
        spins[acc] = cand[acc]
        logw[acc] = logw_cand[acc]
        accepted += int(acc.sum())
    return accepted


def run_chains(pair, lattice, config: SamplerConfig, initial_spins=None,
               n_burnin=None, stream_key=0):
    """Sample a batch from the configured distribution.

    Returns (SampleBatch, final_spins); pass final_spins back as
    ``initial_spins`` (with a reduced ``n_burnin``) to continue the chains
    across optimizer steps.
    """
    n_sites = lattice.num_sites
    state, second = _weight_states(pair, config.distribution)
    rngs = _chain_rngs(config.seed, config.n_chains, stream_key)

    if initial_spins is None:
        spins = _draw_initial(state, second, rngs, n_sites)
    else:
        spins = np.ascontiguousarray(initial_spins, dtype=np.int8).copy()
        if spins.shape != (config.n_chains, n_sites):
            raise ValueError("initial_spins shape mismatch")

    burn = config.n_burnin if n_burnin is None else n_burnin
    accepted = _sweep_segment(spins, state, second, rngs, burn)
    n_props = burn * n_sites * config.n_chains

    records = np.empty(
        (config.n_samples_per_chain, config.n_chains, n_sites), dtype=np.int8)
    for r in range(config.n_samples_per_chain):
        accepted += _sweep_segment(spins, state, second, rngs, config.thinning)
        n_props += config.thinning * n_sites * config.n_chains
        records[r] = spins

    configs = records.reshape(-1, n_sites)
    chain_ids = np.tile(np.arange(config.n_chains),
                        config.n_samples_per_chain)
    batch = SampleBatch(
        configs=configs,
        log_psi=pair.psi.log_psi_batch(configs),
        log_psi_tilde=pair.log_tilde_batch(configs),
        chain_ids=chain_ids,
        acceptance_rate=accepted / n_props if n_props else 0.0,
        distribution=config.distribution,
    )
    return batch, spins


class StateTable:
    """Per-state evaluation tables over a full enumeration.

    Because flipping spin i of basis index c lands on basis index
    c XOR (1 << i), which is itself tabulated, every single-flip quantity
    (amplitude ratios, tanh at flipped hidden arguments) is a gather into
    these tables; no per-flip transcendentals are ever evaluated on the
    exact path.
    """

    def __init__(self, ws, state):
        self.ws = ws
        self.state = state
        if isinstance(state, RBM):
            self.theta = state.theta_batch(ws.configs)
            sig = ws.configs.astype(np.float64)
            self.log_psi = sig @ state.a + kernels.log2cosh(
                self.theta).sum(axis=1)
        else:
            self.theta = None
            self.log_psi = state.log_psi_batch(ws.configs)
        self._amplitudes = None
        self._tanh = None

    @property
    def amplitudes(self):
        """Amplitudes rescaled by exp(-max Re log psi); the global scale
        cancels in every estimator."""
        if self._amplitudes is None:
            logpsi = self.log_psi
            finite = np.isfinite(logpsi.real)
            if not finite.any():
                raise ValueError("state has no support")
            amp = np.zeros(self.ws.size, dtype=np.complex128)
            amp[finite] = np.exp(logpsi[finite] - logpsi.real[finite].max())
            self._amplitudes = amp
        return self._amplitudes

    @property
    def tanh_theta(self):
        if self.theta is None:
            raise TypeError("no hidden-unit table for this ansatz")
        if self._tanh is None:
            self._tanh = np.tanh(self.theta)
        return self._tanh

    def flip_ratios(self):
        """psi(sigma^i)/psi(sigma) for every basis state and site."""
        amp = self.amplitudes
        with np.errstate(divide="ignore", invalid="ignore"):
            return amp[self.ws.flip_index] / amp[:, None]

    def flip_tanh(self):
        """tanh(theta) at every flipped configuration, by gather."""
        return self.tanh_theta[self.ws.flip_index]


class FullSummation:
    """Exact enumeration workspace over all 2^N configurations.

    Caches the +-1 configuration table and the index table of single-spin
    flips (index XOR bit), which makes applying any diagonal-plus-single-
    flip operator a gather.  Rejects lattices above ``cap`` sites.
    """

    _TABLE_CACHE_SIZE = 6

    def __init__(self, lattice, cap=14):
        n = lattice.num_sites
        if n > cap:
            raise ValueError(f"full summation capped at {cap} sites "
                             f"(requested N={n}); raise cap explicitly "
                             "if you really want this")
        self.lattice = lattice
        self.n_sites = n
        self.size = 1 << n
        idx = np.arange(self.size, dtype=np.int64)
        bits = (idx[:, None] >> np.arange(n, dtype=np.int64)) & 1
        self.configs = (1 - 2 * bits).astype(np.int8)
        self.flip_index = idx[:, None] ^ (1 << np.arange(n, dtype=np.int64))
        self._tables = []

    def table(self, state):
        """StateTable for ``state``, cached by object identity (states are
        copy-on-write, so identity tracks parameter versions)."""
        for cached_state, tab in self._tables:
            if cached_state is state:
                return tab
        tab = StateTable(self, state)
        self._tables.append((state, tab))
        if len(self._tables) > self._TABLE_CACHE_SIZE:
            self._tables.pop(0)
        return tab

    def amplitudes(self, state):
        return self.table(state).amplitudes

    def apply_operator(self, operator, amplitudes):
        """(O psi) vector for an operator with diagonal plus single-flip
        row structure (see estimators.LocalOperator)."""
        out = operator.diag_batch(self.configs) * amplitudes
        coeff = operator.flip_coeff_batch(self.configs)
        if coeff is not None:
            out = out + (coeff * amplitudes[self.flip_index]).sum(axis=1)
        return out


def full_summation_enumerate(lattice, cap=14):
    """Iterate over every configuration exactly once (index order)."""
    ws = FullSummation(lattice, cap=cap)
    for row in ws.configs:
        yield row
