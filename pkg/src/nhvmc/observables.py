"""Physics observables: magnetizations and the connected spin-spin
correlation function over Manhattan-distance shells.

The correlation is

    C_z(r) = (1/N) (1/N_r) sum_i ( <sz_i sz_{i+r}> - <sz_i><sz_{i+r}> ),

read as the average over all ordered site pairs at minimum-image Manhattan
distance r on the periodic lattice; N_r is the number of sites at that
distance from a given site.  Expectation values are complex in general
(LR mode); real and imaginary parts are always reported together with
their standard errors.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .estimators import (DiagonalOperator, TotalSx, _chain_means,
                         _full_overlap_guard, _reweight_factors,
                         biorthogonal_observable, local_value_batch)
from .sampler import Distribution, FullSummation, SampleBatch

__all__ = [
    "ShellTable",
    "CorrelationResult",
    "shell_table",
    "magnetization",
    "connected_correlation_z",
    "write_correlation_csv",
]

TRUNCATION_FLOOR = 5e-5


@dataclass
class ShellTable:
    """Site pairs grouped by minimum-image Manhattan distance."""

    distances: np.ndarray          # (R,) sorted distinct distances >= 1
    sizes: np.ndarray              # (R,) N_r = sites at distance r
    pairs: dict                    # r -> (M_r, 2) ordered site pairs

    @property
    def r_max(self):
        return int(self.distances.max())


def _site_coords(lattice):
    if lattice.kind == "chain1d":
        return np.arange(lattice.num_sites)[:, None], (lattice.num_sites,)
    length = lattice.extent[0]
    idx = np.arange(lattice.num_sites)
    return np.stack([idx % length, idx // length], axis=1), (length, length)


def manhattan_distance(lattice, i, j):
    """Minimum-image Manhattan distance between two sites."""
    coords, dims = _site_coords(lattice)
    d = 0
    for axis, size in enumerate(dims):
        delta = abs(int(coords[i, axis]) - int(coords[j, axis]))
        d += min(delta, size - delta)
    return d


def shell_table(lattice):
    """Group all ordered site pairs (i, j), i != j, into distance shells.

    On the torus the shells partition the N - 1 distinct nonzero offsets;
    every site sees the same shell sizes, so N_r is offset-based.
    """
    if not lattice.periodic:
        raise ValueError("shells are defined for periodic lattices")
    coords, dims = _site_coords(lattice)
    n = lattice.num_sites
    delta = np.zeros((n, n), dtype=np.int64)
    for axis, size in enumerate(dims):
        diff = np.abs(coords[:, None, axis] - coords[None, :, axis])
        delta += np.minimum(diff, size - diff)
    pairs = {}
    for r in range(1, delta.max() + 1):
        ii, jj = np.nonzero(delta == r)
        if ii.size:
            pairs[r] = np.stack([ii, jj], axis=1)
    distances = np.array(sorted(pairs), dtype=np.int64)
    sizes = np.array([pairs[r].shape[0] // n for r in distances],
                     dtype=np.int64)
    return ShellTable(distances=distances, sizes=sizes, pairs=pairs)


def magnetization(pair, lattice, measure, axis="z", mode="LR"):
    """M_alpha = (1/N) sum_i <sigma_i^alpha>; x is evaluated through
    single-flip amplitude ratios, z is diagonal."""
    n = lattice.num_sites
    if axis == "z":
        op = DiagonalOperator(lambda sig: sig.sum(axis=1) / n)
    elif axis == "x":
        op = _ScaledSx(n)
    else:
        raise ValueError(f"unknown axis {axis!r}")
    return biorthogonal_observable(pair, op, measure, mode=mode)


class _ScaledSx(TotalSx):
    def __init__(self, n):
        self.n = n

    def flip_coeff_batch(self, configs):
        return super().flip_coeff_batch(configs) / self.n


@dataclass
class CorrelationResult:
    distances: np.ndarray
    sizes: np.ndarray
    values: np.ndarray             # (R,) complex C_z(r)
    stderr_re: np.ndarray
    stderr_im: np.ndarray
    mode: str
    truncation_floor: float = TRUNCATION_FLOOR

    @property
    def truncated(self):
        """Flags values whose magnitude is below the truncation floor,
        where sampling error becomes comparable to the value itself."""
        return np.abs(self.values) < self.truncation_floor


def _pair_zz_means(sig, site_means, shells, pair_mean_fn):
    """C_z per shell given a callable estimating <sz_i sz_j> for a pair
    array, plus per-site <sz_i> means."""
    values = []
    for r in shells.distances:
        ij = shells.pairs[int(r)]
        zz = pair_mean_fn(ij)
        disconnected = site_means[ij[:, 0]] * site_means[ij[:, 1]]
        values.append((zz - disconnected).mean())
    return np.asarray(values)


def connected_correlation_z(pair, lattice, measure, mode="LR",
                            shells=None):
    """Connected z-correlations per Manhattan shell.

    Full summation is exact (zero stderr); sampled errors come from
    evaluating the full connected estimator on each independent chain.
    """
    shells = shells or shell_table(lattice)

    if isinstance(measure, FullSummation):
        ws = measure
        psi = ws.table(pair.psi).amplitudes
        if mode == "LR":
            psi_t = ws.table(pair.tilde).amplitudes
            den = _full_overlap_guard(psi_t, psi)
            weights = (psi_t.conj() * psi) / den
        else:
            weights = (psi.conj() * psi).real
            weights = weights / weights.sum()
        sig = ws.configs.astype(np.float64)
        site_means = weights @ sig
        zz_mean = lambda ij: (weights[:, None]
                              * sig[:, ij[:, 0]] * sig[:, ij[:, 1]]).sum(0)
        values = _pair_zz_means(sig, site_means, shells, zz_mean)
        zero = np.zeros_like(values.real)
        return CorrelationResult(shells.distances, shells.sizes, values,
                                 zero, zero.copy(), mode)

    batch: SampleBatch = measure
    sig = batch.configs.astype(np.float64)
    if mode == "LR":
        t = _reweight_factors(batch)
    else:
        if batch.distribution != Distribution.BORN_RIGHT:
            raise ValueError("sampled RR correlations need born_right")
        t = np.ones(batch.n_samples, dtype=np.complex128)

    # per-chain connected estimates; chains are independent
    n_chains = batch.n_chains
    t_c = _chain_means(t, batch.chain_ids, n_chains)
    per_chain = np.empty((n_chains, len(shells.distances)),
                         dtype=np.complex128)
    site_c = np.stack([
        _chain_means(t * sig[:, i], batch.chain_ids, n_chains)
        for i in range(lattice.num_sites)], axis=1) / t_c[:, None]
    for col, r in enumerate(shells.distances):
        ij = shells.pairs[int(r)]
        zz_c = np.stack([
            _chain_means(t * sig[:, i] * sig[:, j], batch.chain_ids,
                         n_chains)
            for i, j in ij], axis=1) / t_c[:, None]
        conn = zz_c - site_c[:, ij[:, 0]] * site_c[:, ij[:, 1]]
        per_chain[:, col] = conn.mean(axis=1)
    values = per_chain.mean(axis=0)
    scale = np.sqrt(n_chains)
    stderr_re = per_chain.real.std(axis=0, ddof=1) / scale
    stderr_im = per_chain.imag.std(axis=0, ddof=1) / scale
    return CorrelationResult(shells.distances, shells.sizes, values,
                             stderr_re, stderr_im, mode)


def write_correlation_csv(path, result: CorrelationResult):
    """CSV: (r, N_r, re, im, stderr_re, stderr_im, mode, truncation_flag)."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("r,N_r,re,im,stderr_re,stderr_im,mode,truncation_flag\n")
        flags = result.truncated
        for col in range(len(result.distances)):
            v = result.values[col]
            fh.write(f"{result.distances[col]},{result.sizes[col]},"
                     f"{v.real:.17g},{v.imag:.17g},"
                     f"{result.stderr_re[col]:.17g},"
                     f"{result.stderr_im[col]:.17g},"
                     f"{result.mode},{int(flags[col])}\n")
