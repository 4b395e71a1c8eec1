"""Lattice geometry and the transverse-field Ising model with an imaginary
longitudinal field.

The Hamiltonian is

    H = -lam * sum_<i,j> sz_i sz_j - h * sum_i sx_i
        - i * k_eff * sum_i sz_i - h_z * sum_i sz_i,

with k_eff = k * nh_scale.  In the sz product basis every row has a diagonal
entry plus exactly N single-spin-flip entries of value -h, which is what
``hamiltonian_row`` exposes.  ``h_z`` (default 0) gives the Hermitian
counterpart obtained by making the longitudinal field real; it breaks the
PT pseudo-Hermiticity that the conjugate-dual mode relies on.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "LatticeSpec",
    "HamiltonianParams",
    "HamiltonianRow",
    "build_lattice",
    "hamiltonian_row",
    "dagger_row",
    "diag_batch",
    "lower_bound_anchor",
    "box_corner_anchor",
    "validate_config",
]


@dataclass(frozen=True)
class LatticeSpec:
    """Geometry of a periodic chain or square torus.

    ``bonds`` lists each nearest-neighbour pair (i, j) with i < j exactly
    once; ``coordination`` is the number of nearest neighbours of a site.
    """

    kind: str
    extent: tuple[int, ...]
    periodic: bool
    num_sites: int
    coordination: int
    bonds: tuple[tuple[int, int], ...]

    def bond_arrays(self):
        """Bond endpoints as two int arrays, for vectorized diagonals."""
        if not self.bonds:
            return (np.zeros(0, dtype=np.intp),) * 2
        arr = np.asarray(self.bonds, dtype=np.intp)
        return arr[:, 0], arr[:, 1]


def build_lattice(kind, extent, periodic=True):
    """Construct a LatticeSpec.

    kind is "chain1d" (extent: L or (L,)) or "square2d" (extent: (Lx, Ly)
    with Lx == Ly).  Each nearest-neighbour pair is enumerated once, in
    row-major site order with the +x then +y neighbour per site.
    """
    if isinstance(extent, int):
        extent = (extent,)
    extent = tuple(int(e) for e in extent)
    if any(e < 2 for e in extent):
        raise ValueError(f"extent must be >= 2 per dimension, got {extent}")

    if kind == "chain1d":
        if len(extent) != 1:
            raise ValueError("chain1d takes a single extent")
        (length,) = extent
        if not periodic:
            bonds = tuple((i, i + 1) for i in range(length - 1))
            coord = 1 if length == 2 else 2
            return LatticeSpec(kind, extent, False, length, coord, bonds)
        if length == 2:
            # a 2-site ring has a single distinct bond
            return LatticeSpec(kind, extent, True, 2, 1, ((0, 1),))
        bonds = tuple((i, i + 1) for i in range(length - 1)) + ((0, length - 1),)
        return LatticeSpec(kind, extent, True, length, 2, bonds)

    if kind == "square2d":
        if len(extent) == 1:
            extent = (extent[0], extent[0])
        if len(extent) != 2 or extent[0] != extent[1]:
            raise ValueError(f"square2d takes an L x L extent, got {extent}")
        if not periodic:
            raise ValueError("square2d supports periodic boundaries only")
        length = extent[0]
        n = length * length
        seen = set()
        for y in range(length):
            for x in range(length):
                i = y * length + x
                for j in (y * length + (x + 1) % length,
                          ((y + 1) % length) * length + x):
                    seen.add((min(i, j), max(i, j)))
        bonds = tuple(sorted(seen))
        # for L=2 the +x and -x neighbour coincide, halving the bond count
        coord = 4 if length > 2 else 2
        return LatticeSpec(kind, extent, True, n, coord, bonds)

    raise ValueError(f"unknown lattice kind {kind!r}")


@dataclass(frozen=True)
class HamiltonianParams:
    """Couplings of the model; nh_scale rescales only the imaginary field."""

    lam: float
    h: float
    k: float
    nh_scale: float = 1.0
    h_z: float = 0.0

    @property
    def k_eff(self):
        return self.k * self.nh_scale

    @property
    def pt_symmetric(self):
        """True when the conjugate-dual construction is valid (h_z = 0)."""
        return self.h_z == 0.0

    def with_nh_scale(self, nh_scale):
        return replace(self, nh_scale=float(nh_scale))


@dataclass(frozen=True)
class HamiltonianRow:
    """One row of H in the sz basis: <sigma|H|sigma> plus the single-flip
    elements (flipped_site, <sigma|H|flip_i sigma>)."""

    diag: complex
    offdiag: tuple[tuple[int, complex], ...]


def validate_config(config, num_sites):
    config = np.asarray(config)
    if config.shape != (num_sites,):
        raise ValueError(f"config has shape {config.shape}, "
                         f"expected ({num_sites},)")
    if not np.all(np.abs(config) == 1):
        raise ValueError("config entries must be +-1")
    return config


def diag_batch(lattice, params, configs, dagger=False):
    """Diagonal matrix elements for a (S, N) batch of configurations."""
    sig = np.asarray(configs, dtype=np.float64)
    bi, bj = lattice.bond_arrays()
    zz = (sig[..., bi] * sig[..., bj]).sum(axis=-1)
    sz = sig.sum(axis=-1)
    k_eff = -params.k_eff if dagger else params.k_eff
    return -params.lam * zz - params.h_z * sz - 1j * k_eff * sz


def hamiltonian_row(lattice, params, config):
    """Sparse row access: diagonal element and all single-flip elements."""
    config = validate_config(config, lattice.num_sites)
    diag = complex(diag_batch(lattice, params, config[None, :])[0])
    offdiag = tuple((i, complex(-params.h)) for i in range(lattice.num_sites))
    return HamiltonianRow(diag, offdiag)


def dagger_row(lattice, params, config):
    """Row of H-dagger: conjugated diagonal, unchanged flip elements."""
    row = hamiltonian_row(lattice, params, config)
    return HamiltonianRow(row.diag.conjugate(), row.offdiag)


def lower_bound_anchor(lattice, params, override=None):
    """Spectrum anchor E0 = -N (lam * xi / 2 - h - i k_eff), or ``override``.

    The formula is kept exactly in this form even where it fails to bound
    the real spectrum from below (h > lam * xi / 2); callers that need a
    genuine bound should pass an override such as -N (lam * xi / 2 + |h|)
    - i N |k_eff|.
    """
    if override is not None:
        return complex(override)
    n, xi = lattice.num_sites, lattice.coordination
    return -n * (params.lam * xi / 2.0 - params.h - 1j * params.k_eff)


def box_corner_anchor(lattice, params):
    """Conservative anchor at the corner of the Pauli-term value box:
    every term of H has single-site spectrum in [-1, 1], so the real part
    of any eigenvalue is >= -N (lam * xi / 2 + |h|) and the imaginary part
    is >= -N |k_eff|."""
    n, xi = lattice.num_sites, lattice.coordination
    return (-n * (params.lam * xi / 2.0 + abs(params.h))
            - 1j * n * abs(params.k_eff))
