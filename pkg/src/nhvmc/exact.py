"""Dense exact diagonalization of small non-Hermitian systems.

Provides full spectra with biorthogonally paired left/right eigenvectors,
ground-state selection by smallest real part (ties broken toward negative
imaginary part), the EP-aware spectral gap, left-right ground-state
fidelity, and exact LR/RR observables.

Eigenvalues are sorted by (Re, Im) ascending.  Left vectors satisfy
H+ |L_n> = conj(E_n) |L_n> and are rescaled so that <L_n|R_m> = delta_nm;
for clusters degenerate within ``degeneracy_tol`` the left block is re-
mixed against the right block so biorthogonality holds inside the
subspace.  At an exceptional point the pair overlap vanishes and the
matrix is defective: instead of failing, the eigenpair is flagged
EP-suspect and its condition number 1/|<L_n|R_n>| is reported.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from . import model
from .estimators import LocalOperator
from .sampler import FullSummation

__all__ = [
    "EDResult",
    "GapResult",
    "dense_matrix",
    "diagonalize",
    "ed_for",
    "ground_state",
    "spectral_gap",
    "lr_fidelity",
    "exact_observable",
    "write_spectrum_csv",
]

EIGEN_CAP = 12     # full decomposition: 2^12 x 2^12 complex =~ 268 MiB
MATVEC_CAP = 14

SORT_CONVENTION = "ascending (Re E, Im E); ground state = index 0"


@dataclass
class EDResult:
    eigenvalues: np.ndarray            # (D,) complex, sorted
    right: np.ndarray                  # (D, D), columns are unit R_n
    left: np.ndarray                   # (D, D), columns biorthogonal L_n
    pairing_condition_numbers: np.ndarray   # 1/|<L_n|R_n>| at unit norms
    ep_suspect: np.ndarray             # bool flags, |<L_n|R_n>| < 1e-6
    sort_convention: str = SORT_CONVENTION

    @property
    def dim(self):
        return self.eigenvalues.shape[0]


@dataclass
class GapResult:
    delta: float
    ground_index: int
    excluded_index: int


def dense_matrix(lattice, params, dagger=False, cap=EIGEN_CAP):
    """Dense 2^N x 2^N matrix built from the sparse row structure."""
    n = lattice.num_sites
    if n > cap:
        raise ValueError(f"dense matrix capped at {cap} sites, got N={n}")
    ws = FullSummation(lattice, cap=max(cap, MATVEC_CAP))
    dim = ws.size
    mat = np.zeros((dim, dim), dtype=np.complex128)
    diag = model.diag_batch(lattice, params, ws.configs, dagger=dagger)
    mat[np.arange(dim), np.arange(dim)] = diag
    cols = np.repeat(np.arange(dim), n)
    rows = ws.flip_index.ravel()
    mat[rows, cols] += -params.h
    return mat


def _repair_degenerate(eigvals, right, left, degeneracy_tol):
    """Re-mix left vectors inside degenerate clusters so L+ R = I there."""
    order = np.lexsort((eigvals.imag, eigvals.real))
    start = 0
    vals = eigvals[order]
    while start < len(vals):
        stop = start + 1
        while stop < len(vals) and abs(vals[stop] - vals[start]) < degeneracy_tol:
            stop += 1
        if stop - start > 1:
            idx = order[start:stop]
            overlap = left[:, idx].conj().T @ right[:, idx]
            try:
                mix = np.linalg.inv(overlap).conj().T
                left[:, idx] = left[:, idx] @ mix
            except np.linalg.LinAlgError:
                pass  # defective cluster (EP); flagged downstream
        start = stop
    return left


def diagonalize(matrix, degeneracy_tol=1e-10, ep_tol=1e-6):
    """General eigendecomposition with biorthogonal left/right pairing."""
    matrix = np.asarray(matrix, dtype=np.complex128)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError("matrix must be square")
    if not np.all(np.isfinite(matrix)):
        raise ValueError("matrix must be finite")

    eigvals, vl, vr = scipy.linalg.eig(matrix, left=True, right=True)
    # LAPACK pairs vl[:, n] with eigvals[n]; vl satisfies H+ vl = conj(w) vl
    vr = vr / np.linalg.norm(vr, axis=0)
    vl = vl / np.linalg.norm(vl, axis=0)
    vl = _repair_degenerate(eigvals, vr, vl, degeneracy_tol)
    vl = vl / np.linalg.norm(vl, axis=0)

    overlaps = np.einsum("in,in->n", vl.conj(), vr)
    with np.errstate(divide="ignore"):
        cond = 1.0 / np.abs(overlaps)
    ep_suspect = np.abs(overlaps) < ep_tol
    # rescale left columns so <L_n|R_n> = 1 where that is possible
    safe = ~ep_suspect
    vl[:, safe] = vl[:, safe] / overlaps[safe].conj()

    order = np.lexsort((eigvals.imag, eigvals.real))
    return EDResult(
        eigenvalues=eigvals[order],
        right=np.ascontiguousarray(vr[:, order]),
        left=np.ascontiguousarray(vl[:, order]),
        pairing_condition_numbers=cond[order],
        ep_suspect=ep_suspect[order],
    )


def ed_for(lattice, params, cap=EIGEN_CAP):
    return diagonalize(dense_matrix(lattice, params, cap=cap))


def ground_state(ed: EDResult):
    """(E_0, right vector, left vector) for the smallest-real-part level.

    With the (Re, Im)-ascending sort, a complex-conjugate ground pair
    resolves to the negative-imaginary member.
    """
    if ed.dim == 0:
        raise ValueError("empty spectrum")
    return ed.eigenvalues[0], ed.right[:, 0], ed.left[:, 0]


def spectral_gap(ed: EDResult):
    """Delta = min_{n >= 2} |E_n - E_0|, skipping the first excited level
    (which coalesces with the ground state at an exceptional point)."""
    if ed.dim < 3:
        raise ValueError("spectral gap needs at least 3 levels")
    deltas = np.abs(ed.eigenvalues[2:] - ed.eigenvalues[0])
    n_min = int(np.argmin(deltas)) + 2
    return GapResult(delta=float(deltas[n_min - 2]), ground_index=0,
                     excluded_index=1)


def spectral_gap_from_values(eigvals):
    """Gap from a raw (unsorted) spectrum; used for eigenvalue-only scans."""
    vals = eigvals[np.lexsort((eigvals.imag, eigvals.real))]
    if vals.shape[0] < 3:
        raise ValueError("spectral gap needs at least 3 levels")
    return float(np.abs(vals[2:] - vals[0]).min())


def lr_fidelity(ed: EDResult):
    """|<L_0|R_0>|^2 with unit-normalized ground vectors."""
    _, r0, l0 = ground_state(ed)
    l0 = l0 / np.linalg.norm(l0)
    return float(np.abs(np.vdot(l0, r0)) ** 2)


def exact_observable(ed: EDResult, operator, lattice=None, mode="LR"):
    """Ground-state expectation value of an operator (dense matrix or
    LocalOperator) in LR (biorthogonal) or RR (right-only) convention."""
    _, r0, l0 = ground_state(ed)
    if isinstance(operator, LocalOperator):
        if lattice is None:
            raise ValueError("lattice needed to apply a LocalOperator")
        ws = FullSummation(lattice, cap=MATVEC_CAP)
        op_r0 = ws.apply_operator(operator, r0)
    else:
        op_r0 = np.asarray(operator) @ r0
    bra = l0 if mode == "LR" else r0
    return complex(np.vdot(bra, op_r0) / np.vdot(bra, r0))


def write_spectrum_csv(path, ed: EDResult):
    """CSV columns (n, re, im, lr_overlap) with unit-norm pair overlaps."""
    with open(path, "w", encoding="ascii") as fh:
        fh.write("n,re,im,lr_overlap\n")
        for n in range(ed.dim):
            l_unit = ed.left[:, n] / np.linalg.norm(ed.left[:, n])
            overlap = abs(np.vdot(l_unit, ed.right[:, n]))
            ev = ed.eigenvalues[n]
            fh.write(f"{n},{ev.real:.17g},{ev.imag:.17g},{overlap:.17g}\n")
