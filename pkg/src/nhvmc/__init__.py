"""Variational Monte Carlo for non-Hermitian spin Hamiltonians.

Ground states (smallest real part of the energy) of the transverse-field
Ising model with an imaginary longitudinal field, found by self-consistent
biorthogonal variance minimization over a complex RBM ansatz, with a dense
exact-diagonalization oracle for validation.
"""

from .ansatz import (RBM, DualMode, ExactVectorAnsatz, StatePair,
                     init_params, load_snapshot, save_snapshot)
from .estimators import (EnergyEstimate, LossValue, OverlapCollapseError,
                         biorthogonal_energy, biorthogonal_observable,
                         gradient_variance, local_energy,
                         variance_loss_left, variance_loss_right)
from .exact import (EDResult, GapResult, dense_matrix, diagonalize, ed_for,
                    exact_observable, ground_state, lr_fidelity,
                    spectral_gap)
from .model import (HamiltonianParams, HamiltonianRow, LatticeSpec,
                    build_lattice, dagger_row, hamiltonian_row,
                    lower_bound_anchor)
from .sampler import (FullSummation, SampleBatch, SamplerConfig,
                      full_summation_enumerate, run_chains)

__version__ = "0.1.0"
