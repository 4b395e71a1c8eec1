"""Optimization loops: the self-consistent scheme, the energy-as-a-
parameter baseline, fixed-start and warm-start schedules, stochastic
reconfiguration, and infidelity fitting.

One step of the self-consistent scheme refreshes the shared energy
estimate eps = <psi~|H|psi>/<psi~|psi> and then updates the parameters of
the joint variance loss at that fixed eps; the baseline instead treats eps
as a parameter updated by gradient descent on the single-state loss.  The
fixed-start schedule pins eps to an anchor for F steps, blends it into the
self-consistent estimate over T steps via

    eps_used = alpha_i * E0 + (1 - alpha_i) * eps_sc,  alpha_i = (T - i)/T,

and then runs M self-consistent steps.  The warm-start schedule sweeps the
scale of the non-Hermitian term, seeding each point with the previous
solution; at scale 0 the seed is plain Hermitian energy minimization.
"""

from __future__ import annotations

import json
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
from threadpoolctl import threadpool_limits

from . import estimators, model
from .ansatz import RBM, DualMode, StatePair
from .estimators import LossValue, OverlapCollapseError
from .sampler import Distribution, FullSummation, SamplerConfig, run_chains

__all__ = [
    "OptimizerConfig",
    "ScheduleConfig",
    "EstimatorConfig",
    "RunRecord",
    "NumericalFailure",
    "VmcDriver",
    "sr_precondition",
    "run_self_consistent",
    "run_fixed_start",
    "run_warm_start",
    "run_energy_as_parameter",
    "run_infidelity_fit",
    "InfidelityResult",
]


class NumericalFailure(RuntimeError):
    """Optimization produced non-finite quantities twice in a row."""


@dataclass
class OptimizerConfig:
    update_rule: str = "sr"          # sr | adam | sgd
    learning_rate: float = 5e-3
    sr_shift: float = 1e-3           # diagonal regularizer delta
    max_grad_norm: float | None = 10.0
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.update_rule == "sr" and self.sr_shift <= 0:
            raise ValueError("sr_shift must be positive for SR")
        if self.update_rule not in ("sr", "adam", "sgd"):
            raise ValueError(f"unknown update rule {self.update_rule!r}")


@dataclass
class ScheduleConfig:
    mode: str = "self_consistent"
    m_steps: int = 1000              # self-consistent steps
    f_steps: int = 0                 # fixed-anchor steps
    t_steps: int = 0                 # transition steps
    e0_anchor: complex | None = None  # None -> lower_bound_anchor
    warm_k_grid: tuple = ()          # nh_scale values, monotone!
    direction: str = "forward"
    eps_stride: int = 1
    two_step_imag_first: int = 0     # e-as-param: steps with Re eps pinned
    two_step_re_floor: float | None = None

    def __post_init__(self):
        if min(self.m_steps, self.f_steps, self.t_steps) < 0:
            raise ValueError("step counts must be nonnegative")
        grid = tuple(self.warm_k_grid)
        if grid:
            diffs = np.diff(grid)
            if self.direction == "forward" and np.any(diffs <= 0):
                raise ValueError("forward warm_k_grid must increase")
            if self.direction == "backward" and np.any(diffs >= 0):
                raise ValueError("backward warm_k_grid must decrease")


@dataclass
class EstimatorConfig:
    mode: str = "full_summation"     # full_summation | sampled
    cap: int = 14
    sampler: SamplerConfig = field(default_factory=SamplerConfig)
    reequilibration_sweeps: int = 10  # burn-in between steps (first step
                                      # uses the sampler's full n_burnin)


@dataclass
class RunRecord:
    step: int
    epsilon: complex
    loss: LossValue
    acceptance_rate: float
    grad_norm: float
    wall_time: float
    phase_tag: str

    def to_json(self):
        return json.dumps({
            "step": self.step,
            "eps_re": self.epsilon.real,
            "eps_im": self.epsilon.imag,
            "loss": self.loss.total,
            "loss_stderr": self.loss.stderr,
            "acc": self.acceptance_rate,
            "grad_norm": self.grad_norm,
            "phase_tag": self.phase_tag,
            "wall_time": self.wall_time,
        })


def sr_precondition(grad, o_matrix, weights, delta):
    """Solve (S + delta I) x = grad with the quantum geometric tensor
    S = <O+ O> - <O>+<O> over the sampling weights."""
    mean_o = weights @ o_matrix
    centered = o_matrix - mean_o
    s_mat = centered.conj().T @ (weights[:, None] * centered)
    s_mat[np.diag_indices_from(s_mat)] += delta
    try:
        return scipy.linalg.solve(s_mat, grad, assume_a="pos")
    except (scipy.linalg.LinAlgError, np.linalg.LinAlgError):
        warnings.warn("SR solve failed; falling back to grad/delta")
        return grad / delta


class _AdamState:
    def __init__(self, size):
        self.m = np.zeros(size, dtype=np.complex128)
        self.v = np.zeros(size, dtype=np.float64)
        self.t = 0

    def update(self, grad, beta1=0.9, beta2=0.999, eps=1e-8):
        self.t += 1
        self.m = beta1 * self.m + (1 - beta1) * grad
        self.v = beta2 * self.v + (1 - beta2) * np.abs(grad) ** 2
        m_hat = self.m / (1 - beta1 ** self.t)
        v_hat = self.v / (1 - beta2 ** self.t)
        return m_hat / (np.sqrt(v_hat) + eps)


class VmcDriver:
    """Holds the variational state and advances it step by step.

    The driver owns the estimator measure (a FullSummation workspace or
    persistent Metropolis chains), the optimizer state, and the eps
    estimate; schedule functions below compose steps into full runs.
    """

    def __init__(self, lattice, params, pair, opt: OptimizerConfig,
                 est: EstimatorConfig = None):
        self.lattice = lattice
        self.params = params
        self.pair = pair
        self.opt = opt
        self.est = est or EstimatorConfig()
        self.eps = 0j
        self.step_index = 0
        self.records: list[RunRecord] = []
        self.callback = None            # called with the driver per step
        self._lr = opt.learning_rate
        self._lr_halved = False
        self._adam = {}
        self._chains = {}
        self._acceptance = 1.0
        if self.est.mode == "full_summation":
            self._ws = FullSummation(lattice, cap=self.est.cap)
        elif self.est.mode != "sampled":
            raise ValueError(f"unknown estimator mode {self.est.mode!r}")

        if (pair.dual_mode is DualMode.PT_CONJUGATE
                and not params.pt_symmetric):
            raise ValueError("pt_conjugate dual requires h_z = 0")

    # -- measures ---------------------------------------------------------

    def _sample(self, distribution):
        cfg = self.est.sampler
        scfg = SamplerConfig(
            n_chains=cfg.n_chains,
            n_samples_per_chain=cfg.n_samples_per_chain,
            n_burnin=cfg.n_burnin,
            thinning=cfg.thinning,
            seed=cfg.seed,
            distribution=distribution,
        )
        prev = self._chains.get(distribution)
        burn = None if prev is None else self.est.reequilibration_sweeps
        batch, spins = run_chains(self.pair, self.lattice, scfg,
                                  initial_spins=prev, n_burnin=burn,
                                  stream_key=self.step_index)
        self._chains[distribution] = spins
        return batch

    def measures(self):
        """(right measure, left measure) for the current step."""
        if self.est.mode == "full_summation":
            return self._ws, self._ws
        right = self._sample(Distribution.BORN_RIGHT)
        self._acceptance = right.acceptance_rate
        if self.pair.dual_mode is DualMode.PT_CONJUGATE:
            return right, right
        return right, self._sample(Distribution.BORN_LEFT)

    # -- eps updates ------------------------------------------------------

    def refresh_epsilon(self, measure):
        """Self-consistent eps via the biorthogonal Rayleigh quotient;
        on overlap collapse the previous value is kept and a warning is
        issued."""
        try:
            est = estimators.biorthogonal_energy(self.pair, self.lattice,
                                                 self.params, measure)
            self.eps = est.epsilon
        except OverlapCollapseError as exc:
            warnings.warn(f"eps frozen at step {self.step_index}: {exc}")
        return self.eps

    # -- parameter updates ------------------------------------------------

    def _apply_update(self, grad_result):
        blocks = grad_result.grad
        update = {}
        for name, grad in blocks.items():
            if not np.all(np.isfinite(grad)):
                return None
            if self.opt.update_rule == "sr":
                update[name] = sr_precondition(
                    grad, grad_result.o_matrices[name],
                    grad_result.weights[name], self.opt.sr_shift)
            elif self.opt.update_rule == "adam":
                state = self._adam.setdefault(
                    name, _AdamState(grad.shape[0]))
                update[name] = state.update(grad)
            else:
                update[name] = grad
        norm = np.sqrt(sum(float(np.vdot(u, u).real)
                           for u in update.values()))
        if not np.isfinite(norm):
            return None
        if self.opt.max_grad_norm and norm > self.opt.max_grad_norm:
            for name in update:
                update[name] *= self.opt.max_grad_norm / norm
        psi = self.pair.psi.updated(-self._lr * update["psi"])
        tilde = None
        if "tilde" in update:
            tilde = self.pair.psi_tilde.updated(-self._lr * update["tilde"])
        self.pair = self.pair.replaced(psi=psi, psi_tilde=tilde)
        return norm

    def _step_common(self, grad_result, phase_tag, t0):
        norm = self._apply_update(grad_result)
        if norm is None:
            if self._lr_halved:
                raise NumericalFailure(
                    f"non-finite update at step {self.step_index}")
            warnings.warn("non-finite update; step rejected and learning "
                          "rate halved")
            self._lr_halved = True
            self._lr *= 0.5
            norm = float("nan")
        record = RunRecord(
            step=self.step_index,
            epsilon=complex(self.eps),
            loss=grad_result.loss,
            acceptance_rate=self._acceptance,
            grad_norm=norm,
            wall_time=time.perf_counter() - t0,
            phase_tag=phase_tag,
        )
        self.records.append(record)
        self.step_index += 1
        if self.callback is not None:
            self.callback(self)
        return record

    def variance_step(self, eps, phase_tag):
        """One update of the joint variance loss at fixed eps."""
        t0 = time.perf_counter()
        right, left = self.measures()
        self.eps = complex(eps)
        grad_result = estimators.gradient_variance(
            self.pair, self.lattice, self.params, self.eps, right,
            measure_left=left)
        return self._step_common(grad_result, phase_tag, t0)

    def transition_step(self, anchor, alpha, phase_tag="transition"):
        """Blend the anchor into the fresh self-consistent estimate:
        eps = alpha * anchor + (1 - alpha) * eps_sc."""
        t0 = time.perf_counter()
        right, left = self.measures()
        eps_sc = self.refresh_epsilon(right)
        self.eps = alpha * anchor + (1.0 - alpha) * eps_sc
        grad_result = estimators.gradient_variance(
            self.pair, self.lattice, self.params, self.eps, right,
            measure_left=left)
        return self._step_common(grad_result, phase_tag, t0)

    def self_consistent_step(self, phase_tag="self_consistent"):
        """Refresh eps (every eps_stride-th step refreshes; others reuse),
        then update parameters at fixed eps."""
        t0 = time.perf_counter()
        right, left = self.measures()
        self.refresh_epsilon(right)
        grad_result = estimators.gradient_variance(
            self.pair, self.lattice, self.params, self.eps, right,
            measure_left=left)
        return self._step_common(grad_result, phase_tag, t0)

    def energy_as_parameter_step(self, lr_eps=None, pin_real=None,
                                 phase_tag="energy_as_parameter"):
        """Baseline: eps descends its own gradient d L_R / d eps.

        The Wirtinger pair (d/d eps, d/d eps*) of the real loss is combined
        symmetrically, giving the complex rule eps <- eps - lr * 2 * (eps -
        <H>_RR); with ``pin_real`` the real part stays at that value and
        only the imaginary part moves (the two-step variant).
        """
        t0 = time.perf_counter()
        right, left = self.measures()
        e_rr = estimators.energy_rr(self.pair, self.lattice, self.params,
                                    right).epsilon
        lr = self._lr if lr_eps is None else lr_eps
        new_eps = self.eps - lr * 2.0 * (self.eps - e_rr)
        if pin_real is not None:
            new_eps = complex(pin_real, new_eps.imag)
        self.eps = new_eps
        grad_result = estimators.gradient_variance(
            self.pair, self.lattice, self.params, self.eps, right,
            measure_left=left)
        if self.pair.dual_mode is DualMode.PT_CONJUGATE:
            # single-state loss L_R only: undo the conjugate-pair doubling
            grad_result.grad = {k: 0.5 * g
                                for k, g in grad_result.grad.items()}
            grad_result.loss = LossValue(
                l_right=grad_result.loss.l_right,
                stderr=grad_result.loss.stderr)
        return self._step_common(grad_result, phase_tag, t0)

    def hermitian_energy_step(self, phase_tag="energy_minimization"):
        """Plain variational energy minimization (requires k_eff = 0)."""
        if self.params.k_eff != 0:
            raise ValueError("energy minimization needs a Hermitian model")
        t0 = time.perf_counter()
        right, _ = self.measures()
        grad_result, e_mean = estimators.gradient_energy(
            self.pair, self.lattice, self.params, right)
        self.eps = e_mean
        return self._step_common(grad_result, phase_tag, t0)


# ---------------------------------------------------------------------------
# schedules
#
# Run loops pin BLAS to one thread: the per-step solves and contractions
# are small enough that thread fan-out costs more than it saves.

def run_self_consistent(driver, n_steps, phase_tag="self_consistent"):
    with threadpool_limits(limits=1):
        for _ in range(n_steps):
            driver.self_consistent_step(phase_tag)
    return driver.records


def run_fixed_start(driver, schedule: ScheduleConfig,
                    final_rule="self_consistent"):
    """F anchored steps, T interpolated steps, then M steps under
    ``final_rule`` (self_consistent or energy_as_parameter)."""
    anchor = schedule.e0_anchor
    if anchor is None:
        anchor = model.lower_bound_anchor(driver.lattice, driver.params)
    anchor = complex(anchor)

    with threadpool_limits(limits=1):
        for _ in range(schedule.f_steps):
            driver.variance_step(anchor, "fixed")
        driver.eps = anchor
        for i in range(1, schedule.t_steps + 1):
            alpha = (schedule.t_steps - i) / schedule.t_steps
            driver.transition_step(anchor, alpha)
        if final_rule == "self_consistent":
            for _ in range(schedule.m_steps):
                driver.self_consistent_step()
        elif final_rule == "energy_as_parameter":
            for _ in range(schedule.m_steps):
                driver.energy_as_parameter_step()
        else:
            raise ValueError(f"unknown final rule {final_rule!r}")
    return driver.records


def run_energy_as_parameter(driver, schedule: ScheduleConfig):
    """Algorithm with eps as a free parameter, including the two-step
    variant that first moves only Im(eps) with Re(eps) pinned low."""
    pin_steps = schedule.two_step_imag_first
    with threadpool_limits(limits=1):
        if pin_steps:
            floor = schedule.two_step_re_floor
            if floor is None:
                floor = model.lower_bound_anchor(driver.lattice,
                                                 driver.params).real
            driver.eps = complex(floor, driver.eps.imag)
            for _ in range(pin_steps):
                driver.energy_as_parameter_step(pin_real=floor)
        for _ in range(schedule.m_steps - pin_steps):
            driver.energy_as_parameter_step()
    return driver.records


def run_warm_start(lattice, params, pair, schedule: ScheduleConfig,
                   opt: OptimizerConfig, est: EstimatorConfig = None,
                   steps_per_point=None):
    """Sweep the non-Hermitian scale, chaining parameters between points.

    Returns a dict nh_scale -> (StatePair, eps, records).  At nh_scale = 0
    the standard variational energy minimization is used; elsewhere each
    point runs ``steps_per_point`` (default schedule.m_steps) self-
    consistent steps starting from the previous point's parameters.
    """
    if not schedule.warm_k_grid:
        raise ValueError("warm_k_grid must be nonempty")
    steps = steps_per_point or schedule.m_steps
    results = {}
    current = pair
    for nh_scale in schedule.warm_k_grid:
        point_params = params.with_nh_scale(nh_scale)
        driver = VmcDriver(lattice, point_params, current, opt, est)
        if point_params.k_eff == 0:
            with threadpool_limits(limits=1):
                for _ in range(steps):
                    driver.hermitian_energy_step()
        else:
            run_self_consistent(driver, steps)
        results[float(nh_scale)] = (driver.pair, driver.eps, driver.records)
        current = driver.pair
    return results


@dataclass
class InfidelityResult:
    ansatz: RBM
    infidelity: float
    converged: bool


def infidelity(ws, target, state):
    """1 - |<phi|psi>|^2 / (<phi|phi> <psi|psi>) by full summation."""
    psi = ws.amplitudes(state)
    overlap = np.vdot(target, psi)
    return float(1.0 - (np.abs(overlap) ** 2
                        / (np.vdot(target, target).real
                           * np.vdot(psi, psi).real)))


def run_infidelity_fit(target_vector, rbm, opt: OptimizerConfig, steps,
                       lattice, tol=None):
    """Fit an RBM to an explicit target vector by infidelity minimization.

    The Wirtinger gradient is F * (E_p[conj(O)] - E_p[u conj(O)] / E_p[u])
    with p = |psi|^2, u = phi/psi and F the fidelity; it vanishes exactly
    when psi is proportional to phi.
    """
    ws = FullSummation(lattice)
    target = np.asarray(target_vector, dtype=np.complex128)
    if target.shape != (ws.size,):
        raise ValueError("target vector length must be 2^N")
    driver_adam = _AdamState(rbm.n_params)
    best = (np.inf, rbm)
    state = rbm
    c_norm = np.vdot(target, target).real
    with threadpool_limits(limits=1):
        for _ in range(steps):
            psi = ws.amplitudes(state)
            norm2 = np.vdot(psi, psi).real
            weights = (psi * psi.conj()).real / norm2
            with np.errstate(divide="ignore", invalid="ignore"):
                u = np.where(psi != 0, target / psi, 0.0)
            o_mat = state.log_derivatives_batch(ws.configs)
            e_o = weights @ o_mat.conj()
            e_uo = (weights * u) @ o_mat.conj()
            overlap = np.vdot(target, psi)
            fid = float(np.abs(overlap) ** 2 / (c_norm * norm2))
            # F * E[u conj(O)]/E[u] == (<phi|psi>/<phi|phi>) E[u conj(O)],
            # well-defined even at zero overlap
            grad = fid * e_o - (overlap / c_norm) * e_uo
            if opt.update_rule == "sr":
                update = sr_precondition(grad, o_mat, weights,
                                         opt.sr_shift)
            elif opt.update_rule == "adam":
                update = driver_adam.update(grad)
            else:
                update = grad
            state = state.updated(-opt.learning_rate * update)
            inf = infidelity(ws, target, state)
            if inf < best[0]:
                best = (inf, state)
    final = infidelity(ws, target, state)
    if final <= best[0]:
        best = (final, state)
    converged = tol is None or best[0] <= tol
    return InfidelityResult(best[1], best[0], converged)


def write_records_jsonl(path, records):
    with open(path, "w", encoding="ascii") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
