"""Structured run configurations: parsing, validation, defaults, and
round-trip serialization (YAML).

A run configuration has six blocks (model, ansatz, sampler, estimator,
optimizer, schedule) plus an output block; a sweep configuration wraps a
base run with swept h/k axes and a chaining rule.  ``resolve`` expands all
defaults so that the sidecar written next to every run's artifacts fully
reproduces it.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import yaml

from .ansatz import DualMode
from .model import HamiltonianParams, build_lattice
from .optimizer import EstimatorConfig, OptimizerConfig, ScheduleConfig
from .sampler import DISTRIBUTIONS, SamplerConfig

__all__ = [
    "ConfigError",
    "RunConfig",
    "SweepConfig",
    "load_run_config",
    "load_sweep_config",
    "resolve",
    "dump_resolved",
]

CHAINING_RULES = ("independent", "warm_forward", "warm_backward",
                  "combined_fixed_then_warm")

DEFAULTS = {
    "model": {
        "lattice": {"kind": "chain1d", "extent": [4], "periodic": True},
        "lam": 0.5, "h": 1.0, "k": 0.0, "h_z": 0.0, "nh_scale": 1.0,
    },
    "ansatz": {
        "alpha": 1, "seed": 0, "init_scale": 0.01,
        "dual_mode": "pt_conjugate",
    },
    "sampler": {
        "n_chains": 16, "n_samples_per_chain": 64, "n_burnin": 100,
        "thinning": 1, "seed": 0, "distribution": "born_right",
    },
    "estimator": {
        "mode": "full_summation", "cap": 14, "reequilibration_sweeps": 10,
    },
    "optimizer": {
        "update_rule": "sr", "learning_rate": 5e-3, "sr_shift": 1e-3,
        "max_grad_norm": 10.0, "seed": 0,
    },
    "schedule": {
        "mode": "self_consistent", "M": 1000, "F": 0, "T": 0,
        "E0_anchor": None, "warm_k_grid": [], "direction": "forward",
        "eps_stride": 1, "two_step_imag_first": 0, "two_step_re_floor": None,
    },
    "ed": {"k_grid": []},
    "output": {"directory": "runs/out", "snapshot_stride": 0,
               "loss_threshold": None},
}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field path."""


def _merge_defaults(block, defaults, path, errors):
    out = copy.deepcopy(defaults)
    for key, value in (block or {}).items():
        if key not in defaults:
            errors.append(f"{path}.{key}: unknown field")
            continue
        if isinstance(defaults[key], dict) and isinstance(value, dict):
            out[key] = _merge_defaults(value, defaults[key],
                                       f"{path}.{key}", errors)
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    raw: dict

    @property
    def lattice(self):
        lat = self.raw["model"]["lattice"]
        return build_lattice(lat["kind"], tuple(lat["extent"]),
                             lat["periodic"])

    @property
    def hamiltonian(self):
        m = self.raw["model"]
        return HamiltonianParams(lam=float(m["lam"]), h=float(m["h"]),
                                 k=float(m["k"]), nh_scale=float(m["nh_scale"]),
                                 h_z=float(m["h_z"]))

    @property
    def dual_mode(self):
        return DualMode(self.raw["ansatz"]["dual_mode"])

    @property
    def sampler(self):
        s = self.raw["sampler"]
        return SamplerConfig(n_chains=s["n_chains"],
                             n_samples_per_chain=s["n_samples_per_chain"],
                             n_burnin=s["n_burnin"], thinning=s["thinning"],
                             seed=s["seed"], distribution=s["distribution"])

    @property
    def estimator(self):
        e = self.raw["estimator"]
        return EstimatorConfig(mode=e["mode"], cap=e["cap"],
                               sampler=self.sampler,
                               reequilibration_sweeps=
                               e["reequilibration_sweeps"])

    @property
    def optimizer(self):
        o = self.raw["optimizer"]
        return OptimizerConfig(update_rule=o["update_rule"],
                               learning_rate=float(o["learning_rate"]),
                               sr_shift=float(o["sr_shift"]),
                               max_grad_norm=o["max_grad_norm"],
                               seed=o["seed"])

    @property
    def schedule(self):
        s = self.raw["schedule"]
        anchor = s["E0_anchor"]
        if anchor is not None:
            anchor = complex(anchor[0], anchor[1]) \
                if isinstance(anchor, (list, tuple)) else complex(anchor)
        return ScheduleConfig(mode=s["mode"], m_steps=s["M"],
                              f_steps=s["F"], t_steps=s["T"],
                              e0_anchor=anchor,
                              warm_k_grid=tuple(s["warm_k_grid"]),
                              direction=s["direction"],
                              eps_stride=s["eps_stride"],
                              two_step_imag_first=s["two_step_imag_first"],
                              two_step_re_floor=s["two_step_re_floor"])

    @property
    def output_dir(self):
        return self.raw["output"]["directory"]

    @property
    def snapshot_stride(self):
        return self.raw["output"]["snapshot_stride"]

    @property
    def ansatz_block(self):
        return self.raw["ansatz"]


def _validate_run(raw):
    errors = []
    merged = _merge_defaults(raw, DEFAULTS, "", errors)
    # strip the leading dot the merge helper leaves on paths
    errors = [e.lstrip(".") for e in errors]

    model = merged["model"]
    lat = model["lattice"]
    if lat["kind"] not in ("chain1d", "square2d"):
        errors.append(f"model.lattice.kind: unknown kind {lat['kind']!r}")
    elif min(lat["extent"]) < 2:
        errors.append("model.lattice.extent: must be >= 2 per dimension")

    ansatz = merged["ansatz"]
    if ansatz["dual_mode"] not in ("pt_conjugate", "independent"):
        errors.append(f"ansatz.dual_mode: unknown mode "
                      f"{ansatz['dual_mode']!r}")
    if ansatz["alpha"] < 1:
        errors.append("ansatz.alpha: must be >= 1")
    if ansatz["init_scale"] <= 0:
        errors.append("ansatz.init_scale: must be positive")
    if (ansatz["dual_mode"] == "pt_conjugate"
            and float(model["h_z"]) != 0.0):
        errors.append("ansatz.dual_mode: pt_conjugate requires the PT "
                      "pseudo-Hermitian model (model.h_z = 0)")

    if merged["sampler"]["distribution"] not in DISTRIBUTIONS:
        errors.append("sampler.distribution: unknown distribution "
                      f"{merged['sampler']['distribution']!r}")
    if merged["estimator"]["mode"] not in ("full_summation", "sampled"):
        errors.append(f"estimator.mode: unknown mode "
                      f"{merged['estimator']['mode']!r}")
    if merged["optimizer"]["update_rule"] not in ("sr", "adam", "sgd"):
        errors.append("optimizer.update_rule: unknown rule "
                      f"{merged['optimizer']['update_rule']!r}")
    if merged["optimizer"]["learning_rate"] <= 0:
        errors.append("optimizer.learning_rate: must be positive")

    sched = merged["schedule"]
    if sched["mode"] not in ("self_consistent", "fixed_start", "warm_start",
                             "energy_as_parameter"):
        errors.append(f"schedule.mode: unknown mode {sched['mode']!r}")
    if min(sched["M"], sched["F"], sched["T"]) < 0:
        errors.append("schedule: step counts must be nonnegative")
    if sched["mode"] == "warm_start" and not sched["warm_k_grid"]:
        errors.append("schedule.warm_k_grid: required for warm_start")

    if errors:
        raise ConfigError("; ".join(errors))
    return merged


def resolve(raw):
    """Expand defaults and validate; returns the fully resolved dict."""
    return _validate_run(raw or {})


def load_run_config(path):
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    return RunConfig(resolve(raw))


@dataclass
class SweepConfig:
    base: RunConfig
    h_values: tuple
    k_values: tuple
    chaining: str

    @property
    def points(self):
        """Grid points in sweep order: h outer, k inner; the k direction
        follows the chaining rule."""
        ks = list(self.k_values)
        if self.chaining == "warm_backward":
            ks = ks[::-1]
        return [(h, k) for h in self.h_values for k in ks]


def load_sweep_config(path):
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    sweep = raw.pop("sweep", {})
    base = RunConfig(resolve(raw))
    chaining = sweep.get("chaining", "independent")
    if chaining not in CHAINING_RULES:
        raise ConfigError(f"sweep.chaining: unknown rule {chaining!r}")
    h_values = tuple(sweep.get("h_values")
                     or [base.raw["model"]["h"]])
    k_values = tuple(sweep.get("k_values")
                     or [base.raw["model"]["k"]])
    if not h_values or not k_values:
        raise ConfigError("sweep axes must be nonempty")
    return SweepConfig(base=base, h_values=h_values, k_values=k_values,
                       chaining=chaining)


def dump_resolved(path, resolved_raw):
    """Write the fully resolved configuration sidecar."""
    with open(path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(resolved_raw, fh, sort_keys=True)


def loads_resolved(text):
    return yaml.safe_load(text)
