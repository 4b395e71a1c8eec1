"""Batch front end.

Subcommands:

* ``ed``          -- exact diagonalization: spectrum, ground pair, gap,
                     left/right fidelity, exact observables; optional gap
                     scan over a k grid.
* ``vmc``         -- one optimization run per the configured schedule.
* ``sweep``       -- grid of runs over h and/or k with a chaining rule.
* ``landscape``   -- closed-form single-qubit loss scan and stationary-
                     point report.
* ``observables`` -- evaluate magnetizations and correlations for a saved
                     parameter snapshot.

Every run directory receives a ``config.resolved.yaml`` sidecar with all
defaults expanded, making runs reproducible from artifacts alone.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 partial sweep failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import exact, observables
from .ansatz import DualMode, StatePair, init_params, load_snapshot, \
    save_snapshot
from .config import (ConfigError, RunConfig, dump_resolved, load_run_config,
                     load_sweep_config, resolve)
from .estimators import DiagonalOperator, OverlapCollapseError, TotalSx
from .model import HamiltonianParams
from .optimizer import (NumericalFailure, VmcDriver, run_energy_as_parameter,
                        run_fixed_start, run_self_consistent, run_warm_start,
                        write_records_jsonl)
from .sampler import FullSummation, SamplerConfig, run_chains

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_PARTIAL = 4


def _default_workers():
    env = os.environ.get("NHVMC_WORKERS")
    return int(env) if env else 1


def build_parser():
    parser = argparse.ArgumentParser(
        prog="nhvmc",
        description="Variational Monte Carlo for non-Hermitian spin chains "
                    "and tori.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, config_required=True):
        p.add_argument("--config", required=config_required,
                       help="YAML run configuration")
        p.add_argument("--out", default=None,
                       help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None,
                       help="override ansatz and sampler seeds")
        p.add_argument("--workers", type=int, default=_default_workers(),
                       help="worker processes for independent sweep points "
                            "(default: NHVMC_WORKERS or 1)")
        p.add_argument("--resume", default=None,
                       help="parameter snapshot to start from")

    add_common(sub.add_parser("ed", help="exact diagonalization"))
    add_common(sub.add_parser("vmc", help="single optimization run"))
    add_common(sub.add_parser("sweep", help="phase-diagram sweep"))
    p_land = sub.add_parser("landscape",
                            help="single-qubit loss landscape demo")
    p_land.add_argument("--out", default="runs/landscape")
    p_land.add_argument("--resolution", type=float, default=1e-3,
                        help="stationary-point scan resolution")
    p_land.add_argument("--csv-stride", type=int, default=20,
                        help="grid decimation for the CSV heat map")
    add_common(sub.add_parser("observables",
                              help="evaluate observables for a snapshot"))
    return parser


def _prepare(args, need_config=True):
    cfg = load_run_config(args.config) if need_config else None
    if cfg is not None and args.seed is not None:
        cfg.raw["ansatz"]["seed"] = args.seed
        cfg.raw["sampler"]["seed"] = args.seed
    out = Path(args.out or (cfg.output_dir if cfg else "runs/out"))
    out.mkdir(parents=True, exist_ok=True)
    if cfg is not None:
        dump_resolved(out / "config.resolved.yaml", cfg.raw)
    return cfg, out


def _initial_pair(cfg: RunConfig, resume=None):
    if resume:
        pair, _ = load_snapshot(resume)
        return pair
    blk = cfg.ansatz_block
    lattice = cfg.lattice
    psi = init_params(blk["seed"], blk["init_scale"], lattice.num_sites,
                      blk["alpha"])
    if cfg.dual_mode is DualMode.INDEPENDENT:
        tilde = init_params(blk["seed"] + 1, blk["init_scale"],
                            lattice.num_sites, blk["alpha"])
        return StatePair(psi, DualMode.INDEPENDENT, tilde)
    return StatePair(psi, DualMode.PT_CONJUGATE)


# ---------------------------------------------------------------------------
# ed

def cmd_ed(args):
    cfg, out = _prepare(args)
    lattice, hp = cfg.lattice, cfg.hamiltonian
    if lattice.num_sites > exact.EIGEN_CAP:
        print(f"error: exact diagonalization capped at "
              f"{exact.EIGEN_CAP} sites (N={lattice.num_sites})",
              file=sys.stderr)
        return EXIT_CONFIG

    ed = exact.ed_for(lattice, hp)
    exact.write_spectrum_csv(out / "spectrum.csv", ed)
    e0, r0, l0 = exact.ground_state(ed)
    np.savez(out / "ground.npz", energy=e0, right=r0, left=l0)

    n = lattice.num_sites
    mz = DiagonalOperator(lambda s: s.sum(axis=1) / n)
    summary = {
        "n_sites": n,
        "ground_energy": [e0.real, e0.imag],
        "gap": exact.spectral_gap(ed).delta,
        "lr_fidelity": exact.lr_fidelity(ed),
        "sort_convention": ed.sort_convention,
        "observables": {},
    }
    for mode in ("LR", "RR"):
        mz_val = exact.exact_observable(ed, mz, lattice, mode)
        mx_val = exact.exact_observable(ed, TotalSx(), lattice, mode) / n
        summary["observables"][mode] = {
            "M_z": [mz_val.real, mz_val.imag],
            "M_x": [mx_val.real, mx_val.imag],
        }

    k_grid = cfg.raw.get("ed", {}).get("k_grid") or []
    if k_grid:
        with open(out / "gap_vs_k.csv", "w", encoding="ascii") as fh:
            fh.write("k,gap,im_e0\n")
            for k in k_grid:
                hp_k = HamiltonianParams(hp.lam, hp.h, float(k),
                                         hp.nh_scale, hp.h_z)
                import scipy.linalg
                vals = scipy.linalg.eigvals(
                    exact.dense_matrix(lattice, hp_k))
                gap = exact.spectral_gap_from_values(vals)
                srt = vals[np.lexsort((vals.imag, vals.real))]
                fh.write(f"{k},{gap:.17g},{srt[0].imag:.17g}\n")

    with open(out / "summary.json", "w", encoding="ascii") as fh:
        json.dump(summary, fh, indent=2)
    print(f"ed: wrote {out}/spectrum.csv, ground.npz, summary.json")
    return EXIT_OK


# ---------------------------------------------------------------------------
# vmc

def _snapshot_callback(out, cfg, driver_holder):
    stride = cfg.snapshot_stride
    if not stride:
        return None

    def callback(driver):
        if driver.step_index % stride == 0:
            _write_snapshot(out / f"params_{driver.step_index:07d}.snapshot",
                            cfg, driver.pair)
    return callback


def _write_snapshot(path, cfg, pair):
    save_snapshot(path, pair.psi, pair.dual_mode,
                  cfg.ansatz_block["seed"],
                  rbm_tilde=pair.psi_tilde
                  if pair.dual_mode is DualMode.INDEPENDENT else None)


def _run_schedule(cfg: RunConfig, pair, callback=None):
    lattice, hp = cfg.lattice, cfg.hamiltonian
    schedule = cfg.schedule
    if schedule.mode == "warm_start":
        results = run_warm_start(lattice, hp, pair, schedule, cfg.optimizer,
                                 cfg.estimator)
        last_scale = list(results)[-1]
        final_pair, eps, _ = results[last_scale]
        records = [rec for _, _, recs in results.values() for rec in recs]
        driver = VmcDriver(lattice, hp.with_nh_scale(last_scale),
                           final_pair, cfg.optimizer, cfg.estimator)
        driver.eps = eps
        driver.records = records
        return driver
    driver = VmcDriver(lattice, hp, pair, cfg.optimizer, cfg.estimator)
    driver.callback = callback
    if schedule.mode == "self_consistent":
        run_self_consistent(driver, schedule.m_steps)
    elif schedule.mode == "fixed_start":
        run_fixed_start(driver, schedule)
    elif schedule.mode == "energy_as_parameter":
        run_energy_as_parameter(driver, schedule)
    if not driver.records:
        # zero-budget run: still report eps at the initial state
        try:
            driver.refresh_epsilon(driver.measures()[0])
        except OverlapCollapseError:
            pass
    return driver


def _final_observables(cfg, driver):
    """Magnetizations at the trained state, exact when the lattice fits
    under the full-summation cap, sampled otherwise."""
    lattice = cfg.lattice
    try:
        measure = FullSummation(lattice, cap=max(cfg.estimator.cap, 16))
    except ValueError:
        measure, _ = run_chains(driver.pair, lattice, cfg.sampler,
                                stream_key=driver.step_index + 1)
    out = {}
    for axis in ("z", "x"):
        for mode in ("LR", "RR"):
            try:
                est = observables.magnetization(driver.pair, lattice,
                                                measure, axis, mode)
                out[f"M_{axis}_{mode}"] = [est.epsilon.real,
                                           est.epsilon.imag,
                                           est.stderr_re, est.stderr_im]
            except OverlapCollapseError:
                out[f"M_{axis}_{mode}"] = None
    return out


def _write_run_outputs(out, cfg, driver):
    write_records_jsonl(out / "records.jsonl", driver.records)
    _write_snapshot(out / "params.snapshot", cfg, driver.pair)
    final = driver.records[-1] if driver.records else None
    obs = _final_observables(cfg, driver)
    with open(out / "summary.csv", "w", encoding="ascii", newline="") as fh:
        writer = csv.writer(fh)
        header = ["steps", "eps_re", "eps_im", "loss", "loss_stderr",
                  "acc", "grad_norm", "M_z_re", "M_z_im", "M_x_re"]
        writer.writerow(header)
        mz = obs.get("M_z_LR") or [float("nan")] * 4
        mx = obs.get("M_x_LR") or [float("nan")] * 4
        writer.writerow([
            driver.step_index, driver.eps.real, driver.eps.imag,
            final.loss.total if final else float("nan"),
            final.loss.stderr if final else float("nan"),
            final.acceptance_rate if final else float("nan"),
            final.grad_norm if final else float("nan"),
            mz[0], mz[1], mx[0],
        ])
    with open(out / "observables.json", "w", encoding="ascii") as fh:
        json.dump(obs, fh, indent=2)
    return obs


def cmd_vmc(args):
    cfg, out = _prepare(args)
    pair = _initial_pair(cfg, args.resume)
    try:
        driver = _run_schedule(cfg, pair,
                               _snapshot_callback(out, cfg, None))
    except (NumericalFailure, OverlapCollapseError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    _write_run_outputs(out, cfg, driver)
    print(f"vmc: {driver.step_index} steps, eps = {driver.eps:.8f}; "
          f"wrote {out}")
    threshold = cfg.raw["output"].get("loss_threshold")
    if (threshold is not None and driver.records
            and driver.records[-1].loss.total > threshold):
        print(f"budget exhausted with loss "
              f"{driver.records[-1].loss.total:.3e} above threshold "
              f"{threshold:.3e}", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep

def _point_config(base_raw, h, k, seed_shift=0):
    raw = json.loads(json.dumps(base_raw))  # deep copy of plain data
    raw["model"]["h"] = float(h)
    raw["model"]["k"] = float(k)
    raw["ansatz"]["seed"] = int(raw["ansatz"]["seed"]) + seed_shift
    return raw


def _run_point(payload):
    """Worker for independent sweep points (must stay picklable)."""
    raw, out_dir, resume = payload
    cfg = RunConfig(resolve(raw))
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    dump_resolved(out / "config.resolved.yaml", cfg.raw)
    pair = _initial_pair(cfg, resume)
    try:
        driver = _run_schedule(cfg, pair)
    except (NumericalFailure, OverlapCollapseError) as exc:
        return {"ok": False, "error": str(exc), "dir": str(out)}
    obs = _write_run_outputs(out, cfg, driver)
    mz = obs.get("M_z_LR") or [float("nan")] * 4
    mx = obs.get("M_x_LR") or [float("nan")] * 4
    last = driver.records[-1]
    return {"ok": True, "dir": str(out),
            "eps": [driver.eps.real, driver.eps.imag],
            "loss": last.loss.total, "m_z": mz[:2], "m_x_re": mx[0]}


def cmd_sweep(args):
    sweep = load_sweep_config(args.config)
    out = Path(args.out or sweep.base.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    if args.seed is not None:
        sweep.base.raw["ansatz"]["seed"] = args.seed
        sweep.base.raw["sampler"]["seed"] = args.seed
    dump_resolved(out / "config.resolved.yaml", sweep.base.raw)

    rows = []
    failed = 0
    if sweep.chaining == "independent":
        payloads = []
        for h, k in sweep.points:
            raw = _point_config(sweep.base.raw, h, k)
            payloads.append((raw, str(out / f"h{h:g}_k{k:g}"), args.resume))
        if args.workers > 1:
            with ProcessPoolExecutor(max_workers=args.workers) as pool:
                results = list(pool.map(_run_point, payloads))
        else:
            results = [_run_point(p) for p in payloads]
        for (h, k), res in zip(sweep.points, results):
            rows.append(_aggregate_row(h, k, res))
            failed += 0 if res["ok"] else 1
    else:
        # chained along k within each h row; rows are independent
        for h in sweep.h_values:
            resume = args.resume
            ks = [k for hh, k in sweep.points if hh == h]
            for idx, k in enumerate(ks):
                raw = _point_config(sweep.base.raw, h, k)
                if sweep.chaining == "combined_fixed_then_warm" and idx == 0:
                    raw["schedule"]["mode"] = "fixed_start"
                elif idx > 0:
                    raw["schedule"]["mode"] = "self_consistent"
                res = _run_point((raw, str(out / f"h{h:g}_k{k:g}"), resume))
                rows.append(_aggregate_row(h, k, res))
                if res["ok"]:
                    resume = str(Path(res["dir"]) / "params.snapshot")
                else:
                    failed += 1
    with open(out / "aggregate.csv", "w", encoding="ascii",
              newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["h", "k", "eps_re", "eps_im", "loss",
                         "M_z_re", "M_z_im", "M_x_re", "status"])
        writer.writerows(rows)
    print(f"sweep: {len(rows)} points, {failed} failed; wrote "
          f"{out}/aggregate.csv")
    return EXIT_PARTIAL if failed else EXIT_OK


def _aggregate_row(h, k, res):
    if not res["ok"]:
        nan = float("nan")
        return [h, k, nan, nan, nan, nan, nan, nan, "failed"]
    return [h, k, res["eps"][0], res["eps"][1], res["loss"],
            res["m_z"][0], res["m_z"][1], res["m_x_re"], "ok"]


# ---------------------------------------------------------------------------
# landscape

def cmd_landscape(args):
    from . import landscape
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = landscape.landscape_report(args.resolution)
    with open(out / "landscape_report.json", "w", encoding="ascii") as fh:
        json.dump(report, fh, indent=2)
    eps, theta, grid, _ = landscape.scan_grid(args.resolution)
    stride = max(1, args.csv_stride)
    with open(out / "landscape.csv", "w", encoding="ascii") as fh:
        fh.write("eps,theta,loss\n")
        for i in range(0, eps.shape[0], stride):
            for j in range(0, theta.shape[0], stride):
                fh.write(f"{eps[i]:.6g},{theta[j]:.6g},{grid[i, j]:.10g}\n")
    for p in report["stationary_points"]:
        print(f"stationary point: eps={p['eps']:+.6f} "
              f"theta={p['theta']:.6f} loss={p['loss']:.2e} "
              f"hessian_det={p['hessian_det']:+.1f} [{p['kind']}]")
    print(report["consistency_note"])
    return EXIT_OK


# ---------------------------------------------------------------------------
# observables

def cmd_observables(args):
    cfg, out = _prepare(args)
    if not args.resume:
        print("error: observables needs --resume SNAPSHOT", file=sys.stderr)
        return EXIT_CONFIG
    pair, _ = load_snapshot(args.resume)
    lattice = cfg.lattice
    try:
        measure = FullSummation(lattice, cap=max(cfg.estimator.cap, 16))
    except ValueError:
        measure, _ = run_chains(pair, lattice, cfg.sampler)

    summary = {}
    for axis in ("z", "x"):
        for mode in ("LR", "RR"):
            est = observables.magnetization(pair, lattice, measure, axis,
                                            mode)
            summary[f"M_{axis}_{mode}"] = [est.epsilon.real,
                                           est.epsilon.imag,
                                           est.stderr_re, est.stderr_im]
    shells = observables.shell_table(lattice)
    for mode in ("LR", "RR"):
        corr = observables.connected_correlation_z(pair, lattice, measure,
                                                   mode, shells)
        observables.write_correlation_csv(
            out / f"correlation_{mode.lower()}.csv", corr)
    with open(out / "observables.json", "w", encoding="ascii") as fh:
        json.dump(summary, fh, indent=2)
    print(f"observables: wrote {out}/observables.json and correlation CSVs")
    return EXIT_OK


# ---------------------------------------------------------------------------

def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    handlers = {"ed": cmd_ed, "vmc": cmd_vmc, "sweep": cmd_sweep,
                "landscape": cmd_landscape, "observables": cmd_observables}
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalFailure, OverlapCollapseError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
