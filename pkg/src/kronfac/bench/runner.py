"""Drive one experiment and write its artifacts.

Outputs in the run directory: ``metrics.csv`` (one flushed row per
iteration), ``summary.json``, ``checkpoint.npz`` and ``curves.png``.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from pathlib import Path

import numpy as np

from ..optimizer import KFAC, NumericalError, OptimizerConfig
from .config import ConfigError, RunConfig
from .problems import Problem, get_problem
from .sgd import SGD, SGDConfig, calibrate_learn_rate

log = logging.getLogger(__name__)

COLUMNS = ["iter", "cases", "wall_s", "objective", "train_error", "lambda", "gamma",
           "alpha", "mu", "batch_size"]
SGD_BATCH = "fixed:100"


class NumericalAbort(RuntimeError):
    def __init__(self, msg: str, checkpoint: Path):
        super().__init__(msg)
        self.checkpoint = checkpoint


def save_checkpoint(path, theta, problem: str, data_file: str | None = None) -> Path:
    path = Path(path)
    np.savez(path, theta=np.asarray(theta), problem=problem, data_file=data_file or "")
    return path


def load_checkpoint(path) -> tuple[np.ndarray, str, str | None]:
    with np.load(path, allow_pickle=False) as z:
        return z["theta"], str(z["problem"]), (str(z["data_file"]) or None)


def build_optimizer(cfg: RunConfig, problem: Problem, theta0, seed: int):
    """Instantiate K-FAC or SGD from a run config. Returns ``(optimizer, extra_summary)``."""
    net = problem.net
    d = problem.defaults
    try:
        if cfg.optimizer == "sgd":
            base = SGDConfig(learn_rate=cfg.learn_rate or 0.01, mu_max=cfg.mu_max, eta=cfg.eta,
                             batch_schedule=cfg.batch_schedule or SGD_BATCH, seed=seed)
            extra = {}
            if cfg.learn_rate is None:
                lr, scores = calibrate_learn_rate(net, theta0, problem.data.inputs,
                                                  problem.data.targets, cfg.max_iters,
                                                  problem.train_error, base)
                base.learn_rate = lr
                extra = {"learn_rate": lr, "calibration": {str(k): v for k, v in scores.items()}}
            return SGD(net, theta0, base), extra
        oc = OptimizerConfig(
            mode="block_diag" if cfg.optimizer == "kfac_bd" else "block_tridiag",
            eta=cfg.eta, lambda0=cfg.lambda0 if cfg.lambda0 is not None else d.get("lambda0", 150.0),
            T1=cfg.T1, T2=cfg.T2, T3=cfg.T3, tau1=cfg.tau1, tau2=cfg.tau2,
            momentum=cfg.momentum,
            batch_schedule=cfg.batch_schedule or d.get("batch_schedule", "full"), seed=seed)
    except ValueError as err:
        raise ConfigError(str(err)) from None
    return KFAC(net, theta0, oc), {}


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return repr(float(x))


def run_experiment(cfg: RunConfig, out_dir, seed: int | None = None,
                   plots: bool = True) -> dict:
    """Run to ``max_iters`` or ``max_seconds``, whichever comes first.

    Raises :class:`ConfigError` for bad settings and :class:`NumericalAbort`
    (carrying the last good checkpoint) when the optimizer diverges.
    """
    seed = cfg.seed if seed is None else seed
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    try:
        problem = get_problem(cfg.problem, cfg.data_file)
    except (KeyError, OSError, ValueError) as err:
        raise ConfigError(str(err).strip("'\"")) from None
    theta0 = problem.init(seed)
    opt, extra = build_optimizer(cfg, problem, theta0, seed)
    X, Y = problem.data.inputs, problem.data.targets

    metrics = out / "metrics.csv"
    ckpt = out / "checkpoint.npz"
    last_good = theta0.copy()
    cases, k, err, h = 0, 0, None, None
    status = "completed"
    t0 = time.perf_counter()
    with metrics.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(COLUMNS)
        fh.flush()
        while k < cfg.max_iters:
            if time.perf_counter() - t0 >= cfg.max_seconds:
                status = "time_budget"
                break
            evaluate = problem.train_error if (k + 1) % cfg.eval_every == 0 else None
            try:
                with np.errstate(over="raise", invalid="raise", divide="raise"):
                    rep = opt.step(X, Y, evaluate)
            except (NumericalError, FloatingPointError, np.linalg.LinAlgError) as exc:
                path = save_checkpoint(out / "last_good.npz", last_good, cfg.problem, cfg.data_file)
                _write_summary(out, cfg, seed, "numerical_abort", k, cases, h, err,
                               time.perf_counter() - t0, {**extra, "error": str(exc)})
                raise NumericalAbort(f"numerical failure at iteration {k + 1}: {exc}", path) from exc
            k = rep.k
            cases += rep.m
            h = rep.h
            if rep.train_error is not None:
                err = rep.train_error
            last_good = opt.theta.copy()
            w.writerow([k, cases, f"{time.perf_counter() - t0:.6f}", _fmt(rep.h),
                        _fmt(rep.train_error), _fmt(rep.lam), _fmt(rep.gamma),
                        _fmt(rep.alpha), _fmt(rep.mu), rep.m])
            fh.flush()
    if k and err is None:
        err = problem.train_error(last_good)
    save_checkpoint(ckpt, last_good, cfg.problem, cfg.data_file)
    summary = _write_summary(out, cfg, seed, status, k, cases, h, err,
                             time.perf_counter() - t0, extra)
    if plots:
        from .plotting import training_curves

        training_curves(metrics, out / "curves.png")
    return summary


def _write_summary(out: Path, cfg, seed, status, iters, cases, h, err, wall, extra) -> dict:
    clean = lambda x: None if x is None or (isinstance(x, float) and not math.isfinite(x)) else x
    summary = {
        "status": status, "iterations": iters, "cases": cases, "wall_s": wall,
        "final_objective": clean(h), "final_train_error": clean(err),
        "seed": seed, "config": cfg.echo(), **extra,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=2, default=str) + "\n")
    return summary
