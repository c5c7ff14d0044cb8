"""The K-FAC optimizer.

One call to :meth:`KFAC.step` performs a full iteration: draw a mini-batch,
refresh the Kronecker factors from a backward pass on model-sampled
targets, compute the damped approximate natural-gradient proposal, rescale
it (optionally together with the previous update) under the exact-Fisher
quadratic model, pick the best damping strength ``gamma`` among the
candidates, adapt ``lambda`` with the Levenberg-Marquardt rule and apply the
update.
"""

from __future__ import annotations

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .averaging import polyak_average
from .factors import FactorSet, batch_moments, update_running
from .fisher import quad_scalars, reduction_ratio
from .kron import (BlockDiagCache, TridiagCache, blockdiag_apply, blockdiag_build,
                   tridiag_apply, tridiag_build)
from .net import MLP, PassRecord, devec, vec

log = logging.getLogger(__name__)

LAMBDA_MIN, LAMBDA_MAX = 1e-8, 1e8


class NumericalError(FloatingPointError):
    """Raised when the loss or the update stops being finite."""

    def __init__(self, msg: str, report: "StepReport | None" = None,
                 last_good: np.ndarray | None = None):
        super().__init__(msg)
        self.report = report
        self.last_good = last_good


@dataclass(frozen=True)
class BatchSchedule:
    """``fixed:M``, ``full`` or ``exp:M1:to_full_at:K``."""

    kind: str = "full"
    m: int = 0
    to_full_at: int = 500

    @classmethod
    def parse(cls, text: str) -> "BatchSchedule":
        text = text.strip()
        if text == "full":
            return cls("full")
        mt = re.fullmatch(r"fixed:(\d+)", text)
        if mt:
            return cls("fixed", int(mt.group(1)))
        mt = re.fullmatch(r"exp:(\d+):to_full_at:(\d+)", text)
        if mt:
            return cls("exp", int(mt.group(1)), int(mt.group(2)))
        raise ValueError(f"bad batch schedule {text!r}; expected fixed:M, full "
                         "or exp:M1:to_full_at:K")

    def __str__(self):
        if self.kind == "fixed":
            return f"fixed:{self.m}"
        if self.kind == "exp":
            return f"exp:{self.m}:to_full_at:{self.to_full_at}"
        return "full"


def batch_size(schedule: BatchSchedule, k: int, dataset_size: int) -> int:
    """Mini-batch size at iteration ``k``.

    The exponential schedule is ``m_k = min(m_1 exp((k-1)/b), |S|)`` with
    ``b`` chosen so that ``m_K = |S|`` at ``K = to_full_at``.
    """
    n = int(dataset_size)
    if schedule.kind == "full":
        return n
    if schedule.kind == "fixed":
        return max(1, min(schedule.m, n))
    m1 = schedule.m
    if m1 < 1:
        raise ValueError("m_1 must be >= 1")
    if m1 >= n or schedule.to_full_at <= 1:
        return n
    b = (schedule.to_full_at - 1) / math.log(n / m1)
    m = m1 * math.exp((k - 1) / b)
    return int(max(1, min(round(m), n)))


@dataclass
class OptimizerConfig:
    mode: str = "block_tridiag"
    eta: float = 1e-5
    lambda0: float = 150.0
    T1: int = 5
    T2: int = 20
    T3: int = 20
    omega1: float | None = None
    omega2: float | None = None
    tau1: float = 1 / 8
    tau2: float = 1 / 4
    momentum: bool = True
    batch_schedule: BatchSchedule = field(default_factory=BatchSchedule)
    xi: float = 0.99
    seed: int = 0
    use_pi: bool = True
    alpha_cap: float = 1e4

    def __post_init__(self):
        if self.mode not in ("block_diag", "block_tridiag"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if isinstance(self.batch_schedule, str):
            self.batch_schedule = BatchSchedule.parse(self.batch_schedule)
        if self.omega1 is None:
            self.omega1 = (19 / 20) ** self.T1
        if self.omega2 is None:
            self.omega2 = math.sqrt(19 / 20) ** self.T2
        if min(self.T1, self.T2, self.T3) < 1:
            raise ValueError("T1, T2, T3 must be positive")
        if self.T2 % self.T3:
            raise ValueError("T2 must be a multiple of T3")
        if not (0 < self.omega1 < 1 and 0 < self.omega2 < 1):
            raise ValueError("omega1 and omega2 must lie in (0, 1)")
        if not (0 < self.tau1 <= 1 and 0 < self.tau2 <= 1):
            raise ValueError("tau1 and tau2 must lie in (0, 1]")
        if self.lambda0 <= 0 or self.eta < 0:
            raise ValueError("need lambda0 > 0 and eta >= 0")

    @property
    def factor_mode(self) -> str:
        return "tridiag" if self.mode == "block_tridiag" else "diag"


@dataclass
class Update:
    alpha: float
    mu: float
    delta: np.ndarray
    M: float


@dataclass
class StepReport:
    k: int
    alpha: float
    mu: float
    lam: float
    gamma: float
    m: int
    M_delta: float
    h: float
    rho: float | None = None
    train_error: float | None = None


@dataclass
class OptimizerState:
    theta: np.ndarray
    lam: float
    gamma: float
    k: int = 1
    delta0: np.ndarray | None = None
    factors: FactorSet | None = None
    cache: BlockDiagCache | TridiagCache | None = None
    avg: np.ndarray | None = None
    last_m: int | None = None
    cases: int = 0


# -- building blocks ---------------------------------------------------------


def build_cache(factors: FactorSet, gamma: float, mode: str, use_pi: bool = True):
    if mode == "block_diag":
        return blockdiag_build(factors, gamma, use_pi)
    return tridiag_build(factors, gamma, use_pi)


def propose(cache, grad, gamma: float | None = None) -> np.ndarray:
    """Update proposal ``-(damped approximate F)^{-1} grad``."""
    if gamma is not None and cache.gamma != gamma:
        raise ValueError(f"inverse cache was built for gamma={cache.gamma:g}, not {gamma:g}")
    apply = blockdiag_apply if isinstance(cache, BlockDiagCache) else tridiag_apply
    return -apply(cache, grad)


def lowrank_propose(cache, a_bars, gs, matmul: Callable = np.matmul) -> np.ndarray:
    """Block-diagonal proposal for a gradient ``(1/m) G_i A_{i-1}^T`` given per case.

    ``a_bars[i]`` and ``gs[i]`` hold one column per case. Only products with
    an ``m``-sized dimension are formed, which pays off when ``m < d``.
    No weight-decay term can be folded in.
    """
    if not isinstance(cache, BlockDiagCache):
        raise NotImplementedError("the low-rank trick needs the block-diagonal inverse")
    m = gs[0].shape[1]
    out = []
    for Ai, Gi, a, g in zip(cache.A_inv, cache.G_inv, a_bars, gs):
        left = matmul(Gi, g)
        right = matmul(a.T, Ai)
        out.append(-matmul(left, right) / m)
    return vec(out)


def _quad_value(a, b, c, ga, gb, alpha, mu, h):
    return 0.5 * (a * alpha * alpha + 2 * b * alpha * mu + c * mu * mu) + ga * alpha + gb * mu + h


def rescale(net: MLP, theta, batch, Delta, grad, lambda_eta: float, h: float = 0.0,
            alpha_cap: float = 1e4) -> Update:
    """Scale ``Delta`` by the minimizer of the exact-Fisher quadratic model."""
    Delta = np.asarray(Delta, dtype=float)
    if not Delta.any():
        return Update(0.0, 0.0, np.zeros_like(Delta), float(h))
    q = quad_scalars(net, theta, batch, Delta, Delta, grad, lambda_eta)
    curv = q.vFv + lambda_eta * float(Delta @ Delta)
    if not curv > 0:
        return Update(0.0, 0.0, np.zeros_like(Delta), float(h))
    alpha = -q.grad_dot_v / curv
    alpha = _cap(alpha, alpha_cap)
    M = _quad_value(curv, 0.0, 0.0, q.grad_dot_v, 0.0, alpha, 0.0, h)
    return Update(alpha, 0.0, alpha * Delta, M)


def _cap(alpha, cap):
    if abs(alpha) > cap:
        log.warning("step scale %.3g clipped to +/-%g", alpha, cap)
        return math.copysign(cap, alpha)
    return alpha


def momentum_solve(net: MLP, theta, batch, Delta, delta0, grad, lambda_eta: float,
                   h: float = 0.0, alpha_cap: float = 1e4) -> Update:
    """Jointly optimal ``alpha, mu`` for ``delta = alpha Delta + mu delta0``.

    Falls back to :func:`rescale` when the 2x2 system is degenerate (no
    previous update, or ``delta0`` parallel to ``Delta``).
    """
    Delta = np.asarray(Delta, dtype=float)
    if delta0 is None or not np.any(delta0):
        return rescale(net, theta, batch, Delta, grad, lambda_eta, h, alpha_cap)
    q = quad_scalars(net, theta, batch, Delta, delta0, grad, lambda_eta)
    a = q.vFv + lambda_eta * float(Delta @ Delta)
    c = q.uFu + lambda_eta * float(delta0 @ delta0)
    b = q.uFv + lambda_eta * float(Delta @ delta0)
    det = a * c - b * b
    if not (a > 0 and c > 0) or det <= 1e-12 * a * c:
        return rescale(net, theta, batch, Delta, grad, lambda_eta, h, alpha_cap)
    ga, gb = q.grad_dot_v, q.grad_dot_u
    alpha = -(c * ga - b * gb) / det
    mu = -(a * gb - b * ga) / det
    if abs(alpha) > alpha_cap:
        alpha = _cap(alpha, alpha_cap)
        mu = -(gb + b * alpha) / c
    M = _quad_value(a, b, c, ga, gb, alpha, mu, h)
    return Update(alpha, mu, alpha * Delta + mu * np.asarray(delta0), M)


def adapt_lambda(lam: float, rho: float | None, omega1: float) -> float:
    """Levenberg-Marquardt rule: shrink on rho > 3/4, grow on rho < 1/4."""
    if rho is None or not math.isfinite(rho):
        return lam
    if rho > 0.75:
        lam = omega1 * lam
    elif rho < 0.25:
        lam = lam / omega1
    return min(max(lam, LAMBDA_MIN), LAMBDA_MAX)


def gamma_candidates(gamma: float, k: int, T2: int, omega2: float) -> list[float]:
    """The current gamma first, then ``omega2 * gamma`` and ``gamma / omega2``
    on iterations divisible by ``T2``."""
    if k % T2:
        return [gamma]
    return [gamma, omega2 * gamma, gamma / omega2]


def _subset(rng, m: int, frac: float) -> np.ndarray:
    size = max(1, int(round(frac * m)))
    if size >= m:
        return np.arange(m)
    return np.sort(rng.choice(m, size=size, replace=False))


# -- the optimizer -----------------------------------------------------------


class KFAC:
    """Stateful K-FAC driver for one network.

    Not thread-safe: one instance owns its factor estimates and inverse
    caches.
    """

    def __init__(self, net: MLP, theta0, config: OptimizerConfig | None = None):
        self.net = net
        self.config = config or OptimizerConfig()
        cfg = self.config
        theta0 = np.array(theta0, dtype=float)
        self.state = OptimizerState(theta=theta0, lam=cfg.lambda0,
                                    gamma=math.sqrt(cfg.lambda0 + cfg.eta),
                                    delta0=np.zeros_like(theta0))
        self.rng = np.random.default_rng(cfg.seed)

    @property
    def theta(self) -> np.ndarray:
        return self.state.theta

    def objective(self, theta, inputs, targets) -> float:
        return self.net.loss(theta, inputs, targets) + 0.5 * self.config.eta * float(theta @ theta)

    def step(self, inputs, targets,
             evaluate: Callable[[np.ndarray], float] | None = None) -> StepReport:
        cfg, st, net, rng = self.config, self.state, self.net, self.rng
        inputs = np.asarray(inputs)
        targets = np.asarray(targets)
        k, theta = st.k, st.theta
        n_total = inputs.shape[0]
        m = batch_size(cfg.batch_schedule, k, n_total)
        idx = np.arange(n_total) if m >= n_total else np.sort(rng.choice(n_total, m, replace=False))
        X, Y = inputs[idx], targets[idx]

        record = net.forward(theta, X)
        h = float(np.mean(net.losses(record, Y))) + 0.5 * cfg.eta * float(theta @ theta)
        grad, record = net.backward(theta, record, Y)
        grad = grad + cfg.eta * theta
        if not (math.isfinite(h) and np.isfinite(grad).all()):
            raise NumericalError(f"non-finite objective at iteration {k}", None, theta.copy())

        s1 = _subset(rng, m, cfg.tau1)
        r1 = record.subset(s1)
        net.backward(theta, r1, net.sample_targets(r1, rng))
        st.factors = update_running(st.factors, batch_moments(r1, cfg.factor_mode), k)
        r2 = record.subset(_subset(rng, m, cfg.tau2))

        if st.last_m is not None and (m > 4 * st.last_m or 4 * m < st.last_m):
            st.delta0 = np.zeros_like(theta)
        lambda_eta = st.lam + cfg.eta
        refresh = k <= 3 or k % cfg.T3 == 0 or st.cache is None

        best = None
        for gamma in gamma_candidates(st.gamma, k, cfg.T2, cfg.omega2):
            if refresh or st.cache.gamma != gamma:
                cache = build_cache(st.factors, gamma, cfg.mode, cfg.use_pi)
            else:
                cache = st.cache
            Delta = propose(cache, grad, gamma)
            if cfg.momentum:
                upd = momentum_solve(net, theta, r2, Delta, st.delta0, grad, lambda_eta, h,
                                     cfg.alpha_cap)
            else:
                upd = rescale(net, theta, r2, Delta, grad, lambda_eta, h, cfg.alpha_cap)
            if best is None or upd.M < best[0].M:
                best = (upd, gamma, cache)
        upd, st.gamma, st.cache = best

        if not np.isfinite(upd.delta).all():
            raise NumericalError(f"non-finite update at iteration {k}", None, theta.copy())

        rho = None
        if k % cfg.T1 == 0:
            h_new = self.objective(theta + upd.delta, X, Y)
            rho = reduction_ratio(h_new, h, upd.M)
            st.lam = adapt_lambda(st.lam, rho, cfg.omega1)

        st.theta = theta + upd.delta
        st.delta0 = upd.delta
        st.avg = polyak_average(st.avg, st.theta, cfg.xi)
        st.last_m = m
        st.cases += m
        st.k = k + 1

        err = None
        if evaluate is not None:
            err = min(evaluate(st.theta), evaluate(st.avg))
        return StepReport(k, upd.alpha, upd.mu, st.lam, st.gamma, m, upd.M, h, rho, err)
