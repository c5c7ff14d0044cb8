"""SGD with Nesterov momentum, the baseline optimizer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..averaging import polyak_average
from ..net import MLP
from ..optimizer import BatchSchedule, NumericalError, StepReport, batch_size

LEARN_RATES = (0.1, 0.03, 0.01, 0.003, 0.001)

__all__ = ["LEARN_RATES", "SGD", "SGDConfig", "calibrate_learn_rate", "momentum_schedule",
           "polyak_average", "sgd_nesterov_step"]


def momentum_schedule(k: int, mu_max: float = 0.99) -> float:
    """``min(1 - 2^(-1 - log2(floor(k / 250) + 1)), mu_max)``."""
    return min(1.0 - 2.0 ** (-1.0 - math.log2(k // 250 + 1)), mu_max)


def sgd_nesterov_step(theta, velocity, grad_at_lookahead, learn_rate: float, mu: float):
    """One Nesterov step given the gradient at ``theta + mu * velocity``."""
    if not 0.0 <= mu < 1.0:
        raise ValueError("momentum must lie in [0, 1)")
    velocity = mu * np.asarray(velocity) - learn_rate * np.asarray(grad_at_lookahead)
    return np.asarray(theta) + velocity, velocity


@dataclass
class SGDConfig:
    learn_rate: float = 0.01
    mu_max: float = 0.99
    eta: float = 1e-5
    batch_schedule: BatchSchedule = field(default_factory=lambda: BatchSchedule("fixed", 100))
    xi: float = 0.99
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.batch_schedule, str):
            self.batch_schedule = BatchSchedule.parse(self.batch_schedule)
        if self.learn_rate <= 0:
            raise ValueError("learn_rate must be positive")
        if not 0.0 <= self.mu_max < 1.0:
            raise ValueError("mu_max must lie in [0, 1)")


class SGD:
    """Same ``step`` interface as :class:`kronfac.KFAC`."""

    def __init__(self, net: MLP, theta0, config: SGDConfig | None = None):
        self.net = net
        self.config = config or SGDConfig()
        self.theta = np.array(theta0, dtype=float)
        self.velocity = np.zeros_like(self.theta)
        self.avg = None
        self.k = 1
        self.rng = np.random.default_rng(self.config.seed)

    def step(self, inputs, targets,
             evaluate: Callable[[np.ndarray], float] | None = None) -> StepReport:
        cfg, k = self.config, self.k
        n = len(inputs)
        m = batch_size(cfg.batch_schedule, k, n)
        idx = np.arange(n) if m >= n else np.sort(self.rng.choice(n, m, replace=False))
        X, Y = np.asarray(inputs)[idx], np.asarray(targets)[idx]
        mu = momentum_schedule(k, cfg.mu_max)
        look = self.theta + mu * self.velocity
        rec = self.net.forward(look, X)
        h = float(np.mean(self.net.losses(rec, Y))) + 0.5 * cfg.eta * float(look @ look)
        grad, _ = self.net.backward(look, rec, Y)
        grad = grad + cfg.eta * look
        self.theta, self.velocity = sgd_nesterov_step(self.theta, self.velocity, grad,
                                                      cfg.learn_rate, mu)
        if not np.isfinite(self.theta).all():
            raise NumericalError(f"non-finite SGD iterate at iteration {k}")
        self.avg = polyak_average(self.avg, self.theta, cfg.xi)
        self.k += 1
        err = None
        if evaluate is not None:
            err = min(evaluate(self.theta), evaluate(self.avg))
        return StepReport(k, cfg.learn_rate, mu, 0.0, 0.0, m, float("nan"), h, None, err)


def calibrate_learn_rate(net: MLP, theta0, inputs, targets, budget: int,
                         evaluate: Callable[[np.ndarray], float], base: SGDConfig | None = None,
                         grid=LEARN_RATES) -> tuple[float, dict[float, float]]:
    """Pick the rate with the lowest training error after 20% of ``budget``.

    Diverging rates score ``inf``. Ties go to the larger rate (earlier in the
    grid).
    """
    base = base or SGDConfig()
    iters = max(1, budget // 5)
    scores = {}
    for lr in grid:
        cfg = SGDConfig(lr, base.mu_max, base.eta, base.batch_schedule, base.xi, base.seed)
        opt = SGD(net, theta0, cfg)
        try:
            with np.errstate(all="ignore"):
                for _ in range(iters):
                    opt.step(inputs, targets)
            err = min(evaluate(opt.theta), evaluate(opt.avg))
            scores[lr] = err if math.isfinite(err) else math.inf
        except (FloatingPointError, ValueError):
            scores[lr] = math.inf
    best = min(grid, key=lambda lr: scores[lr])
    return best, scores
