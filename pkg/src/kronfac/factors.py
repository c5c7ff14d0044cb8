"""Kronecker factor statistics.

For layer ``i`` the diagonal factors are ``A[i-1] = E[abar_{i-1} abar_{i-1}^T]``
and ``G[i-1] = E[g_i g_i^T]``. The block-tridiagonal approximation also needs
the neighbouring cross moments ``A_off[i-1] = E[abar_{i-1} abar_i^T]`` and
``G_off[i-1] = E[g_i g_{i+1}^T]``. The ``g_i`` must come from a backward pass
on targets sampled from the model, never the training targets.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import softmax

from .net import PassRecord

MODES = ("diag", "tridiag")


@dataclass
class FactorSet:
    A: list[np.ndarray]
    G: list[np.ndarray]
    A_off: list[np.ndarray] = field(default_factory=list)
    G_off: list[np.ndarray] = field(default_factory=list)
    k: int = 0
    mode: str = "diag"

    @property
    def n_layers(self) -> int:
        return len(self.A)

    @property
    def shapes(self) -> list[tuple[int, int]]:
        return [(G.shape[0], A.shape[0]) for A, G in zip(self.A, self.G)]

    def matrices(self) -> list[np.ndarray]:
        return [*self.A, *self.G, *self.A_off, *self.G_off]

    def copy(self) -> "FactorSet":
        c = lambda xs: [x.copy() for x in xs]
        return FactorSet(c(self.A), c(self.G), c(self.A_off), c(self.G_off), self.k, self.mode)


def batch_moments(record: PassRecord, mode: str = "diag") -> FactorSet:
    """Batch means of the outer products needed by ``mode``."""
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    if record.g is None:
        raise ValueError("record has no back-propagated g; run a backward pass "
                         "on sampled targets first")
    m = record.m
    A = [a @ a.T / m for a in record.a_bar]
    G = [g @ g.T / m for g in record.g]
    fs = FactorSet(A, G, mode=mode)
    if mode == "tridiag":
        fs.A_off = [record.a_bar[i] @ record.a_bar[i + 1].T / m
                    for i in range(len(A) - 1)]
        fs.G_off = [record.g[i] @ record.g[i + 1].T / m for i in range(len(G) - 1)]
    return fs


def decay(k: int) -> float:
    """Weight on the old estimate at iteration ``k``: ``min(1 - 1/k, 0.95)``."""
    if k < 1:
        raise ValueError("iteration count starts at 1")
    return min(1.0 - 1.0 / k, 0.95)


def update_running(old: FactorSet | None, new: FactorSet, k: int) -> FactorSet:
    """Exponentially decayed average ``eps * old + (1 - eps) * new``."""
    eps = decay(k)
    if old is not None:
        olds, news = old.matrices(), new.matrices()
        if (old.mode != new.mode or len(olds) != len(news)
                or any(o.shape != n.shape for o, n in zip(olds, news))):
            raise ValueError("factor sets have mismatched shapes or modes")
    if old is None or eps == 0.0:
        out = new.copy()
        out.k = k
        return out
    mix = lambda xs, ys: [eps * x + (1.0 - eps) * y for x, y in zip(xs, ys)]
    return FactorSet(mix(old.A, new.A), mix(old.G, new.G),
                     mix(old.A_off, new.A_off), mix(old.G_off, new.G_off), k, new.mode)


def all_moments(record: PassRecord) -> tuple[list[list[np.ndarray]], list[list[np.ndarray]]]:
    """Every pair ``A[i][j] = E[abar_i abar_j^T]``, ``G[i][j] = E[g_{i+1} g_{j+1}^T]``.

    Only the dense diagnostics need the off-tridiagonal pairs.
    """
    if record.g is None:
        raise ValueError("record has no back-propagated g")
    m = record.m
    n = len(record.a_bar)
    A = [[record.a_bar[i] @ record.a_bar[j].T / m for j in range(n)] for i in range(n)]
    G = [[record.g[i] @ record.g[j].T / m for j in range(n)] for i in range(n)]
    return A, G


def exact_record(net, theta, inputs) -> PassRecord:
    """Forward pass whose ``g`` reproduces the exact expectation over targets.

    Each case is repeated once per output unit and back-propagated with one
    column of a square root ``L`` of the output Fisher (``F_R = L L^T``), so
    batch means of ``g g^T`` equal ``E_x E_y[g g^T]`` without sampling noise.
    For the softmax ``L = diag(sqrt p) - p sqrt(p)^T``.
    """
    record = net.forward(theta, inputs)
    m, d = record.m, record.output.shape[0]
    rep = record.subset(np.repeat(np.arange(m), d))
    eye = np.tile(np.eye(d), (1, m))
    if net.arch.loss == "squared_error":
        d_out = eye
    else:
        p = np.repeat(softmax(record.output, axis=0), d, axis=1)
        sq = np.sqrt(p)
        # column c of case j: sqrt(p_c) e_c - p sqrt(p_c)
        d_out = sq * eye - p * np.sum(sq * eye, axis=0, keepdims=True)
    _, gs = net.backprop(theta, rep, d_out * math.sqrt(d))
    rep.g = gs
    return rep
