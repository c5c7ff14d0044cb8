"""Structured linear algebra on Kronecker factors.

Vectors are column-major ``vec`` of per-layer matrices, so
``(A kron B) vec(X) = vec(B X A^T)``. Layer ``i``'s block of the
approximate Fisher is ``A[i-1] kron G[i-1]``, ``A`` acting on the input
side and ``G`` on the output side of ``W_i``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from .factors import FactorSet
from .net import devec, vec


class SingularSystemError(np.linalg.LinAlgError):
    """A Kronecker-sum system is numerically singular."""

    def __init__(self, msg: str, layer: int | None = None):
        super().__init__(msg if layer is None else f"layer {layer}: {msg}")
        self.layer = layer


class DampingWarning(RuntimeWarning):
    pass


def kron_mv(A, B, v) -> np.ndarray:
    """``(A kron B) v`` without forming the Kronecker product."""
    A, B, v = np.atleast_2d(A), np.atleast_2d(B), np.asarray(v, dtype=float)
    n = A.shape[1] * B.shape[1]
    if v.shape != (n,):
        raise ValueError(f"vector has shape {v.shape}, expected ({n},)")
    V = v.reshape((B.shape[1], A.shape[1]), order="F")
    return (B @ V @ A.T).ravel(order="F")


def compute_pi(A, G) -> float:
    """Trace-norm balance ``sqrt((tr A / dim A) / (tr G / dim G))``.

    Falls back to 1 (with a :class:`DampingWarning`) when either trace is not
    positive.
    """
    trA, trG = float(np.trace(A)), float(np.trace(G))
    if not (trA > 0 and trG > 0 and math.isfinite(trA) and math.isfinite(trG)):
        warnings.warn(f"non-positive factor trace (tr A={trA:g}, tr G={trG:g}); using pi=1",
                      DampingWarning, stacklevel=2)
        return 1.0
    return math.sqrt((trA / A.shape[0]) / (trG / G.shape[0]))


@dataclass
class DampedFactors:
    A: list[np.ndarray]
    G: list[np.ndarray]
    gamma: float
    pi: list[float]

    @property
    def shapes(self):
        return [(G.shape[0], A.shape[0]) for A, G in zip(self.A, self.G)]


def damp_factors(factors: FactorSet, gamma: float, use_pi: bool = True) -> DampedFactors:
    """Add ``pi_i * gamma * I`` to each ``A`` and ``(gamma / pi_i) * I`` to each ``G``."""
    if gamma < 0:
        raise ValueError("gamma must be non-negative")
    pis, As, Gs = [], [], []
    for A, G in zip(factors.A, factors.G):
        pi = compute_pi(A, G) if use_pi and gamma > 0 else 1.0
        pis.append(pi)
        As.append(A + pi * gamma * np.eye(A.shape[0]))
        Gs.append(G + (gamma / pi) * np.eye(G.shape[0]))
    return DampedFactors(As, Gs, float(gamma), pis)


def spd_inverse(M: np.ndarray) -> np.ndarray:
    """Inverse of a symmetric positive definite matrix via Cholesky.

    Retries once with ``1e-10 * tr(M)/dim`` added to the diagonal.
    """
    n = M.shape[0]
    eye = np.eye(n)
    try:
        c = linalg.cho_factor(M, lower=True)
    except linalg.LinAlgError:
        jitter = 1e-10 * max(np.trace(M) / n, np.finfo(float).tiny)
        c = linalg.cho_factor(M + jitter * eye, lower=True)
    inv = linalg.cho_solve(c, eye)
    return 0.5 * (inv + inv.T)


def _split(v, shapes):
    return devec(np.asarray(v, dtype=float), shapes)


# -- block-diagonal ----------------------------------------------------------


@dataclass
class BlockDiagCache:
    A_inv: list[np.ndarray]
    G_inv: list[np.ndarray]
    gamma: float
    pi: list[float]

    @property
    def shapes(self):
        return [(G.shape[0], A.shape[0]) for A, G in zip(self.A_inv, self.G_inv)]


def blockdiag_build(factors: FactorSet, gamma: float, use_pi: bool = True) -> BlockDiagCache:
    d = damp_factors(factors, gamma, use_pi)
    return BlockDiagCache([spd_inverse(A) for A in d.A], [spd_inverse(G) for G in d.G],
                          d.gamma, d.pi)


def blockdiag_apply(cache: BlockDiagCache, v) -> np.ndarray:
    """``U_i = G_i^{-1} V_i A_i^{-1}`` for every layer."""
    Vs = _split(v, cache.shapes)
    return vec([Gi @ V @ Ai for V, Ai, Gi in zip(Vs, cache.A_inv, cache.G_inv)])


# -- A kron B +/- C kron D ---------------------------------------------------


def _sign(sign) -> float:
    if sign in (1, "+", 1.0):
        return 1.0
    if sign in (-1, "-", -1.0):
        return -1.0
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def _sym_eigh(M):
    w, E = np.linalg.eigh(0.5 * (M + M.T))
    return w, E


def _inv_sqrt(M, name):
    w, E = _sym_eigh(M)
    if w.min() <= 0:
        raise SingularSystemError(f"{name} is not positive definite (min eig {w.min():.3g})")
    return (E / np.sqrt(w)) @ E.T


class SteinSolver:
    """Solves ``(A kron B +/- C kron D) u = v`` for many right-hand sides.

    With ``A^{-1/2} C A^{-1/2} = E1 S1 E1^T`` and
    ``B^{-1/2} D B^{-1/2} = E2 S2 E2^T`` the inverse is
    ``(K1 kron K2) (I +/- S1 kron S2)^{-1} (K1 kron K2)^T`` where
    ``K1 = A^{-1/2} E1`` and ``K2 = B^{-1/2} E2``. The decomposition is done
    once in the constructor.
    """

    def __init__(self, A, B, C, D, sign="+", tol: float = 1e-12):
        sgn = _sign(sign)
        A_mh = _inv_sqrt(np.asarray(A, dtype=float), "A")
        B_mh = _inv_sqrt(np.asarray(B, dtype=float), "B")
        s1, E1 = _sym_eigh(A_mh @ C @ A_mh)
        s2, E2 = _sym_eigh(B_mh @ D @ B_mh)
        self.K1 = A_mh @ E1
        self.K2 = B_mh @ E2
        self.s1, self.s2 = s1, s2
        self.denom = 1.0 + sgn * np.outer(s2, s1)
        smallest = np.abs(self.denom).min()
        if smallest < tol:
            raise SingularSystemError(f"Kronecker-sum pivot {smallest:.3g} below {tol:g}")

    @property
    def shape(self):
        return self.K2.shape[0], self.K1.shape[0]

    def solve(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        rows, cols = self.shape
        if v.shape != (rows * cols,):
            raise ValueError(f"vector has shape {v.shape}, expected ({rows * cols},)")
        V = v.reshape((rows, cols), order="F")
        X = (self.K2.T @ V @ self.K1) / self.denom
        return (self.K2 @ X @ self.K1.T).ravel(order="F")


class ScaledSteinSolver(SteinSolver):
    """``(xi I kron I +/- C kron D) u = v`` using eigendecompositions of C and D directly."""

    def __init__(self, xi: float, C, D, sign="+", tol: float = 1e-12):
        sgn = _sign(sign)
        s1, E1 = _sym_eigh(np.asarray(C, dtype=float))
        s2, E2 = _sym_eigh(np.asarray(D, dtype=float))
        self.K1, self.K2 = E1, E2
        self.s1, self.s2 = s1, s2
        self.denom = xi + sgn * np.outer(s2, s1)
        smallest = np.abs(self.denom).min()
        if smallest < tol:
            raise SingularSystemError(f"Kronecker-sum pivot {smallest:.3g} below {tol:g}")


def stein_solve(A, B, C, D, sign, v) -> np.ndarray:
    return SteinSolver(A, B, C, D, sign).solve(v)


def stein_solve_scaled(xi: float, C, D, sign, v) -> np.ndarray:
    return ScaledSteinSolver(xi, C, D, sign).solve(v)


@dataclass
class ExactTikhonovCache:
    """Per-layer solvers for ``A kron G + damping * I`` (the unfactored damping)."""

    solvers: list[ScaledSteinSolver]
    damping: float

    @property
    def shapes(self):
        return [s.shape for s in self.solvers]


def exact_tikhonov_build(factors: FactorSet, damping: float) -> ExactTikhonovCache:
    return ExactTikhonovCache(
        [ScaledSteinSolver(damping, A, G, "+") for A, G in zip(factors.A, factors.G)],
        float(damping))


def exact_tikhonov_apply(cache: ExactTikhonovCache, v) -> np.ndarray:
    Vs = _split(v, cache.shapes)
    return np.concatenate([s.solve(V.ravel(order="F")) for s, V in zip(cache.solvers, Vs)])


# -- block-tridiagonal -------------------------------------------------------


@dataclass
class TridiagCache:
    """Pieces of ``F_hat^{-1} = Xi^T Lambda Xi``.

    ``psi_A[i]`` / ``psi_G[i]`` couple layer ``i+1`` to layer ``i+2``
    (1-based); ``sigma[i]`` solves with the conditional covariance of layer
    ``i+1`` given layer ``i+2``; the top layer uses plain damped inverses.
    """

    psi_A: list[np.ndarray]
    psi_G: list[np.ndarray]
    sigma: list[SteinSolver]
    top_A_inv: np.ndarray
    top_G_inv: np.ndarray
    gamma: float
    pi: list[float]
    shapes: list[tuple[int, int]]


def tridiag_build(factors: FactorSet, gamma: float, use_pi: bool = True) -> TridiagCache:
    if factors.mode != "tridiag":
        raise ValueError("block-tridiagonal inverse needs cross-layer factors "
                         "(estimate them with mode='tridiag')")
    d = damp_factors(factors, gamma, use_pi)
    n = len(d.A)
    A_inv = [None] * n
    G_inv = [None] * n
    for i in range(1, n):
        A_inv[i] = spd_inverse(d.A[i])
        G_inv[i] = spd_inverse(d.G[i])
    psi_A, psi_G, sigma = [], [], []
    for i in range(n - 1):
        pA = factors.A_off[i] @ A_inv[i + 1]
        pG = factors.G_off[i] @ G_inv[i + 1]
        C = pA @ d.A[i + 1] @ pA.T
        D = pG @ d.G[i + 1] @ pG.T
        try:
            sigma.append(SteinSolver(d.A[i], d.G[i], C, D, "-"))
        except SingularSystemError as err:
            raise SingularSystemError(str(err), layer=i + 1) from err
        psi_A.append(pA)
        psi_G.append(pG)
    top_A = A_inv[-1] if n > 1 else spd_inverse(d.A[-1])
    top_G = G_inv[-1] if n > 1 else spd_inverse(d.G[-1])
    return TridiagCache(psi_A, psi_G, sigma, top_A, top_G, d.gamma, d.pi, d.shapes)


def tridiag_apply(cache: TridiagCache, v) -> np.ndarray:
    """Multiply by ``Xi``, then ``Lambda``, then ``Xi^T``."""
    Vs = _split(v, cache.shapes)
    n = len(Vs)
    U = [Vs[i] - cache.psi_G[i] @ Vs[i + 1] @ cache.psi_A[i].T for i in range(n - 1)]
    U.append(Vs[-1])
    L = []
    for i in range(n - 1):
        rows, cols = cache.shapes[i]
        L.append(cache.sigma[i].solve(U[i].ravel(order="F")).reshape((rows, cols), order="F"))
    L.append(cache.top_G_inv @ U[-1] @ cache.top_A_inv)
    out = [L[0]] + [L[i] - cache.psi_G[i - 1].T @ L[i - 1] @ cache.psi_A[i - 1]
                    for i in range(1, n)]
    return vec(out)


# -- dense helpers (tests and diagnostics) -----------------------------------


def as_dense(apply: Callable[[np.ndarray], np.ndarray], n: int) -> np.ndarray:
    """Materialize a linear map by applying it to the standard basis."""
    out = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        out[:, j] = apply(e)
        e[j] = 0.0
    return out


def dense_blockdiag(A: Sequence[np.ndarray], G: Sequence[np.ndarray]) -> np.ndarray:
    return linalg.block_diag(*[np.kron(a, g) for a, g in zip(A, G)])


def dense_khatri_rao(A_all, G_all) -> np.ndarray:
    """``F_tilde`` with block ``(i, j)`` equal to ``A_all[i][j] kron G_all[i][j]``."""
    n = len(A_all)
    return np.block([[np.kron(A_all[i][j], G_all[i][j]) for j in range(n)] for i in range(n)])


def damped_khatri_rao(A_all, G_all, gamma: float, use_pi: bool = True) -> np.ndarray:
    """``F_tilde`` whose diagonal blocks carry the factored Tikhonov damping."""
    n = len(A_all)
    fs = FactorSet([A_all[i][i] for i in range(n)], [G_all[i][i] for i in range(n)])
    d = damp_factors(fs, gamma, use_pi)
    blocks = [[np.kron(d.A[i], d.G[i]) if i == j else np.kron(A_all[i][j], G_all[i][j])
               for j in range(n)] for i in range(n)]
    return np.block(blocks)
