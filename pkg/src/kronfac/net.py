"""Feed-forward networks in homogeneous coordinates.

Each layer computes ``s_i = W_i @ abar_{i-1}`` and ``a_i = phi_i(s_i)`` where
``abar`` is the activity vector with a trailing 1 appended, so the last column
of every weight matrix acts as the bias. Batches are stored column-wise
internally (one case per column); the public entry points accept the usual
``(cases, features)`` layout.

The parameter vector stacks ``vec(W_1), ..., vec(W_l)`` with column-major
``vec``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.special import expit, log_softmax, softmax

ACTIVATIONS = ("tanh", "logistic", "identity")
LOSSES = ("squared_error", "softmax_cross_entropy")


def _phi(name: str, s: np.ndarray) -> np.ndarray:
    if name == "tanh":
        return np.tanh(s)
    if name == "logistic":
        return expit(s)
    return s


def _phi_prime(name: str, s: np.ndarray) -> np.ndarray:
    if name == "tanh":
        t = np.tanh(s)
        return 1.0 - t * t
    if name == "logistic":
        e = expit(s)
        return e * (1.0 - e)
    return np.ones_like(s)


@dataclass(frozen=True)
class Architecture:
    """Layer sizes ``d_0..d_l``, one activation per layer and the loss.

    With ``softmax_cross_entropy`` the output pre-activations are treated as
    the natural parameters of a multinomial, so the last activation must be
    ``identity`` (the softmax lives inside the loss).
    """

    layer_dims: tuple[int, ...]
    activations: tuple[str, ...]
    loss: str = "squared_error"

    def __post_init__(self):
        object.__setattr__(self, "layer_dims", tuple(int(d) for d in self.layer_dims))
        object.__setattr__(self, "activations", tuple(self.activations))
        if len(self.layer_dims) < 2:
            raise ValueError("need at least one layer (two layer sizes)")
        if any(d < 1 for d in self.layer_dims):
            raise ValueError(f"layer sizes must be >= 1, got {self.layer_dims}")
        if len(self.activations) != len(self.layer_dims) - 1:
            raise ValueError("need exactly one activation per layer")
        bad = [a for a in self.activations if a not in ACTIVATIONS]
        if bad:
            raise ValueError(f"unknown activation(s) {bad}; choose from {ACTIVATIONS}")
        if self.loss not in LOSSES:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {LOSSES}")
        if self.loss == "softmax_cross_entropy" and self.activations[-1] != "identity":
            raise ValueError("softmax loss folds the softmax into the loss; "
                             "the output activation must be 'identity'")

    @classmethod
    def mlp(cls, layer_dims: Sequence[int], hidden: str = "tanh",
            loss: str = "squared_error", output: str = "identity") -> "Architecture":
        n = len(layer_dims) - 1
        return cls(tuple(layer_dims), (hidden,) * (n - 1) + (output,), loss)

    @property
    def n_layers(self) -> int:
        return len(self.layer_dims) - 1

    @property
    def shapes(self) -> list[tuple[int, int]]:
        d = self.layer_dims
        return [(d[i], d[i - 1] + 1) for i in range(1, len(d))]

    @property
    def n_params(self) -> int:
        return sum(r * c for r, c in self.shapes)


def vec(weights: Sequence[np.ndarray]) -> np.ndarray:
    return np.concatenate([np.asarray(W, dtype=float).ravel(order="F") for W in weights])


def devec(theta: np.ndarray, shapes: Sequence[tuple[int, int]]) -> list[np.ndarray]:
    """Split a flat parameter vector into per-layer matrices (views)."""
    theta = np.asarray(theta)
    total = sum(r * c for r, c in shapes)
    if theta.shape != (total,):
        raise ValueError(f"parameter vector has shape {theta.shape}, expected ({total},)")
    out, pos = [], 0
    for r, c in shapes:
        out.append(theta[pos:pos + r * c].reshape((r, c), order="F"))
        pos += r * c
    return out


def init_sparse(arch: Architecture, seed: int, k_in: int = 15,
                scale: float | Sequence[float] = 1.0) -> np.ndarray:
    """Sparse initialization: each unit gets ``min(k_in, d_{i-1})`` nonzero
    incoming weights drawn from N(0, 1) times a per-layer ``scale``; biases
    are zero."""
    if k_in < 1:
        raise ValueError("k_in must be >= 1")
    scales = np.broadcast_to(np.asarray(scale, dtype=float), (arch.n_layers,))
    rng = np.random.default_rng(seed)
    weights = []
    for (rows, cols), sc in zip(arch.shapes, scales):
        fan_in = cols - 1
        k = min(k_in, fan_in)
        W = np.zeros((rows, cols))
        for r in range(rows):
            idx = rng.choice(fan_in, size=k, replace=False)
            W[r, idx] = sc * rng.standard_normal(k)
        weights.append(W)
    return vec(weights)


@dataclass
class PassRecord:
    """Quantities from one forward (and optionally backward) pass.

    ``a_bar[i]`` is the homogeneous input to layer ``i+1`` (shape
    ``(d_i + 1, m)``), ``s[i]`` the pre-activation of layer ``i+1`` and
    ``g[i]`` its back-propagated derivative, one column per case.
    """

    a_bar: list[np.ndarray]
    s: list[np.ndarray]
    output: np.ndarray
    g: list[np.ndarray] | None = None
    phi_inputs: list[np.ndarray] | None = None

    @property
    def m(self) -> int:
        return self.output.shape[1]

    def subset(self, idx) -> "PassRecord":
        """Restrict to the cases ``idx``; derivatives are dropped."""
        pick = lambda xs: None if xs is None else [x[:, idx] for x in xs]
        return PassRecord(pick(self.a_bar), pick(self.s), self.output[:, idx],
                          None, pick(self.phi_inputs))


class MLP:
    """Plain network. All methods are pure given their arguments."""

    def __init__(self, arch: Architecture):
        self.arch = arch

    @property
    def shapes(self):
        return self.arch.shapes

    def weights(self, theta):
        return devec(theta, self.arch.shapes)

    def _inputs(self, inputs) -> np.ndarray:
        X = np.asarray(inputs, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2 or X.shape[1] != self.arch.layer_dims[0]:
            raise ValueError(f"inputs must have shape (m, {self.arch.layer_dims[0]}), got {X.shape}")
        return X.T

    def forward(self, theta, inputs) -> PassRecord:
        Ws = self.weights(theta)
        a = self._inputs(inputs)
        ones = np.ones((1, a.shape[1]))
        a_bar, s_list = [], []
        for W, act in zip(Ws, self.arch.activations):
            ab = np.vstack([a, ones])
            s = W @ ab
            a = _phi(act, s)
            a_bar.append(ab)
            s_list.append(s)
        return PassRecord(a_bar, s_list, a)

    # -- loss and predictive distribution --------------------------------

    def target_matrix(self, targets, m: int) -> np.ndarray:
        """Targets as a ``(d_l, m)`` column matrix (class indices become one-hot)."""
        d_out = self.arch.layer_dims[-1]
        y = np.asarray(targets)
        if self.arch.loss == "softmax_cross_entropy" and y.ndim == 1:
            if y.shape[0] != m:
                raise ValueError(f"expected {m} class labels, got {y.shape[0]}")
            Y = np.zeros((d_out, m))
            Y[y.astype(int), np.arange(m)] = 1.0
            return Y
        y = np.asarray(y, dtype=float)
        if y.ndim == 1 and d_out == 1:
            y = y[:, None]
        if y.shape != (m, d_out):
            raise ValueError(f"targets must have shape ({m}, {d_out}), got {y.shape}")
        return y.T

    def losses(self, record: PassRecord, targets) -> np.ndarray:
        """Per-case loss ``-log r(y|z)`` (Gaussian constant dropped)."""
        Y = self.target_matrix(targets, record.m)
        z = record.output
        if self.arch.loss == "squared_error":
            return 0.5 * np.sum((z - Y) ** 2, axis=0)
        return -np.sum(Y * log_softmax(z, axis=0), axis=0)

    def loss(self, theta, inputs, targets) -> float:
        return float(np.mean(self.losses(self.forward(theta, inputs), targets)))

    def output_grad(self, record: PassRecord, targets) -> np.ndarray:
        """dL/dz per case, ``z`` being the network output (natural parameters)."""
        Y = self.target_matrix(targets, record.m)
        if self.arch.loss == "squared_error":
            return record.output - Y
        return softmax(record.output, axis=0) - Y

    def output_fisher_vec(self, record: PassRecord, u: np.ndarray) -> np.ndarray:
        """Apply F_R per case: identity (unit Gaussian) or diag(p) - p p^T."""
        if self.arch.loss == "squared_error":
            return u
        p = softmax(record.output, axis=0)
        return p * u - p * np.sum(p * u, axis=0, keepdims=True)

    def sample_targets(self, record: PassRecord, rng: np.random.Generator) -> np.ndarray:
        """Draw ``y ~ R_{y|f(x)}`` per case; rows are cases."""
        z = record.output
        if self.arch.loss == "squared_error":
            return (z + rng.standard_normal(z.shape)).T
        p = softmax(z, axis=0)
        cdf = np.cumsum(p, axis=0)
        cdf[-1] = 1.0
        u = rng.random(z.shape[1])
        cls = np.argmax(cdf > u[None, :], axis=0)
        Y = np.zeros_like(z)
        Y[cls, np.arange(z.shape[1])] = 1.0
        return Y.T

    def predict(self, theta, inputs) -> np.ndarray:
        out = self.forward(theta, inputs).output
        if self.arch.loss == "softmax_cross_entropy":
            out = softmax(out, axis=0)
        return out.T

    # -- derivatives -----------------------------------------------------

    def backprop(self, theta, record: PassRecord, d_output: np.ndarray):
        """Back-propagate per-case output derivatives.

        Returns the batch-mean gradient vector and the per-layer ``g_i``.
        Passing ``F_R J v`` as ``d_output`` gives ``J^T F_R J v``.
        """
        Ws = self.weights(theta)
        m = record.m
        d_a = d_output
        gs = [None] * len(Ws)
        dWs = [None] * len(Ws)
        for i in range(len(Ws) - 1, -1, -1):
            g = d_a * _phi_prime(self.arch.activations[i], record.s[i])
            gs[i] = g
            dWs[i] = g @ record.a_bar[i].T / m
            if i > 0:
                d_a = Ws[i][:, :-1].T @ g
        return vec(dWs), gs

    def backward(self, theta, record: PassRecord, targets):
        """Gradient of the mean loss; also fills ``record.g``."""
        grad, gs = self.backprop(theta, record, self.output_grad(record, targets))
        record.g = gs
        return grad, record

    def jvp(self, theta, record: PassRecord, v) -> np.ndarray:
        """Directional derivative ``J v`` of the output, one column per case."""
        Ws = self.weights(theta)
        Vs = devec(np.asarray(v, dtype=float), self.arch.shapes)
        r_a = None
        for i, (W, V) in enumerate(zip(Ws, Vs)):
            r_s = V @ record.a_bar[i]
            if r_a is not None:
                r_s += W[:, :-1] @ r_a
            r_a = _phi_prime(self.arch.activations[i], record.s[i]) * r_s
        return r_a


# -- reparameterized networks ---------------------------------------------


@dataclass
class TransformSpec:
    """Invertible ``Omega_0..Omega_{l-1}`` (size ``d_i + 1``) and
    ``Phi_1..Phi_l`` (size ``d_i``); ``Omega_l`` is the identity."""

    omegas: list[np.ndarray]
    phis: list[np.ndarray]
    max_cond: float = field(default=1e12, repr=False)

    def __post_init__(self):
        self.omegas = [np.asarray(o, dtype=float) for o in self.omegas]
        self.phis = [np.asarray(p, dtype=float) for p in self.phis]
        for name, mats in (("Omega", self.omegas), ("Phi", self.phis)):
            for i, M in enumerate(mats):
                if M.ndim != 2 or M.shape[0] != M.shape[1]:
                    raise ValueError(f"{name}[{i}] must be square, got {M.shape}")
                if not np.isfinite(M).all() or np.linalg.cond(M) > self.max_cond:
                    raise ValueError(f"{name}[{i}] is singular or badly conditioned")

    def check(self, arch: Architecture):
        d = arch.layer_dims
        if len(self.omegas) != arch.n_layers or len(self.phis) != arch.n_layers:
            raise ValueError("need one Omega and one Phi per layer")
        for i in range(arch.n_layers):
            if self.omegas[i].shape[0] != d[i] + 1:
                raise ValueError(f"Omega[{i}] must be {d[i] + 1}x{d[i] + 1}")
            if self.phis[i].shape[0] != d[i + 1]:
                raise ValueError(f"Phi[{i + 1}] must be {d[i + 1]}x{d[i + 1]}")

    @classmethod
    def identity(cls, arch: Architecture) -> "TransformSpec":
        d = arch.layer_dims
        return cls([np.eye(d[i] + 1) for i in range(arch.n_layers)],
                   [np.eye(d[i + 1]) for i in range(arch.n_layers)])

    @classmethod
    def random(cls, arch: Architecture, rng: np.random.Generator,
               spread: float = 0.3) -> "TransformSpec":
        """Well-conditioned random transforms ``I + spread * N(0, 1/n)``."""
        def draw(n):
            return np.eye(n) + spread * rng.standard_normal((n, n)) / np.sqrt(n)
        d = arch.layer_dims
        return cls([draw(d[i] + 1) for i in range(arch.n_layers)],
                   [draw(d[i + 1]) for i in range(arch.n_layers)])


def transform(theta, arch: Architecture, spec: TransformSpec,
              direction: str = "to_dagger") -> np.ndarray:
    """Map parameters between a network and its reparameterized twin.

    ``to_dagger`` gives ``W_i' = Phi_i^{-1} W_i Omega_{i-1}^{-1}``;
    ``from_dagger`` is the inverse map ``W_i = Phi_i W_i' Omega_{i-1}``.
    """
    spec.check(arch)
    Ws = devec(theta, arch.shapes)
    out = []
    for W, Om, Ph in zip(Ws, spec.omegas, spec.phis):
        if direction == "to_dagger":
            out.append(np.linalg.solve(Ph, np.linalg.solve(Om.T, W.T).T))
        elif direction == "from_dagger":
            out.append(Ph @ W @ Om)
        else:
            raise ValueError(f"unknown direction {direction!r}")
    return vec(out)


class TransformedMLP(MLP):
    """Network whose layers compute ``abar'_i = Omega_i phibar_i(Phi_i s'_i)``.

    Its input is ``Omega_0 abar_0``. Forward and backward passes are written
    out independently of :class:`MLP` so the two can be checked against
    each other.
    """

    def __init__(self, arch: Architecture, spec: TransformSpec):
        super().__init__(arch)
        spec.check(arch)
        self.spec = spec

    def forward(self, theta, inputs) -> PassRecord:
        Ws = self.weights(theta)
        x = self._inputs(inputs)
        ab = self.spec.omegas[0] @ np.vstack([x, np.ones((1, x.shape[1]))])
        a_bar, s_list, u_list = [], [], []
        n = len(Ws)
        for i, (W, act) in enumerate(zip(Ws, self.arch.activations)):
            s = W @ ab
            u = self.spec.phis[i] @ s
            a = _phi(act, u)
            a_bar.append(ab)
            s_list.append(s)
            u_list.append(u)
            if i + 1 < n:
                ab = self.spec.omegas[i + 1] @ np.vstack([a, np.ones((1, a.shape[1]))])
        return PassRecord(a_bar, s_list, a, None, u_list)

    def backprop(self, theta, record: PassRecord, d_output: np.ndarray):
        Ws = self.weights(theta)
        m = record.m
        d_a = d_output
        gs = [None] * len(Ws)
        dWs = [None] * len(Ws)
        for i in range(len(Ws) - 1, -1, -1):
            d_u = d_a * _phi_prime(self.arch.activations[i], record.phi_inputs[i])
            g = self.spec.phis[i].T @ d_u
            gs[i] = g
            dWs[i] = g @ record.a_bar[i].T / m
            if i > 0:
                d_ext = self.spec.omegas[i].T @ (Ws[i].T @ g)
                d_a = d_ext[:-1]
        return vec(dWs), gs

    def jvp(self, theta, record: PassRecord, v) -> np.ndarray:
        Ws = self.weights(theta)
        Vs = devec(np.asarray(v, dtype=float), self.arch.shapes)
        r_ab = np.zeros_like(record.a_bar[0])
        r_a = None
        for i, (W, V) in enumerate(zip(Ws, Vs)):
            r_s = V @ record.a_bar[i] + W @ r_ab
            r_a = (_phi_prime(self.arch.activations[i], record.phi_inputs[i])
                   * (self.spec.phis[i] @ r_s))
            if i + 1 < len(Ws):
                r_ab = self.spec.omegas[i + 1] @ np.vstack([r_a, np.zeros((1, r_a.shape[1]))])
        return r_a
