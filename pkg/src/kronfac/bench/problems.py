"""Registry of benchmark problems.

A problem bundles an architecture, a dataset, an initialization and any
default hyperparameters that differ from the optimizer's own defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..net import MLP, Architecture, init_sparse
from .datasets import Dataset, digits16, load_matrix_file


@dataclass
class Problem:
    name: str
    arch: Architecture
    data: Dataset
    init_scale: float = 1.0
    defaults: dict = field(default_factory=dict)

    @property
    def net(self) -> MLP:
        return MLP(self.arch)

    def init(self, seed: int) -> np.ndarray:
        return init_sparse(self.arch, seed, scale=self.init_scale)

    def train_error(self, theta) -> float:
        """Misclassification rate, or mean per-case squared reconstruction error."""
        net = MLP(self.arch)
        if self.data.kind == "classification":
            pred = np.argmax(net.forward(theta, self.data.inputs).output, axis=0)
            return float(np.mean(pred != self.data.targets))
        out = net.forward(theta, self.data.inputs).output.T
        return float(np.mean(np.sum((out - self.data.targets) ** 2, axis=1)))


def _digits16(data_file: str | None = None) -> Problem:
    data = load_matrix_file(data_file) if data_file else digits16(2000, seed=0)
    arch = Architecture.mlp([256, 20, 20, 20, 20, 20, 10], "tanh", "softmax_cross_entropy")
    return Problem("digits16", arch, data, init_scale=0.5,
                   defaults={"lambda0": 0.01, "batch_schedule": "full"})


def _tiny_autoencoder(data_file: str | None = None) -> Problem:
    if data_file:
        data = load_matrix_file(data_file, "autoencoder")
    else:
        full = digits16(600, seed=1)
        # 4x4 average-pooled digits in [0, 1]
        X = full.inputs.reshape(-1, 4, 4, 4, 4).mean(axis=(2, 4)).reshape(-1, 16)
        data = Dataset(X, X, "autoencoder", "digits4x4")
    d = data.inputs.shape[1]
    arch = Architecture((d, 12, 4, 12, d), ("tanh", "identity", "tanh", "identity"))
    return Problem("tiny_autoencoder", arch, data, init_scale=0.5,
                   defaults={"batch_schedule": "full"})


def _linear_quadratic(data_file: str | None = None) -> Problem:
    """Least-squares regression with one linear layer: a convex quadratic."""
    if data_file:
        data = load_matrix_file(data_file, "regression")
    else:
        rng = np.random.default_rng(2)
        X = rng.standard_normal((500, 8)) @ np.diag(np.linspace(0.2, 3.0, 8))
        W = rng.standard_normal((3, 9))
        Y = X @ W[:, :-1].T + W[:, -1] + 0.1 * rng.standard_normal((500, 3))
        data = Dataset(X, Y, "regression", "linear")
    arch = Architecture((data.inputs.shape[1], data.targets.shape[1]), ("identity",))
    return Problem("linear_quadratic", arch, data, init_scale=0.1,
                   defaults={"lambda0": 1.0, "batch_schedule": "full"})


PROBLEMS: dict[str, tuple[Callable[..., Problem], str]] = {
    "digits16": (_digits16, "256-20-20-20-20-20-10 tanh classifier on 16x16 digits"),
    "tiny_autoencoder": (_tiny_autoencoder, "16-12-4-12-16 autoencoder on pooled digits"),
    "linear_quadratic": (_linear_quadratic, "single linear layer, squared error (convex)"),
}


def get_problem(name: str, data_file: str | None = None) -> Problem:
    try:
        build, _ = PROBLEMS[name]
    except KeyError:
        raise KeyError(f"unknown problem {name!r}; known: {', '.join(PROBLEMS)}") from None
    return build(data_file)
