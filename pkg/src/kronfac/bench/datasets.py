"""Datasets for the benchmark problems.

The built-in ``digits16`` set renders seven-segment style digits on a 16x16
grid with random shifts, stroke widths, per-segment intensity and pixel
noise. It is deterministic given its seed and needs no downloads. A real
16x16 digit set can be supplied through :func:`load_matrix_file`.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

KINDS = ("classification", "autoencoder", "regression")

# segments a..g as (row0, col0, row1, col1) on a 12x8 glyph box
_SEGMENTS = {
    "a": (0, 1, 0, 6), "b": (1, 7, 5, 7), "c": (6, 7, 10, 7), "d": (11, 1, 11, 6),
    "e": (6, 0, 10, 0), "f": (1, 0, 5, 0), "g": (5, 1, 6, 6),
}
_DIGITS = ["abcdef", "bc", "abged", "abgcd", "fgbc", "afgcd", "afgedc", "abc", "abcdefg", "abcdfg"]


@dataclass
class Dataset:
    """Inputs are ``(cases, d_0)``; classification targets are 0-based labels."""

    inputs: np.ndarray
    targets: np.ndarray
    kind: str
    name: str = ""

    def __post_init__(self):
        self.inputs = np.asarray(self.inputs, dtype=float)
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.inputs.ndim != 2:
            raise ValueError("inputs must be a 2-d array")
        if not np.isfinite(self.inputs).all():
            raise ValueError("inputs contain non-finite values")
        if self.kind == "classification":
            t = np.asarray(self.targets)
            if t.ndim == 2 and t.shape[1] == 1:
                t = t[:, 0]
            if t.ndim != 1 or np.any(t < 0) or np.any(t != np.round(t)):
                raise ValueError("classification targets must be 0-based integer labels")
            self.targets = t.astype(int)
        else:
            self.targets = np.asarray(self.targets, dtype=float)
            if self.targets.ndim == 1:
                self.targets = self.targets[:, None]
            if not np.isfinite(self.targets).all():
                raise ValueError("targets contain non-finite values")
            if self.kind == "autoencoder" and self.targets.shape != self.inputs.shape:
                raise ValueError("autoencoder targets must equal the inputs in shape")
        if len(self.targets) != len(self.inputs):
            raise ValueError("inputs and targets disagree on the number of cases")

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def n_classes(self) -> int:
        return int(self.targets.max()) + 1 if self.kind == "classification" else 0


def _glyph(digit: int, width: float) -> np.ndarray:
    """Anti-aliased 12x8 rendering of one digit with the given stroke width."""
    rr, cc = np.mgrid[0:12, 0:8].astype(float)
    img = np.zeros((12, 8))
    for seg in _DIGITS[digit]:
        r0, c0, r1, c1 = _SEGMENTS[seg]
        # distance to the segment
        pr, pc = rr - r0, cc - c0
        dr, dc = r1 - r0, c1 - c0
        t = np.clip((pr * dr + pc * dc) / max(dr * dr + dc * dc, 1e-9), 0, 1)
        dist = np.hypot(pr - t * dr, pc - t * dc)
        img = np.maximum(img, np.clip(width - dist, 0, 1))
    return img


def digits16(n: int = 2000, seed: int = 0, noise: float = 0.08) -> Dataset:
    """Balanced synthetic 16x16 digits with pixel values in ``[0, 1]``."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n) % 10
    rng.shuffle(labels)
    X = np.empty((n, 256))
    for i, d in enumerate(labels):
        glyph = _glyph(int(d), width=rng.uniform(0.8, 1.5))
        canvas = np.zeros((16, 16))
        r, c = rng.integers(0, 5), rng.integers(0, 9)
        canvas[r:r + 12, c:c + 8] = glyph * rng.uniform(0.7, 1.0)
        canvas += noise * rng.standard_normal((16, 16))
        X[i] = np.clip(canvas, 0.0, 1.0).ravel()
    return Dataset(X, labels, "classification", "digits16")


def load_matrix_file(path: str | Path, kind: str = "classification") -> Dataset:
    """Read the text matrix format.

    The first line is ``rows cols targets_cols``; the rest are
    whitespace-separated doubles in row-major order, each row holding the
    ``cols`` inputs followed by the ``targets_cols`` targets. For
    classification the single target column holds 0-based class indices.
    """
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().split()
        if len(header) != 3:
            raise ValueError(f"{path}: header must be 'rows cols targets_cols'")
        rows, cols, tcols = (int(h) for h in header)
        data = np.loadtxt(fh, ndmin=1).ravel()
    if data.size != rows * (cols + tcols):
        raise ValueError(f"{path}: expected {rows * (cols + tcols)} values, found {data.size}")
    data = data.reshape(rows, cols + tcols)
    X, Y = data[:, :cols], data[:, cols:]
    if kind == "autoencoder" and tcols == 0:
        Y = X
    if kind == "classification":
        if tcols != 1:
            raise ValueError(f"{path}: classification needs exactly one target column")
        Y = Y[:, 0]
    return Dataset(X, Y, kind, path.stem)


def save_matrix_file(ds: Dataset, path: str | Path) -> None:
    Y = ds.targets.reshape(len(ds), -1)
    with Path(path).open("w") as fh:
        fh.write(f"{len(ds)} {ds.inputs.shape[1]} {Y.shape[1]}\n")
        np.savetxt(fh, np.hstack([ds.inputs, Y]), fmt="%.17g")
