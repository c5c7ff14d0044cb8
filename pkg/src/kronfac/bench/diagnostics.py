"""Dense comparisons of the exact Fisher with its Kronecker approximations.

Everything here materializes ``n x n`` matrices, so it is limited to small
networks. Factor statistics are exact expectations over the model's
predictive distribution (see :func:`kronfac.factors.exact_record`), which
keeps the comparison free of sampling noise.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..factors import FactorSet, all_moments, exact_record
from ..fisher import DENSE_LIMIT, dense_fisher
from ..kron import (as_dense, blockdiag_apply, blockdiag_build, damped_khatri_rao,
                    dense_blockdiag, dense_khatri_rao, tridiag_apply, tridiag_build)
from ..net import MLP


@dataclass
class FisherComparison:
    F: np.ndarray
    F_tilde: np.ndarray
    F_breve: np.ndarray
    F_hat: np.ndarray
    F_inv: np.ndarray
    F_tilde_inv: np.ndarray
    F_breve_inv: np.ndarray
    F_hat_inv: np.ndarray
    block_sizes: list[int]

    def summary(self) -> dict[str, float]:
        fro = lambda X: float(np.linalg.norm(X, "fro"))
        return {
            "F_vs_Ftilde": fro(self.F - self.F_tilde),
            "Ftilde_inv_vs_Fbreve_inv": fro(self.F_tilde_inv - self.F_breve_inv),
            "Ftilde_inv_vs_Fhat_inv": fro(self.F_tilde_inv - self.F_hat_inv),
            "F_inv_vs_Fbreve_inv": fro(self.F_inv - self.F_breve_inv),
            "F_inv_vs_Fhat_inv": fro(self.F_inv - self.F_hat_inv),
        }

    def block_means(self, M: np.ndarray) -> np.ndarray:
        """Mean absolute entry of every layer-by-layer block of ``M``."""
        edges = np.concatenate([[0], np.cumsum(self.block_sizes)])
        n = len(self.block_sizes)
        out = np.empty((n, n))
        for i in range(n):
            for j in range(n):
                out[i, j] = np.mean(np.abs(M[edges[i]:edges[i + 1], edges[j]:edges[j + 1]]))
        return out


def compare_fisher(net: MLP, theta, inputs, gamma: float) -> FisherComparison:
    """Dense ``F``, ``F_tilde``, ``F_breve``, ``F_hat`` and their damped inverses.

    ``F_hat`` is the inverse of the block-tridiagonal inverse approximation.
    The damped ``F_tilde`` adds the factored Tikhonov terms to its diagonal
    blocks; the same increments are added to ``F`` so the two are comparable.
    """
    n = net.arch.n_params
    if n > DENSE_LIMIT:
        raise ValueError(f"dense diagnostics refused: {n} parameters > {DENSE_LIMIT}")
    record = exact_record(net, theta, inputs)
    A_all, G_all = all_moments(record)
    L = len(A_all)
    F = dense_fisher(net, theta, inputs)
    F_tilde = dense_khatri_rao(A_all, G_all)
    F_breve = dense_blockdiag([A_all[i][i] for i in range(L)], [G_all[i][i] for i in range(L)])
    tri = FactorSet([A_all[i][i] for i in range(L)], [G_all[i][i] for i in range(L)],
                    [A_all[i][i + 1] for i in range(L - 1)],
                    [G_all[i][i + 1] for i in range(L - 1)], mode="tridiag")

    damped_tilde = damped_khatri_rao(A_all, G_all, gamma)
    F_inv = np.linalg.inv(F + (damped_tilde - F_tilde))
    F_tilde_inv = np.linalg.inv(damped_tilde)
    bd = blockdiag_build(tri, gamma)
    F_breve_inv = as_dense(lambda v: blockdiag_apply(bd, v), n)
    td = tridiag_build(tri, gamma)
    F_hat_inv = as_dense(lambda v: tridiag_apply(td, v), n)
    # undamped F_hat, from the undamped tridiagonal inverse when it exists
    try:
        F_hat = np.linalg.inv(as_dense(lambda v: tridiag_apply(tridiag_build(tri, 0.0), v), n))
    except np.linalg.LinAlgError:
        F_hat = np.full((n, n), np.nan)
    sizes = [A_all[i][i].shape[0] * G_all[i][i].shape[0] for i in range(L)]
    return FisherComparison(F, F_tilde, F_breve, F_hat, F_inv, F_tilde_inv, F_breve_inv,
                            F_hat_inv, sizes)


def _write_matrix(path: Path, M: np.ndarray) -> None:
    np.savetxt(path, M, delimiter=",", fmt="%.10g")


def dump_fisher_diagnostics(net: MLP, theta, inputs, gamma: float, out_dir,
                            plots: bool = True) -> dict[str, float]:
    """Write every matrix as CSV plus ``summary.csv`` and ``block_means.csv``.

    Returns the Frobenius summary.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cmp = compare_fisher(net, theta, inputs, gamma)
    mats = {
        "F": cmp.F, "F_tilde": cmp.F_tilde, "F_breve": cmp.F_breve, "F_hat": cmp.F_hat,
        "F_inv": cmp.F_inv, "F_tilde_inv": cmp.F_tilde_inv, "F_breve_inv": cmp.F_breve_inv,
        "F_hat_inv": cmp.F_hat_inv,
        "absdiff_F_Ftilde": np.abs(cmp.F - cmp.F_tilde),
        "absdiff_Ftilde_inv_Fbreve_inv": np.abs(cmp.F_tilde_inv - cmp.F_breve_inv),
        "absdiff_Ftilde_inv_Fhat_inv": np.abs(cmp.F_tilde_inv - cmp.F_hat_inv),
    }
    for name, M in mats.items():
        _write_matrix(out / f"{name}.csv", M)
    summary = cmp.summary()
    with (out / "summary.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["quantity", "frobenius_norm"])
        for k, v in summary.items():
            w.writerow([k, f"{v:.10g}"])
    with (out / "block_means.csv").open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["matrix", "row_layer", "col_layer", "mean_abs"])
        for name in ("F", "absdiff_F_Ftilde", "F_tilde_inv", "absdiff_Ftilde_inv_Fbreve_inv",
                     "absdiff_Ftilde_inv_Fhat_inv"):
            bm = cmp.block_means(mats[name])
            for i in range(bm.shape[0]):
                for j in range(bm.shape[1]):
                    w.writerow([name, i + 1, j + 1, f"{bm[i, j]:.10g}"])
    if plots:
        from .plotting import fisher_panels

        fisher_panels(cmp, out)
    return summary
