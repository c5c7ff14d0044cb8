"""Exact Fisher products ``F v = mean_x J^T F_R J v`` and the quadratic model.

``F_R`` is the Fisher of the predictive distribution in the network's
output (natural-parameter) space: the identity for unit-variance Gaussian
outputs and ``diag(p) - p p^T`` for the softmax. With outputs in natural
parameters this Fisher coincides with the generalized Gauss-Newton matrix.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .net import MLP, PassRecord

DENSE_LIMIT = 5000


def _record(net: MLP, theta, batch) -> PassRecord:
    return batch if isinstance(batch, PassRecord) else net.forward(theta, batch)


def jacobian_vec(net: MLP, theta, batch, v) -> np.ndarray:
    """``J v`` per case as a ``(d_out, m)`` array.

    ``batch`` is either raw inputs or a :class:`PassRecord` from a forward
    pass at ``theta`` (which saves recomputing it).
    """
    return net.jvp(theta, _record(net, theta, batch), v)


def fisher_vec(net: MLP, theta, batch, v) -> np.ndarray:
    record = _record(net, theta, batch)
    if record.m == 0:
        raise ValueError("empty batch")
    jv = net.jvp(theta, record, v)
    fv, _ = net.backprop(theta, record, net.output_fisher_vec(record, jv))
    return fv


@dataclass(frozen=True)
class QuadScalars:
    vFv: float
    uFv: float
    uFu: float
    grad_dot_v: float
    grad_dot_u: float
    lambda_eta: float


def _pair(net, record, jx, jy) -> float:
    return float(np.sum(jx * net.output_fisher_vec(record, jy)) / record.m)


def quad_scalars(net: MLP, theta, batch, v, u, grad, lambda_eta: float) -> QuadScalars:
    """``v^T F v``, ``u^T F v``, ``u^T F u`` from two Jacobian passes.

    No ``J^T`` pass is needed: ``x^T F y = mean (J x)^T F_R (J y)``.
    """
    record = _record(net, theta, batch)
    jv = net.jvp(theta, record, v)
    ju = net.jvp(theta, record, u)
    return QuadScalars(
        vFv=_pair(net, record, jv, jv),
        uFv=_pair(net, record, ju, jv),
        uFu=_pair(net, record, ju, ju),
        grad_dot_v=float(np.dot(grad, v)),
        grad_dot_u=float(np.dot(grad, u)),
        lambda_eta=float(lambda_eta),
    )


def dense_fisher(net: MLP, theta, batch) -> np.ndarray:
    """Dense ``F`` built one column at a time from :func:`fisher_vec`.

    Only meant as a test oracle; refuses networks above 5000 parameters.
    """
    n = net.arch.n_params
    if n > DENSE_LIMIT:
        raise ValueError(f"dense Fisher refused: {n} parameters > {DENSE_LIMIT}")
    record = _record(net, theta, batch)
    F = np.empty((n, n))
    e = np.zeros(n)
    for j in range(n):
        e[j] = 1.0
        F[:, j] = fisher_vec(net, theta, record, e)
        e[j] = 0.0
    return F


def quad_model(net: MLP, theta, batch, grad, delta, lambda_eta: float,
               h_theta: float) -> float:
    """``M(delta) = 1/2 delta^T (F + (lambda+eta) I) delta + grad^T delta + h``."""
    delta = np.asarray(delta, dtype=float)
    if not delta.any():
        return float(h_theta)
    record = _record(net, theta, batch)
    jd = net.jvp(theta, record, delta)
    curv = _pair(net, record, jd, jd) + lambda_eta * float(delta @ delta)
    return 0.5 * curv + float(np.dot(grad, delta)) + float(h_theta)


def reduction_ratio(h_new: float, h_old: float, M_delta: float) -> float | None:
    """Actual over predicted change, ``(h_new - h_old) / (M(delta) - h_old)``.

    Returns ``None`` when the predicted change is numerically zero, in which
    case callers skip the damping adjustment.
    """
    predicted = M_delta - h_old
    if abs(predicted) < 1e-300:
        return None
    return (h_new - h_old) / predicted
