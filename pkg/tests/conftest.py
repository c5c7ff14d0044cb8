import numpy as np
import pytest

from kronfac.net import MLP, Architecture


def random_arch(rng, loss="squared_error", max_layers=4, max_width=6, min_layers=1):
    n = int(rng.integers(min_layers, max_layers + 1))
    dims = [int(d) for d in rng.integers(1, max_width + 1, size=n + 1)]
    if loss == "softmax_cross_entropy":
        dims[-1] = max(dims[-1], 2)
        return Architecture.mlp(dims, "tanh", loss, "identity")
    return Architecture.mlp(dims, "tanh", loss, str(rng.choice(["identity", "tanh", "logistic"])))


def random_problem(seed, loss="squared_error", m=None, **kw):
    rng = np.random.default_rng(seed)
    arch = random_arch(rng, loss, **kw)
    net = MLP(arch)
    theta = rng.standard_normal(arch.n_params) * 0.7
    m = m or int(rng.integers(3, 12))
    X = rng.standard_normal((m, arch.layer_dims[0]))
    if loss == "softmax_cross_entropy":
        Y = rng.integers(0, arch.layer_dims[-1], size=m)
    else:
        Y = rng.standard_normal((m, arch.layer_dims[-1]))
    return net, theta, X, Y


def fd_jacobian(f, x, eps=1e-6):
    """Central-difference Jacobian of a vector function (oracle)."""
    f0 = np.atleast_1d(f(x))
    J = np.empty((f0.size, x.size))
    for j in range(x.size):
        e = np.zeros_like(x)
        e[j] = eps
        J[:, j] = (np.atleast_1d(f(x + e)) - np.atleast_1d(f(x - e))).ravel() / (2 * eps)
    return J


def rel_err(a, b):
    a, b = np.asarray(a, dtype=float), np.asarray(b, dtype=float)
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(b), 1e-300))


def random_spd(rng, n, cond=10.0):
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    return (Q * np.geomspace(1.0, cond, n)) @ Q.T


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    for name, mod in list(sys.modules.items()):
        if name.endswith("test_acceptance") and getattr(mod, "RESULTS", None):
            terminalreporter.section("acceptance criteria")
            for n in sorted(mod.RESULTS):
                passed, detail = mod.RESULTS[n]
                terminalreporter.write_line(f"criterion {n}: {'PASS' if passed else 'FAIL'} - {detail}")
