import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kronfac.bench.cli import main
from kronfac.bench.config import ConfigError, parse_config
from kronfac.bench.datasets import Dataset, digits16, load_matrix_file, save_matrix_file
from kronfac.bench.diagnostics import compare_fisher, dump_fisher_diagnostics
from kronfac.bench.problems import PROBLEMS, get_problem
from kronfac.bench.runner import COLUMNS, load_checkpoint, run_experiment
from kronfac.bench.sgd import (SGD, SGDConfig, momentum_schedule, polyak_average,
                               sgd_nesterov_step)
from kronfac.net import MLP, Architecture

from conftest import random_problem


# -- datasets ----------------------------------------------------------------


def test_digits16_is_deterministic_and_balanced():
    a, b = digits16(200, seed=3), digits16(200, seed=3)
    np.testing.assert_array_equal(a.inputs, b.inputs)
    assert a.inputs.shape == (200, 256)
    assert np.bincount(a.targets).tolist() == [20] * 10
    assert a.inputs.min() >= 0 and a.inputs.max() <= 1


def test_matrix_file_roundtrip(tmp_path):
    ds = digits16(30, seed=1)
    save_matrix_file(ds, tmp_path / "d.txt")
    back = load_matrix_file(tmp_path / "d.txt")
    np.testing.assert_array_equal(back.inputs, ds.inputs)
    np.testing.assert_array_equal(back.targets, ds.targets)


def test_matrix_file_errors(tmp_path):
    p = tmp_path / "bad.txt"
    p.write_text("2 2 1\n1 2 0\n")
    with pytest.raises(ValueError, match="expected 6"):
        load_matrix_file(p)
    p.write_text("2 2\n")
    with pytest.raises(ValueError, match="header"):
        load_matrix_file(p)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), np.zeros((2, 3)), "autoencoder")
    with pytest.raises(ValueError):
        Dataset(np.full((2, 2), np.nan), [0, 1], "classification")
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0.5, 1], "classification")


def test_problem_registry():
    for name in PROBLEMS:
        p = get_problem(name)
        assert p.arch.layer_dims[0] == p.data.inputs.shape[1]
        assert 0 <= p.train_error(p.init(0))
    with pytest.raises(KeyError):
        get_problem("mnist_full")


# -- config ------------------------------------------------------------------


def test_parse_config():
    cfg = parse_config("""
        # comment
        problem = tiny_autoencoder
        optimizer = kfac_bd
        momentum = off
        lambda0 = 3.5
        batch_schedule = exp:10:to_full_at:50   # trailing comment
        max_iters = 7
        seed = 4
    """)
    assert cfg.problem == "tiny_autoencoder" and cfg.optimizer == "kfac_bd"
    assert cfg.momentum is False and cfg.lambda0 == 3.5 and cfg.max_iters == 7 and cfg.seed == 4


@pytest.mark.parametrize("text", ["optimizer = adam", "max_iters", "colour = red",
                                  "seed = 1\nseed = 2", "batch_schedule = sometimes",
                                  "momentum = maybe", "eta = small"])
def test_parse_config_errors(text):
    with pytest.raises(ConfigError):
        parse_config(text)


# -- SGD baseline ------------------------------------------------------------


def test_nesterov_step_reference_loop(rng):
    net, theta, X, Y = random_problem(5)
    grad = lambda t: net.backward(t, net.forward(t, X), Y)[0]
    th, v = theta.copy(), np.zeros_like(theta)
    ref_th, ref_v = theta.copy(), np.zeros_like(theta)
    for k in range(1, 6):
        mu = momentum_schedule(k * 250)
        th, v = sgd_nesterov_step(th, v, grad(th + mu * v), 0.05, mu)
        g = grad(ref_th + mu * ref_v)
        ref_v = [mu * a - 0.05 * b for a, b in zip(ref_v, g)]
        ref_th = [a + b for a, b in zip(ref_th, ref_v)]
        ref_v, ref_th = np.array(ref_v), np.array(ref_th)
    np.testing.assert_array_equal(th, ref_th)


def test_nesterov_special_cases(rng):
    th, v, g = rng.standard_normal(4), rng.standard_normal(4), rng.standard_normal(4)
    np.testing.assert_allclose(sgd_nesterov_step(th, v, g, 0.1, 0.0)[0], th - 0.1 * g)
    np.testing.assert_allclose(sgd_nesterov_step(th, v, 0 * g, 0.1, 0.5)[0], th + 0.5 * v)
    with pytest.raises(ValueError):
        sgd_nesterov_step(th, v, g, 0.1, 1.0)


def test_momentum_schedule():
    assert momentum_schedule(0) == 0.5
    assert momentum_schedule(249) == 0.5
    assert momentum_schedule(250) == 0.75
    assert momentum_schedule(750) == pytest.approx(0.875)
    assert momentum_schedule(10**6, 0.99) == 0.99


def test_polyak_average_first_and_constant():
    x = np.arange(3.0)
    np.testing.assert_array_equal(polyak_average(None, x), x)
    avg = None
    for _ in range(10):
        avg = polyak_average(avg, x)
    np.testing.assert_allclose(avg, x, rtol=1e-15)
    with pytest.raises(ValueError):
        polyak_average(np.zeros(2), np.zeros(3))


@given(st.lists(st.floats(-100, 100), min_size=1, max_size=50), st.floats(0.5, 0.999))
@settings(max_examples=50, deadline=None)
def test_polyak_average_geometric_weights(values, xi):
    avg = None
    for v in values:
        avg = polyak_average(avg, np.array([v]), xi)
    n = len(values)
    w = [(1 - xi) * xi ** (n - 1 - j) for j in range(n)]
    w[0] = xi ** (n - 1)
    ref = sum(wj * v for wj, v in zip(w, values))
    assert sum(w) == pytest.approx(1.0, rel=1e-12)
    assert avg[0] == pytest.approx(ref, rel=1e-12, abs=1e-9)


def test_sgd_converges_on_convex_quadratic():
    p = get_problem("linear_quadratic")
    opt = SGD(p.net, p.init(0), SGDConfig(learn_rate=0.01, batch_schedule="full", eta=0.0))
    X, Y = p.data.inputs, p.data.targets
    objs = []
    for _ in range(300):
        opt.step(X, Y)
        objs.append(p.net.loss(opt.theta, X, Y))
    tail = np.array(objs[50:])
    assert np.all(np.diff(tail) <= 1e-12 * np.abs(tail[:-1]))


# -- runner and CLI ----------------------------------------------------------


def write(tmp_path, text, name="run.cfg"):
    p = tmp_path / name
    p.write_text(text)
    return p


def read_rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def test_zero_iterations_writes_header_only(tmp_path):
    cfg = parse_config("problem = linear_quadratic\noptimizer = sgd\nlearn_rate = 0.01\nmax_iters = 0")
    summary = run_experiment(cfg, tmp_path, plots=False)
    rows = read_rows(tmp_path / "metrics.csv")
    assert rows == [COLUMNS]
    assert summary["iterations"] == 0
    assert json.loads((tmp_path / "summary.json").read_text())["config"]["optimizer"] == "sgd"


def test_csv_columns_exact():
    assert ",".join(COLUMNS) == "iter,cases,wall_s,objective,train_error,lambda,gamma,alpha,mu,batch_size"


@pytest.mark.parametrize("optimizer", ["kfac_bd", "kfac_btd", "sgd"])
def test_runs_are_deterministic(tmp_path, optimizer):
    text = (f"problem = tiny_autoencoder\noptimizer = {optimizer}\nmax_iters = 12\n"
            "batch_schedule = fixed:64\nlearn_rate = 0.01\nseed = 3\n")
    cfg = parse_config(text)
    bodies = []
    for i in range(2):
        run_experiment(cfg, tmp_path / str(i), plots=False)
        rows = read_rows(tmp_path / str(i) / "metrics.csv")
        assert len(rows) == 13
        bodies.append([r[:2] + r[3:] for r in rows])
    assert bodies[0] == bodies[1]
    cases = [int(r[1]) for r in rows[1:]]
    wall = [float(r[2]) for r in rows[1:]]
    assert cases == sorted(cases) and wall == sorted(wall)


def test_cli_run_writes_artifacts(tmp_path, capsys):
    cfg = write(tmp_path, "problem = tiny_autoencoder\noptimizer = kfac_btd\nmax_iters = 5\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--seed", "2"]) == 0
    out = tmp_path / "o"
    for name in ("metrics.csv", "summary.json", "checkpoint.npz", "curves.png"):
        assert (out / name).exists()
    assert json.loads((out / "summary.json").read_text())["seed"] == 2
    theta, problem, _ = load_checkpoint(out / "checkpoint.npz")
    assert problem == "tiny_autoencoder" and theta.ndim == 1


def test_cli_bad_config_exit_2(tmp_path, capsys):
    cfg = write(tmp_path, "optimizer = newton\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
    assert "config error" in capsys.readouterr().err
    assert main(["run", "--config", str(tmp_path / "missing.cfg"), "--out", str(tmp_path)]) == 2
    cfg = write(tmp_path, "problem = imagenet\n", "p.cfg")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2


def test_cli_numerical_abort_exit_3(tmp_path, capsys):
    cfg = write(tmp_path, "problem = linear_quadratic\noptimizer = sgd\nlearn_rate = 1e6\n"
                          "max_iters = 200\nbatch_schedule = full\n")
    assert main(["run", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 3
    err = capsys.readouterr().err
    assert "last good checkpoint" in err
    path = err.strip().splitlines()[-1].split(": ", 1)[1]
    theta, _, _ = load_checkpoint(path)
    assert np.isfinite(theta).all()
    rows = read_rows(tmp_path / "o" / "metrics.csv")
    assert rows[0] == COLUMNS


def test_cli_list_problems(capsys):
    assert main(["list-problems"]) == 0
    out = capsys.readouterr().out
    assert all(name in out for name in PROBLEMS)


def test_cli_diag(tmp_path, capsys):
    cfg = write(tmp_path, "problem = tiny_autoencoder\noptimizer = kfac_bd\nmax_iters = 3\n")
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--no-plots"])
    assert main(["diag", "--checkpoint", str(tmp_path / "o" / "checkpoint.npz"),
                 "--gamma", "0.1", "--out", str(tmp_path / "d")]) == 0
    for name in ("F.csv", "F_tilde_inv.csv", "summary.csv", "block_means.csv",
                 "fisher_approx.png", "inverse_approx.png"):
        assert (tmp_path / "d" / name).exists()
    assert "F_vs_Ftilde" in capsys.readouterr().out


def test_cli_diag_size_guard(tmp_path, capsys):
    cfg = write(tmp_path, "problem = digits16\nmax_iters = 0\n")
    main(["run", "--config", str(cfg), "--out", str(tmp_path / "o"), "--no-plots"])
    assert main(["diag", "--checkpoint", str(tmp_path / "o" / "checkpoint.npz"),
                 "--gamma", "0.1", "--out", str(tmp_path / "d")]) == 2
    assert "refused" in capsys.readouterr().err


# -- diagnostics -------------------------------------------------------------


def test_breve_blocks_equal_tilde_blocks():
    net, theta, X, _ = random_problem(8, "softmax_cross_entropy", m=20, min_layers=2)
    cmp = compare_fisher(net, theta, X, 0.2)
    edges = np.cumsum([0] + cmp.block_sizes)
    for i in range(len(cmp.block_sizes)):
        b = slice(edges[i], edges[i + 1])
        np.testing.assert_array_equal(cmp.F_breve[b, b], cmp.F_tilde[b, b])
    off = slice(edges[0], edges[1]), slice(edges[1], edges[2])
    assert not cmp.F_breve[off].any()


def test_block_means_and_files(tmp_path):
    arch = Architecture.mlp([3, 4, 4, 2], "tanh", "softmax_cross_entropy")
    net = MLP(arch)
    rng = np.random.default_rng(0)
    theta, X = rng.standard_normal(arch.n_params) * 0.5, rng.standard_normal((30, 3))
    summary = dump_fisher_diagnostics(net, theta, X, 0.3, tmp_path, plots=False)
    assert set(summary) >= {"F_vs_Ftilde", "Ftilde_inv_vs_Fbreve_inv", "Ftilde_inv_vs_Fhat_inv"}
    F = np.loadtxt(tmp_path / "F.csv", delimiter=",")
    assert F.shape == (arch.n_params, arch.n_params)
    rows = read_rows(tmp_path / "block_means.csv")
    assert rows[0] == ["matrix", "row_layer", "col_layer", "mean_abs"]
    assert len(rows) == 1 + 5 * 9
