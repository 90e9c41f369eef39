"""Acceptance criteria, one test each; every test prints a single PASS/FAIL line.

The calibration and CES criteria take several minutes in total; select the
fast ones with ``-m "not slow"``.
"""

import json
import os
import time

import numpy as np
import pytest

from stip.analyze import predict_forward
from stip.cli import calibrate_once, main, run_uq, thin_samples
from stip.config import load_config
from stip.dynamics import ObservationConfig, integrate, linear_system
from stip.emulate import GaussianProcessEmulator
from stip.likelihood import KernelSpec, build_kernel_matrix, potential_stgp, potential_time_averaged
from stip.linalg import cholesky, kron_dense, vec
from stip.sample import run_chain

SEEDS = range(10)
LORENZ_TRUTH = np.array([10.0, 28.0, 8.0 / 3.0])


@pytest.fixture
def report(capsys):
    def _report(number, ok, detail):
        with capsys.disabled():
            print(f"\nCRITERION {number}: {'PASS' if ok else 'FAIL'} ({detail})")
        assert ok, detail

    return _report


def _best_rem(system, kind, method, seed, **overrides):
    sets = [f'calibration.method="{method}"', f'likelihood.kind="{kind}"']
    sets += [f"{k}={v}" for k, v in overrides.items()]
    cfg = load_config(overrides=sets, system=system)
    _, _, r_mean, _ = calibrate_once(cfg, seed)
    return float(r_mean.min())


def test_criterion_01_fisher_theorems(tmp_path, report):
    start = time.perf_counter()
    code = main(["fisher", "--trials", "1000", "--out", str(tmp_path)])
    elapsed = time.perf_counter() - start
    with open(tmp_path / "fisher" / "report.json") as fh:
        r = json.load(fh)
    violations = r["theorem_1"]["violations"] + r["theorem_2"]["violations"]
    report(1, code == 0 and violations == 0 and elapsed < 60, f"{violations} violations in {elapsed:.1f}s")


def _spd(rng, n):
    A = rng.standard_normal((n, n))
    return A @ A.T + n * np.eye(n)


def test_criterion_02_potential_forms(report):
    rng = np.random.default_rng(2)
    worst_stgp = worst_avg = 0.0
    for _ in range(100):
        Y, M = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        C_x, C_t, G = _spd(rng, 3), _spd(rng, 4), _spd(rng, 3)
        r = vec(Y - M)
        brute = 0.5 * r @ np.linalg.solve(kron_dense(C_t, C_x), r)
        worst_stgp = max(worst_stgp, abs(potential_stgp(Y, M, C_x, C_t) - brute) / brute)
        R = Y - M
        trace = 0.5 * np.trace(np.full((4, 4), 1 / 16) @ R.T @ np.linalg.inv(G) @ R)
        worst_avg = max(worst_avg, abs(potential_time_averaged(Y, M, G) - trace) / trace)
    ok = worst_stgp <= 1e-9 and worst_avg <= 1e-10
    report(2, ok, f"max rel diff stgp {worst_stgp:.2e}, time-averaged {worst_avg:.2e}")


@pytest.mark.slow
def test_criterion_03_lorenz_calibration(report):
    best = [_best_rem("lorenz63", "stgp", "eks", s) for s in SEEDS]
    wins = sum(b < 0.05 for b in best)
    report(3, wins >= 9, f"{wins}/10 repeats with best REM < 0.05; REMs {np.round(best, 4).tolist()}")


@pytest.mark.slow
@pytest.mark.parametrize("method", ["eki", "eks"])
@pytest.mark.parametrize("system", ["lorenz63", "rossler", "chen"])
def test_criterion_04_model_ordering(system, method, report):
    wins = 0
    for s in SEEDS:
        stgp = _best_rem(system, "stgp", method, s)
        avg = _best_rem(system, "time_averaged", method, s)
        wins += stgp <= avg
    report(4, wins >= 8, f"{system}/{method}: STGP <= time-averaged in {wins}/10")


@pytest.mark.slow
def test_criterion_05_window_efficiency(report):
    stgp = [_best_rem("lorenz63", "stgp", "eks", s, **{"observation.T": 1.0}) for s in SEEDS]
    avg = [_best_rem("lorenz63", "time_averaged", "eks", s, **{"observation.T": 4.0}) for s in SEEDS]
    a, b = float(np.median(stgp)), float(np.median(avg))
    report(5, a <= b, f"median REM STGP T=1 {a:.4f} vs time-averaged T=4 {b:.4f}")


def test_criterion_06_sampler_correctness(report):
    zero = lambda v: 0.0  # noqa: E731
    zero.value_and_grad = lambda v: (0.0, np.zeros_like(v))
    half = lambda v: 0.5 * float(v @ v)  # noqa: E731
    half.value_and_grad = lambda v: (0.5 * float(v @ v), np.asarray(v, dtype=float))
    details, ok = [], True
    for i, sampler in enumerate(("pcn", "inf_mala")):
        ch = run_chain(sampler, zero, 100_000, n_burnin=0, adapt=False, random_state=10 + i, dim=3, step=0.5)
        m, var = ch.samples.mean(axis=0), ch.samples.var(axis=0)
        good = np.all(np.abs(m) < 0.05) and np.all(np.abs(var - 1) < 0.05)
        ok &= bool(good)
        details.append(f"{sampler} prior max|mean| {np.abs(m).max():.3f} max|var-1| {np.abs(var - 1).max():.3f}")
        ch = run_chain(sampler, half, 100_000, n_burnin=0, adapt=False, random_state=20 + i, dim=1, step=0.5)
        v = float(ch.samples.var())
        ok &= abs(v - 0.5) < 0.025
        details.append(f"{sampler} conjugate variance {v:.4f}")
    report(6, ok, "; ".join(details))


@pytest.fixture(scope="module")
def lorenz_ces():
    return run_uq(load_config())


@pytest.mark.slow
def test_criterion_07_posterior_concentration(lorenz_ces, report):
    res = lorenz_ces
    U = res["chain"].physical(res["problem"].prior)
    med = np.median(U, axis=0)
    rel = np.abs(med - LORENZ_TRUTH) / LORENZ_TRUTH
    report(7, len(U) == 10_000 and np.all(rel < 0.05), f"medians {np.round(med, 4).tolist()}, rel err {np.round(rel, 4).tolist()}")


@pytest.mark.slow
def test_criterion_08_prediction(lorenz_ces, report):
    problem = lorenz_ces["problem"]
    U = thin_samples(lorenz_ces["chain"].physical(problem.prior), 100)
    horizon = problem.config.extended(1.5)
    truth = integrate(problem.system, LORENZ_TRUTH, horizon).values
    pred = predict_forward(U, problem.system, horizon)
    err = np.linalg.norm(pred.mean - truth, axis=0) / np.linalg.norm(truth, axis=0)
    window = (horizon.times >= 100) & (horizon.times <= 103 + 1e-9)
    worst = float(err[window].max())
    report(8, len(U) == 100 and worst < 0.1, f"max relative error on [100, 103] {worst:.4f}")


def test_criterion_09_numerical_kernels(report):
    errs = []
    for h in (0.2, 0.1, 0.05, 0.025):
        cfg = ObservationConfig(t0=0.0, T=1.0, J=2, h=h, x0=(1.0,))
        errs.append(abs(integrate(linear_system(), (1.0,), cfg).values[0, -1] - np.exp(-1.0)))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    rk4 = all(12 <= r <= 20 for r in ratios)

    rng = np.random.default_rng(9)
    K = build_kernel_matrix(np.sort(rng.uniform(0, 1, 50)), KernelSpec(lengthscale=0.1))
    psd = np.linalg.eigvalsh(K).min() >= -1e-10 * np.abs(K).max()

    A = _spd(rng, 20)
    recon = np.abs(cholesky(A, jitter=False).reconstruct() - A).max() / np.abs(A).max()

    X = rng.uniform(-1, 1, (25, 3))
    Y = np.column_stack([np.sin(X @ rng.standard_normal(3)), X[:, 0] * X[:, 1]])
    em = GaussianProcessEmulator(nugget=1e-8).fit(X, Y)
    v = rng.uniform(-0.8, 0.8, 3)
    J, h = em.predict_gradient(v), 1e-5
    fd = np.column_stack([(em.predict(v + h * e) - em.predict(v - h * e)) / (2 * h) for e in np.eye(3)])
    grad = np.abs(J - fd).max() / np.abs(J).max()

    ok = rk4 and psd and recon <= 1e-10 and grad <= 1e-4
    report(9, ok, f"RK4 ratios {np.round(ratios, 2).tolist()}, kernel PSD {psd}, Cholesky {recon:.1e}, gradient {grad:.1e}")


def _tree(root):
    out = {}
    for d, _, names in os.walk(root):
        for n in names:
            with open(os.path.join(d, n), "rb") as fh:
                out[os.path.relpath(os.path.join(d, n), root)] = fh.read()
    return out


def test_criterion_10_determinism(tmp_path, report):
    small = ["--set", "observation.T=1", "--set", "observation.J=11", "--set", "calibration.J_ensemble=10",
             "--set", "calibration.N=3", "--set", "emulation.calibration_runs=2",
             "--set", "sampling.n_samples=300", "--set", "sampling.n_burnin=100", "--set", "prediction.n_samples=10"]
    commands = {
        "simulate": [],
        "calibrate": ["--kinds", "stgp,time_averaged"],
        "sweep": ["--axis", "T", "--values", "0.5,1", "--repeats", "2"],
        "uq": [],
        "fisher": ["--trials", "20"],
    }
    differing = []
    for cmd, extra in commands.items():
        out = str(tmp_path / cmd)
        trees = []
        for _ in range(2):
            assert main([cmd, *small, *extra, "--out", out]) == 0
            trees.append(_tree(out))
        if not trees[0] or trees[0] != trees[1]:
            differing.append(cmd)
    report(10, not differing, f"commands with differing reruns: {differing or 'none'}")
