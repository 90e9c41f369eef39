import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stip.calibrate import (
    Ensemble,
    EnsembleKalmanCalibrator,
    eki_increment,
    eki_step,
    eks_drift_matrix,
    eks_step,
    evaluate_ensemble,
    run_enk,
)
from stip.exceptions import ConfigurationError, DivergenceError, InvalidArgumentError
from stip.problems import FunctionProblem, GaussianData


def identity_problem(y=0.0, gamma=1.0, dim=1):
    lik = GaussianData(np.full(dim, y), gamma * np.eye(dim))
    return FunctionProblem(lambda V: V.copy(), lik, dim)


def linear_ensemble(U, A):
    U = np.atleast_2d(np.asarray(U, dtype=float))
    return Ensemble(U, U @ A.T)


def test_eki_hand_example():
    prob = identity_problem(y=1.0)
    ens = Ensemble(np.array([[0.0], [2.0]]), np.array([[0.0], [2.0]]))
    new = eki_step(ens, prob.likelihood.data_, prob.likelihood, 1.0, prob.forward)
    np.testing.assert_allclose(new.particles, [[1.0], [1.0]], atol=1e-15)
    np.testing.assert_allclose(new.forward, [[1.0], [1.0]], atol=1e-15)
    assert new.iteration == 1 and new.step == 1.0


def test_eki_identical_particles_frozen():
    prob = identity_problem(y=3.0)
    ens = Ensemble(np.full((5, 1), 0.4), np.full((5, 1), 0.4))
    assert np.all(eki_increment(ens, prob.likelihood.data_, prob.likelihood, 1.0) == 0)


def test_eki_zero_innovation():
    lik = GaussianData(np.zeros(2), np.eye(2))
    ens = Ensemble(np.random.default_rng(0).standard_normal((4, 3)), np.zeros((4, 2)))
    assert np.all(eki_increment(ens, lik.data_, lik, 0.7) == 0)


@settings(max_examples=30, deadline=None)
@given(J=st.integers(2, 6), p=st.integers(3, 8), q=st.integers(1, 5), seed=st.integers(0, 10**6))
def test_eki_subspace_property(J, p, q, seed):
    rng = np.random.default_rng(seed)
    A = rng.standard_normal((q, p))
    U = rng.standard_normal((J, p))
    ens = linear_ensemble(U, A)
    lik = GaussianData(rng.standard_normal(q), np.eye(q))
    du = eki_increment(ens, lik.data_, lik, 0.5)
    basis = np.linalg.qr((U - U.mean(axis=0)).T)[0]
    resid = du.T - basis @ (basis.T @ du.T)
    assert np.linalg.norm(resid) < 1e-8 * max(1.0, np.linalg.norm(du))


@settings(max_examples=30, deadline=None)
@given(c=st.floats(0.1, 10.0), seed=st.integers(0, 10**6))
def test_eki_affine_invariance(c, seed):
    rng = np.random.default_rng(seed)
    U = rng.standard_normal((6, 1))
    y, g2 = rng.standard_normal(), float(np.exp(rng.uniform(-1, 1)))
    a = eki_increment(Ensemble(U, U.copy()), np.array([y]), GaussianData([y], [[g2]]), 0.3)
    b = eki_increment(Ensemble(U, c * U), np.array([c * y]), GaussianData([c * y], [[c * c * g2]]), 0.3)
    np.testing.assert_allclose(a, b, atol=1e-10)


def test_eki_noisy_matches_perturbed_data():
    lik = GaussianData(np.array([0.5, -1.0]), np.array([[2.0, 0.3], [0.3, 1.0]]))
    rng = np.random.default_rng(3)
    U = rng.standard_normal((4, 2))
    ens = Ensemble(U, U.copy())
    dt = 0.2
    noisy = eki_increment(ens, lik.data_, lik, dt, noisy=True, rng=np.random.default_rng(9))
    xi = np.random.default_rng(9).standard_normal((4, 2))
    zeta = xi @ lik._factor.L.T / np.sqrt(dt)
    Uc, Gc = U - U.mean(0), U - U.mean(0)
    expected = dt / 4 * np.linalg.solve(lik.covariance, (lik.data_ - U + zeta).T).T @ Gc.T @ Uc
    np.testing.assert_allclose(noisy, expected, atol=1e-12)


def test_eks_frozen_ensemble():
    prob = identity_problem(y=2.0)
    ens = Ensemble(np.zeros((6, 1)), np.zeros((6, 1)))
    new = eks_step(ens, prob.likelihood.data_, prob.likelihood, 1.0, prob.forward, rng=0)
    np.testing.assert_array_equal(new.particles, ens.particles)


def test_eks_without_prior_and_noise_is_eki():
    # dropping the prior drift and the noise from an EKS step leaves exactly
    # the deterministic EKI update with the same step size
    rng = np.random.default_rng(5)
    A = rng.standard_normal((4, 3))
    U = rng.standard_normal((7, 3))
    ens = linear_ensemble(U, A)
    lik = GaussianData(rng.standard_normal(4), np.diag(rng.uniform(0.5, 2, 4)))
    D = eks_drift_matrix(ens, lik.data_, lik)
    dt = 0.37
    eks_deterministic = -dt * D @ (U - U.mean(axis=0))
    np.testing.assert_allclose(eks_deterministic, eki_increment(ens, lik.data_, lik, dt), atol=1e-12)


def test_eks_conjugate_gaussian_variance():
    prob = identity_problem(y=0.0)
    hist = run_enk("eks", prob, 200, 400, random_state=11, dt=0.05)
    spread = np.mean([e.particles.var() for e in hist.ensembles[200:]])
    assert spread == pytest.approx(0.5, rel=0.2)
    assert abs(np.mean([e.mean[0] for e in hist.ensembles[200:]])) < 0.1


def test_eks_step_rule():
    prob = identity_problem(y=1.0)
    U = np.array([[0.0], [1.0], [3.0]])
    ens = Ensemble(U, U.copy())
    D = eks_drift_matrix(ens, prob.likelihood.data_, prob.likelihood)
    new = eks_step(ens, prob.likelihood.data_, prob.likelihood, 2.0, prob.forward, rng=0)
    assert new.step == pytest.approx(2.0 / (np.linalg.norm(D) + 1e-8))
    capped = eks_step(ens, prob.likelihood.data_, prob.likelihood, 2.0, prob.forward, rng=0, dt_max=0.01)
    assert capped.step == 0.01


def test_adaptive_eki_step():
    prob = identity_problem(y=1.0)
    U = np.array([[0.0], [2.0]])
    ens = Ensemble(U, U.copy())
    D = eks_drift_matrix(ens, prob.likelihood.data_, prob.likelihood)
    new = eki_step(ens, prob.likelihood.data_, prob.likelihood, 0.5, prob.forward, adaptive=True)
    assert new.step == pytest.approx(0.5 / (np.linalg.norm(D) + 1e-8))


def test_run_enk_zero_iterations_and_determinism():
    prob = identity_problem(y=0.3, dim=2)
    h = run_enk("eki", prob, 10, 0, random_state=4)
    assert len(h) == 1 and h.final.iteration == 0
    a = run_enk("eks", prob, 10, 5, random_state=4)
    b = run_enk("eks", prob, 10, 5, random_state=4)
    for ea, eb in zip(a.ensembles, b.ensembles):
        np.testing.assert_array_equal(ea.particles, eb.particles)
    assert [e.iteration for e in a.ensembles] == list(range(6))


def test_run_enk_errors():
    prob = identity_problem()
    with pytest.raises(ConfigurationError):
        run_enk("enkf", prob, 10, 1)
    with pytest.raises(InvalidArgumentError):
        run_enk("eki", prob, 1, 1)
    with pytest.raises(InvalidArgumentError):
        run_enk("eki", prob, 4, -1)


def test_divergent_particles_redrawn():
    # particles with v > 1 "diverge"; redraws come from the prior
    lik = GaussianData(np.zeros(1), np.eye(1))
    prob = FunctionProblem(lambda V: np.where(V > 1.0, np.nan, V), lik, 1)
    V, G, n = evaluate_ensemble(prob.forward, np.array([[0.0], [5.0], [7.0]]), key=1)
    assert n >= 2
    assert np.all(V <= 1.0) and np.all(np.isfinite(G))
    # redraws are keyed by (key, iteration, particle, attempt), not by call order
    V2, _, _ = evaluate_ensemble(prob.forward, np.array([[0.0], [5.0], [7.0]]), key=1)
    np.testing.assert_array_equal(V, V2)


def test_persistent_divergence_raises():
    lik = GaussianData(np.zeros(1), np.eye(1))
    prob = FunctionProblem(lambda V: np.full_like(V, np.nan), lik, 1)
    with pytest.raises(DivergenceError):
        evaluate_ensemble(prob.forward, np.zeros((2, 1)))


def test_failed_step_keeps_partial_history():
    calls = {"n": 0}
    lik = GaussianData(np.zeros(1), np.eye(1))

    def fwd(V):
        calls["n"] += 1
        return V.copy() if calls["n"] == 1 else np.full_like(V, np.nan)

    with pytest.raises(DivergenceError) as err:
        run_enk("eki", FunctionProblem(fwd, lik, 1), 3, 5, random_state=0)
    assert len(err.value.history) == 1


def test_history_csv(tmp_path):
    from stip.prior import LogNormalPrior

    prob = identity_problem(y=0.3, dim=2)
    h = run_enk("eki", prob, 4, 2, random_state=0)
    prior = LogNormalPrior((0.0, 1.0), (1.0, 0.5))
    path = tmp_path / "h.csv"
    h.to_csv(path, prior=prior, forward_path=tmp_path / "f.csv", metadata={"note": "x"})
    lines = path.read_text().splitlines()
    assert lines[0] == "iter,particle,v1,v2,u1,u2"
    assert len(lines) == 1 + 3 * 4
    assert (tmp_path / "f.csv").read_text().splitlines()[0] == "iter,particle,g1,g2"
    meta = json.loads((tmp_path / "h.csv.json").read_text())
    assert meta["method"] == "eki" and meta["note"] == "x"
    X, G = h.training_data()
    assert X.shape == (12, 2) and G.shape == (12, 2)


def test_calibrator_estimator():
    prob = identity_problem(y=0.5, dim=2)
    est = EnsembleKalmanCalibrator(method="eki", n_ensemble=20, n_iter=1000, random_state=0).fit(prob)
    np.testing.assert_allclose(est.mean_, 0.5, atol=0.05)
    assert est.get_params()["method"] == "eki"
    assert len(est.history_) == 1001
