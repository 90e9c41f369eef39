import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from stip.exceptions import ConfigurationError, InvalidArgumentError
from stip.prior import LogNormalPrior
from stip.sample import PosteriorSampler, inf_mala_step, pcn_step, run_chain


def zero(v):
    return 0.0


def zero_grad(v):
    return 0.0, np.zeros_like(v)


def half_sq(v):
    return 0.5 * float(v @ v)


def half_sq_grad(v):
    return 0.5 * float(v @ v), np.asarray(v, dtype=float).copy()


def test_pcn_zero_potential_always_accepts():
    rng = np.random.default_rng(0)
    v = np.zeros(3)
    for _ in range(200):
        v, acc, _ = pcn_step(v, zero, 0.7, rng)
        assert acc


@pytest.mark.parametrize("sampler,phi", [("pcn", zero), ("inf_mala", zero_grad)])
def test_prior_moments(sampler, phi):
    ch = run_chain(sampler, phi, 100_000, random_state=1, step=0.5, dim=3)
    np.testing.assert_allclose(ch.samples.mean(axis=0), 0.0, atol=0.05)
    np.testing.assert_allclose(ch.samples.var(axis=0), 1.0, rtol=0.05)


@pytest.mark.parametrize("sampler,phi", [("pcn", half_sq), ("inf_mala", half_sq_grad)])
def test_conjugate_posterior_variance(sampler, phi):
    ch = run_chain(sampler, phi, 100_000, n_burnin=1000, random_state=2, step=0.6, dim=1)
    assert ch.samples.var() == pytest.approx(0.5, rel=0.05)
    assert abs(ch.samples.mean()) < 0.05


def test_mala_proposal_matches_pcn_with_zero_gradient():
    n, step = 10_000, 0.4
    v = np.array([0.8])
    rng_a, rng_b = np.random.default_rng(3), np.random.default_rng(4)
    a = [inf_mala_step(v, zero_grad, step, rng_a)[0][0] for _ in range(n)]
    b = [pcn_step(v, zero, step, rng_b)[0][0] for _ in range(n)]
    assert stats.ks_2samp(a, b).statistic < 0.02
    # and both equal the closed-form proposal law
    mean, sd = np.sqrt(1 - step**2) * 0.8, step
    assert stats.kstest(a, "norm", args=(mean, sd)).statistic < 0.02


def test_rejection_repeats_state():
    def phi(v):
        return 0.0 if v[0] < 0.1 else np.inf

    rng = np.random.default_rng(5)
    v = np.array([0.0])
    for _ in range(100):
        new, acc, _ = pcn_step(v, phi, 0.9, rng)
        if not acc:
            assert new is v
        v = new
    ch = run_chain("pcn", phi, 2000, random_state=6, step=0.9, dim=1)
    rejected = np.flatnonzero(~ch.accepted[1:]) + 1
    np.testing.assert_array_equal(ch.samples[rejected], ch.samples[rejected - 1])
    assert np.all(ch.samples < 0.1)


def test_nonfinite_gradient_rejected():
    def bad(v):
        return 0.0, np.full_like(v, np.nan)

    rng = np.random.default_rng(7)
    v = np.ones(2)
    new, acc, _ = inf_mala_step(v, bad, 0.5, rng)
    assert not acc and new is v


@pytest.mark.parametrize("sampler,phi", [("pcn", half_sq), ("inf_mala", half_sq_grad)])
def test_detailed_balance_on_bins(sampler, phi):
    # stationary flux between coarse bins is symmetric for a reversible chain
    ch = run_chain(sampler, phi, 200_000, n_burnin=500, random_state=8, step=0.5, dim=1)
    s = np.digitize(ch.samples[:, 0], [-0.4, 0.4])
    F = np.zeros((3, 3))
    np.add.at(F, (s[:-1], s[1:]), 1.0)
    n = len(s) - 1
    for i, j in ((0, 1), (1, 2), (0, 2)):
        # transitions within a bin pair are nearly independent draws; a loose
        # 5-sigma Poisson bound is ample to catch a non-reversible kernel
        assert abs(F[i, j] - F[j, i]) <= 5 * np.sqrt(F[i, j] + F[j, i] + 1)
    assert F.sum() == n


def test_adaptation_reaches_target_band():
    def narrow(v):
        return 0.5 * float(v @ v) / 0.01

    ch = run_chain("pcn", narrow, 5000, n_burnin=5000, adapt=True, random_state=9, step=0.9, dim=1)
    assert 0.15 <= ch.acceptance_rate <= 0.35
    assert ch.step < 0.9 and ch.initial_step == 0.9


def test_adaptation_on_standard_conjugate_target_is_capped():
    # on Φ = v²/2 acceptance exceeds 0.35 even at β = 1, so the step saturates
    ch = run_chain("pcn", half_sq, 5000, n_burnin=5000, adapt=True, random_state=10, step=0.5, dim=1)
    assert ch.step == 1.0
    assert ch.acceptance_rate > 0.6


def test_reproducibility():
    a = run_chain("inf_mala", half_sq_grad, 500, random_state=11, dim=2)
    b = run_chain("inf_mala", half_sq_grad, 500, random_state=11, dim=2)
    np.testing.assert_array_equal(a.samples, b.samples)
    np.testing.assert_array_equal(a.potentials, b.potentials)


def test_stored_potential_matches_sample():
    ch = run_chain("pcn", half_sq, 5000, random_state=12, dim=2)
    idx = np.arange(0, 5000, 100)
    np.testing.assert_allclose(ch.potentials[idx], [half_sq(v) for v in ch.samples[idx]], rtol=1e-14)
    assert 0.0 <= ch.acceptance_rate <= 1.0


@settings(max_examples=20, deadline=None)
@given(beta=st.floats(0.05, 1.0), seed=st.integers(0, 10**6))
def test_pcn_prior_reversibility_single_step(beta, seed):
    # with Φ ≡ 0, one pCN step maps N(0, 1) draws to N(0, 1) draws
    rng = np.random.default_rng(seed)
    v = rng.standard_normal((4000, 1))
    out = np.array([pcn_step(x, zero, beta, rng)[0] for x in v])
    assert stats.kstest(out[:, 0], "norm").pvalue > 1e-4


def test_argument_errors():
    with pytest.raises(ConfigurationError):
        run_chain("hmc", zero, 10, dim=1)
    with pytest.raises(InvalidArgumentError):
        run_chain("pcn", zero, 0, dim=1)
    with pytest.raises(InvalidArgumentError):
        run_chain("pcn", zero, 10)
    with pytest.raises(InvalidArgumentError):
        pcn_step(np.zeros(1), zero, 1.5, np.random.default_rng(0))


def test_chain_csv(tmp_path):
    ch = run_chain("pcn", half_sq, 20, n_burnin=5, random_state=13, dim=2)
    prior = LogNormalPrior((0.0, 0.0), (1.0, 1.0))
    path = tmp_path / "chain.csv"
    ch.to_csv(path, prior=prior, config={"k": 1})
    lines = path.read_text().splitlines()
    assert lines[0] == "idx,v1,v2,u1,u2,phi,accepted"
    assert len(lines) == 21
    meta = json.loads((tmp_path / "chain.csv.json").read_text())
    assert meta["sampler"] == "pcn" and meta["n_samples"] == 20 and meta["config"] == {"k": 1}


def test_sampler_estimator():
    est = PosteriorSampler(n_samples=100, n_burnin=10, random_state=0).fit(half_sq, dim=2)
    assert est.chain_.samples.shape == (100, 2)
    assert est.get_params()["sampler"] == "pcn"
