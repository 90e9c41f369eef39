"""Benchmark definitions and the forward-map bundle used by calibration.

An :class:`InverseProblem` ties together an ODE system, an observation
window, a fitted likelihood and a prior. Its :meth:`~InverseProblem.forward`
takes whitened parameters and returns data-space predictions, which is all
the ensemble Kalman and emulation code needs.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import check_rng
from .dynamics import ObservationConfig, TrajectoryMatrix, get_system, integrate, integrate_batch
from .exceptions import ConfigurationError, InvalidArgumentError
from .likelihood import MatrixNormalLikelihood
from .linalg import cholesky
from .prior import LogNormalPrior

INITIAL_STATE_MODES = ("first_observation", "x0")


@dataclass(frozen=True)
class Benchmark:
    """Default setup of one chaotic benchmark.

    The prior is given in ``prior_order`` (the order the reference values are
    usually quoted in) and reordered to the system's parameter order by
    :meth:`prior`.
    """

    name: str
    truth: tuple
    prior_order: tuple
    mu0: tuple
    sigma0: tuple
    t0: float
    T: float
    J: int = 100
    h: float = 0.01
    x0: tuple = (1.0, 1.0, 1.0)

    @property
    def system(self):
        return get_system(self.name)

    def _permutation(self):
        names = self.system.param_names
        return [self.prior_order.index(n) for n in names]

    def prior(self):
        perm = self._permutation()
        return LogNormalPrior(
            tuple(np.asarray(self.mu0)[perm]), tuple(np.asarray(self.sigma0)[perm])
        )

    def observation_config(self, **overrides):
        kw = dict(t0=self.t0, T=self.T, J=self.J, h=self.h, x0=self.x0)
        kw.update(overrides)
        return ObservationConfig(**kw)


BENCHMARKS = {
    "lorenz63": Benchmark(
        "lorenz63",
        truth=(10.0, 28.0, 8.0 / 3.0),
        prior_order=("sigma", "beta", "rho"),
        mu0=(2.0, 1.2, 3.3),
        sigma0=(0.2, 0.5, 0.15),
        t0=100.0,
        T=10.0,
    ),
    "rossler": Benchmark(
        "rossler",
        truth=(0.2, 0.2, 5.7),
        prior_order=("a", "b", "c"),
        mu0=(-1.5, -1.5, 2.0),
        sigma0=(0.15, 0.15, 0.2),
        t0=1000.0,
        T=100.0,
    ),
    "chen": Benchmark(
        "chen",
        truth=(35.0, 3.0, 28.0),
        prior_order=("a", "b", "c"),
        mu0=(3.5, 1.2, 3.3),
        sigma0=(0.35, 0.5, 0.15),
        t0=100.0,
        T=10.0,
    ),
}


def get_benchmark(name):
    try:
        return BENCHMARKS[name]
    except KeyError:
        raise InvalidArgumentError(f"unknown benchmark {name!r}; expected one of {sorted(BENCHMARKS)}") from None


@dataclass
class GaussianData:
    """Data vector with a dense Gaussian noise covariance.

    Offers the same data-space interface as a fitted
    :class:`~stip.likelihood.MatrixNormalLikelihood`.
    """

    data: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.data_ = np.atleast_1d(np.asarray(self.data, dtype=float))
        self.covariance = np.atleast_2d(np.asarray(self.covariance, dtype=float))
        self._factor = cholesky(self.covariance, jitter=False, name="Gamma")
        self.n_outputs_ = self.data_.size

    def precision_apply(self, R):
        R = np.asarray(R, dtype=float)
        return self._factor.solve(R.reshape(-1, self.n_outputs_).T).T.reshape(R.shape)

    def noise_apply(self, Xi):
        Xi = np.asarray(Xi, dtype=float)
        return Xi @ self._factor.L.T

    def data_potential(self, g):
        r = self.data_ - np.asarray(g, dtype=float)
        return 0.5 * np.sum(r * self.precision_apply(r), axis=-1)

    def data_potential_gradient(self, g):
        return -self.precision_apply(self.data_ - np.asarray(g, dtype=float))


@dataclass
class FunctionProblem:
    """Inverse problem from a vectorized whitened-space forward function.

    ``forward_fn`` maps an ``(n, p)`` array of whitened parameters to an
    ``(n, q)`` array; non-finite rows are treated as divergent.
    """

    forward_fn: object
    likelihood: object
    dim: int

    def forward(self, V):
        G = np.atleast_2d(np.asarray(self.forward_fn(np.atleast_2d(V)), dtype=float))
        return G, np.all(np.isfinite(G), axis=1)


@dataclass
class InverseProblem:
    """ODE parameter identification problem in whitened coordinates."""

    system: object
    config: ObservationConfig
    prior: LogNormalPrior
    likelihood: object
    observed: TrajectoryMatrix
    truth: Optional[np.ndarray] = None
    truth_trajectory: Optional[TrajectoryMatrix] = None
    initial_state: str = "first_observation"

    @property
    def dim(self):
        return self.prior.dim

    def trajectories(self, U, config=None):
        """Integrate physical parameters ``U``; returns ``(values, ok)``."""
        values, fail = integrate_batch(self.system, U, config or self.config)
        return values, ~np.isfinite(fail)

    def forward(self, V):
        """Data-space predictions for whitened parameters ``V`` (n, p)."""
        V = np.atleast_2d(np.asarray(V, dtype=float))
        values, ok = self.trajectories(self.prior.unwhiten(V))
        G = np.full((V.shape[0], self.likelihood.n_outputs_), np.nan)
        if ok.any():
            G[ok] = self.likelihood.observe(values[ok])
        ok &= np.all(np.isfinite(G), axis=1)
        return G, ok

    def potential(self, V):
        """Exact (non-emulated) potential of whitened parameters."""
        G, ok = self.forward(V)
        phi = np.full(G.shape[0], np.inf)
        if ok.any():
            phi[ok] = self.likelihood.data_potential(G[ok])
        return phi


def build_problem(
    system="lorenz63",
    truth=None,
    observation=None,
    likelihood=None,
    prior=None,
    initial_state="first_observation",
    noise_std=0.0,
    random_state=None,
):
    """Simulate data at ``truth`` and assemble an :class:`InverseProblem`.

    Parameters
    ----------
    system : str
        Benchmark name; supplies defaults for everything left as ``None``.
    observation : ObservationConfig or dict, optional
    likelihood : MatrixNormalLikelihood or dict, optional
        Unfitted estimator (or its parameters); it is fitted to the data here.
    initial_state : {'first_observation', 'x0'}
        ``'x0'`` integrates every parameter from ``x0`` at time 0 through the
        spin-up. ``'first_observation'`` restarts every parameter from the
        first observed state at ``t0``.
    noise_std : float
        Standard deviation of optional additive Gaussian observation noise.
    """
    bench = get_benchmark(system)
    sys_ = bench.system
    truth = np.asarray(bench.truth if truth is None else truth, dtype=float)
    if observation is None:
        observation = bench.observation_config()
    elif isinstance(observation, dict):
        observation = bench.observation_config(**observation)
    if likelihood is None:
        likelihood = MatrixNormalLikelihood()
    elif isinstance(likelihood, dict):
        likelihood = MatrixNormalLikelihood(**likelihood)
    if prior is None:
        prior = bench.prior()
    elif isinstance(prior, dict):
        prior = LogNormalPrior(**prior)
    if initial_state not in INITIAL_STATE_MODES:
        raise ConfigurationError(f"initial_state must be one of {INITIAL_STATE_MODES}")
    if prior.dim != sys_.n_params or truth.size != sys_.n_params:
        raise ConfigurationError(f"{sys_.name} has {sys_.n_params} parameters")

    X_true = integrate(sys_, truth, observation)
    Y = X_true.values
    if noise_std > 0:
        rng = check_rng(random_state)
        Y = Y + noise_std * rng.standard_normal(Y.shape)
    observed = TrajectoryMatrix(Y, X_true.times, X_true.component_labels)
    cfg = observation.restarted(Y[:, 0]) if initial_state == "first_observation" else observation
    likelihood.fit(observed)
    return InverseProblem(
        system=sys_,
        config=cfg,
        prior=prior,
        likelihood=likelihood,
        observed=observed,
        truth=truth,
        truth_trajectory=X_true,
        initial_state=initial_state,
    )
