"""Ensemble Kalman inversion (EKI) and sampling (EKS) in whitened coordinates.

Particles live in whitened space, so the prior is ``N(0, I)``. The data-space
geometry comes from a fitted likelihood, which supplies ``precision_apply``
(the action of the inverse noise covariance) and ``noise_apply`` (the action
of a square root of it).

Particles whose forward solve diverges are redrawn from the prior. The redraw
for particle ``j`` at iteration ``n`` uses a generator keyed on
``(key, n, j, attempt)``, so results do not depend on evaluation order.
"""

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_rng
from .exceptions import ConfigurationError, DivergenceError, InvalidArgumentError, StipError
from .io import write_csv_rows, write_json
from .linalg import sym_sqrt

METHODS = ("eki", "eks")
EKS_SQRT_JITTER = 1e-10
ADAPTIVE_EPS = 1e-8
MAX_RESAMPLE_ATTEMPTS = 100


@dataclass
class Ensemble:
    """State of an ensemble at one iteration.

    Attributes
    ----------
    particles : ndarray of shape (J, p)
        Whitened parameters.
    forward : ndarray of shape (J, q)
        Data-space predictions for each particle.
    iteration : int
    step : float
        Step size used to reach this state (0 for the initial ensemble).
    n_resampled : int
        Number of divergent particles redrawn at this iteration.
    """

    particles: np.ndarray
    forward: np.ndarray
    iteration: int = 0
    step: float = 0.0
    n_resampled: int = 0

    @property
    def size(self):
        return self.particles.shape[0]

    @property
    def mean(self):
        return self.particles.mean(axis=0)

    def covariance(self):
        """Population covariance of the particles (divides by J)."""
        d = self.particles - self.mean
        return d.T @ d / self.size


@dataclass
class EnkHistory:
    """All ensembles of one EnK run."""

    method: str
    ensembles: List[Ensemble] = field(default_factory=list)
    seed: Optional[int] = None

    def __len__(self):
        return len(self.ensembles)

    def __getitem__(self, i):
        return self.ensembles[i]

    @property
    def final(self):
        return self.ensembles[-1]

    @property
    def n_resampled(self):
        return sum(e.n_resampled for e in self.ensembles)

    def means(self):
        """Whitened ensemble means, shape (N + 1, p)."""
        return np.array([e.mean for e in self.ensembles])

    def physical_means(self, prior):
        """Mean of the unwhitened particles per iteration, shape (N + 1, p)."""
        return np.array([prior.unwhiten(e.particles).mean(axis=0) for e in self.ensembles])

    def physical_medians(self, prior):
        """Componentwise median of the unwhitened particles per iteration."""
        return np.array([np.median(prior.unwhiten(e.particles), axis=0) for e in self.ensembles])

    def to_csv(self, path, prior=None, forward_path=None, metadata=None):
        """Write ``iter,particle,v1..vp,u1..up`` and optionally forward values.

        A JSON sidecar ``path + '.json'`` records ``metadata`` together with
        the seed and per-iteration step sizes and redraw counts.
        """
        p = self.final.particles.shape[1]
        header = ["iter", "particle", *(f"v{i + 1}" for i in range(p))]
        if prior is not None:
            header += [f"u{i + 1}" for i in range(p)]
        rows = []
        for e in self.ensembles:
            U = prior.unwhiten(e.particles) if prior is not None else None
            for j in range(e.size):
                row = [e.iteration, j, *map(float, e.particles[j])]
                if U is not None:
                    row += list(map(float, U[j]))
                rows.append(row)
        write_csv_rows(path, header, rows)
        if forward_path is not None:
            q = self.final.forward.shape[1]
            fheader = ["iter", "particle", *(f"g{i + 1}" for i in range(q))]
            frows = ([e.iteration, j, *map(float, e.forward[j])] for e in self.ensembles for j in range(e.size))
            write_csv_rows(forward_path, fheader, frows)
        meta = dict(metadata or {})
        meta.update(
            {
                "method": self.method,
                "seed": self.seed,
                "n_iterations": len(self) - 1,
                "n_ensemble": self.final.size,
                "steps": [e.step for e in self.ensembles],
                "resampled": [e.n_resampled for e in self.ensembles],
                "resampled_total": self.n_resampled,
            }
        )
        write_json(f"{path}.json", meta)

    def training_data(self):
        """Stack every (particle, forward value) pair over all iterations."""
        X = np.concatenate([e.particles for e in self.ensembles])
        G = np.concatenate([e.forward for e in self.ensembles])
        return X, G


def _redraw(key, iteration, index, attempt, dim):
    rng = np.random.default_rng([key, iteration, index, attempt])
    return rng.standard_normal(dim)


def evaluate_ensemble(forward, V, key=0, iteration=0):
    """Run the forward map, redrawing divergent particles from the prior.

    Returns
    -------
    V : ndarray
        Particles after redraws.
    G : ndarray
        Forward values, all finite.
    n_resampled : int
    """
    V = np.array(V, dtype=float)
    G, ok = forward(V)
    G = np.array(G, dtype=float)
    n_resampled = 0
    attempt = 0
    while not np.all(ok):
        if attempt >= MAX_RESAMPLE_ATTEMPTS:
            raise DivergenceError(
                f"{int(np.sum(~ok))} particles still divergent after {attempt} prior redraws"
            )
        bad = np.flatnonzero(~ok)
        n_resampled += bad.size
        V[bad] = [_redraw(key, iteration, j, attempt, V.shape[1]) for j in bad]
        G_new, ok_new = forward(V[bad])
        G[bad] = G_new
        ok[bad] = ok_new
        attempt += 1
    return V, G, n_resampled


def _check_ensemble(ens, y):
    if ens.particles.ndim != 2 or ens.forward.ndim != 2:
        raise InvalidArgumentError("ensemble particles and forward values must be 2-d")
    if ens.size < 2:
        raise InvalidArgumentError("an ensemble needs at least 2 particles")
    if ens.forward.shape != (ens.size, y.size):
        raise InvalidArgumentError(
            f"forward values have shape {ens.forward.shape}, expected {(ens.size, y.size)}"
        )


def eki_increment(ens, y, gamma, dt, noisy=False, rng=None):
    """Particle increment of one EKI step.

    ``du_j = (dt / J) sum_k <G_k - Gbar, y - G_j + zeta_j>_Gamma (u_k - ubar)``,
    with ``zeta_j = Gamma^{1/2} xi_j / sqrt(dt)`` when ``noisy`` and zero otherwise.
    """
    y = np.asarray(y, dtype=float)
    _check_ensemble(ens, y)
    Uc = ens.particles - ens.mean
    Gc = ens.forward - ens.forward.mean(axis=0)
    R = y - ens.forward
    if noisy:
        rng = check_rng(rng)
        R = R + gamma.noise_apply(rng.standard_normal(R.shape)) / np.sqrt(dt)
    M = gamma.precision_apply(R) @ Gc.T  # M[j, k] = <G_k - Gbar, r_j>_Gamma
    return dt / ens.size * (M @ Uc)


def eki_step(ens, y, gamma, dt, forward, noisy=False, rng=None, key=0, adaptive=False, dt_max=None):
    """One ensemble Kalman inversion step with fresh forward evaluations.

    With ``adaptive=True`` the step is ``dt / (||D||_F + 1e-8)`` with ``D``
    from :func:`eks_drift_matrix`, the same rule EKS uses.
    """
    if not dt > 0:
        raise InvalidArgumentError("dt must be positive")
    if adaptive:
        dt = dt / (np.linalg.norm(eks_drift_matrix(ens, y, gamma)) + ADAPTIVE_EPS)
        if dt_max is not None:
            dt = min(dt, dt_max)
    V = ens.particles + eki_increment(ens, y, gamma, dt, noisy, rng)
    V, G, n_res = evaluate_ensemble(forward, V, key, ens.iteration + 1)
    return Ensemble(V, G, ens.iteration + 1, dt, n_res)


def eks_drift_matrix(ens, y, gamma):
    """``D[j, k] = <G_k - Gbar, G_j - y>_Gamma / J``."""
    y = np.asarray(y, dtype=float)
    _check_ensemble(ens, y)
    Gc = ens.forward - ens.forward.mean(axis=0)
    return gamma.precision_apply(ens.forward - y) @ Gc.T / ens.size


def eks_step(ens, y, gamma, dt0, forward, rng=None, key=0, dt_max=None):
    """One ensemble Kalman sampler step with adaptive time step.

    ``dt = dt0 / (||D||_F + 1e-8)``, then for each particle
    ``u_j <- u_j - dt sum_k D_jk (u_k - ubar) - dt C u_j + sqrt(2 dt) C^{1/2} xi_j``
    in whitened coordinates (prior covariance is the identity).
    """
    if not dt0 > 0:
        raise InvalidArgumentError("dt0 must be positive")
    rng = check_rng(rng)
    D = eks_drift_matrix(ens, y, gamma)
    dt = dt0 / (np.linalg.norm(D) + ADAPTIVE_EPS)
    if dt_max is not None:
        dt = min(dt, dt_max)
    U = ens.particles
    Uc = U - ens.mean
    C = ens.covariance()
    scale = np.mean(np.diag(C))
    S = sym_sqrt(C + EKS_SQRT_JITTER * scale * np.eye(C.shape[0])) if scale > 0 else np.zeros_like(C)
    xi = rng.standard_normal(U.shape)
    V = U - dt * (D @ Uc) - dt * (U @ C) + np.sqrt(2.0 * dt) * (xi @ S)
    V, G, n_res = evaluate_ensemble(forward, V, key, ens.iteration + 1)
    return Ensemble(V, G, ens.iteration + 1, dt, n_res)


def run_enk(
    method, problem, n_ensemble, n_iter, random_state=None, dt=None, noisy=False, dt_max=None, adaptive=False
):
    """Run EKI or EKS from a prior draw.

    Parameters
    ----------
    method : {'eki', 'eks'}
    problem : object
        Needs ``forward(V) -> (G, ok)``, ``dim`` and a fitted ``likelihood``
        exposing ``data_``, ``precision_apply`` and ``noise_apply``.
    n_ensemble, n_iter : int
    dt : float, optional
        Fixed EKI step, or ``dt0`` of the adaptive EKS step. Defaults to 1.
    noisy : bool
        Perturb the data in EKI.
    dt_max : float, optional
        Upper bound on adaptive steps.
    adaptive : bool
        Use the EKS step-size rule for EKI too. EKS is always adaptive.

    Returns
    -------
    EnkHistory
        ``n_iter + 1`` ensembles including the initial one.

    Raises
    ------
    StipError
        A failing step aborts the run; the exception carries the ensembles
        computed so far as ``err.history``.
    """
    if method not in METHODS:
        raise ConfigurationError(f"unknown EnK method {method!r}; expected {METHODS}")
    if n_ensemble < 2:
        raise InvalidArgumentError("n_ensemble must be at least 2")
    if n_iter < 0:
        raise InvalidArgumentError("n_iter must be non-negative")
    dt = 1.0 if dt is None else float(dt)
    rng = check_rng(random_state)
    key = int(rng.integers(2**63))
    lik = problem.likelihood
    y = lik.data_
    V0 = rng.standard_normal((n_ensemble, problem.dim))
    V0, G0, n_res = evaluate_ensemble(problem.forward, V0, key, 0)
    ens = Ensemble(V0, G0, 0, 0.0, n_res)
    history = EnkHistory(method, [ens], seed=key)
    for _ in range(n_iter):
        try:
            if method == "eki":
                ens = eki_step(ens, y, lik, dt, problem.forward, noisy, rng, key, adaptive, dt_max)
            else:
                ens = eks_step(ens, y, lik, dt, problem.forward, rng, key, dt_max)
        except (StipError, np.linalg.LinAlgError) as err:
            err.history = history
            raise
        history.ensembles.append(ens)
    return history


class EnsembleKalmanCalibrator(BaseEstimator):
    """Estimator wrapper around :func:`run_enk`.

    Parameters
    ----------
    method : {'eki', 'eks'}
    n_ensemble : int
    n_iter : int
    dt : float, optional
        EKI step or EKS ``dt0``.
    noisy : bool
    dt_max : float, optional
    adaptive : bool
        Adaptive EKI step (EKS always adapts).
    random_state : int, Generator or None

    Attributes
    ----------
    history_ : EnkHistory
    mean_ : ndarray
        Physical-space mean of the final ensemble (whitened mean if the
        problem has no prior).
    """

    def __init__(
        self, method="eks", n_ensemble=100, n_iter=50, dt=None, noisy=False, dt_max=None, adaptive=False, random_state=None
    ):
        self.method = method
        self.n_ensemble = n_ensemble
        self.n_iter = n_iter
        self.dt = dt
        self.noisy = noisy
        self.dt_max = dt_max
        self.adaptive = adaptive
        self.random_state = random_state

    def fit(self, problem, y=None):
        self.history_ = run_enk(
            self.method,
            problem,
            self.n_ensemble,
            self.n_iter,
            random_state=self.random_state,
            dt=self.dt,
            noisy=self.noisy,
            dt_max=self.dt_max,
            adaptive=self.adaptive,
        )
        prior = getattr(problem, "prior", None)
        m = self.history_.final.mean
        self.mean_ = prior.unwhiten(m) if prior is not None else m
        return self

