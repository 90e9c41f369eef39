"""Dimension-robust MCMC in whitened coordinates: pCN and one-step ∞-MALA.

Both samplers target ``exp(-Phi(v)) N(v; 0, I)``. Potentials are plain
callables ``phi(v) -> float``; ∞-MALA additionally needs
``phi.value_and_grad(v) -> (float, ndarray)`` or a callable returning that
pair.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from sklearn.base import BaseEstimator

from ._validation import check_rng, check_vector
from .exceptions import ConfigurationError, InvalidArgumentError
from .io import write_csv_rows, write_json

SAMPLERS = ("pcn", "inf_mala")
TARGET_ACCEPT = 0.25
ADAPT_EXPONENT = 0.6


def _finite(x):
    return np.all(np.isfinite(x))


def pcn_step(v, phi, beta, rng, phi_v=None):
    """One preconditioned Crank-Nicolson step.

    Parameters
    ----------
    v : ndarray
        Current state.
    phi : callable
        Potential.
    beta : float in (0, 1]
    rng : numpy.random.Generator
    phi_v : float, optional
        Cached ``phi(v)``.

    Returns
    -------
    v_new : ndarray
        Proposal if accepted, otherwise ``v`` itself.
    accepted : bool
    phi_new : float
        Potential at ``v_new``.
    """
    if not 0 < beta <= 1:
        raise InvalidArgumentError("beta must lie in (0, 1]")
    if phi_v is None:
        phi_v = float(phi(v))
    prop = np.sqrt(1.0 - beta**2) * v + beta * rng.standard_normal(v.shape)
    phi_p = float(phi(prop))
    log_u = np.log(rng.uniform())
    if np.isfinite(phi_p) and log_u < phi_v - phi_p:
        return prop, True, phi_p
    return v, False, phi_v


def _value_and_grad(phi):
    return getattr(phi, "value_and_grad", phi)


def inf_mala_step(v, phi_grad, step, rng, state=None):
    """One ∞-MALA step: a single kick-rotate-kick leapfrog move.

    With rotation angle ``eps = arcsin(step)``, momentum ``p ~ N(0, I)``::

        p <- p - (eps / 2) grad Phi(v)
        (v, p) <- (cos eps v + sin eps p, -sin eps v + cos eps p)
        p <- p - (eps / 2) grad Phi(v)

    accepted with probability ``min(1, exp(H_old - H_new))`` where
    ``H = Phi(v) + |v|^2 / 2 + |p|^2 / 2``. With a zero gradient the position
    proposal is exactly the pCN proposal with ``beta = step``.

    Parameters
    ----------
    phi_grad : callable
        ``v -> (Phi(v), grad Phi(v))``.
    step : float in (0, 1]
    state : tuple, optional
        Cached ``(Phi(v), grad Phi(v))``.

    Returns
    -------
    v_new, accepted, state_new
    """
    if not 0 < step <= 1:
        raise InvalidArgumentError("step must lie in (0, 1]")
    if state is None:
        state = phi_grad(v)
    phi_v, g_v = state
    eps = np.arcsin(step)
    c, s = np.cos(eps), np.sin(eps)
    p0 = rng.standard_normal(v.shape)
    log_u = np.log(rng.uniform())
    if not (np.isfinite(phi_v) and _finite(g_v)):
        return v, False, state
    p = p0 - 0.5 * eps * g_v
    prop = c * v + s * p
    p = -s * v + c * p
    phi_p, g_p = phi_grad(prop)
    if not (np.isfinite(phi_p) and _finite(g_p)):
        return v, False, state
    p = p - 0.5 * eps * g_p
    h_old = phi_v + 0.5 * (v @ v) + 0.5 * (p0 @ p0)
    h_new = phi_p + 0.5 * (prop @ prop) + 0.5 * (p @ p)
    if log_u < h_old - h_new:
        return prop, True, (phi_p, g_p)
    return v, False, state


@dataclass
class PosteriorChain:
    """Post-burn-in output of :func:`run_chain`."""

    sampler: str
    samples: np.ndarray
    potentials: np.ndarray
    accepted: np.ndarray
    step: float
    initial_step: float
    adapted: bool
    n_burnin: int
    seed: Optional[int] = None
    burnin_acceptance: Optional[float] = None

    def __post_init__(self):
        n = len(self.samples)
        if len(self.potentials) != n or len(self.accepted) != n:
            raise InvalidArgumentError("samples, potentials and accept flags must have equal length")

    def __len__(self):
        return len(self.samples)

    @property
    def acceptance_rate(self):
        return float(np.mean(self.accepted)) if len(self) else 0.0

    def physical(self, prior):
        return prior.unwhiten(self.samples)

    def metadata(self):
        return {
            "sampler": self.sampler,
            "step": self.step,
            "initial_step": self.initial_step,
            "adapted": self.adapted,
            "n_burnin": self.n_burnin,
            "n_samples": len(self),
            "seed": self.seed,
            "acceptance_rate": self.acceptance_rate,
            "burnin_acceptance": self.burnin_acceptance,
        }

    def to_csv(self, path, prior=None, config=None):
        """Write ``idx,v1..vp,u1..up,phi,accepted`` plus a ``.json`` sidecar."""
        p = self.samples.shape[1]
        header = ["idx", *(f"v{i + 1}" for i in range(p))]
        U = None
        if prior is not None:
            U = self.physical(prior)
            header += [f"u{i + 1}" for i in range(p)]
        header += ["phi", "accepted"]
        rows = []
        for i in range(len(self)):
            row = [i, *map(float, self.samples[i])]
            if U is not None:
                row += list(map(float, U[i]))
            rows.append(row + [float(self.potentials[i]), int(self.accepted[i])])
        write_csv_rows(path, header, rows)
        meta = self.metadata()
        if config is not None:
            meta["config"] = config
        write_json(f"{path}.json", meta)


def run_chain(
    sampler,
    phi,
    n_samples,
    n_burnin=0,
    adapt=False,
    random_state=None,
    v0=None,
    step=0.2,
    dim=None,
    target_accept=TARGET_ACCEPT,
):
    """Run a pCN or ∞-MALA chain.

    During burn-in with ``adapt=True`` the step is tuned by the Robbins-Monro
    recursion ``log s <- log s + (a_n - target) / (n + 1)^0.6`` on the
    acceptance indicator ``a_n``, clipped to ``(0, 1]``, then frozen.

    Parameters
    ----------
    sampler : {'pcn', 'inf_mala'}
    phi : callable
        Potential; for ∞-MALA it must provide gradients (see module notes).
    n_samples : int
        Post-burn-in samples returned.
    v0 : array-like, optional
        Starting point; defaults to zeros of length ``dim``.
    step : float
        ``beta`` for pCN, ``sin`` of the rotation angle for ∞-MALA.
    """
    if sampler not in SAMPLERS:
        raise ConfigurationError(f"unknown sampler {sampler!r}; expected {SAMPLERS}")
    if n_samples < 1:
        raise InvalidArgumentError("n_samples must be >= 1")
    if n_burnin < 0:
        raise InvalidArgumentError("n_burnin must be >= 0")
    if not 0 < step <= 1:
        raise InvalidArgumentError("step must lie in (0, 1]")
    if v0 is None:
        if dim is None:
            raise InvalidArgumentError("give v0 or dim")
        v0 = np.zeros(dim)
    v = check_vector(v0, "v0").copy()
    rng = check_rng(random_state)
    seed = int(rng.integers(2**63))
    rng = np.random.default_rng(seed)

    if sampler == "pcn":
        state = float(phi(v))

        def move(v, state, s):
            return pcn_step(v, phi, s, rng, state)

        def pot(state):
            return state
    else:
        grad_fn = _value_and_grad(phi)
        state = grad_fn(v)

        def move(v, state, s):
            return inf_mala_step(v, grad_fn, s, rng, state)

        def pot(state):
            return float(state[0])

    initial_step = step
    log_s = np.log(step)
    burn_acc = 0
    for n in range(n_burnin):
        v, acc, state = move(v, state, step)
        burn_acc += acc
        if adapt:
            log_s = min(0.0, log_s + (acc - target_accept) / (n + 1) ** ADAPT_EXPONENT)
            step = float(np.exp(log_s))

    p = v.size
    samples = np.empty((n_samples, p))
    potentials = np.empty(n_samples)
    accepted = np.zeros(n_samples, dtype=bool)
    for i in range(n_samples):
        v, acc, state = move(v, state, step)
        samples[i] = v
        potentials[i] = pot(state)
        accepted[i] = acc
    return PosteriorChain(
        sampler,
        samples,
        potentials,
        accepted,
        step,
        initial_step,
        bool(adapt),
        int(n_burnin),
        seed,
        burn_acc / n_burnin if n_burnin else None,
    )


class PosteriorSampler(BaseEstimator):
    """Estimator wrapper around :func:`run_chain`.

    ``fit(phi, v0)`` runs the chain and stores it as ``chain_``; samples are
    available as ``chain_.samples``.
    """

    def __init__(self, sampler="pcn", n_samples=10000, n_burnin=1000, adapt=True, step=0.2, random_state=None):
        self.sampler = sampler
        self.n_samples = n_samples
        self.n_burnin = n_burnin
        self.adapt = adapt
        self.step = step
        self.random_state = random_state

    def fit(self, phi, v0=None, dim=None):
        self.chain_ = run_chain(
            self.sampler,
            phi,
            self.n_samples,
            n_burnin=self.n_burnin,
            adapt=self.adapt,
            random_state=self.random_state,
            v0=v0,
            step=self.step,
            dim=dim,
        )
        return self
