"""Log-normal priors with the whitened coordinates used by every sampler.

Inference runs on ``v = (log u - mu0) / sigma0``, which is standard normal
under the prior; :meth:`LogNormalPrior.unwhiten` maps back to positive
physical parameters.
"""

from dataclasses import dataclass

import numpy as np

from ._validation import check_rng
from .exceptions import DomainError, InvalidArgumentError


@dataclass(frozen=True)
class LogNormalPrior:
    """Independent ``log u_i ~ N(mu0_i, sigma0_i²)``."""

    mu0: tuple
    sigma0: tuple

    def __post_init__(self):
        mu0 = np.asarray(self.mu0, dtype=float).ravel()
        sigma0 = np.asarray(self.sigma0, dtype=float).ravel()
        if mu0.shape != sigma0.shape:
            raise InvalidArgumentError("mu0 and sigma0 must have the same length")
        if not np.all(np.isfinite(mu0)):
            raise InvalidArgumentError("mu0 must be finite")
        if not np.all(sigma0 > 0):
            raise InvalidArgumentError("sigma0 must be strictly positive")
        object.__setattr__(self, "mu0", tuple(mu0.tolist()))
        object.__setattr__(self, "sigma0", tuple(sigma0.tolist()))

    @property
    def dim(self):
        return len(self.mu0)

    @property
    def _mu(self):
        return np.asarray(self.mu0)

    @property
    def _sig(self):
        return np.asarray(self.sigma0)

    def sample(self, n=1, random_state=None):
        """Draw ``n`` physical parameter vectors, shape ``(n, p)``."""
        if n < 1:
            raise InvalidArgumentError("n must be >= 1")
        rng = check_rng(random_state)
        return self.unwhiten(rng.standard_normal((int(n), self.dim)))

    def whiten(self, u):
        u = np.asarray(u, dtype=float)
        if np.any(~(u > 0)):
            raise DomainError("log-normal whitening needs strictly positive parameters")
        return (np.log(u) - self._mu) / self._sig

    def unwhiten(self, v):
        return np.exp(self._mu + self._sig * np.asarray(v, dtype=float))

    @staticmethod
    def log_density_whitened(v):
        """``-½‖v‖²``; the normalizing constant is dropped."""
        v = np.asarray(v, dtype=float)
        return -0.5 * np.sum(v * v, axis=-1)

    @staticmethod
    def grad_log_density_whitened(v):
        return -np.asarray(v, dtype=float)

    @property
    def median(self):
        return np.exp(self._mu)

    def to_dict(self):
        return {"mu0": list(self.mu0), "sigma0": list(self.sigma0)}
