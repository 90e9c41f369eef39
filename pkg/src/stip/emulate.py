"""Gaussian-process surrogate of the forward map in whitened coordinates.

The emulator interpolates ``v -> G(v)`` from EnK particles and exposes the
analytic gradient of its posterior mean, which is what gradient-based MCMC
on the emulated potential needs.
"""

import json

import numpy as np
from scipy.linalg import cho_solve, solve_triangular
from scipy.spatial import cKDTree
from scipy.spatial.distance import pdist
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix
from .exceptions import ConfigurationError, InvalidArgumentError, SingularMatrixError
from .io import atomic_write_text, read_csv_matrix, write_csv_matrix

NUGGET_MAX = 1e-2
NUGGET_FACTOR = 10.0
DEDUP_TOL = 1e-10
FORMAT_VERSION = 1


def deduplicate(X, Y, tol=DEDUP_TOL):
    """Drop rows of ``X`` lying within ``tol`` of an earlier row (keeps the first)."""
    X = np.asarray(X, dtype=float)
    keep = np.ones(X.shape[0], dtype=bool)
    for i, j in cKDTree(X).query_pairs(tol, output_type="ndarray"):
        keep[max(i, j)] = False
    return X[keep], np.asarray(Y)[keep]


def farthest_point_indices(X, m, start=0):
    """Greedy farthest-point selection of ``m`` row indices of ``X``."""
    n = X.shape[0]
    if m >= n:
        return np.arange(n)
    idx = np.empty(m, dtype=int)
    idx[0] = start
    d = np.sum((X - X[start]) ** 2, axis=1)
    for k in range(1, m):
        idx[k] = int(np.argmax(d))
        d = np.minimum(d, np.sum((X - X[idx[k]]) ** 2, axis=1))
    return np.sort(idx)


def lowest_potential_indices(G, likelihood, m):
    """Indices of the ``m`` rows of ``G`` with the smallest finite data potential."""
    phi = likelihood.data_potential(np.asarray(G, dtype=float))
    phi = np.where(np.isfinite(phi), phi, np.inf)
    order = np.argsort(phi, kind="stable")[: min(m, len(phi))]
    return np.sort(order[np.isfinite(phi[order])])


def median_lengthscales(X, max_points=1000):
    """Per-dimension median of the nonzero pairwise absolute differences."""
    if X.shape[0] > max_points:
        X = X[np.linspace(0, X.shape[0] - 1, max_points).astype(int)]
    ell = np.empty(X.shape[1])
    for d in range(X.shape[1]):
        diffs = pdist(X[:, d : d + 1])
        diffs = diffs[diffs > 0]
        ell[d] = np.median(diffs) if diffs.size else 1.0
    return ell


def se_kernel(A, B, lengthscales, variance):
    """Squared-exponential cross kernel with per-dimension lengthscales."""
    A = A / lengthscales
    B = B / lengthscales
    d2 = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * A @ B.T
    return variance * np.exp(-0.5 * np.maximum(d2, 0.0))


class GaussianProcessEmulator(BaseEstimator, RegressorMixin):
    """GP interpolant with a squared-exponential kernel and constant mean.

    The prior mean of each output is the training-output average, so
    predictions revert to it far from the data and constant data is
    reproduced everywhere. All outputs share one kernel, so a single Cholesky
    factor serves every output column.

    Parameters
    ----------
    lengthscales : array-like or None
        Per-dimension lengthscales; ``None`` uses the median heuristic.
    variance : float or None
        Signal variance; ``None`` uses the variance of the training outputs.
    nugget : float
        Diagonal jitter relative to the signal variance. It is raised by
        factors of 10 (up to 1e-2) until the kernel matrix factors.
    max_points : int or None
        Thin the (deduplicated) training set to this many points by
        farthest-point selection.

    Attributes
    ----------
    X_train_, Y_train_ : ndarray
    lengthscales_ : ndarray
    variance_ : float
    nugget_ : float
        Nugget actually used.
    mean_ : ndarray of shape (q,)
        Prior mean of each output.
    alpha_ : ndarray of shape (n, q)
        ``K^{-1} (Y - mean_)``.
    """

    def __init__(self, lengthscales=None, variance=None, nugget=1e-6, max_points=2000):
        self.lengthscales = lengthscales
        self.variance = variance
        self.nugget = nugget
        self.max_points = max_points

    def fit(self, X, Y):
        X = check_matrix(X, "X")
        Y = np.asarray(Y, dtype=float)
        self._single_output = Y.ndim == 1
        Y = check_matrix(Y.reshape(X.shape[0], -1) if Y.ndim == 1 else Y, "Y")
        if Y.shape[0] != X.shape[0]:
            raise InvalidArgumentError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if not self.nugget > 0:
            raise InvalidArgumentError("nugget must be positive")
        X, Y = deduplicate(X, Y)
        if X.shape[0] < 2:
            raise InvalidArgumentError("at least 2 distinct training inputs are required")
        if self.max_points is not None and X.shape[0] > self.max_points:
            keep = farthest_point_indices(X, int(self.max_points))
            X, Y = X[keep], Y[keep]
        if self.lengthscales is None:
            ell = median_lengthscales(X)
        else:
            ell = np.broadcast_to(np.asarray(self.lengthscales, dtype=float), (X.shape[1],)).copy()
        if not np.all(ell > 0):
            raise InvalidArgumentError("lengthscales must be positive")
        self.mean_ = Y.mean(axis=0)
        s2 = float(np.var(Y - self.mean_)) if self.variance is None else float(self.variance)
        if not s2 > 0:
            s2 = 1.0
        self.X_train_, self.Y_train_ = X, Y
        self.lengthscales_, self.variance_ = ell, s2
        self._factorize(float(self.nugget))
        self.n_features_in_ = X.shape[1]
        return self

    def _factorize(self, nugget):
        K = se_kernel(self.X_train_, self.X_train_, self.lengthscales_, self.variance_)
        n = K.shape[0]
        while True:
            try:
                L = np.linalg.cholesky(K + nugget * self.variance_ * np.eye(n))
                break
            except np.linalg.LinAlgError:
                if nugget * NUGGET_FACTOR > NUGGET_MAX * (1 + 1e-12):
                    raise SingularMatrixError(
                        f"GP kernel matrix not positive definite with nugget {nugget:g}"
                    ) from None
                nugget *= NUGGET_FACTOR
        self.nugget_ = nugget
        self._L = L
        self.alpha_ = cho_solve((L, True), self.Y_train_ - self.mean_)

    def _check_X(self, X):
        check_is_fitted(self, "alpha_")
        X = np.asarray(X, dtype=float)
        single = X.ndim == 1
        X = np.atleast_2d(X)
        if X.shape[1] != self.n_features_in_:
            raise InvalidArgumentError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return X, single

    def predict(self, X):
        """Posterior mean, shape ``(m, q)`` (or ``(q,)`` for a single point)."""
        X, single = self._check_X(X)
        out = self.mean_ + se_kernel(X, self.X_train_, self.lengthscales_, self.variance_) @ self.alpha_
        if self._single_output:
            out = out[:, 0]
        return out[0] if single else out

    def predict_variance(self, X):
        """Posterior variance of the latent function (shared by all outputs)."""
        X, single = self._check_X(X)
        k = se_kernel(self.X_train_, X, self.lengthscales_, self.variance_)
        w = solve_triangular(self._L, k, lower=True)
        var = np.maximum(self.variance_ - np.sum(w**2, axis=0), 0.0)
        return var[0] if single else var

    def predict_gradient(self, X):
        """Jacobian of the posterior mean, shape ``(m, q, p)`` or ``(q, p)``."""
        X, single = self._check_X(X)
        k = se_kernel(X, self.X_train_, self.lengthscales_, self.variance_)  # (m, n)
        diff = (X[:, None, :] - self.X_train_[None, :, :]) / self.lengthscales_**2  # (m, n, p)
        jac = -np.einsum("mn,nq,mnp->mqp", k, self.alpha_, diff)
        return jac[0] if single else jac

    def save(self, path):
        """Write hyperparameters to ``path`` (JSON) and training data to ``path``.csv."""
        check_is_fitted(self, "alpha_")
        q = self.Y_train_.shape[1]
        p = self.X_train_.shape[1]
        meta = {
            "format_version": FORMAT_VERSION,
            "kernel": "squared_exponential",
            "lengthscales": self.lengthscales_.tolist(),
            "variance": self.variance_,
            "nugget": self.nugget_,
            "single_output": self._single_output,
            "n_features": p,
            "n_outputs": q,
            "params": self.get_params(),
        }
        header = [f"v{i + 1}" for i in range(p)] + [f"g{i + 1}" for i in range(q)]
        write_csv_matrix(f"{path}.csv", np.hstack([self.X_train_, self.Y_train_]), header)
        atomic_write_text(path, json.dumps(meta, indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            meta = json.load(fh)
        if meta.get("format_version") != FORMAT_VERSION:
            raise InvalidArgumentError(f"unsupported emulator format {meta.get('format_version')!r}")
        data, _ = read_csv_matrix(f"{path}.csv")
        p = meta["n_features"]
        em = cls(**meta["params"])
        em.X_train_, em.Y_train_ = data[:, :p], data[:, p:]
        em.mean_ = em.Y_train_.mean(axis=0)
        em.lengthscales_ = np.asarray(meta["lengthscales"], dtype=float)
        em.variance_ = float(meta["variance"])
        em._single_output = bool(meta["single_output"])
        em.n_features_in_ = p
        em._factorize(float(meta["nugget"]))
        return em


class EmulatedPotential:
    """Potential ``v -> Phi(G_e(v))`` with the emulator in place of the forward map.

    Parameters
    ----------
    emulator : GaussianProcessEmulator
        Fitted on data-space outputs.
    likelihood : object
        Exposes ``data_potential`` and ``data_potential_gradient``.
    """

    def __init__(self, emulator, likelihood):
        check_is_fitted(emulator, "alpha_")
        q = emulator.Y_train_.shape[1]
        if q != likelihood.n_outputs_:
            raise ConfigurationError(
                f"emulator predicts {q} outputs but the likelihood expects {likelihood.n_outputs_}"
            )
        self.emulator = emulator
        self.likelihood = likelihood

    def __call__(self, v):
        return float(self.likelihood.data_potential(self.emulator.predict(np.asarray(v, dtype=float))))

    def value_and_grad(self, v):
        v = np.asarray(v, dtype=float)
        g = self.emulator.predict(v)
        phi = float(self.likelihood.data_potential(g))
        grad = self.emulator.predict_gradient(v).T @ self.likelihood.data_potential_gradient(g)
        return phi, grad


def fit_emulator_from_history(history, likelihood=None, selection="fps", **params):
    """Fit a :class:`GaussianProcessEmulator` on the particles of EnK runs.

    ``history`` is one :class:`~stip.calibrate.EnkHistory` or a sequence of
    them whose particles are pooled. With ``selection="lowest_potential"``
    the ``max_points`` particles whose outputs fit the data best are kept
    (requires ``likelihood``); with ``"fps"`` the emulator thins the pool by
    farthest-point selection.
    """
    X, G = pooled_training_data(history)
    if selection == "lowest_potential":
        if likelihood is None:
            raise ConfigurationError("lowest_potential selection needs a likelihood")
        m = params.get("max_points") or X.shape[0]
        keep = lowest_potential_indices(G, likelihood, m)
        X, G = X[keep], G[keep]
    elif selection != "fps":
        raise ConfigurationError(f"unknown training selection {selection!r}")
    return GaussianProcessEmulator(**params).fit(X, G)


def pooled_training_data(histories):
    """Stack ``training_data()`` of one history or a sequence of histories."""
    if hasattr(histories, "training_data"):
        return histories.training_data()
    parts = [h.training_data() for h in histories]
    if not parts:
        raise InvalidArgumentError("no calibration histories to pool")
    return np.concatenate([X for X, _ in parts]), np.concatenate([G for _, G in parts])
