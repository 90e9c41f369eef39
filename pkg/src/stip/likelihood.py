"""Matrix-normal potentials for static, time-averaged and STGP likelihoods.

All three models treat the observed matrix ``Y`` (I components x J times) as
``MN(M, U, V)`` and differ only in the row/column covariances:

* static: ``U = sigma2_eps * I``, ``V = I``
* time-averaged: ``U = Gamma_obs``, ``V^- = 1 1ᵀ / J²`` (only row means matter)
* STGP: ``U = C_x``, ``V = C_t`` from squared-exponential kernels

The potential is ``½ tr[V⁻¹ (Y - M)ᵀ U⁻¹ (Y - M)]`` in every case.
"""

from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from ._validation import check_matrix, check_positive, check_same_shape
from .dynamics import augment_second_order, estimate_gamma_obs, time_average
from .exceptions import ConfigurationError, InvalidArgumentError, SingularMatrixError
from .linalg import cholesky

KINDS = ("static", "time_averaged", "stgp")
VARIANCE_FLOOR = 1e-12


@dataclass(frozen=True)
class KernelSpec:
    """Stationary kernel on scalar (normalized) coordinates."""

    family: str = "squared_exponential"
    lengthscale: float = 1.0
    variance: float = 1.0
    jitter: float = 0.0

    def __post_init__(self):
        if self.family not in ("squared_exponential", "identity_scaled"):
            raise InvalidArgumentError(f"unknown kernel family {self.family!r}")
        if not (self.lengthscale > 0):
            raise InvalidArgumentError(f"lengthscale must be > 0, got {self.lengthscale}")
        if not (self.variance > 0):
            raise InvalidArgumentError(f"variance must be > 0, got {self.variance}")
        if not (self.jitter >= 0):
            raise InvalidArgumentError(f"jitter must be >= 0, got {self.jitter}")


def kernel_cross(a, b, spec):
    """Cross-covariance between two point sets (no jitter)."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    if spec.family == "identity_scaled":
        return spec.variance * (a[:, None] == b[None, :]).astype(float)
    d = a[:, None] - b[None, :]
    return spec.variance * np.exp(-0.5 * (d / spec.lengthscale) ** 2)


def build_kernel_matrix(points, spec):
    """Kernel matrix with ``jitter * variance`` added to the diagonal."""
    points = np.asarray(points, dtype=float).ravel()
    if not np.all(np.isfinite(points)):
        raise InvalidArgumentError("kernel points must be finite")
    K = kernel_cross(points, points, spec)
    K[np.diag_indices_from(K)] += spec.jitter * spec.variance
    return K


def normalized_times(times, t0=None, T=None):
    """Map observation times affinely onto ``[0, 1]`` over the window."""
    times = np.asarray(times, dtype=float)
    t0 = times[0] if t0 is None else t0
    T = (times[-1] - times[0]) if T is None else T
    return (times - t0) / T


def spatial_points(n):
    """Equispaced spatial coordinates on ``[0, 1]`` for ``n`` components."""
    return np.linspace(0.0, 1.0, n) if n > 1 else np.zeros(1)


def potential_static(Y, M, sigma2_eps):
    """``½ ‖Y - M‖²_F / sigma2_eps``."""
    Y, M = check_same_shape(Y, M)
    sigma2_eps = check_positive(sigma2_eps, "sigma2_eps")
    R = Y - M
    return 0.5 * float(np.sum(R * R)) / sigma2_eps


def potential_time_averaged(Y, M, gamma_obs):
    """``½ rᵀ Γ_obs⁻¹ r`` with ``r`` the difference of row means."""
    Y, M = check_same_shape(Y, M)
    gamma_obs = check_matrix(gamma_obs, "gamma_obs", square=True)
    if gamma_obs.shape[0] != Y.shape[0]:
        raise InvalidArgumentError(f"gamma_obs is {gamma_obs.shape} but data have {Y.shape[0]} rows")
    r = time_average(Y) - time_average(M)
    factor = cholesky(gamma_obs, jitter=False, name="gamma_obs")
    z = factor.solve_lower(r)
    return 0.5 * float(z @ z)


def _stgp_quadratic(R, fx, ft):
    # tr[C_t⁻¹ Rᵀ C_x⁻¹ R] = ‖L_x⁻¹ R L_t⁻ᵀ‖²_F
    Z = fx.solve_lower(R)
    Z = ft.solve_lower(Z.T)
    return float(np.sum(Z * Z))


def potential_stgp(Y, M, C_x, C_t):
    """``½ tr[C_t⁻¹ (Y - M)ᵀ C_x⁻¹ (Y - M)]`` via Cholesky solves."""
    Y, M = check_same_shape(Y, M)
    I, J = Y.shape
    C_x = check_matrix(C_x, "C_x", shape=(I, I))
    C_t = check_matrix(C_t, "C_t", shape=(J, J))
    fx = _factor(C_x, "C_x")
    ft = _factor(C_t, "C_t")
    return 0.5 * _stgp_quadratic(Y - M, fx, ft)


def _factor(C, name):
    try:
        return cholesky(C, jitter=False, name=name)
    except SingularMatrixError as err:
        raise SingularMatrixError(f"kernel {name} is singular: {err}") from None


def estimate_stgp_variance(Y, M, R_x, R_t):
    """Maximum-likelihood scale of ``σ² (R_x ⊗ R_t)`` for the residual ``Y - M``."""
    Y, M = check_same_shape(Y, M)
    I, J = Y.shape
    fx = _factor(check_matrix(R_x, "R_x", shape=(I, I)), "R_x")
    ft = _factor(check_matrix(R_t, "R_t", shape=(J, J)), "R_t")
    s2 = _stgp_quadratic(Y - M, fx, ft) / (I * J)
    return max(s2, VARIANCE_FLOOR)


class MatrixNormalLikelihood(BaseEstimator):
    """Matrix-normal likelihood fitted to one observed trajectory matrix.

    ``fit`` stores the data and builds (and factorizes) the covariances; the
    fitted object is then a read-only potential evaluator, safe to share.

    Parameters
    ----------
    kind : {'static', 'time_averaged', 'stgp'}
    ell_x, ell_t : float
        Spatial and temporal correlation lengths in normalized coordinates
        (components at ``linspace(0, 1, I)``, times mapped onto ``[0, 1]``).
    jitter : float
        Relative diagonal loading for every covariance.
    sigma2_eps : float, optional
        Static noise variance. Defaults to the mean squared deviation of the
        observations from their row means.
    augment : bool
        Time-averaged model only: average the second-order augmented
        trajectory (9 rows) instead of the raw states.
    """

    def __init__(self, kind="stgp", ell_x=0.4, ell_t=0.1, jitter=1e-6, sigma2_eps=None, augment=True):
        self.kind = kind
        self.ell_x = ell_x
        self.ell_t = ell_t
        self.jitter = jitter
        self.sigma2_eps = sigma2_eps
        self.augment = augment

    def fit(self, Y, times=None):
        """Store observations ``Y`` (I x J) and build the covariance factors."""
        if self.kind not in KINDS:
            raise ConfigurationError(f"unknown likelihood kind {self.kind!r}; expected {KINDS}")
        values = getattr(Y, "values", Y)
        if times is None:
            times = getattr(Y, "times", None)
        Y = check_matrix(values, "Y")
        I, J = Y.shape
        self.shape_ = (I, J)
        self.times_ = np.arange(J, dtype=float) if times is None else np.asarray(times, dtype=float)
        self.Y_ = Y
        centered = Y - Y.mean(axis=1, keepdims=True)

        if self.kind == "static":
            s2 = self.sigma2_eps
            if s2 is None:
                s2 = max(float(np.mean(centered**2)), VARIANCE_FLOOR)
            self.sigma2_eps_ = check_positive(s2, "sigma2_eps")
            self.U_ = self.sigma2_eps_ * np.eye(I)
            self.V_ = np.eye(J)
            self.data_ = Y.ravel()
        elif self.kind == "time_averaged":
            A = augment_second_order(Y) if (self.augment and I == 3) else Y
            self.gamma_obs_ = estimate_gamma_obs(A, jitter=self.jitter)
            self._gamma_factor = cholesky(self.gamma_obs_, jitter=False, name="Gamma_obs")
            self.U_ = self.gamma_obs_
            self.V_pinv_ = np.full((J, J), 1.0 / J**2)
            self.data_ = time_average(A)
        else:
            R_x = build_kernel_matrix(
                spatial_points(I), KernelSpec(lengthscale=self.ell_x, jitter=self.jitter)
            )
            R_t = build_kernel_matrix(
                normalized_times(self.times_), KernelSpec(lengthscale=self.ell_t, jitter=self.jitter)
            )
            self.stgp_variance_ = estimate_stgp_variance(Y, Y - centered, R_x, R_t)
            scale = np.sqrt(self.stgp_variance_)
            self.C_x_ = scale * R_x
            self.C_t_ = scale * R_t
            self._fx = _factor(self.C_x_, "C_x")
            self._ft = _factor(self.C_t_, "C_t")
            self.U_, self.V_ = self.C_x_, self.C_t_
            self.data_ = Y.ravel()
        self.n_outputs_ = self.data_.size
        return self

    # data-space view used by ensemble Kalman methods and emulators

    def observe(self, X):
        """Map trajectories (..., I, J) to data-space vectors (..., q)."""
        check_is_fitted(self, "data_")
        X = np.asarray(getattr(X, "values", X), dtype=float)
        if X.shape[-2:] != self.shape_:
            raise InvalidArgumentError(f"trajectories must end in shape {self.shape_}, got {X.shape}")
        if self.kind == "time_averaged":
            A = augment_second_order(X) if (self.augment and self.shape_[0] == 3) else X
            return time_average(A)
        return X.reshape(X.shape[:-2] + (-1,))

    def precision_apply(self, R):
        """Apply ``Γ⁻¹`` to data-space residual rows ``R`` (..., q)."""
        check_is_fitted(self, "data_")
        R = np.asarray(R, dtype=float)
        lead = R.shape[:-1]
        R2 = R.reshape(-1, self.n_outputs_)
        if self.kind == "static":
            out = R2 / self.sigma2_eps_
        elif self.kind == "time_averaged":
            out = self._gamma_factor.solve(R2.T).T
        else:
            I, J = self.shape_
            Rm = R2.reshape(-1, I, J)
            # C_x⁻¹ R C_t⁻¹ for each row; row-major vec matches C_x ⊗ C_t
            A = self._fx.solve(np.moveaxis(Rm, 1, 0).reshape(I, -1)).reshape(I, -1, J)
            A = np.moveaxis(A, 0, 1)
            out = self._ft.solve(A.reshape(-1, J).T).T.reshape(-1, I * J)
        return out.reshape(lead + (self.n_outputs_,))

    def noise_apply(self, Xi):
        """Map standard normal rows ``Xi`` (..., q) to ``N(0, Γ)`` samples."""
        check_is_fitted(self, "data_")
        Xi = np.asarray(Xi, dtype=float)
        lead = Xi.shape[:-1]
        X2 = Xi.reshape(-1, self.n_outputs_)
        if self.kind == "static":
            out = np.sqrt(self.sigma2_eps_) * X2
        elif self.kind == "time_averaged":
            out = X2 @ self._gamma_factor.L.T
        else:
            I, J = self.shape_
            Z = X2.reshape(-1, I, J)
            out = (self._fx.L @ Z @ self._ft.L.T).reshape(-1, I * J)
        return out.reshape(lead + (self.n_outputs_,))

    def data_covariance(self):
        """Dense data-space covariance ``Γ`` (test-scale use only)."""
        check_is_fitted(self, "data_")
        if self.kind == "static":
            return self.sigma2_eps_ * np.eye(self.n_outputs_)
        if self.kind == "time_averaged":
            return self.gamma_obs_.copy()
        return np.kron(self.C_x_, self.C_t_)

    def data_potential(self, g):
        """Potential of data-space prediction(s) ``g`` (..., q)."""
        r = self.data_ - np.asarray(g, dtype=float)
        return 0.5 * np.sum(r * self.precision_apply(r), axis=-1)

    def data_potential_gradient(self, g):
        """Gradient of :meth:`data_potential` with respect to ``g``."""
        return -self.precision_apply(self.data_ - np.asarray(g, dtype=float))

    def potential(self, M):
        """Potential of forward trajectory ``M`` (I x J) against the data."""
        check_is_fitted(self, "data_")
        M = np.asarray(getattr(M, "values", M), dtype=float)
        if M.shape != self.shape_:
            raise InvalidArgumentError(f"M must have shape {self.shape_}, got {M.shape}")
        if self.kind == "static":
            return potential_static(self.Y_, M, self.sigma2_eps_)
        if self.kind == "stgp":
            return 0.5 * _stgp_quadratic(self.Y_ - M, self._fx, self._ft)
        r = self.data_ - self.observe(M)
        z = self._gamma_factor.solve_lower(r)
        return 0.5 * float(z @ z)
