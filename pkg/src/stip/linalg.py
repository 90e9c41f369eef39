"""Dense linear algebra primitives with consistent jitter semantics.

Every module that factorizes a covariance goes through :func:`cholesky`, so
they all degrade identically when a matrix is (numerically) singular.
"""

from dataclasses import dataclass

import numpy as np
from scipy import linalg as sla

from .exceptions import InvalidArgumentError, SingularMatrixError

# jitter escalation, relative to the mean diagonal
JITTER_START = 1e-10
JITTER_FACTOR = 10.0
JITTER_MAX = 1e-2
SYMMETRY_TOL = 1e-10


def _check_symmetric(A, tol=SYMMETRY_TOL, name="matrix"):
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise InvalidArgumentError(f"{name} must be square, got shape {A.shape}")
    scale = max(1.0, float(np.max(np.abs(A)))) if A.size else 1.0
    if A.size and np.max(np.abs(A - A.T)) > tol * scale:
        raise InvalidArgumentError(f"{name} is not symmetric")
    return A


@dataclass(frozen=True)
class CholeskyFactor:
    """Lower-triangular factor ``L`` with ``L @ L.T == A + jitter * I``."""

    L: np.ndarray
    jitter: float = 0.0

    @property
    def n(self):
        return self.L.shape[0]

    def solve(self, b):
        """Solve ``A x = b`` for a vector or a matrix of right-hand sides."""
        return sla.cho_solve((self.L, True), b, check_finite=False)

    def solve_lower(self, b):
        """Return ``L^{-1} b``."""
        return sla.solve_triangular(self.L, b, lower=True, check_finite=False)

    def logdet(self):
        return 2.0 * float(np.sum(np.log(np.diag(self.L))))

    def reconstruct(self):
        return self.L @ self.L.T


def cholesky(A, jitter=True, name="matrix"):
    """Cholesky factorization with optional escalating diagonal jitter.

    The plain factorization is tried first. When it fails and ``jitter`` is
    enabled, ``d * 1e-10``, ``d * 1e-9``, ... up to ``d * 1e-2`` is added to
    the diagonal, where ``d`` is the mean diagonal of ``A``.

    Raises
    ------
    SingularMatrixError
        If no admissible jitter yields a factorization.
    """
    A = _check_symmetric(A, name=name)
    try:
        return CholeskyFactor(np.linalg.cholesky(A), 0.0)
    except np.linalg.LinAlgError:
        if not jitter:
            raise SingularMatrixError(f"{name} is not positive definite") from None
    scale = float(np.mean(np.diag(A))) if A.size else 0.0
    if not np.isfinite(scale) or scale <= 0.0:
        raise SingularMatrixError(f"{name} has non-positive mean diagonal")
    eye = np.eye(A.shape[0])
    rel = JITTER_START
    while rel <= JITTER_MAX * (1 + 1e-12):
        try:
            return CholeskyFactor(np.linalg.cholesky(A + rel * scale * eye), rel * scale)
        except np.linalg.LinAlgError:
            rel *= JITTER_FACTOR
    raise SingularMatrixError(
        f"{name} is not positive definite even with jitter {JITTER_MAX:g} x mean diagonal"
    )


def sym_eig(A):
    """Eigenvalues of a symmetric matrix in ascending order."""
    A = _check_symmetric(A)
    return np.linalg.eigvalsh(A)


def sym_sqrt(A, tol=1e-10):
    """Symmetric square root ``S`` with ``S @ S == A`` for PSD ``A``."""
    A = _check_symmetric(A)
    w, Q = np.linalg.eigh(A)
    scale = max(1.0, float(np.max(np.abs(w)))) if w.size else 1.0
    if w.size and w.min() < -tol * scale:
        raise InvalidArgumentError(f"matrix has negative eigenvalue {w.min():.3e}")
    w = np.clip(w, 0.0, None)
    S = (Q * np.sqrt(w)) @ Q.T
    return 0.5 * (S + S.T)


def kron_dense(V, U):
    """Explicit ``V ⊗ U``; only intended for test-scale brute-force checks."""
    return np.kron(np.asarray(V, dtype=float), np.asarray(U, dtype=float))


def vec(M):
    """Column-stacking vectorization, so ``vec(U X V) = (V.T ⊗ U) vec(X)``."""
    return np.asarray(M, dtype=float).reshape(-1, order="F")
