"""Error metrics, Fisher information, Loewner-order checks and prediction.

The Fisher matrices compare the three likelihood models at the level of a
linearized forward map: given the Jacobian blocks ``dY/du_i`` (each I x J),

* static: ``F_ij = <dY_i, dY_j>_F / sigma2_eps``
* time-averaged: ``F_ij = m_iᵀ Γ_obs⁻¹ m_j`` with ``m_i`` the row means of ``dY_i``
* STGP: ``F_ij = tr[C_t⁻¹ dY_iᵀ C_x⁻¹ dY_j]``

The theorem checks draw random small instances that satisfy the eigenvalue
conditions under which the STGP information dominates the other two.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from ._validation import check_matrix, check_rng, check_vector
from .dynamics import integrate_batch
from .exceptions import DomainError, InvalidArgumentError, SingularMatrixError
from .io import write_csv_rows
from .likelihood import KINDS, KernelSpec, kernel_cross, normalized_times
from .linalg import _check_symmetric, cholesky, kron_dense, sym_eig, vec

log = logging.getLogger(__name__)

Z95 = 1.96
LOEWNER_TOL = 1e-8
CONDITION_MARGIN = 0.99
VIOLATION_SCALE = 4.0


def rem(u_hat, u_true):
    """Relative error ``||u_hat - u_true|| / ||u_true||``."""
    u_hat = check_vector(u_hat, "u_hat")
    u_true = check_vector(u_true, "u_true", size=u_hat.size)
    nrm = np.linalg.norm(u_true)
    if nrm == 0:
        raise DomainError("REM is undefined for a zero true parameter")
    return float(np.linalg.norm(u_hat - u_true) / nrm)


def rem_path(U_hat, u_true):
    """REM of each row of ``U_hat``."""
    U_hat = np.atleast_2d(np.asarray(U_hat, dtype=float))
    return np.array([rem(u, u_true) for u in U_hat])


def summarize(values):
    """Mean, median and standard deviation of a set of REM values."""
    v = np.asarray(values, dtype=float)
    return {
        "n": int(v.size),
        "mean": float(np.mean(v)),
        "median": float(np.median(v)),
        "std": float(np.std(v)),
    }


@dataclass
class FisherSpec:
    """Jacobian blocks plus the covariances of each likelihood model.

    Parameters
    ----------
    jacobians : ndarray of shape (p, I, J)
    sigma2_eps : float, optional
        Static-model noise variance.
    gamma_obs : ndarray (I, I), optional
        Time-averaged model covariance.
    C_x, C_t : ndarray, optional
        STGP spatial (I, I) and temporal (J, J) kernels.
    """

    jacobians: np.ndarray
    sigma2_eps: Optional[float] = None
    gamma_obs: Optional[np.ndarray] = None
    C_x: Optional[np.ndarray] = None
    C_t: Optional[np.ndarray] = None

    def __post_init__(self):
        jac = np.asarray(self.jacobians, dtype=float)
        if jac.ndim == 2:
            jac = jac[None]
        if jac.ndim != 3 or jac.shape[0] < 1:
            raise InvalidArgumentError("jacobians must have shape (p, I, J) with p >= 1")
        self.jacobians = jac

    @property
    def shape(self):
        return self.jacobians.shape[1:]

    def to_dict(self):
        out = {"jacobians": self.jacobians.tolist(), "sigma2_eps": self.sigma2_eps}
        for name in ("gamma_obs", "C_x", "C_t"):
            val = getattr(self, name)
            out[name] = None if val is None else np.asarray(val).tolist()
        return out


def _require(spec, name, kind):
    val = getattr(spec, name)
    if val is None:
        raise InvalidArgumentError(f"{kind} Fisher matrix needs {name}")
    return val


def fisher_matrix(spec, kind):
    """Fisher information matrix (p x p) of one likelihood model."""
    if kind not in KINDS:
        raise InvalidArgumentError(f"unknown kind {kind!r}; expected {KINDS}")
    D = spec.jacobians
    p, I, J = D.shape
    if kind == "static":
        s2 = float(_require(spec, "sigma2_eps", kind))
        if not s2 > 0:
            raise InvalidArgumentError("sigma2_eps must be positive")
        F = np.einsum("aij,bij->ab", D, D) / s2
    elif kind == "time_averaged":
        G = check_matrix(_require(spec, "gamma_obs", kind), "gamma_obs", shape=(I, I))
        m = D.mean(axis=2)  # (p, I)
        Z = cholesky(G, jitter=False, name="gamma_obs").solve_lower(m.T)
        F = Z.T @ Z
    else:
        fx = cholesky(check_matrix(_require(spec, "C_x", kind), "C_x", shape=(I, I)), jitter=False, name="C_x")
        ft = cholesky(check_matrix(_require(spec, "C_t", kind), "C_t", shape=(J, J)), jitter=False, name="C_t")
        Z = np.array([ft.solve_lower(fx.solve_lower(d).T) for d in D]).reshape(p, -1)
        F = Z @ Z.T
    return 0.5 * (F + F.T)


def fisher_matrix_dense(spec, kind):
    """Brute-force Fisher matrix through the full ``IJ x IJ`` precision."""
    D = spec.jacobians
    p, I, J = D.shape
    if kind == "static":
        P = np.eye(I * J) / float(spec.sigma2_eps)
    elif kind == "time_averaged":
        P = kron_dense(np.full((J, J), 1.0 / J**2), np.linalg.inv(spec.gamma_obs))
    else:
        P = np.linalg.inv(kron_dense(spec.C_t, spec.C_x))
    V = np.array([vec(d) for d in D])
    F = V @ P @ V.T
    return 0.5 * (F + F.T)


def finite_difference_jacobians(forward, v, step=1e-5):
    """Central-difference blocks ``dY/dv_i`` of ``forward(v) -> (I, J)``."""
    v = check_vector(v, "v")
    out = []
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = step
        out.append((np.asarray(forward(v + e)) - np.asarray(forward(v - e))) / (2 * step))
    return np.array(out)


@dataclass(frozen=True)
class LoewnerResult:
    holds: bool
    min_eig: float


def check_loewner(A, B, tol=LOEWNER_TOL):
    """Whether ``A - B`` is positive semidefinite up to ``-tol``."""
    A = check_matrix(A, "A", square=True)
    B = check_matrix(B, "B", shape=A.shape)
    _check_symmetric(A, name="A")
    _check_symmetric(B, name="B")
    lam = float(sym_eig(A - B)[0]) if A.size else 0.0
    return LoewnerResult(lam >= -tol, lam)


def random_spd(n, rng, cond=100.0):
    """Random SPD matrix with eigenvalues log-uniform in ``[1/sqrt(cond), sqrt(cond)]``."""
    Q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    lam = np.exp(rng.uniform(-0.5, 0.5, n) * np.log(cond))
    A = (Q * lam) @ Q.T
    return 0.5 * (A + A.T)


def _lmax(A):
    return float(sym_eig(A)[-1])


def _random_instance(rng):
    I = int(rng.integers(1, 6))
    J = int(rng.integers(1, 7))
    p = int(rng.integers(1, 4))
    return FisherSpec(
        rng.standard_normal((p, I, J)),
        sigma2_eps=float(np.exp(rng.uniform(-2, 2))),
        gamma_obs=random_spd(I, rng),
        C_x=random_spd(I, rng),
        C_t=random_spd(J, rng),
    )


def _rescale_pair(C_x, C_t, bound):
    # Split the scaling evenly so both kernels stay moderately sized.
    c = np.sqrt(bound / (_lmax(C_x) * _lmax(C_t)))
    return C_x * c, C_t * c


class _Report:
    def __init__(self, theorem, violate):
        self.theorem = theorem
        self.condition_met = not violate
        self.checks = {}

    def record(self, name, trial, spec, result):
        c = self.checks.setdefault(name, {"trials": 0, "violations": 0, "worst_min_eig": None, "instances": []})
        c["trials"] += 1
        if c["worst_min_eig"] is None or result.min_eig < c["worst_min_eig"]:
            c["worst_min_eig"] = result.min_eig
        if not result.holds:
            c["violations"] += 1
            c["instances"].append({"trial": trial, "min_eig": result.min_eig, "instance": spec.to_dict()})
            if self.condition_met:
                log.warning("theorem %s (%s): violation in trial %d, min eig %.3e", self.theorem, name, trial, result.min_eig)

    def as_dict(self, trials):
        violations = sum(c["violations"] for c in self.checks.values())
        return {
            "theorem": self.theorem,
            "trials": int(trials),
            "condition_met": self.condition_met,
            "status": "ok" if self.condition_met else "condition not met",
            "violations": int(violations),
            "checks": self.checks,
        }


def verify_theorem_1(trials, random_state=None, violate=False, tol=LOEWNER_TOL):
    """Check ``I_ST >= I_S`` and ``I_ST >= I_T`` on random instances.

    For the static comparison the kernels are rescaled so that
    ``lmax(C_x) lmax(C_t) = 0.99 sigma2_eps``; for the time-averaged one so that
    ``lmax(C_x) lmax(C_t) = 0.99 J lmin(Γ_obs)``. With ``violate=True`` the
    products are made 4 times the bound instead and violations are expected.
    """
    if trials < 0:
        raise InvalidArgumentError("trials must be >= 0")
    rng = check_rng(random_state)
    factor = VIOLATION_SCALE if violate else CONDITION_MARGIN
    report = _Report("1", violate)
    for t in range(int(trials)):
        base = _random_instance(rng)
        J = base.shape[1]
        for name, bound, other in (
            ("static", base.sigma2_eps, "static"),
            ("time_averaged", J * float(sym_eig(base.gamma_obs)[0]), "time_averaged"),
        ):
            C_x, C_t = _rescale_pair(base.C_x, base.C_t, factor * bound)
            spec = FisherSpec(base.jacobians, base.sigma2_eps, base.gamma_obs, C_x, C_t)
            res = check_loewner(fisher_matrix(spec, "stgp"), fisher_matrix(spec, other), tol)
            report.record(name, t, spec, res)
    return report.as_dict(trials)


def verify_theorem_2(trials, random_state=None, violate=False, tol=LOEWNER_TOL):
    """Check ``I_ST >= I_T`` with ``C_x = Γ_obs`` and ``lmax(C_t) = 0.99 J``."""
    if trials < 0:
        raise InvalidArgumentError("trials must be >= 0")
    rng = check_rng(random_state)
    factor = VIOLATION_SCALE if violate else CONDITION_MARGIN
    report = _Report("2", violate)
    for t in range(int(trials)):
        base = _random_instance(rng)
        J = base.shape[1]
        C_t = base.C_t * (factor * J / _lmax(base.C_t))
        spec = FisherSpec(base.jacobians, base.sigma2_eps, base.gamma_obs, base.gamma_obs, C_t)
        res = check_loewner(fisher_matrix(spec, "stgp"), fisher_matrix(spec, "time_averaged"), tol)
        report.record("time_averaged", t, spec, res)
    return report.as_dict(trials)


@dataclass
class ForwardPrediction:
    """Pointwise predictive summary on a time grid.

    ``mean``, ``std``, ``lo95`` and ``hi95`` have shape (I, T*).
    """

    times: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    component_labels: tuple
    n_used: int
    n_dropped: int = 0

    @property
    def lo95(self):
        return self.mean - Z95 * self.std

    @property
    def hi95(self):
        return self.mean + Z95 * self.std

    @property
    def variance(self):
        return self.std**2

    def to_csv(self, path, truth=None):
        """Write ``t,component,mean,std,lo95,hi95,truth`` (truth empty if absent)."""
        lo, hi = self.lo95, self.hi95
        rows = []
        for j, t in enumerate(self.times):
            for i, lab in enumerate(self.component_labels):
                tr = "" if truth is None else float(truth[i, j])
                rows.append([float(t), lab, float(self.mean[i, j]), float(self.std[i, j]), float(lo[i, j]), float(hi[i, j]), tr])
        write_csv_rows(path, ["t", "component", "mean", "std", "lo95", "hi95", "truth"], rows)


def _integrate_samples(samples, system, config):
    U = np.atleast_2d(np.asarray(samples, dtype=float))
    if U.shape[0] == 0:
        raise InvalidArgumentError("at least one sample is required")
    values, fail = integrate_batch(system, U, config)
    ok = ~np.isfinite(fail)
    if not ok.any():
        raise InvalidArgumentError("every sample trajectory diverged")
    if not ok.all():
        log.warning("dropped %d divergent sample trajectories", int(np.sum(~ok)))
    return values[ok], int(np.sum(~ok))


def predict_forward(samples, system, config):
    """Monte Carlo forward prediction from physical parameter samples.

    Each sample is integrated on ``config``'s grid; the result holds the
    sample mean and (population) standard deviation. Divergent samples are
    dropped and counted.
    """
    G, n_drop = _integrate_samples(samples, system, config)
    return ForwardPrediction(
        config.times, G.mean(axis=0), G.std(axis=0), system.component_labels, G.shape[0], n_drop
    )


def temporal_schur(model, t_star):
    """``C_t(t*, t*) - C_t(t*, t) C_t⁻¹ C_t(t, t*)`` for a fitted STGP model, per t*."""
    k_cross, k_ss, ft = _temporal_blocks(model, t_star)
    W = ft.solve_lower(k_cross)
    return k_ss - np.sum(W * W, axis=0)


def _temporal_blocks(model, t_star):
    times = model.times_
    t0, T = times[0], times[-1] - times[0]
    spec = KernelSpec(lengthscale=model.ell_t)
    scale = float(np.sqrt(model.stgp_variance_))
    k_cross = scale * kernel_cross(normalized_times(times, t0, T), normalized_times(t_star, t0, T), spec)
    k_ss = np.full(len(t_star), scale * (1.0 + model.jitter))
    return k_cross, k_ss, model._ft


def predict_posterior_stgp(samples, system, config, model, Y=None):
    """Posterior predictive mean and variance with the STGP residual correction.

    For each sample the forward trajectory on ``config``'s grid is corrected by
    ``(Y - G(X, t)) C_t⁻¹ C_t(t, t*)``. The variance adds the spatial diagonal
    times the temporal Schur complement to the sample variance of the
    corrected trajectories. ``config``'s first J grid points must be the
    observation times (as produced by ``ObservationConfig.extended``).

    A static model has no temporal cross-covariance, so the mean is the plain
    sample mean and ``sigma2_eps`` replaces the conditional term.

    Returns
    -------
    mean, variance : ndarray of shape (I, T*)
    """
    G, _ = _integrate_samples(samples, system, config)
    Y = model.Y_ if Y is None else np.asarray(getattr(Y, "values", Y), dtype=float)
    I, J = Y.shape
    t_star = config.times
    if model.kind == "static":
        return G.mean(axis=0), model.sigma2_eps_ + G.var(axis=0)
    if model.kind != "stgp":
        raise InvalidArgumentError("posterior prediction needs a static or stgp model")
    if G.shape[2] < J or not np.allclose(t_star[:J], model.times_, rtol=0, atol=1e-9 * max(1.0, abs(t_star[0]))):
        raise InvalidArgumentError("prediction grid must start with the observation times")
    k_cross, k_ss, ft = _temporal_blocks(model, t_star)
    A = ft.solve(k_cross)  # C_t⁻¹ C_t(t, t*), shape (J, T*)
    G_star = G + (Y[None] - G[:, :, :J]) @ A
    schur = k_ss - np.sum(k_cross * A, axis=0)
    variance = np.diag(model.C_x_)[:, None] * np.maximum(schur, 0.0)[None, :] + G_star.var(axis=0)
    return G_star.mean(axis=0), variance
