"""Chaotic ODE systems, fixed-step RK4 integration and trajectory summaries.

Three built-in systems share a compiled batch integrator: Lorenz63 with
parameters ``(sigma, rho, beta)``, Rossler ``(a, b, c)`` and Chen ``(a, b, c)``.
Systems built from an arbitrary Python right-hand side (used in tests) go
through a slower pure-numpy RK4 loop with the same stepping rules.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numba
import numpy as np

from .exceptions import (
    DivergenceError,
    InvalidArgumentError,
    SingularMatrixError,
    UnsupportedDimensionError,
)
from .io import read_csv_matrix, write_csv_rows
from .linalg import cholesky

BLOWUP_BOUND = 1e8
AUGMENTED_LABELS = ("x", "y", "z", "xx", "yy", "zz", "xy", "xz", "yz")

_LORENZ63, _ROSSLER, _CHEN = 0, 1, 2


@dataclass(frozen=True)
class OdeSystem:
    """An autonomous first-order system ``dx/dt = rhs(x; u)``.

    ``code`` selects the compiled batch kernel; systems without one are
    integrated by the generic Python loop.
    """

    name: str
    dimension: int
    rhs: Callable[[np.ndarray, np.ndarray], np.ndarray]
    param_names: tuple = ()
    component_labels: tuple = ()
    code: Optional[int] = None

    @property
    def n_params(self):
        return len(self.param_names)


def _lorenz63_rhs(x, u):
    sigma, rho, beta = u
    return np.array(
        [sigma * (x[1] - x[0]), x[0] * (rho - x[2]) - x[1], x[0] * x[1] - beta * x[2]]
    )


def _rossler_rhs(x, u):
    a, b, c = u
    return np.array([-x[1] - x[2], x[0] + a * x[1], b + x[2] * (x[0] - c)])


def _chen_rhs(x, u):
    a, b, c = u
    return np.array(
        [a * (x[1] - x[0]), (c - a) * x[0] - x[0] * x[2] + c * x[1], x[0] * x[1] - b * x[2]]
    )


LORENZ63 = OdeSystem("lorenz63", 3, _lorenz63_rhs, ("sigma", "rho", "beta"), ("x", "y", "z"), _LORENZ63)
ROSSLER = OdeSystem("rossler", 3, _rossler_rhs, ("a", "b", "c"), ("x", "y", "z"), _ROSSLER)
CHEN = OdeSystem("chen", 3, _chen_rhs, ("a", "b", "c"), ("x", "y", "z"), _CHEN)

SYSTEMS = {s.name: s for s in (LORENZ63, ROSSLER, CHEN)}


def get_system(name):
    try:
        return SYSTEMS[name]
    except KeyError:
        raise InvalidArgumentError(
            f"unknown system {name!r}; expected one of {sorted(SYSTEMS)}"
        ) from None


def linear_system(dimension=1):
    """Test system ``dx/dt = -u * x`` with a single rate parameter."""
    return OdeSystem(
        "linear",
        dimension,
        lambda x, u: -u[0] * np.asarray(x, dtype=float),
        ("rate",),
        tuple(f"x{i}" for i in range(dimension)),
    )


def zero_system(dimension=3):
    """Test system with identically zero vector field."""
    return OdeSystem(
        "zero",
        dimension,
        lambda x, u: np.zeros(dimension),
        ("unused",),
        tuple(f"x{i}" for i in range(dimension)),
    )


@dataclass(frozen=True)
class ObservationConfig:
    """Observation window and integration settings.

    Parameters
    ----------
    t0 : float
        Spin-up time; the first observation is taken at ``t0``.
    T : float
        Window length; the last observation is taken at ``t0 + T``.
    J : int
        Number of equally spaced observation times.
    h : float
        Maximal integrator step. The step actually used is the largest value
        not exceeding ``h`` that puts every observation time (and ``t0``) on
        the integration grid.
    x0 : sequence of float
        Initial state at time 0.
    x_start : sequence of float, optional
        If given, integration starts from this state at time ``t0`` and the
        spin-up interval is skipped.
    """

    t0: float = 100.0
    T: float = 10.0
    J: int = 100
    h: float = 0.01
    x0: tuple = (1.0, 1.0, 1.0)
    x_start: Optional[tuple] = None

    def __post_init__(self):
        object.__setattr__(self, "x0", tuple(float(v) for v in np.ravel(self.x0)))
        if self.x_start is not None:
            object.__setattr__(self, "x_start", tuple(float(v) for v in np.ravel(self.x_start)))
        if not (self.t0 >= 0):
            raise InvalidArgumentError(f"t0 must be >= 0, got {self.t0}")
        if not (self.T > 0):
            raise InvalidArgumentError(f"T must be > 0, got {self.T}")
        if int(self.J) != self.J or self.J < 2:
            raise InvalidArgumentError(f"J must be an integer >= 2, got {self.J}")
        object.__setattr__(self, "J", int(self.J))
        if not (self.h > 0):
            raise InvalidArgumentError(f"h must be > 0, got {self.h}")

    @property
    def spacing(self):
        return self.T / (self.J - 1)

    @property
    def steps_per_obs(self):
        return max(1, math.ceil(self.spacing / self.h - 1e-9))

    @property
    def h_obs(self):
        """Integrator step inside the observation window."""
        return self.spacing / self.steps_per_obs

    @property
    def spinup_plan(self):
        """``(n_steps, step)`` covering ``[0, t0]``; zero steps when restarting."""
        if self.x_start is not None or self.t0 == 0:
            return 0, 0.0
        n = self.t0 / self.h_obs
        if abs(n - round(n)) <= 1e-9 * max(1.0, n):
            return int(round(n)), self.h_obs
        n_spin = math.ceil(self.t0 / self.h - 1e-9)
        return n_spin, self.t0 / n_spin

    @property
    def times(self):
        return self.t0 + self.spacing * np.arange(self.J)

    @property
    def initial_state(self):
        return np.array(self.x_start if self.x_start is not None else self.x0, dtype=float)

    def extended(self, factor):
        """Same grid and step, window stretched to about ``factor * T``."""
        extra = int(math.floor(factor * (self.J - 1) + 1e-9))
        J = max(2, extra + 1)
        return replace(self, J=J, T=self.spacing * (J - 1))

    def restarted(self, state):
        """Copy that starts from ``state`` at ``t0`` instead of spinning up."""
        return replace(self, x_start=tuple(np.asarray(state, dtype=float)))


@dataclass
class TrajectoryMatrix:
    """Observed states, one row per component and one column per time."""

    values: np.ndarray
    times: np.ndarray
    component_labels: tuple = field(default=())

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=float))
        self.times = np.asarray(self.times, dtype=float)
        if self.values.shape[1] != self.times.size:
            raise InvalidArgumentError(
                f"{self.values.shape[1]} columns but {self.times.size} times"
            )
        if not self.component_labels:
            self.component_labels = tuple(f"x{i}" for i in range(self.values.shape[0]))
        self.component_labels = tuple(self.component_labels)

    @property
    def shape(self):
        return self.values.shape

    def to_csv(self, path):
        write_trajectory_csv(path, self)


def _as_values(X):
    if isinstance(X, TrajectoryMatrix):
        return X.values
    return np.atleast_2d(np.asarray(X, dtype=float))


def _check_params(system, u):
    u = np.asarray(u, dtype=float).ravel()
    if system.n_params and u.size != system.n_params:
        raise InvalidArgumentError(
            f"{system.name} takes {system.n_params} parameters, got {u.size}"
        )
    return u


def eval_rhs(system, state, u):
    """Evaluate the vector field of ``system`` at ``state``."""
    state = np.asarray(state, dtype=float).ravel()
    if state.size != system.dimension:
        raise InvalidArgumentError(
            f"{system.name} has dimension {system.dimension}, got state of length {state.size}"
        )
    return np.asarray(system.rhs(state, _check_params(system, u)), dtype=float)


@numba.njit(cache=True, inline="always")
def _rhs3(code, x0, x1, x2, u0, u1, u2):
    if code == 0:
        return u0 * (x1 - x0), x0 * (u1 - x2) - x1, x0 * x1 - u2 * x2
    elif code == 1:
        return -x1 - x2, x0 + u0 * x1, u1 + x2 * (x0 - u2)
    else:
        return u0 * (x1 - x0), (u2 - u0) * x0 - x0 * x2 + u2 * x1, x0 * x1 - u1 * x2


@numba.njit(cache=True, inline="always")
def _rk4_3(code, x0, x1, x2, u0, u1, u2, h):
    a0, a1, a2 = _rhs3(code, x0, x1, x2, u0, u1, u2)
    b0, b1, b2 = _rhs3(code, x0 + 0.5 * h * a0, x1 + 0.5 * h * a1, x2 + 0.5 * h * a2, u0, u1, u2)
    c0, c1, c2 = _rhs3(code, x0 + 0.5 * h * b0, x1 + 0.5 * h * b1, x2 + 0.5 * h * b2, u0, u1, u2)
    d0, d1, d2 = _rhs3(code, x0 + h * c0, x1 + h * c1, x2 + h * c2, u0, u1, u2)
    s = h / 6.0
    return (
        x0 + s * (a0 + 2.0 * b0 + 2.0 * c0 + d0),
        x1 + s * (a1 + 2.0 * b1 + 2.0 * c1 + d1),
        x2 + s * (a2 + 2.0 * b2 + 2.0 * c2 + d2),
    )


@numba.njit(cache=True)
def _bad(v, bound):
    return not (abs(v) <= bound)


@numba.njit(cache=True)
def _integrate3_batch(code, U, X0, n_spin, h_spin, n_per, h_obs, J, bound):
    P = U.shape[0]
    out = np.full((P, 3, J), np.nan)
    fail_time = np.full(P, np.nan)
    for p in range(P):
        u0, u1, u2 = U[p, 0], U[p, 1], U[p, 2]
        x0, x1, x2 = X0[p, 0], X0[p, 1], X0[p, 2]
        ok = True
        for s in range(n_spin):
            x0, x1, x2 = _rk4_3(code, x0, x1, x2, u0, u1, u2, h_spin)
            if _bad(x0, bound) or _bad(x1, bound) or _bad(x2, bound):
                fail_time[p] = s * h_spin
                ok = False
                break
        if not ok:
            continue
        t_spin = n_spin * h_spin
        out[p, 0, 0] = x0
        out[p, 1, 0] = x1
        out[p, 2, 0] = x2
        for j in range(1, J):
            for s in range(n_per):
                x0, x1, x2 = _rk4_3(code, x0, x1, x2, u0, u1, u2, h_obs)
                if _bad(x0, bound) or _bad(x1, bound) or _bad(x2, bound):
                    fail_time[p] = t_spin + ((j - 1) * n_per + s) * h_obs
                    ok = False
                    break
            if not ok:
                break
            out[p, 0, j] = x0
            out[p, 1, j] = x1
            out[p, 2, j] = x2
    return out, fail_time


def _rk4_python(system, u, x, n, h, bound):
    """Advance ``x`` by ``n`` RK4 steps; returns state and failure step or -1."""
    f = system.rhs
    for s in range(n):
        k1 = f(x, u)
        k2 = f(x + 0.5 * h * k1, u)
        k3 = f(x + 0.5 * h * k2, u)
        k4 = f(x + h * k3, u)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.abs(x) <= bound):
            return x, s
    return x, -1


def _integrate_python(system, u, x_init, cfg, bound):
    n_spin, h_spin = cfg.spinup_plan
    out = np.full((system.dimension, cfg.J), np.nan)
    x, fail = _rk4_python(system, u, x_init.copy(), n_spin, h_spin, bound)
    if fail >= 0:
        return out, fail * h_spin
    t_spin = n_spin * h_spin
    out[:, 0] = x
    n_per, h = cfg.steps_per_obs, cfg.h_obs
    for j in range(1, cfg.J):
        x, fail = _rk4_python(system, u, x, n_per, h, bound)
        if fail >= 0:
            return out, t_spin + ((j - 1) * n_per + fail) * h
        out[:, j] = x
    return out, np.nan


def integrate_batch(system, U, cfg, x_init=None, bound=BLOWUP_BOUND):
    """Integrate many parameter vectors at once.

    Parameters
    ----------
    system : OdeSystem
    U : array of shape (P, n_params)
    cfg : ObservationConfig
    x_init : array of shape (dimension,) or (P, dimension), optional
        Overrides ``cfg.initial_state``.

    Returns
    -------
    values : array of shape (P, dimension, J)
        Observed states; rows of failed particles are NaN from the failure on.
    fail_time : array of shape (P,)
        Last finite time for diverged particles, NaN for the others.
    """
    U = np.atleast_2d(np.asarray(U, dtype=float))
    if system.n_params and U.shape[1] != system.n_params:
        raise InvalidArgumentError(
            f"{system.name} takes {system.n_params} parameters, got {U.shape[1]}"
        )
    X0 = cfg.initial_state if x_init is None else np.asarray(x_init, dtype=float)
    X0 = np.broadcast_to(X0, (U.shape[0], X0.shape[-1])).astype(float)
    if X0.shape[1] != system.dimension:
        raise InvalidArgumentError(
            f"{system.name} has dimension {system.dimension}, got initial state of length {X0.shape[1]}"
        )
    n_spin, h_spin = cfg.spinup_plan
    if system.code is not None:
        return _integrate3_batch(
            system.code, U, np.ascontiguousarray(X0), n_spin, h_spin,
            cfg.steps_per_obs, cfg.h_obs, cfg.J, bound,
        )
    values = np.empty((U.shape[0], system.dimension, cfg.J))
    fail_time = np.empty(U.shape[0])
    for p in range(U.shape[0]):
        values[p], fail_time[p] = _integrate_python(system, U[p], X0[p], cfg, bound)
    return values, fail_time


def integrate(system, u, cfg, bound=BLOWUP_BOUND):
    """Observe one trajectory of ``system`` on the window described by ``cfg``.

    Raises
    ------
    DivergenceError
        If the state leaves ``[-bound, bound]`` or becomes non-finite.
    """
    u = _check_params(system, u)
    values, fail_time = integrate_batch(system, u[None, :], cfg, bound=bound)
    if np.isfinite(fail_time[0]):
        raise DivergenceError(
            f"{system.name} diverged for u={u.tolist()} after t={fail_time[0]:.6g}",
            last_finite_time=float(fail_time[0]),
        )
    return TrajectoryMatrix(values[0], cfg.times, system.component_labels or ())


def augment_second_order(X):
    """Stack first and second order terms ``(x, y, z, x², y², z², xy, xz, yz)``."""
    values = _as_values(X)
    if values.shape[-2] != 3:
        raise UnsupportedDimensionError(
            f"second-order augmentation needs 3 components, got {values.shape[-2]}"
        )
    x, y, z = values[..., 0, :], values[..., 1, :], values[..., 2, :]
    aug = np.stack([x, y, z, x * x, y * y, z * z, x * y, x * z, y * z], axis=-2)
    if isinstance(X, TrajectoryMatrix):
        return TrajectoryMatrix(aug, X.times, AUGMENTED_LABELS)
    return aug


def time_average(X):
    """Row means of a trajectory matrix (``X 1_J / J``)."""
    values = _as_values(X)
    if values.shape[-1] == 0:
        raise InvalidArgumentError("cannot average an empty trajectory")
    return values.mean(axis=-1)


def estimate_gamma_obs(X_truth, jitter=1e-6):
    """Centered outer product ``X (I - 1 1ᵀ / J) Xᵀ`` plus relative jitter.

    The diagonal is loaded with ``jitter * mean(diag)``; the result is checked
    with a plain Cholesky factorization.
    """
    values = _as_values(X_truth)
    if values.shape[1] < 2:
        raise InvalidArgumentError("estimate_gamma_obs needs at least 2 time points")
    if jitter < 0:
        raise InvalidArgumentError("jitter must be non-negative")
    centered = values - values.mean(axis=1, keepdims=True)
    gamma = centered @ centered.T
    gamma = 0.5 * (gamma + gamma.T)
    gamma = gamma + jitter * float(np.mean(np.diag(gamma))) * np.eye(gamma.shape[0])
    try:
        cholesky(gamma, jitter=False, name="Gamma_obs")
    except SingularMatrixError:
        raise SingularMatrixError("Gamma_obs is singular; use a positive jitter") from None
    return gamma


def write_trajectory_csv(path, X, time_label="time"):
    """Write ``time,<components>`` rows at 17 significant digits."""
    rows = ([float(t), *map(float, X.values[:, j])] for j, t in enumerate(X.times))
    write_csv_rows(path, [time_label, *X.component_labels], rows)


def read_trajectory_csv(path):
    body, header = read_csv_matrix(path)
    return TrajectoryMatrix(body[:, 1:].T, body[:, 0], tuple(header[1:]))
