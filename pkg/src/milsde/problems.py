"""Problem definitions for Ito SDE systems dX = f(X) dt + sum_i g_i(X) dW_i.

A problem bundles the drift f, the diffusion columns g_i with their
Jacobians Dg_i, and metadata the steppers and the step-size controller
need (dimensions, noise structure, initial state, horizon). Drift is
expected to satisfy a one-sided Lipschitz condition (cubic-type decay is
the intended regime); diffusion columns are globally Lipschitz. Nothing
here integrates anything: problems are immutable value objects.

All built-in coefficient callables are module-level functions (bound via
``functools.partial``) so problems pickle cleanly for process pools.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import partial
from typing import Callable, Mapping

import numpy as np

from .errors import UsageError

__all__ = [
    "SdeProblem",
    "BuiltinProblem",
    "BUILTIN_NAMES",
    "make_builtin",
    "JacobianCheck",
    "check_jacobian",
    "commutator_defect",
]

#: Noise structure labels, ordered roughly by how much of the Milstein
#: correction survives: "additive" kills it entirely, "diagonal" and
#: "commutative" kill the Levy-area part, "general" keeps everything.
STRUCTURES = ("additive", "diagonal", "commutative", "general")


@dataclass(frozen=True)
class SdeProblem:
    """Immutable description of an autonomous Ito SDE system.

    Attributes:
        dim_state: state dimension d.
        dim_noise: number of driving Wiener components m.
        drift: f(x) -> (d,) array.
        diffusion_column: g(x, i) -> (d,) array, the i-th diffusion column.
        diffusion_jacobian: jac(x, i) -> (d, d) array, the Jacobian of g_i.
        structure: one of STRUCTURES; integrators use "additive" to skip
            the identically-zero Milstein correction.
        initial_state: X(0), shape (d,).
        horizon: final time T > 0.
        name: short identifier used in logs and CSV output.
    """

    dim_state: int
    dim_noise: int
    drift: Callable[[np.ndarray], np.ndarray]
    diffusion_column: Callable[[np.ndarray, int], np.ndarray]
    diffusion_jacobian: Callable[[np.ndarray, int], np.ndarray]
    structure: str
    initial_state: np.ndarray
    horizon: float
    name: str = "custom"

    def __post_init__(self):
        if self.dim_state < 1 or self.dim_noise < 1:
            raise UsageError("dim_state and dim_noise must be positive")
        if self.structure not in STRUCTURES:
            raise UsageError(f"unknown structure {self.structure!r}; expected one of {STRUCTURES}")
        if not self.horizon > 0.0:
            raise UsageError("horizon must be positive")
        state = np.asarray(self.initial_state, dtype=float)
        if state.shape != (self.dim_state,):
            raise UsageError(
                f"initial_state has shape {state.shape}, expected ({self.dim_state},)"
            )
        if not np.all(np.isfinite(state)):
            raise UsageError("initial_state must be finite")
        object.__setattr__(self, "initial_state", state)

    def diffusion_matrix(self, x: np.ndarray) -> np.ndarray:
        """Convenience (d, m) matrix view; columns are g_i(x)."""
        return np.column_stack(
            [self.diffusion_column(x, i) for i in range(self.dim_noise)]
        )


# ---------------------------------------------------------------------------
# Built-in coefficient functions. Module-level so partial() keeps problems
# picklable. Jacobians of every builtin diffusion are constant matrices,
# so they are prebuilt once and returned read-only.
# ---------------------------------------------------------------------------


def _cubic_drift_1d(x):
    # f(x) = x - x^3, one-sided Lipschitz with constant 1.
    return x - x * x * x


def _cubic_drift_2d(x):
    # Componentwise f(x) = x - 3 x^3.
    return x - 3.0 * x * x * x


def _scalar_mult_column(scale, x, i):
    return scale * (1.0 - x)


def _scalar_probe_column(scale, x, i):
    return scale * x


def _const_column(columns, x, i):
    return columns[i]


def _const_jacobian(jacobians, x, i):
    return jacobians[i]


def _twod_diagonal_column(scale, x, i):
    col = np.zeros(2)
    col[i] = scale * x[i]
    return col


def _twod_commutative_column(scale, x, i):
    # G(x) = scale * [[x1, x2], [x2, x1]]
    if i == 0:
        return scale * x
    return scale * x[::-1]


def _twod_general_column(scale, x, i):
    # G(x) = scale * [[1.5 x1, x2], [x2, 1.5 x1]]
    if i == 0:
        return np.array([1.5 * scale * x[0], scale * x[1]])
    return np.array([scale * x[1], 1.5 * scale * x[0]])


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=float)
    a.flags.writeable = False
    return a


def _build_scalar_mult(scale: float) -> SdeProblem:
    jac = _readonly([[-scale]])
    return SdeProblem(
        dim_state=1,
        dim_noise=1,
        drift=_cubic_drift_1d,
        diffusion_column=partial(_scalar_mult_column, scale),
        diffusion_jacobian=partial(_const_jacobian, (jac,)),
        structure="diagonal",
        initial_state=np.array([2.0]),
        horizon=1.0,
        name="scalar_mult",
    )


def _build_scalar_add(scale: float) -> SdeProblem:
    col = _readonly([scale])
    jac = _readonly([[0.0]])
    return SdeProblem(
        dim_state=1,
        dim_noise=1,
        drift=_cubic_drift_1d,
        diffusion_column=partial(_const_column, (col,)),
        diffusion_jacobian=partial(_const_jacobian, (jac,)),
        structure="additive",
        initial_state=np.array([2.0]),
        horizon=1.0,
        name="scalar_add",
    )


def _build_scalar_probe(scale: float) -> SdeProblem:
    jac = _readonly([[scale]])
    return SdeProblem(
        dim_state=1,
        dim_noise=1,
        drift=_cubic_drift_1d,
        diffusion_column=partial(_scalar_probe_column, scale),
        diffusion_jacobian=partial(_const_jacobian, (jac,)),
        structure="diagonal",
        initial_state=np.array([2.0]),
        horizon=1.0,
        name="scalar_probe",
    )


def _build_twod_diagonal(scale: float) -> SdeProblem:
    jacs = (
        _readonly([[scale, 0.0], [0.0, 0.0]]),
        _readonly([[0.0, 0.0], [0.0, scale]]),
    )
    return SdeProblem(
        dim_state=2,
        dim_noise=2,
        drift=_cubic_drift_2d,
        diffusion_column=partial(_twod_diagonal_column, scale),
        diffusion_jacobian=partial(_const_jacobian, jacs),
        structure="diagonal",
        initial_state=np.array([2.0, 3.0]),
        horizon=1.0,
        name="twod_diagonal",
    )


def _build_twod_commutative(scale: float) -> SdeProblem:
    jacs = (
        _readonly([[scale, 0.0], [0.0, scale]]),
        _readonly([[0.0, scale], [scale, 0.0]]),
    )
    return SdeProblem(
        dim_state=2,
        dim_noise=2,
        drift=_cubic_drift_2d,
        diffusion_column=partial(_twod_commutative_column, scale),
        diffusion_jacobian=partial(_const_jacobian, jacs),
        structure="commutative",
        initial_state=np.array([2.0, 3.0]),
        horizon=1.0,
        name="twod_commutative",
    )


def _build_twod_noncommutative(scale: float) -> SdeProblem:
    jacs = (
        _readonly([[1.5 * scale, 0.0], [0.0, scale]]),
        _readonly([[0.0, scale], [1.5 * scale, 0.0]]),
    )
    return SdeProblem(
        dim_state=2,
        dim_noise=2,
        drift=_cubic_drift_2d,
        diffusion_column=partial(_twod_general_column, scale),
        diffusion_jacobian=partial(_const_jacobian, jacs),
        structure="general",
        initial_state=np.array([2.0, 3.0]),
        horizon=1.0,
        name="twod_noncommutative",
    )


_BUILDERS = {
    "scalar_mult": _build_scalar_mult,
    "scalar_add": _build_scalar_add,
    "scalar_probe": _build_scalar_probe,
    "twod_diagonal": _build_twod_diagonal,
    "twod_commutative": _build_twod_commutative,
    "twod_noncommutative": _build_twod_noncommutative,
}

BUILTIN_NAMES = tuple(_BUILDERS)

_DEFAULT_PARAMETERS: Mapping[str, float] = {"noise_scale": 0.2}


@dataclass(frozen=True)
class BuiltinProblem:
    """A named built-in problem plus its parameter map.

    ``build()`` materialises the :class:`SdeProblem`. The default noise
    scale is 0.2 for every builtin.
    """

    name: str
    parameters: Mapping[str, float] = field(default_factory=lambda: dict(_DEFAULT_PARAMETERS))

    def build(self) -> SdeProblem:
        if self.name not in _BUILDERS:
            raise UsageError(
                f"unknown builtin problem {self.name!r}; available: {', '.join(BUILTIN_NAMES)}"
            )
        unknown = set(self.parameters) - {"noise_scale"}
        if unknown:
            raise UsageError(f"unknown problem parameters: {sorted(unknown)}")
        scale = float(self.parameters.get("noise_scale", 0.2))
        return _BUILDERS[self.name](scale)


def make_builtin(name: str, **parameters: float) -> SdeProblem:
    """Build a built-in problem by name.

    Args:
        name: one of ``BUILTIN_NAMES``.
        **parameters: optional overrides (only ``noise_scale`` is recognised).

    Raises:
        UsageError: unknown name or parameter.
    """
    params = dict(_DEFAULT_PARAMETERS)
    params.update(parameters)
    return BuiltinProblem(name, params).build()


# ---------------------------------------------------------------------------
# Diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class JacobianCheck:
    """Finite-difference validation report for the diffusion Jacobians."""

    max_deviation: float
    per_point: tuple  # (point, max deviation at that point)
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.max_deviation <= self.tolerance


def check_jacobian(
    problem: SdeProblem,
    points,
    tolerance: float = 1e-6,
    fd_step: float = 1e-5,
) -> JacobianCheck:
    """Compare diffusion_jacobian against central differences of the columns.

    Args:
        problem: the problem to check.
        points: iterable of states, each shape (d,).
        tolerance: max absolute deviation for ``passed``.
        fd_step: central-difference step.

    Returns:
        JacobianCheck with the worst deviation overall and per point.
    """
    if tolerance <= 0.0 or fd_step <= 0.0:
        raise UsageError("tolerance and fd_step must be positive")
    pts = [np.asarray(p, dtype=float) for p in points]
    if not pts:
        raise UsageError("at least one check point is required")
    d, m = problem.dim_state, problem.dim_noise
    per_point = []
    worst = 0.0
    for x in pts:
        if x.shape != (d,):
            raise UsageError(f"check point has shape {x.shape}, expected ({d},)")
        dev = 0.0
        for i in range(m):
            jac = np.asarray(problem.diffusion_jacobian(x, i), dtype=float)
            fd = np.empty((d, d))
            for k in range(d):
                xp = x.copy()
                xm = x.copy()
                xp[k] += fd_step
                xm[k] -= fd_step
                fd[:, k] = (
                    np.asarray(problem.diffusion_column(xp, i))
                    - np.asarray(problem.diffusion_column(xm, i))
                ) / (2.0 * fd_step)
            dev = max(dev, float(np.max(np.abs(jac - fd))))
        per_point.append((x, dev))
        worst = max(worst, dev)
    return JacobianCheck(max_deviation=worst, per_point=tuple(per_point), tolerance=tolerance)


def commutator_defect(problem: SdeProblem, points) -> float:
    """Max over points and pairs (i, j) of ||Dg_i g_j - Dg_j g_i||_inf.

    Zero (up to rounding) exactly when the noise is commutative, in which
    case the Levy-area part of the Milstein correction vanishes.
    """
    worst = 0.0
    for x in points:
        x = np.asarray(x, dtype=float)
        cols = [problem.diffusion_column(x, i) for i in range(problem.dim_noise)]
        jacs = [problem.diffusion_jacobian(x, i) for i in range(problem.dim_noise)]
        for i in range(problem.dim_noise):
            for j in range(i + 1, problem.dim_noise):
                defect = jacs[i] @ cols[j] - jacs[j] @ cols[i]
                worst = max(worst, float(np.max(np.abs(defect))))
    return worst
