"""Path-bounded adaptive stepping and the fixed/adaptive integrators.

The step controller is a pure function of the current state:

    raw = delta / ||Y_n||        (+inf when ||Y_n|| = 0)
    h   = clamp(raw, [h_min, h_max]),   h_min = h_max / rho

and the backstop is engaged exactly when raw <= h_min, i.e. when the
controller wanted an even smaller step than the floor allows. On a step
that is not pinned, h <= raw gives ||Y_n|| h <= delta, hence
||Y_n|| <= delta / h_min = rho delta / h_max; with the default
delta = h_max every non-pinned step starts from a state of norm at most
rho. Pinned steps instead run the tamed Milstein map, whose drift
increment stays bounded regardless of ||Y_n||.

Steps are quantized down to whole multiples of the driving path's
resolution (never below the floor's multiple, which rounds up). Because
the path resolution is dyadic and increments are grid-quantized, every
node time is an exact float multiple of the resolution and the step
sizes sum to the horizon exactly; the experiment bookkeeping relies on
this. The final step is clamped to land on the horizon; a clamped step
may be shorter than h_min, runs the plain scheme map, and is never
flagged as a backstop.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError
from .problems import SdeProblem
from .steppers import FIXED_SCHEMES, advance_state
from .wiener import WienerPath, integrals_over, uniform_integrals

__all__ = [
    "StrategyConfig",
    "SolutionPath",
    "propose_step",
    "integrate_adaptive",
    "integrate_fixed",
]


@dataclass(frozen=True)
class StrategyConfig:
    """Parameters of the path-bounded step controller.

    h_max: step ceiling, also the default path-bound scale delta.
    rho: floor ratio, h_min = h_max / rho; must exceed 1.
    delta: optional override of the bound scale, in (0, h_max].
    """

    h_max: float
    rho: float
    delta: float | None = None

    def __post_init__(self) -> None:
        if not (math.isfinite(self.h_max) and self.h_max > 0.0):
            raise UsageError(f"h_max must be positive and finite, got {self.h_max}")
        if not (math.isfinite(self.rho) and self.rho > 1.0):
            raise UsageError(f"rho must be a finite number > 1, got {self.rho}")
        if self.delta is not None:
            if not (math.isfinite(self.delta) and 0.0 < self.delta <= self.h_max):
                raise UsageError(
                    f"delta must lie in (0, h_max] = (0, {self.h_max}], got {self.delta}"
                )

    @property
    def h_min(self) -> float:
        return self.h_max / self.rho

    @property
    def scale(self) -> float:
        """Effective path-bound scale (delta, defaulting to h_max)."""
        return self.h_max if self.delta is None else self.delta


def propose_step(config: StrategyConfig, state: np.ndarray) -> tuple[float, bool]:
    """Controller map: returns (step size, backstop flag) for a state.

    The raw proposal is scale / ||state|| (+inf at the origin), clamped
    to [h_min, h_max]; the flag is set exactly when the raw proposal is
    at or below the floor. The norm is evaluated overflow-safely: a
    finite state too large for ||state||**2 still pins rather than
    erroring out.
    """
    try:
        norm = math.hypot(*np.asarray(state, dtype=float))
    except OverflowError:
        return config.h_min, True
    if not math.isfinite(norm):
        raise UsageError("cannot propose a step for a non-finite state")
    raw = math.inf if norm == 0.0 else config.scale / norm
    h_min = config.h_min
    if raw <= h_min:
        return h_min, True
    return min(raw, config.h_max), False


@dataclass(frozen=True)
class SolutionPath:
    """Discrete solution: node times, node states, per-step backstop flags.

    On divergence the path is truncated at the last finite state and
    ``divergent`` is set; flags always have one entry per completed step.
    """

    times: np.ndarray
    states: np.ndarray
    backstop_flags: np.ndarray
    divergent: bool = False

    @property
    def num_steps(self) -> int:
        return len(self.times) - 1

    @property
    def final_time(self) -> float:
        return float(self.times[-1])

    @property
    def final_state(self) -> np.ndarray:
        return self.states[-1]

    @property
    def step_sizes(self) -> np.ndarray:
        return np.diff(self.times)

    @property
    def backstop_rate(self) -> float:
        n = self.num_steps
        return float(self.backstop_flags.sum()) / n if n else 0.0

    @property
    def mean_step(self) -> float:
        return float(self.step_sizes.mean()) if self.num_steps else math.nan

    def to_csv(self, stream) -> None:
        """Write "t,y0,...,backstop" rows; node 0 carries flag 0."""
        d = self.states.shape[1]
        header = "t," + ",".join(f"y{i}" for i in range(d)) + ",backstop"
        stream.write(header + "\n")
        for n in range(len(self.times)):
            flag = 0 if n == 0 else int(self.backstop_flags[n - 1])
            vals = [f"{self.times[n]:.17g}"]
            vals += [f"{v:.17g}" for v in self.states[n]]
            vals.append(str(flag))
            stream.write(",".join(vals) + "\n")


def _nonfinite(y: np.ndarray) -> bool:
    # Cheap inner-loop check: any nan/inf component makes the sum non-finite.
    s = float(np.sum(y))
    return s - s != 0.0


def _floor_units(value: float, unit: float) -> int:
    u = value / unit
    k = int(u)
    if u - k >= 1.0 - 1e-9:
        k += 1
    return k


def _ceil_units(value: float, unit: float) -> int:
    u = value / unit
    k = math.ceil(u)
    if k - u >= 1.0 - 1e-9:
        k -= 1
    return k


def _check_compatible(problem: SdeProblem, path: WienerPath) -> None:
    if path.dim_noise != problem.dim_noise:
        raise UsageError(
            f"path has {path.dim_noise} noise components, problem needs {problem.dim_noise}"
        )
    if path.horizon != problem.horizon:
        raise UsageError(
            f"path horizon {path.horizon} differs from problem horizon {problem.horizon}"
        )


def integrate_adaptive(
    problem: SdeProblem,
    config: StrategyConfig,
    path: WienerPath,
    scheme: str = "milstein",
    zero_levy_area: bool = False,
) -> SolutionPath:
    """Run the adaptive controller over a driving path.

    Non-pinned steps use ``scheme`` (default "milstein"); pinned steps
    use the tamed backstop map. ``zero_levy_area`` replaces every
    window's antisymmetric part with zero, the deliberately wrong
    variant used to demonstrate that the area terms matter on
    non-commutative problems.
    """
    if scheme not in FIXED_SCHEMES:
        raise UsageError(f"unknown scheme {scheme!r}; expected one of {FIXED_SCHEMES}")
    _check_compatible(problem, path)
    h_ref = path.resolution
    n_total = path.num_steps
    if config.h_max > problem.horizon:
        raise UsageError(
            f"h_max {config.h_max} exceeds the horizon {problem.horizon}"
        )
    if config.h_min < h_ref:
        raise UsageError(
            f"h_min {config.h_min:g} is below the path resolution {h_ref:g}; "
            "generate the path with a larger resolution exponent"
        )
    k_min = _ceil_units(config.h_min, h_ref)
    k_max = _floor_units(config.h_max, h_ref)
    if k_min > k_max:
        raise UsageError(
            "the path grid cannot separate h_min from h_max; "
            "increase the resolution exponent or rho"
        )

    strip_area = zero_levy_area and problem.dim_noise > 1
    y = np.array(problem.initial_state, dtype=float)
    pos = 0
    positions = [0]
    states = [y]
    flags: list[bool] = []
    divergent = False
    # Overflow inside a step is the divergence signal, not a warning.
    with np.errstate(over="ignore", invalid="ignore"):
        while pos < n_total:
            h_prop, pinned = propose_step(config, y)
            if pinned:
                k = k_min
            else:
                k = min(max(_floor_units(h_prop, h_ref), k_min), k_max)
            clamped = pos + k > n_total
            if clamped:
                k = n_total - pos
            use_backstop = pinned and not clamped
            ii = integrals_over(path, pos, pos + k)
            if strip_area:
                ii = ii.without_area()
            y = advance_state(
                problem, "tamed" if use_backstop else scheme, y, ii.h, ii.dW, ii.I
            )
            if _nonfinite(y):
                divergent = True
                break
            pos += k
            positions.append(pos)
            states.append(y)
            flags.append(use_backstop)

    times = np.array(positions, dtype=float) * h_ref
    return SolutionPath(
        times=times,
        states=np.array(states),
        backstop_flags=np.array(flags, dtype=bool),
        divergent=divergent,
    )


def integrate_fixed(
    problem: SdeProblem,
    scheme: str,
    step_size: float,
    path: WienerPath,
    zero_levy_area: bool = False,
) -> SolutionPath:
    """Fixed-step integration at a step that is a whole multiple of the
    path resolution; if the horizon is not a multiple of the step, the
    run finishes with one shorter step onto the horizon.
    """
    if scheme not in FIXED_SCHEMES:
        raise UsageError(f"unknown scheme {scheme!r}; expected one of {FIXED_SCHEMES}")
    _check_compatible(problem, path)
    h_ref = path.resolution
    u = step_size / h_ref
    k = int(round(u))
    if k < 1 or abs(u - k) > 1e-9 * max(u, 1.0):
        raise UsageError(
            f"step size {step_size:g} is not a whole multiple of the "
            f"path resolution {h_ref:g}"
        )
    n_total = path.num_steps
    k = min(k, n_total)
    count = n_total // k
    strip_area = zero_levy_area and problem.dim_noise > 1
    _, h, dw_all, ii_all = uniform_integrals(path, k, zero_area=strip_area)

    y = np.array(problem.initial_state, dtype=float)
    positions = [0]
    states = [y]
    divergent = False
    pos = 0
    with np.errstate(over="ignore", invalid="ignore"):
        for s in range(count):
            y = advance_state(problem, scheme, y, h, dw_all[s], ii_all[s])
            if _nonfinite(y):
                divergent = True
                break
            pos += k
            positions.append(pos)
            states.append(y)
        if not divergent and pos < n_total:
            ii = integrals_over(path, pos, n_total)
            if strip_area:
                ii = ii.without_area()
            y = advance_state(problem, scheme, y, ii.h, ii.dW, ii.I)
            if _nonfinite(y):
                divergent = True
            else:
                positions.append(n_total)
                states.append(y)

    times = np.array(positions, dtype=float) * h_ref
    return SolutionPath(
        times=times,
        states=np.array(states),
        backstop_flags=np.zeros(len(positions) - 1, dtype=bool),
        divergent=divergent,
    )
