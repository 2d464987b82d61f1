"""Monte Carlo experiment harness.

Strong errors are measured at the horizon against a tamed Milstein
reference on a much finer mesh, with both runs driven by the same
quantized Wiener path, so the coupling is exact and the only error is
discretization. For M paths

    rms = sqrt(mean_k ||Y_ref(T) - Y(T)||^2),

and the reported standard error follows from the delta method:
se(rms) = sd(error^2) / (2 rms sqrt(M)). Divergent paths are excluded
from the statistics and surface in ``divergent_count``.

Fixed-step comparators run at the adaptive scheme's realized mean step
(rounded to the fine grid), so error and cost are compared at equal
effective resolution; their rows record that matched step in both the
h_max and h_mean columns.

``cpu_seconds`` per row is path generation plus integration for that
row's runs (reference integration is excluded and reported separately
on the table). Timings are wall-clock sums over paths, accumulated
across worker processes when ``workers > 1``.

Seeds: path k uses ``base_seed ^ k``, so every experiment, pass, and
rho value sees the same driving paths and results are reproducible
bit for bit (timing columns aside).
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .adaptive import StrategyConfig, integrate_adaptive, integrate_fixed
from .errors import ExperimentError, UsageError
from .problems import SdeProblem, make_builtin
from .wiener import generate_path

__all__ = [
    "DEFAULT_BASE_SEED",
    "CSV_HEADER",
    "BACKSTOP_CSV_HEADER",
    "ExperimentConfig",
    "ErrorRow",
    "ErrorTable",
    "RmsResult",
    "BackstopPoint",
    "StepProfile",
    "BackstopCurve",
    "convergence_table",
    "efficiency_table",
    "rms_error",
    "backstop_probability",
]

DEFAULT_BASE_SEED = 12345
CSV_HEADER = (
    "scheme,h_max,rms_error,rms_std_error,h_mean,cpu_seconds,"
    "backstop_rate,divergent_count"
)
BACKSTOP_CSV_HEADER = "rho,prob,prob_std_error"
PROFILE_CSV_HEADER = "rho,step_index,h_mean,h_var,num_paths"

_KNOWN_SCHEMES = ("adaptive", "milstein", "tamed", "euler")
_RESERVED_SCHEMES = ("pmil", "ssbm")


def _check_scheme_name(name: str) -> None:
    if name in _KNOWN_SCHEMES:
        return
    if name in _RESERVED_SCHEMES:
        raise UsageError(
            f"scheme {name!r} is a reserved comparator name not enabled in this build"
        )
    raise UsageError(f"unknown scheme {name!r}; expected one of {_KNOWN_SCHEMES}")


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything a convergence/efficiency experiment needs.

    The problem may be given as a builtin name or an SdeProblem. Every
    h_max must be a whole multiple of the reference step
    T 2^-reference_exponent, and the fine exponent must exceed the
    reference exponent by at least 4 so the reference is effectively
    exact relative to the coarse runs.
    """

    problem: SdeProblem | str
    h_max_values: tuple[float, ...]
    rho: float
    schemes: tuple[str, ...] = ("adaptive",)
    num_paths: int = 100
    reference_exponent: int = 16
    fine_exponent: int = 20
    base_seed: int = DEFAULT_BASE_SEED
    delta: float | None = None
    workers: int = 1

    def __post_init__(self) -> None:
        if isinstance(self.problem, str):
            object.__setattr__(self, "problem", make_builtin(self.problem))
        object.__setattr__(
            self, "h_max_values", tuple(float(h) for h in self.h_max_values)
        )
        object.__setattr__(self, "schemes", tuple(self.schemes))
        if not self.schemes:
            raise UsageError("at least one scheme is required")
        for s in self.schemes:
            _check_scheme_name(s)
        if not self.h_max_values:
            raise UsageError("at least one h_max value is required")
        if self.num_paths < 2:
            raise UsageError("num_paths must be at least 2")
        if self.workers < 1:
            raise UsageError("workers must be at least 1")
        if not (1 <= self.reference_exponent < self.fine_exponent <= 30):
            raise UsageError(
                "need 1 <= reference_exponent < fine_exponent <= 30, got "
                f"{self.reference_exponent} and {self.fine_exponent}"
            )
        if self.fine_exponent - self.reference_exponent < 4:
            raise UsageError(
                "fine_exponent must exceed reference_exponent by at least 4"
            )
        if not self.rho > 1.0:
            raise UsageError(f"rho must exceed 1, got {self.rho}")
        horizon = self.problem.horizon
        ref_step = horizon * 2.0 ** -self.reference_exponent
        h_ref = horizon * 2.0 ** -self.fine_exponent
        for h in self.h_max_values:
            if not (0.0 < h <= horizon):
                raise UsageError(f"h_max {h} must lie in (0, horizon]")
            u = h / ref_step
            if abs(u - round(u)) > 1e-9 * max(u, 1.0) or round(u) < 1:
                raise UsageError(
                    f"h_max {h:g} is not a whole multiple of the reference step "
                    f"{ref_step:g}"
                )
            if h / self.rho < h_ref:
                raise UsageError(
                    f"h_max {h:g} with rho {self.rho:g} puts the floor below the "
                    f"fine resolution {h_ref:g}; raise fine_exponent or lower rho"
                )
        if self.delta is not None:
            lo = min(self.h_max_values)
            if not (0.0 < self.delta <= lo):
                raise UsageError(
                    f"delta must lie in (0, min h_max] = (0, {lo}], got {self.delta}"
                )

    @property
    def reference_step(self) -> float:
        return self.problem.horizon * 2.0 ** -self.reference_exponent

    @property
    def seeds(self) -> tuple[int, ...]:
        return tuple(self.base_seed ^ k for k in range(self.num_paths))


@dataclass(frozen=True)
class ErrorRow:
    scheme: str
    h_max: float
    rms_error: float
    rms_std_error: float
    h_mean: float
    cpu_seconds: float
    backstop_rate: float
    divergent_count: int


@dataclass(frozen=True)
class ErrorTable:
    rows: tuple[ErrorRow, ...]
    reference_seconds: float = 0.0

    def rows_for(self, scheme: str) -> tuple[ErrorRow, ...]:
        return tuple(r for r in self.rows if r.scheme == scheme)

    def slopes(self) -> dict[str, float]:
        """Least-squares slope of log2(rms) against log2(h) per scheme.

        Rows with zero, nan, or all-divergent rms are dropped; a scheme
        with fewer than two usable rows maps to nan.
        """
        out: dict[str, float] = {}
        for scheme in dict.fromkeys(r.scheme for r in self.rows):
            pts = [
                (math.log2(r.h_max), math.log2(r.rms_error))
                for r in self.rows_for(scheme)
                if math.isfinite(r.rms_error) and r.rms_error > 0.0
            ]
            if len(pts) < 2:
                out[scheme] = math.nan
                continue
            x = np.array([p[0] for p in pts])
            y = np.array([p[1] for p in pts])
            out[scheme] = float(np.polyfit(x, y, 1)[0])
        return out

    def frontier(self) -> list[tuple[str, float, float]]:
        """(scheme, rms_error, cpu_seconds) triples, the efficiency view."""
        return [(r.scheme, r.rms_error, r.cpu_seconds) for r in self.rows]

    def to_csv(self, stream) -> None:
        stream.write(CSV_HEADER + "\n")
        for r in self.rows:
            stream.write(
                f"{r.scheme},{r.h_max:.17g},{r.rms_error:.17g},"
                f"{r.rms_std_error:.17g},{r.h_mean:.17g},{r.cpu_seconds:.17g},"
                f"{r.backstop_rate:.17g},{r.divergent_count}\n"
            )


def _rms_stats(err_sq: list[float]) -> tuple[float, float, int]:
    arr = np.array(err_sq, dtype=float)
    bad = int(np.isnan(arr).sum())
    ok = arr[~np.isnan(arr)]
    if ok.size == 0:
        return math.nan, math.nan, bad
    rms = math.sqrt(float(ok.mean()))
    if ok.size < 2:
        se = math.nan
    elif rms == 0.0:
        se = 0.0
    else:
        se = float(ok.std(ddof=1)) / (2.0 * rms * math.sqrt(ok.size))
    return rms, se, bad


def _map_tasks(fn, tasks, workers: int):
    if workers <= 1 or len(tasks) <= 1:
        return [fn(t) for t in tasks]
    chunk = max(1, len(tasks) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, tasks, chunksize=chunk))


def _pass_adaptive(task):
    """Per-seed work: generate path, tamed reference, one adaptive run
    per h_max. Returns timings, the reference endpoint, and per-h_max
    records (err_sq, mean step, steps, flagged steps, seconds); nan
    err_sq marks a divergent run.
    """
    problem, seed, fine_exp, ref_step, h_values, rho, delta = task
    t0 = time.perf_counter()
    path = generate_path(seed, fine_exp, problem.dim_noise, problem.horizon)
    gen_s = time.perf_counter() - t0
    t0 = time.perf_counter()
    ref = integrate_fixed(problem, "tamed", ref_step, path)
    ref_s = time.perf_counter() - t0
    if ref.divergent:
        raise ExperimentError(f"reference solution diverged for seed {seed}")
    ref_final = ref.final_state
    recs = []
    for h_max in h_values:
        cfg = StrategyConfig(h_max=h_max, rho=rho, delta=delta)
        t0 = time.perf_counter()
        sol = integrate_adaptive(problem, cfg, path)
        run_s = time.perf_counter() - t0
        if sol.divergent:
            recs.append((math.nan, math.nan, 0, 0, run_s))
        else:
            diff = ref_final - sol.final_state
            recs.append(
                (
                    float(diff @ diff),
                    sol.mean_step,
                    sol.num_steps,
                    int(sol.backstop_flags.sum()),
                    run_s,
                )
            )
    return gen_s, ref_s, ref_final, recs


def _pass_fixed(task):
    """Per-seed comparator work at the matched steps from the adaptive
    pass; the driving path is regenerated (cheaper than shipping it
    between processes) and the reference endpoint is reused.
    """
    problem, seed, fine_exp, jobs, ref_final = task
    t0 = time.perf_counter()
    path = generate_path(seed, fine_exp, problem.dim_noise, problem.horizon)
    gen_s = time.perf_counter() - t0
    recs = []
    for scheme, step in jobs:
        t0 = time.perf_counter()
        sol = integrate_fixed(problem, scheme, step, path)
        run_s = time.perf_counter() - t0
        if sol.divergent:
            recs.append((math.nan, run_s))
        else:
            diff = ref_final - sol.final_state
            recs.append((float(diff @ diff), run_s))
    return gen_s, recs


def convergence_table(config: ExperimentConfig) -> ErrorTable:
    """Strong-error table over config.schemes x config.h_max_values.

    The adaptive runs always execute (their realized mean steps set the
    comparator steps) but appear as rows only if "adaptive" is among
    the requested schemes.
    """
    problem = config.problem
    n_h = len(config.h_max_values)
    tasks = [
        (
            problem,
            seed,
            config.fine_exponent,
            config.reference_step,
            config.h_max_values,
            config.rho,
            config.delta,
        )
        for seed in config.seeds
    ]
    results = _map_tasks(_pass_adaptive, tasks, config.workers)

    gen_total = sum(r[0] for r in results)
    ref_total = sum(r[1] for r in results)
    rows: list[ErrorRow] = []
    adaptive_rows: dict[float, ErrorRow] = {}
    matched_step: dict[float, float] = {}
    h_ref = problem.horizon * 2.0 ** -config.fine_exponent
    for j, h_max in enumerate(config.h_max_values):
        err_sq = [r[3][j][0] for r in results]
        rms, se, bad = _rms_stats(err_sq)
        means = [r[3][j][1] for r in results if not math.isnan(r[3][j][1])]
        h_mean = float(np.mean(means)) if means else math.nan
        steps = sum(r[3][j][2] for r in results)
        flagged = sum(r[3][j][3] for r in results)
        run_total = sum(r[3][j][4] for r in results)
        adaptive_rows[h_max] = ErrorRow(
            scheme="adaptive",
            h_max=h_max,
            rms_error=rms,
            rms_std_error=se,
            h_mean=h_mean,
            cpu_seconds=gen_total + run_total,
            backstop_rate=flagged / steps if steps else math.nan,
            divergent_count=bad,
        )
        if math.isnan(h_mean):
            matched_step[h_max] = math.nan
        else:
            matched_step[h_max] = max(1, round(h_mean / h_ref)) * h_ref

    fixed_schemes = [s for s in config.schemes if s != "adaptive"]
    fixed_rows: dict[tuple[str, float], ErrorRow] = {}
    if fixed_schemes:
        jobs = []
        for scheme in fixed_schemes:
            for h_max in config.h_max_values:
                step = matched_step[h_max]
                if math.isnan(step):
                    raise ExperimentError(
                        "cannot match a comparator step: every adaptive path "
                        f"diverged at h_max {h_max:g}"
                    )
                jobs.append((scheme, step))
        tasks_b = [
            (problem, seed, config.fine_exponent, tuple(jobs), results[k][2])
            for k, seed in enumerate(config.seeds)
        ]
        results_b = _map_tasks(_pass_fixed, tasks_b, config.workers)
        gen_b = sum(r[0] for r in results_b)
        for idx, (scheme, step) in enumerate(jobs):
            err_sq = [r[1][idx][0] for r in results_b]
            rms, se, bad = _rms_stats(err_sq)
            run_total = sum(r[1][idx][1] for r in results_b)
            fixed_rows[(scheme, step)] = ErrorRow(
                scheme=scheme,
                h_max=step,
                rms_error=rms,
                rms_std_error=se,
                h_mean=step,
                cpu_seconds=gen_b + run_total,
                backstop_rate=0.0,
                divergent_count=bad,
            )

    for scheme in config.schemes:
        for h_max in config.h_max_values:
            if scheme == "adaptive":
                rows.append(adaptive_rows[h_max])
            else:
                rows.append(fixed_rows[(scheme, matched_step[h_max])])
    return ErrorTable(rows=tuple(rows), reference_seconds=ref_total)


def efficiency_table(config: ExperimentConfig) -> ErrorTable:
    """Same computation as :func:`convergence_table`; read the result
    through :meth:`ErrorTable.frontier` as (rms, cpu) pairs.
    """
    return convergence_table(config)


@dataclass(frozen=True)
class RmsResult:
    rms_error: float
    rms_std_error: float
    h_mean: float
    backstop_rate: float
    divergent_count: int
    cpu_seconds: float


def _single_fixed(task):
    problem, seed, fine_exp, ref_step, scheme, step = task
    t0 = time.perf_counter()
    path = generate_path(seed, fine_exp, problem.dim_noise, problem.horizon)
    gen_s = time.perf_counter() - t0
    ref = integrate_fixed(problem, "tamed", ref_step, path)
    if ref.divergent:
        raise ExperimentError(f"reference solution diverged for seed {seed}")
    t0 = time.perf_counter()
    sol = integrate_fixed(problem, scheme, step, path)
    run_s = time.perf_counter() - t0
    if sol.divergent:
        return gen_s, run_s, math.nan, math.nan
    diff = ref.final_state - sol.final_state
    return gen_s, run_s, float(diff @ diff), sol.mean_step


def rms_error(
    problem: SdeProblem | str,
    scheme: str,
    *,
    h_max: float,
    rho: float,
    num_paths: int,
    reference_exponent: int = 16,
    fine_exponent: int = 20,
    base_seed: int = DEFAULT_BASE_SEED,
    delta: float | None = None,
    fixed_step: float | None = None,
    workers: int = 1,
) -> RmsResult:
    """Strong error of one scheme at one resolution.

    For "adaptive" the controller uses (h_max, rho, delta). For a fixed
    scheme the step is ``fixed_step`` if given, else h_max itself (no
    mean-step matching here; use :func:`convergence_table` for matched
    comparisons).
    """
    config = ExperimentConfig(
        problem=problem,
        h_max_values=(h_max,),
        rho=rho,
        schemes=("adaptive",),
        num_paths=num_paths,
        reference_exponent=reference_exponent,
        fine_exponent=fine_exponent,
        base_seed=base_seed,
        delta=delta,
        workers=workers,
    )
    prob = config.problem
    if scheme == "adaptive":
        table = convergence_table(config)
        r = table.rows[0]
        return RmsResult(
            rms_error=r.rms_error,
            rms_std_error=r.rms_std_error,
            h_mean=r.h_mean,
            backstop_rate=r.backstop_rate,
            divergent_count=r.divergent_count,
            cpu_seconds=r.cpu_seconds,
        )
    _check_scheme_name(scheme)
    step = h_max if fixed_step is None else fixed_step
    tasks = [
        (prob, seed, config.fine_exponent, config.reference_step, scheme, step)
        for seed in config.seeds
    ]
    results = _map_tasks(_single_fixed, tasks, config.workers)
    rms, se, bad = _rms_stats([r[2] for r in results])
    means = [r[3] for r in results if not math.isnan(r[3])]
    return RmsResult(
        rms_error=rms,
        rms_std_error=se,
        h_mean=float(np.mean(means)) if means else math.nan,
        backstop_rate=0.0,
        divergent_count=bad,
        cpu_seconds=sum(r[0] + r[1] for r in results),
    )


@dataclass(frozen=True)
class BackstopPoint:
    rho: float
    prob: float
    prob_std_error: float


@dataclass(frozen=True)
class StepProfile:
    """Per-step-index statistics of the realized step sizes at one rho.

    Index n aggregates the n-th step over the paths that took at least
    n+1 steps; ``num_paths`` records how many did.
    """

    rho: float
    h_mean: np.ndarray
    h_var: np.ndarray
    num_paths: np.ndarray


@dataclass(frozen=True)
class BackstopCurve:
    h_max: float
    points: tuple[BackstopPoint, ...]
    profiles: tuple[StepProfile, ...]

    def to_csv(self, stream) -> None:
        stream.write(BACKSTOP_CSV_HEADER + "\n")
        for p in self.points:
            stream.write(f"{p.rho:.17g},{p.prob:.17g},{p.prob_std_error:.17g}\n")

    def profiles_to_csv(self, stream) -> None:
        stream.write(PROFILE_CSV_HEADER + "\n")
        for prof in self.profiles:
            for n in range(len(prof.h_mean)):
                stream.write(
                    f"{prof.rho:.17g},{n},{prof.h_mean[n]:.17g},"
                    f"{prof.h_var[n]:.17g},{int(prof.num_paths[n])}\n"
                )


def _backstop_seed(task):
    problem, seed, fine_exp, h_max, rhos, delta = task
    path = generate_path(seed, fine_exp, problem.dim_noise, problem.horizon)
    out = []
    for rho in rhos:
        cfg = StrategyConfig(h_max=h_max, rho=rho, delta=delta)
        sol = integrate_adaptive(problem, cfg, path)
        if sol.divergent:
            raise ExperimentError(
                f"adaptive run diverged for seed {seed} at rho {rho:g}"
            )
        out.append((bool(sol.backstop_flags.any()), sol.step_sizes))
    return out


def backstop_probability(
    problem: SdeProblem | str,
    rho_values,
    h_max: float,
    num_paths: int,
    fine_exponent: int = 16,
    base_seed: int = DEFAULT_BASE_SEED,
    delta: float | None = None,
    workers: int = 1,
) -> BackstopCurve:
    """Probability that a path engages the backstop at least once, as a
    function of rho, over shared driving paths (same seeds for every
    rho, so the trigger sets are nested as rho grows).
    """
    if isinstance(problem, str):
        problem = make_builtin(problem)
    rhos = tuple(float(r) for r in rho_values)
    if not rhos:
        raise UsageError("at least one rho value is required")
    for rho in rhos:
        if not rho > 1.0:
            raise UsageError(f"rho must exceed 1, got {rho}")
    if num_paths < 2:
        raise UsageError("num_paths must be at least 2")
    h_ref = problem.horizon * 2.0 ** -fine_exponent
    if not (0.0 < h_max <= problem.horizon):
        raise UsageError(f"h_max {h_max} must lie in (0, horizon]")
    if h_max / max(rhos) < h_ref:
        raise UsageError(
            f"h_max {h_max:g} with rho {max(rhos):g} puts the floor below the "
            f"fine resolution {h_ref:g}; raise fine_exponent or lower rho"
        )
    seeds = [base_seed ^ k for k in range(num_paths)]
    tasks = [(problem, seed, fine_exponent, h_max, rhos, delta) for seed in seeds]
    results = _map_tasks(_backstop_seed, tasks, workers)

    points = []
    profiles = []
    for j, rho in enumerate(rhos):
        hits = np.array([r[j][0] for r in results], dtype=float)
        p = float(hits.mean())
        se = math.sqrt(p * (1.0 - p) / num_paths)
        points.append(BackstopPoint(rho=rho, prob=p, prob_std_error=se))
        series = [r[j][1] for r in results]
        width = max(len(s) for s in series)
        padded = np.full((num_paths, width), np.nan)
        for i, s in enumerate(series):
            padded[i, : len(s)] = s
        counts = (~np.isnan(padded)).sum(axis=0)
        with np.errstate(invalid="ignore"):
            h_mean = np.nanmean(padded, axis=0)
            h_var = np.nanvar(padded, axis=0, ddof=0)
        profiles.append(
            StepProfile(rho=rho, h_mean=h_mean, h_var=h_var, num_paths=counts)
        )
    return BackstopCurve(h_max=h_max, points=tuple(points), profiles=tuple(profiles))
