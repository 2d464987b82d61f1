import dataclasses
import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from milsde import (
    SdeProblem,
    SolutionPath,
    StrategyConfig,
    UsageError,
    generate_path,
    integrate_adaptive,
    integrate_fixed,
    make_builtin,
    propose_step,
)

H_MAX = 2.0**-8
CFG = StrategyConfig(h_max=H_MAX, rho=16.0)


def _constant_problem(initial, name="frozen"):
    # Zero drift, zero noise: the state never moves, which isolates the
    # controller's mesh decisions from the dynamics.
    d = len(initial)
    return SdeProblem(
        dim_state=d,
        dim_noise=1,
        drift=lambda y: np.zeros(d),
        diffusion_column=lambda y, i: np.zeros(d),
        diffusion_jacobian=lambda y, i: np.zeros((d, d)),
        structure="additive",
        initial_state=np.array(initial, dtype=float),
        horizon=1.0,
        name=name,
    )


# ---------------------------------------------------------------------------
# StrategyConfig and the controller map
# ---------------------------------------------------------------------------


def test_config_validation():
    assert CFG.h_min == 2.0**-12
    assert CFG.scale == H_MAX
    assert StrategyConfig(h_max=H_MAX, rho=4.0, delta=H_MAX / 2).scale == H_MAX / 2
    for bad in (
        dict(h_max=0.0, rho=2.0),
        dict(h_max=-1.0, rho=2.0),
        dict(h_max=math.inf, rho=2.0),
        dict(h_max=H_MAX, rho=1.0),
        dict(h_max=H_MAX, rho=math.nan),
        dict(h_max=H_MAX, rho=2.0, delta=0.0),
        dict(h_max=H_MAX, rho=2.0, delta=2 * H_MAX),
    ):
        with pytest.raises(UsageError):
            StrategyConfig(**bad)


def test_propose_step_examples():
    # ||y|| = 2: raw = 2^-9, inside the band.
    assert propose_step(CFG, np.array([2.0])) == (2.0**-9, False)
    # ||y|| = 2^10: raw = 2^-18 below the floor 2^-12.
    assert propose_step(CFG, np.array([2.0**10])) == (CFG.h_min, True)
    # tiny and zero states cap at the ceiling
    assert propose_step(CFG, np.array([1e-10])) == (H_MAX, False)
    assert propose_step(CFG, np.array([0.0])) == (H_MAX, False)
    # delta override rescales the proposal
    half = StrategyConfig(h_max=H_MAX, rho=16.0, delta=H_MAX / 2)
    assert propose_step(half, np.array([2.0])) == (2.0**-10, False)


def test_propose_step_extreme_states():
    # Finite states whose squared norm overflows must pin, not raise.
    assert propose_step(CFG, np.array([1e308, 1e308])) == (CFG.h_min, True)
    assert propose_step(CFG, np.array([1e155])) == (CFG.h_min, True)
    with pytest.raises(UsageError):
        propose_step(CFG, np.array([math.inf]))
    with pytest.raises(UsageError):
        propose_step(CFG, np.array([math.nan, 1.0]))


@settings(max_examples=200, deadline=None)
@given(
    st.lists(
        st.floats(min_value=-1e100, max_value=1e100, allow_nan=False),
        min_size=1,
        max_size=3,
    )
)
def test_propose_step_properties(xs):
    h, pinned = propose_step(CFG, np.array(xs))
    assert CFG.h_min <= h <= CFG.h_max
    norm = math.hypot(*xs)
    if norm == 0.0:
        assert h == CFG.h_max and not pinned
        return
    raw = CFG.scale / norm
    assert pinned == (raw <= CFG.h_min)
    if pinned:
        assert h == CFG.h_min
    else:
        assert h <= raw
        # path bound: the step the controller grants keeps ||y|| h <= scale
        assert norm * h <= CFG.scale * (1.0 + 1e-12)


# ---------------------------------------------------------------------------
# Adaptive mesh invariants
# ---------------------------------------------------------------------------


def test_mesh_invariants():
    problem = make_builtin("scalar_mult")
    h_ref = 2.0**-16
    k_min, k_max = 16, 256
    for seed in range(20):
        path = generate_path(seed, 16, 1)
        sol = integrate_adaptive(problem, CFG, path)
        assert not sol.divergent
        assert sol.times[0] == 0.0
        assert sol.final_time == 1.0
        # every node sits on the fine grid and the steps sum exactly
        units = sol.times / h_ref
        np.testing.assert_array_equal(units, np.rint(units))
        assert float(np.sum(sol.step_sizes)) == 1.0
        step_units = np.rint(np.diff(units)).astype(int)
        assert step_units.min() >= 1
        assert step_units.max() <= k_max
        assert np.all(step_units[:-1] >= k_min)
        # flags are a pure function of the pre-step state
        assert len(sol.backstop_flags) == sol.num_steps
        for n in range(sol.num_steps - 1):
            _, pinned = propose_step(CFG, sol.states[n])
            assert sol.backstop_flags[n] == pinned
            if not pinned:
                norm = float(np.linalg.norm(sol.states[n]))
                assert norm * sol.step_sizes[n] <= CFG.scale * (1.0 + 1e-12)
        if sol.backstop_flags[-1]:
            assert propose_step(CFG, sol.states[-2])[1]
            assert step_units[-1] == k_min


def test_first_step_size():
    # ||X0|| = 2 proposes 2^-9 exactly, a whole multiple of 2^-16.
    problem = make_builtin("scalar_mult")
    sol = integrate_adaptive(problem, CFG, generate_path(0, 16, 1))
    assert sol.times[1] == 2.0**-9
    assert not sol.backstop_flags[0]


def test_pinned_step_off_grid_floor_rounds_up():
    # rho = 1.5 makes h_min = 2^-8 / 1.5, which is 170.67 fine units:
    # the pinned step must round up to 171 units, never below the floor.
    problem = make_builtin("scalar_probe")
    cfg = StrategyConfig(h_max=H_MAX, rho=1.5)
    sol = integrate_adaptive(problem, cfg, generate_path(5, 16, 1))
    assert bool(sol.backstop_flags[0])
    assert sol.times[1] == 171 * 2.0**-16
    assert 171 * 2.0**-16 >= cfg.h_min


def test_zero_state_runs_at_the_ceiling():
    problem = _constant_problem([0.0])
    cfg = StrategyConfig(h_max=2.0**-4, rho=4.0)
    sol = integrate_adaptive(problem, cfg, generate_path(1, 8, 1))
    assert sol.num_steps == 16
    np.testing.assert_array_equal(sol.step_sizes, np.full(16, 2.0**-4))
    assert not sol.backstop_flags.any()
    np.testing.assert_array_equal(sol.states, np.zeros((17, 1)))


def test_final_step_clamps_to_horizon_unflagged():
    # A constant state of norm 20 pins every step at 171 fine units;
    # 2^16 = 383 * 171 + 43, so the run ends with a short clamped step
    # that is below the floor and must not be flagged.
    problem = _constant_problem([20.0])
    cfg = StrategyConfig(h_max=H_MAX, rho=1.5)
    sol = integrate_adaptive(problem, cfg, generate_path(2, 16, 1))
    assert sol.num_steps == 384
    units = np.rint(sol.step_sizes / 2.0**-16).astype(int)
    assert np.all(units[:-1] == 171)
    assert units[-1] == 43
    assert sol.backstop_flags[:-1].all()
    assert not sol.backstop_flags[-1]
    assert sol.step_sizes[-1] < cfg.h_min
    assert float(np.sum(sol.step_sizes)) == 1.0
    assert sol.backstop_rate == pytest.approx(383 / 384)


def test_adaptive_is_deterministic():
    problem = make_builtin("twod_noncommutative")
    path = generate_path(9, 14, 2)
    cfg = StrategyConfig(h_max=2.0**-6, rho=8.0)
    a = integrate_adaptive(problem, cfg, path)
    b = integrate_adaptive(problem, cfg, path)
    np.testing.assert_array_equal(a.times, b.times)
    np.testing.assert_array_equal(a.states, b.states)
    np.testing.assert_array_equal(a.backstop_flags, b.backstop_flags)


# ---------------------------------------------------------------------------
# Divergence handling
# ---------------------------------------------------------------------------


def test_fixed_coarse_step_diverges_from_large_state():
    # X0 = 8 with h = 1/8 overflows the cubic drift in a handful of
    # steps; the solution is truncated at the last finite state.
    problem = dataclasses.replace(
        make_builtin("scalar_mult"), initial_state=np.array([8.0])
    )
    sol = integrate_fixed(problem, "milstein", 0.125, generate_path(3, 8, 1))
    assert sol.divergent
    assert sol.final_time < 1.0
    assert len(sol.times) == len(sol.states)
    assert len(sol.backstop_flags) == sol.num_steps
    assert np.all(np.isfinite(sol.states))


def test_adaptive_completes_from_large_state():
    # Same problem and X0: path-bounded steps plus the tamed backstop
    # bring the state down instead of exploding.
    problem = dataclasses.replace(
        make_builtin("scalar_mult"), initial_state=np.array([8.0])
    )
    cfg = StrategyConfig(h_max=H_MAX, rho=4.0)
    sol = integrate_adaptive(problem, cfg, generate_path(3, 16, 1))
    assert not sol.divergent
    assert sol.final_time == 1.0
    assert sol.backstop_rate > 0.0
    assert abs(float(sol.final_state[0])) < 2.0


# ---------------------------------------------------------------------------
# Fixed-mesh integrator
# ---------------------------------------------------------------------------


def test_fixed_mesh_with_remainder():
    problem = make_builtin("scalar_add")
    path = generate_path(4, 4, 1)
    sol = integrate_fixed(problem, "milstein", 3 * 2.0**-4, path)
    np.testing.assert_array_equal(
        sol.times, np.array([0, 3, 6, 9, 12, 15, 16]) / 16.0
    )
    assert not sol.backstop_flags.any()
    assert float(np.sum(sol.step_sizes)) == 1.0


def test_fixed_step_must_sit_on_the_grid():
    problem = make_builtin("scalar_add")
    path = generate_path(4, 4, 1)
    with pytest.raises(UsageError, match="multiple"):
        integrate_fixed(problem, "milstein", 0.1, path)
    with pytest.raises(UsageError, match="scheme"):
        integrate_fixed(problem, "rk4", 0.25, path)


# ---------------------------------------------------------------------------
# Compatibility validation
# ---------------------------------------------------------------------------


def test_compatibility_errors():
    problem = make_builtin("scalar_mult")
    with pytest.raises(UsageError, match="noise components"):
        integrate_adaptive(problem, CFG, generate_path(1, 16, 2))
    with pytest.raises(UsageError, match="horizon"):
        integrate_adaptive(problem, CFG, generate_path(1, 16, 1, horizon=2.0))
    with pytest.raises(UsageError, match="scheme"):
        integrate_adaptive(problem, CFG, generate_path(1, 16, 1), scheme="rk4")
    with pytest.raises(UsageError, match="exceeds the horizon"):
        integrate_adaptive(
            problem, StrategyConfig(h_max=2.0, rho=4.0), generate_path(1, 16, 1)
        )
    # floor below the path resolution
    with pytest.raises(UsageError, match="resolution"):
        integrate_adaptive(problem, CFG, generate_path(1, 8, 1))
    # grid too coarse to separate floor from ceiling
    cfg = StrategyConfig(h_max=2.5 * 2.0**-4, rho=1.2)
    with pytest.raises(UsageError, match="separate"):
        integrate_adaptive(problem, cfg, generate_path(1, 4, 1))


# ---------------------------------------------------------------------------
# Levy-area stripping
# ---------------------------------------------------------------------------


def test_zero_area_is_harmless_when_noise_commutes():
    # On a commutative problem the area terms cancel identically, so
    # stripping them changes nothing beyond rounding; the meshes remain
    # identical as well.
    problem = make_builtin("twod_commutative")
    cfg = StrategyConfig(h_max=2.0**-6, rho=8.0)
    for seed in range(5):
        path = generate_path(100 + seed, 12, 2)
        a = integrate_adaptive(problem, cfg, path)
        b = integrate_adaptive(problem, cfg, path, zero_levy_area=True)
        np.testing.assert_array_equal(a.times, b.times)
        assert float(np.max(np.abs(a.final_state - b.final_state))) <= 1e-10


def test_zero_area_is_exact_on_diagonal_noise():
    problem = make_builtin("twod_diagonal")
    path = generate_path(7, 12, 2)
    a = integrate_fixed(problem, "milstein", 2.0**-6, path)
    b = integrate_fixed(problem, "milstein", 2.0**-6, path, zero_levy_area=True)
    np.testing.assert_array_equal(a.states, b.states)


def test_zero_area_matters_without_commutativity():
    problem = make_builtin("twod_noncommutative")
    gaps = []
    for seed in range(5):
        path = generate_path(100 + seed, 12, 2)
        a = integrate_fixed(problem, "milstein", 2.0**-6, path)
        b = integrate_fixed(problem, "milstein", 2.0**-6, path, zero_levy_area=True)
        gaps.append(float(np.max(np.abs(a.final_state - b.final_state))))
    assert max(gaps) > 1e-4
    assert min(gaps) > 1e-6


# ---------------------------------------------------------------------------
# SolutionPath container
# ---------------------------------------------------------------------------


def test_solution_path_trivial_properties():
    sol = SolutionPath(
        times=np.array([0.0]),
        states=np.array([[1.0]]),
        backstop_flags=np.zeros(0, dtype=bool),
    )
    assert sol.num_steps == 0
    assert sol.backstop_rate == 0.0
    assert math.isnan(sol.mean_step)


def test_solution_csv_round_trip():
    problem = make_builtin("twod_noncommutative")
    cfg = StrategyConfig(h_max=2.0**-5, rho=4.0)
    sol = integrate_adaptive(problem, cfg, generate_path(12, 10, 2))
    buf = io.StringIO()
    sol.to_csv(buf)
    lines = buf.getvalue().strip().split("\n")
    assert lines[0] == "t,y0,y1,backstop"
    assert len(lines) == len(sol.times) + 1
    for n, line in enumerate(lines[1:]):
        t, y0, y1, flag = line.split(",")
        assert float(t) == sol.times[n]
        assert float(y0) == sol.states[n, 0]
        assert float(y1) == sol.states[n, 1]
        expected_flag = 0 if n == 0 else int(sol.backstop_flags[n - 1])
        assert int(flag) == expected_flag
