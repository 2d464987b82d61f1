import io
import math
from fractions import Fraction

import numpy as np
import pytest

from milsde import (
    INCREMENT_GRID,
    IteratedIntegrals,
    ResourceError,
    UsageError,
    euler_number,
    generate_path,
    integrals_over,
    moment_check,
    moment_constant,
    read_path,
    refine_path,
    uniform_integrals,
    write_path,
)

# ---------------------------------------------------------------------------
# Generation: shapes, determinism, law, quantization
# ---------------------------------------------------------------------------


def test_path_shapes_and_metadata():
    path = generate_path(3, 10, 2, horizon=1.0)
    assert path.increments.shape == (2, 1024)
    assert path.dim_noise == 2
    assert path.num_steps == 1024
    assert path.resolution == 2.0**-10
    assert path.resolution_exponent == 10
    assert path.num_steps * path.resolution == path.horizon


def test_generation_is_deterministic_per_seed():
    a = generate_path(42, 8, 2)
    b = generate_path(42, 8, 2)
    c = generate_path(43, 8, 2)
    np.testing.assert_array_equal(a.increments, b.increments)
    assert not np.array_equal(a.increments, c.increments)
    # components use independent streams
    assert not np.array_equal(a.increments[0], a.increments[1])


def test_increment_law():
    # One long component: mean and variance of N(0, h_ref) samples.
    path = generate_path(7, 17, 1)
    inc = path.increments[0]
    n = inc.size
    h = path.resolution
    assert abs(inc.mean()) <= 4.0 * math.sqrt(h / n)
    sample_var = inc.var(ddof=1)
    assert abs(sample_var - h) <= 4.0 * h * math.sqrt(2.0 / (n - 1))


def test_endpoint_variance():
    # W(1) ~ N(0, 1) across seeds.
    n = 2000
    finals = np.array(
        [generate_path(seed, 8, 1).increment_sum(0, 256)[0] for seed in range(n)]
    )
    assert abs(finals.mean()) <= 4.0 / math.sqrt(n)
    assert abs(finals.var(ddof=1) - 1.0) <= 4.0 * math.sqrt(2.0 / (n - 1))


def test_increments_are_on_the_grid():
    path = generate_path(5, 12, 2)
    units = path.increments / INCREMENT_GRID
    np.testing.assert_array_equal(units, np.rint(units))


def test_window_sums_add_bit_exactly():
    path = generate_path(11, 12, 2)
    rng = np.random.default_rng(0)
    n = path.num_steps
    for _ in range(200):
        a, b, c = sorted(rng.integers(0, n + 1, size=3))
        if a == b or b == c:
            continue
        left = path.increment_sum(a, b)
        right = path.increment_sum(b, c)
        total = path.increment_sum(a, c)
        np.testing.assert_array_equal(left + right, total)
        # and both agree with direct summation of the slice
        np.testing.assert_array_equal(
            total, path.increments[:, a:c].sum(axis=1)
        )


def test_generate_validation():
    with pytest.raises(UsageError):
        generate_path(1, 0, 1)
    with pytest.raises(UsageError):
        generate_path(1, 8, 0)
    with pytest.raises(UsageError):
        generate_path(1, 8, 1, horizon=0.0)
    with pytest.raises(ResourceError):
        generate_path(1, 30, 8)  # 64 GiB of increments


# ---------------------------------------------------------------------------
# Iterated integrals
# ---------------------------------------------------------------------------


def test_integrals_window_validation():
    path = generate_path(2, 6, 2)
    with pytest.raises(UsageError):
        integrals_over(path, -1, 4)
    with pytest.raises(UsageError):
        integrals_over(path, 4, 4)
    with pytest.raises(UsageError):
        integrals_over(path, 0, 65)


def test_single_substep_window_has_zero_area():
    path = generate_path(9, 8, 3)
    ii = integrals_over(path, 17, 18)
    np.testing.assert_array_equal(ii.A, np.zeros((3, 3)))
    h = path.resolution
    dW = ii.dW
    assert ii.I[0, 0] == 0.5 * (dW[0] * dW[0] - h)
    assert ii.I[0, 1] == 0.5 * (dW[0] * dW[1])


def test_scalar_noise_has_no_area():
    path = generate_path(9, 8, 1)
    ii = integrals_over(path, 0, 64)
    np.testing.assert_array_equal(ii.A, [[0.0]])


def test_reconstruction_identities():
    # Diagonal and construction-form identities hold bitwise; the pair
    # sum I[i,j] + I[j,i] equals dW_i dW_j up to one rounding in each
    # addition; A is antisymmetric bitwise.
    rng = np.random.default_rng(99)
    for seed, m in [(1, 2), (2, 3), (3, 2), (4, 3)]:
        path = generate_path(seed, 10, m)
        for _ in range(25):
            a, b = sorted(rng.integers(0, path.num_steps + 1, size=2))
            if a == b:
                continue
            ii = integrals_over(path, a, b)
            dW, A, I, h = ii.dW, ii.A, ii.I, ii.h
            np.testing.assert_array_equal(A, -A.T)
            for i in range(m):
                assert I[i, i] == 0.5 * (dW[i] * dW[i] - h)
                for j in range(m):
                    if i == j:
                        continue
                    assert I[i, j] == 0.5 * (dW[i] * dW[j]) + A[i, j]
                    pair = I[i, j] + I[j, i]
                    prod = dW[i] * dW[j]
                    scale = max(abs(I[i, j]), abs(I[j, i]), abs(prod))
                    assert abs(pair - prod) <= 4.0 * np.finfo(float).eps * scale


def test_area_sign_convention():
    # A[i, j] = (I[i, j] - I[j, i]) / 2 with i the inner component.
    path = generate_path(21, 10, 2)
    ii = integrals_over(path, 0, 512)
    lhs = ii.A[0, 1]
    rhs = 0.5 * (ii.I[0, 1] - ii.I[1, 0])
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_without_area_zeroes_only_the_antisymmetric_part():
    path = generate_path(13, 9, 2)
    ii = integrals_over(path, 0, 512)
    stripped = ii.without_area()
    np.testing.assert_array_equal(stripped.A, np.zeros((2, 2)))
    assert stripped.I[0, 0] == ii.I[0, 0]
    assert stripped.I[0, 1] == stripped.I[1, 0]
    assert stripped.I[0, 1] == 0.5 * (ii.dW[0] * ii.dW[1])


def test_uniform_integrals_match_per_window():
    path = generate_path(31, 10, 2)
    count, h, dw_all, ii_all = uniform_integrals(path, 8)
    assert count == 128
    assert h == 8 * path.resolution
    for s in (0, 1, 63, 127):
        ii = integrals_over(path, s * 8, (s + 1) * 8)
        np.testing.assert_array_equal(dw_all[s], ii.dW)
        # batched accumulation may differ from the per-window one in
        # summation order, not in value
        np.testing.assert_allclose(ii_all[s], ii.I, rtol=1e-12, atol=1e-15)


def test_uniform_integrals_scalar_and_zeroed():
    path = generate_path(31, 8, 1)
    count, h, dw_all, ii_all = uniform_integrals(path, 4)
    np.testing.assert_array_equal(
        ii_all[:, 0, 0], 0.5 * (dw_all[:, 0] ** 2 - h)
    )
    path2 = generate_path(31, 8, 2)
    _, _, dw2, ii2 = uniform_integrals(path2, 4, zero_area=True)
    np.testing.assert_array_equal(ii2[:, 0, 1], ii2[:, 1, 0])
    with pytest.raises(UsageError):
        uniform_integrals(path, 0)
    with pytest.raises(UsageError):
        uniform_integrals(path, 500)


# ---------------------------------------------------------------------------
# Refinement
# ---------------------------------------------------------------------------


def test_refinement_is_deterministic_and_composes():
    path = generate_path(17, 6, 2)
    once = refine_path(refine_path(path, 1), 1)
    twice = refine_path(path, 2)
    np.testing.assert_array_equal(once.increments, twice.increments)
    assert twice.resolution_exponent == 8
    assert twice.resolution == 2.0**-8


def test_refinement_preserves_coarse_increments_to_grid_rounding():
    path = generate_path(23, 8, 2)
    fine = refine_path(path, 1)
    pairs = fine.increments.reshape(2, -1, 2).sum(axis=2)
    # each half is re-quantized, so a pair can drift by one grid unit
    assert np.abs(pairs - path.increments).max() <= INCREMENT_GRID


def test_refinement_consistency_order():
    # rms gap between the Levy area at level L and its refinement by 4
    # levels scales like 2^(-L/2): measure the decay rate between L=6
    # and L=10 over many seeds and check it is near one half.
    def gap(level, seeds):
        out = np.empty(len(seeds))
        for k, seed in enumerate(seeds):
            coarse = generate_path(seed, level, 2)
            fine = refine_path(coarse, 4)
            a0 = integrals_over(coarse, 0, coarse.num_steps).A[0, 1]
            a1 = integrals_over(fine, 0, fine.num_steps).A[0, 1]
            out[k] = a0 - a1
        return math.sqrt(float(np.mean(out**2)))

    seeds = range(400)
    d6 = gap(6, seeds)
    d10 = gap(10, seeds)
    order = math.log2(d6 / d10) / 4.0
    assert 0.35 <= order <= 0.65, f"observed refinement order {order:.3f}"


def test_refine_validation():
    path = generate_path(1, 4, 1)
    with pytest.raises(UsageError):
        refine_path(path, 0)


# ---------------------------------------------------------------------------
# Moment constants: exact values against an independent oracle
# ---------------------------------------------------------------------------


def _sech_series(terms):
    # Invert the cosh power series in exact rationals: returns s with
    # sech(x) = sum_k s[k] x^(2k); then E_{2k} = s[k] * (2k)!.
    cosh = [Fraction(1, math.factorial(2 * k)) for k in range(terms)]
    s = [Fraction(1)]
    for k in range(1, terms):
        acc = Fraction(0)
        for j in range(1, k + 1):
            acc += cosh[j] * s[k - j]
        s.append(-acc)
    return s


def test_euler_numbers_match_series_inversion():
    s = _sech_series(11)
    for k in range(11):
        assert euler_number(2 * k) == s[k] * math.factorial(2 * k)
    assert euler_number(1) == 0
    assert euler_number(7) == 0
    with pytest.raises(UsageError):
        euler_number(-2)


def test_euler_numbers_known_values():
    known = {0: 1, 2: -1, 4: 5, 6: -61, 8: 1385, 10: -50521, 12: 2702765}
    for n, value in known.items():
        assert euler_number(n) == value


def test_moment_constants_exact_values():
    assert moment_constant(2).signed == Fraction(1, 4)
    assert moment_constant(4).signed == Fraction(5, 16)
    assert moment_constant(6).signed == Fraction(61, 64)
    assert moment_constant(8).signed == Fraction(1385, 256)
    for odd in (1, 3, 5, 7):
        assert moment_constant(odd).signed == 0
    assert isinstance(moment_constant(2).signed, Fraction)


def test_moment_constants_match_series_inversion():
    s = _sech_series(9)
    for k in range(1, 9):
        expected = Fraction((-1) ** k) * s[k] * math.factorial(2 * k) / 4**k
        assert moment_constant(2 * k).signed == expected


def test_absolute_bounds():
    assert moment_constant(1).absolute_bound == Fraction(1, 2)
    assert moment_constant(2).absolute_bound == Fraction(1, 4)
    assert moment_constant(3).absolute_bound == pytest.approx(
        math.sqrt(5.0 / 64.0)
    )
    assert moment_constant(5).absolute_bound == pytest.approx(
        math.sqrt((1385.0 / 256.0) * 0.25)
    )


def test_moment_constant_range():
    with pytest.raises(UsageError):
        moment_constant(0)
    with pytest.raises(UsageError):
        moment_constant(33)


def test_moment_check_small_run():
    # Orders 1-3 have small enough relative standard error for a cheap
    # run; order 4 is heavy-tailed (E A^8 / (E A^4)^2 ~ 55) and needs
    # the default sample count, exercised by the acceptance suite.
    rows = moment_check(orders=(1, 2, 3), num_windows=3000, resolution_exponent=8)
    by_order = {r.order: r for r in rows}
    assert set(by_order) == {1, 2, 3}
    for r in rows:
        assert r.passed, f"order {r.order}: {r}"
    # E|A| over unit windows sits well below the 1/2 bound
    assert by_order[1].absolute_estimate < 0.45
    assert by_order[2].signed_estimate == pytest.approx(0.25, abs=0.04)


def test_moment_check_validation():
    with pytest.raises(UsageError):
        moment_check(num_windows=50)
    with pytest.raises(UsageError):
        moment_check(orders=(9,))


# ---------------------------------------------------------------------------
# Binary dump
# ---------------------------------------------------------------------------


def test_dump_round_trip():
    path = generate_path(123, 9, 3, horizon=1.0)
    buf = io.BytesIO()
    write_path(path, buf)
    buf.seek(0)
    back = read_path(buf)
    np.testing.assert_array_equal(back.increments, path.increments)
    assert back.resolution_exponent == path.resolution_exponent
    assert back.horizon == path.horizon
    assert back.seed == path.seed
    assert back.resolution == path.resolution


def test_dump_rejects_garbage():
    with pytest.raises(UsageError, match="magic"):
        read_path(io.BytesIO(b"NOTAPATH" + b"\0" * 64))
    path = generate_path(5, 4, 1)
    buf = io.BytesIO()
    write_path(path, buf)
    data = buf.getvalue()
    with pytest.raises(UsageError, match="truncated"):
        read_path(io.BytesIO(data[:10]))
    with pytest.raises(UsageError, match="truncated"):
        read_path(io.BytesIO(data[:-8]))


def test_iterated_integrals_validation():
    with pytest.raises(UsageError):
        IteratedIntegrals.from_components(0.0, np.array([0.1]), np.zeros((1, 1)))
    with pytest.raises(UsageError):
        IteratedIntegrals.from_components(
            1.0, np.array([0.1, 0.2]), np.zeros((1, 1))
        )
