import numpy as np
import pytest

from s2plor.errors import NumericsError, ShapeError
from s2plor.numerics import (
    SplitMode,
    SplitParams,
    as_vector,
    col_exponents,
    diag2v,
    exp_split,
    gen_rank_deficient,
    latin_index,
    mask_bound,
    numerical_rank,
    ra2a,
    rb2b,
    row_exponents,
    safe_ldexp,
    split_scalar,
    split_vector,
    v2diag,
)
from s2plor.utils import relative_errors


def test_sign_consistent_splits_keep_sign_and_sum():
    rng = np.random.default_rng(1)
    a = np.array([3.5, -2.0, 1e-8, -7e6])
    parts = split_vector(a, SplitParams(rho=3), rng)
    assert parts.shape == (4, 3)
    assert np.allclose(parts.sum(axis=1), a, rtol=1e-14, atol=0)
    assert np.all(np.sign(parts) == np.sign(a)[:, None])


def test_range_expanded_splits_sum_to_value():
    rng = np.random.default_rng(2)
    params = SplitParams(rho=4, mode=SplitMode.RANGE_EXPANDED, theta=5.0)
    a = rng.uniform(-10, 10, size=50)
    parts = split_vector(a, params, rng)
    assert np.allclose(parts.sum(axis=1), a, rtol=1e-12)
    assert np.all(np.abs(parts[:, :-1]) <= 5.0 * np.abs(a)[:, None])


def test_split_scalar_of_zero_is_zero():
    parts = split_scalar(0.0, SplitParams(), np.random.default_rng(0))
    assert np.all(parts == 0.0)


def test_split_params_reject_invalid_values():
    with pytest.raises(NumericsError):
        SplitParams(rho=1)
    with pytest.raises(NumericsError):
        SplitParams(theta=0.5)
    assert SplitParams(rho=3).lifted == 9


def test_latin_index_rows_and_columns_are_permutations():
    square = latin_index(5)
    for k in range(5):
        assert sorted(square[k]) == list(range(5))
        assert sorted(square[:, k]) == list(range(5))


def test_rb2b_blocks_hold_every_split_once_per_column():
    params = SplitParams(rho=3)
    b = np.array([2.0, -1.5, 4.0])
    splits = split_vector(b, params, np.random.default_rng(7))
    lifted = rb2b(b, params, np.random.default_rng(7))
    assert lifted.shape == (9, 3)
    for i in range(3):
        block = lifted[:, i].reshape(3, 3)
        for col in range(3):
            assert np.allclose(np.sort(block[:, col]), np.sort(splits[i]))


@pytest.mark.parametrize("rho", [2, 3, 4])
def test_lifted_product_diagonal_is_hadamard(rho):
    rng = np.random.default_rng(rho)
    params = SplitParams(rho=rho)
    a = rng.uniform(1.0, 10.0, size=40) * rng.choice([-1.0, 1.0], size=40)
    b = rng.uniform(1.0, 10.0, size=40) * rng.choice([-1.0, 1.0], size=40)
    product = ra2a(a, params, rng) @ rb2b(b, params, rng)
    assert np.max(relative_errors(diag2v(product), a * b)) <= 1.11e-14


def test_gen_rank_deficient_bounds_and_rank():
    rng = np.random.default_rng(3)
    mask = gen_rank_deficient(6, 4, (-1.0, 2.0), 3.0, rng)
    assert mask.shape == (6, 4)
    assert numerical_rank(mask) <= 3
    assert np.isclose(np.max(np.abs(mask)), mask_bound((-1.0, 2.0), 3.0))


def test_gen_rank_deficient_honours_max_rank():
    mask = gen_rank_deficient(8, 8, (-1.0, 1.0), 1.0, np.random.default_rng(4), max_rank=2)
    assert numerical_rank(mask) == 2


def test_gen_rank_deficient_rejects_degenerate_requests():
    rng = np.random.default_rng(0)
    with pytest.raises(NumericsError):
        gen_rank_deficient(1, 5, (-1.0, 1.0), 1.0, rng)
    with pytest.raises(NumericsError):
        gen_rank_deficient(4, 4, (-1.0, 1.0), 0.9, rng)
    with pytest.raises(NumericsError):
        gen_rank_deficient(4, 4, (-1.0, 1.0), 1.0, rng, max_rank=4)
    with pytest.raises(NumericsError):
        mask_bound((0.0, 0.0), 2.0)


def test_diag_helpers():
    v = np.array([1.0, -2.0, 3.0])
    m = v2diag(v, np.random.default_rng(0), bound=5.0)
    assert np.array_equal(diag2v(m), v)
    with pytest.raises(ShapeError):
        diag2v(np.ones((2, 3)))


def test_as_vector_rejects_non_finite_values():
    with pytest.raises(NumericsError):
        as_vector([1.0, np.nan])
    with pytest.raises(ShapeError):
        as_vector(np.ones((2, 2)))
    assert as_vector(3.0).shape == (1,)


def test_row_and_column_exponents_bring_lines_into_one_two():
    m = np.array([[3.0, -0.5], [0.0, 0.0], [1e-300, -2e300]])
    rows = row_exponents(m)
    assert rows.tolist() == [1, -1, 997]
    scaled = np.abs(safe_ldexp(m, -rows[:, None]))
    peaks = scaled.max(axis=1)
    assert np.all((peaks[[0, 2]] >= 1.0) & (peaks[[0, 2]] < 2.0))
    assert peaks[1] == 0.0
    assert col_exponents(m.T).tolist() == rows.tolist()


def test_safe_ldexp_saturates_far_exponents():
    values = np.array([1.5, 1.5, -3.0])
    out = safe_ldexp(values, np.array([10**12, -(10**12), 3]))
    assert out[0] == np.inf and out[1] == 0.0 and out[2] == -24.0


@pytest.mark.parametrize("x", [-745.0, -700.0, -3.3, 0.0, 1e-9, 2.5, 700.0, 1e6])
def test_exp_split_matches_exp(x):
    mantissa, k = exp_split(np.array([x]))
    assert np.sqrt(0.5) - 1e-15 <= mantissa[0] <= np.sqrt(2.0) + 1e-15
    if abs(x) <= 700:
        assert safe_ldexp(mantissa, k)[0] == pytest.approx(np.exp(x), rel=1e-15, abs=0)
    else:
        assert k[0] == np.rint(x / np.log(2.0))


def test_relative_errors_use_absolute_error_on_zero_and_subnormal_oracles():
    expected = np.array([2.0, 0.0, 1e-320])
    actual = np.array([2.0 + 4e-16, 1e-13, 0.0])
    errors = relative_errors(actual, expected)
    assert errors[0] == pytest.approx(2e-16, rel=0.2)
    assert errors[1] == pytest.approx(1e-13)
    assert errors[2] == pytest.approx(1e-320)
