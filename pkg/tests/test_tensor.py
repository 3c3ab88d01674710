import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from ticnn.tensor import Tolerance, approx_eq, max_abs_diff, random_tensor, scaled_close

finite = st.floats(-1e6, 1e6, allow_nan=False)


def test_approx_eq_examples():
    a = np.array([0.5, -2.0])
    assert approx_eq(a, a.copy())
    assert approx_eq([0.0], [1e-13])
    assert not approx_eq([1.0], [1.001])


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        approx_eq(np.zeros(2), np.zeros(3))
    with pytest.raises(ValueError):
        max_abs_diff(np.zeros((2, 2)), np.zeros(4))


def test_tolerance_rejects_negative():
    with pytest.raises(ValueError):
        Tolerance(atol=-1.0)


def test_max_abs_diff_examples():
    assert max_abs_diff([1, 2], [1, 2]) == 0
    assert max_abs_diff([1, 2], [1, 5]) == 3


def test_max_abs_diff_against_scan(rng):
    a = rng.uniform(-1, 1, 50)
    noise = rng.uniform(-1, 1, 50)
    b = a + 1e-4 * noise
    scan = 0.0
    for x, y in zip(a, b):
        scan = max(scan, abs(x - y))
    assert max_abs_diff(a, b) == scan
    assert max_abs_diff(a, b) <= 1e-4 * np.max(np.abs(noise)) * (1 + 1e-9)


def test_random_tensor_determinism_and_range():
    assert np.array_equal(random_tensor((2, 2), 7), random_tensor((2, 2), 7))
    t = random_tensor((100, 100), 3)
    assert t.min() >= -1 and t.max() <= 1
    assert max_abs_diff(random_tensor((100, 100), 1), random_tensor((100, 100), 2)) > 0


def test_random_tensor_rejects_empty_extent():
    with pytest.raises(ValueError):
        random_tensor((0, 3), 1)


def test_scaled_close_uses_vector_scale():
    ok, diff, thr = scaled_close([100.0, 0.0], [100.0, 1e-8])
    assert ok and diff == 1e-8 and thr == pytest.approx(1e-12 + 1e-7)


@given(hnp.arrays(np.float64, st.integers(1, 10), elements=finite),
       hnp.arrays(np.float64, st.integers(1, 10), elements=finite))
def test_comparisons_symmetric(a, b):
    if a.shape != b.shape:
        return
    assert approx_eq(a, a)
    assert approx_eq(a, b) == approx_eq(b, a)
    assert max_abs_diff(a, b) == max_abs_diff(b, a)
