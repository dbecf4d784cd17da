import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lanegeo import dual
from lanegeo.dual import Dual

vals = st.floats(0.2, 5.0)


def fd(f, x, i, h=1e-6):
    xp, xm = np.array(x, float), np.array(x, float)
    xp[i] += h
    xm[i] -= h
    return (f(xp) - f(xm)) / (2 * h)


@given(vals, vals)
def test_arithmetic_partials(a, b):
    x = Dual.variables([a, b])
    y = (x[0] * x[1] - x[1] / x[0] + 3.0 / x[1] - 2.0 * x[0] + x[0] ** 3) * 0.5 - 1.0
    f = lambda v: (v[0] * v[1] - v[1] / v[0] + 3.0 / v[1] - 2.0 * v[0] + v[0] ** 3) * 0.5 - 1.0
    for i in range(2):
        assert y.der[i] == pytest.approx(fd(f, [a, b], i), rel=1e-6, abs=1e-8)


@given(vals)
def test_elementary_functions(a):
    x = Dual.variables([a])[0]
    assert dual.sin(x).der[0] == pytest.approx(np.cos(a))
    assert dual.cos(x).der[0] == pytest.approx(-np.sin(a))
    assert dual.log(x).der[0] == pytest.approx(1 / a)
    assert dual.absolute(-x).der[0] == pytest.approx(1.0)
    assert (x ** 0).der[0] == 0.0


def test_abs_at_zero_uses_zero_subgradient():
    x = Dual.variables([0.0])[0]
    assert dual.absolute(x).der[0] == 0.0


def test_vector_reductions():
    x = Dual.variables([1.0, 2.0, 3.0])
    s = (x * x).sum()
    np.testing.assert_allclose(s.der, [2, 4, 6])
    m = x.mean()
    np.testing.assert_allclose(m.der, [1 / 3] * 3)


def test_horner_with_dual_coefficients():
    c = Dual.variables([1.0, 2.0, 3.0])
    y = np.array([0.5, 2.0])
    out = dual.horner([c[0], c[1], c[2]], y)
    np.testing.assert_allclose(out.val, 1 + 2 * y + 3 * y ** 2)
    np.testing.assert_allclose(out.der, np.column_stack([np.ones(2), y, y ** 2]))
    np.testing.assert_allclose(dual.horner((1.0, 2.0, 3.0), y), 1 + 2 * y + 3 * y ** 2)


def test_concatenate_mixes_plain_arrays():
    x = Dual.variables([1.0, 2.0])
    out = dual.concatenate([x, np.array([5.0])])
    np.testing.assert_allclose(out.val, [1, 2, 5])
    np.testing.assert_allclose(out.der[2], [0, 0])
    np.testing.assert_allclose(dual.concatenate([np.ones(2), [3.0]]), [1, 1, 3])


def test_ndarray_on_the_left_defers_to_dual():
    x = Dual.variables([2.0])
    out = np.array([3.0]) * x
    assert isinstance(out, Dual) and out.der[0, 0] == 3.0
