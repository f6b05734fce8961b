import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from parkcast.datamodel import Grid
from parkcast.errors import InvalidCutoff
from parkcast.signal import (StreamingFilter, build_lookbacks, butterworth_design,
                             filter_apply_causal, lagged, resample_to_minutes, rolling_sum)


def analytic_second_order(fc):
    """Closed-form bilinear-transform low-pass of order two (cutoff as fraction of Nyquist)."""
    K = math.tan(math.pi * fc / 2)
    norm = 1 / (1 + math.sqrt(2) * K + K * K)
    b0 = K * K * norm
    return (b0, 2 * b0, b0), (1.0, 2 * (K * K - 1) * norm, (1 - math.sqrt(2) * K + K * K) * norm)


def reference_lfilter(b, a, x, y0):
    """Direct-form difference equation started from the constant steady state ``y0``."""
    xs = [x[0]] * (len(b) - 1) + list(x)
    ys = [y0] * (len(a) - 1)
    for i in range(len(b) - 1, len(xs)):
        acc = sum(b[k] * xs[i - k] for k in range(len(b)))
        acc -= sum(a[k] * ys[-k] for k in range(1, len(a)))
        ys.append(acc)
    return np.array(ys[len(a) - 1:])


@pytest.mark.parametrize("fc", [0.05, 0.01, 0.2, 0.5, 0.9])
def test_second_order_matches_closed_form(fc):
    b, a = analytic_second_order(fc)
    c = butterworth_design(2, fc)
    np.testing.assert_allclose(c.b, b, atol=1e-9, rtol=0)
    np.testing.assert_allclose(c.a, a, atol=1e-9, rtol=0)


@given(st.floats(0.001, 0.99), st.integers(1, 6))
def test_stable_with_unit_dc_gain(fc, order):
    try:
        c = butterworth_design(order, fc)
    except InvalidCutoff:
        assert order > 2
        return
    assert c.is_stable()
    assert abs(c.dc_gain - 1.0) < 1e-9
    assert abs(abs(c.frequency_response(fc)) - 1 / math.sqrt(2)) < 1e-6


@given(st.floats(0.001, 0.99), st.integers(1, 2))
def test_low_orders_accept_every_cutoff(fc, order):
    butterworth_design(order, fc)


def test_ill_conditioned_design_refused():
    with pytest.raises(InvalidCutoff, match="ill-conditioned"):
        butterworth_design(6, 0.001)


@pytest.mark.parametrize("fc", [0.0, 1.0, -0.1, 1.5])
def test_bad_cutoff(fc):
    with pytest.raises(InvalidCutoff):
        butterworth_design(2, fc)


def test_filter_matches_difference_equation(rng):
    c = butterworth_design(2, 0.05)
    x = rng.normal(100, 20, 300)
    np.testing.assert_allclose(filter_apply_causal(c, x), reference_lfilter(c.b, c.a, x, x[0]),
                               rtol=1e-10)


def test_constant_input_is_fixed_point():
    c = butterworth_design(2, 0.05)
    np.testing.assert_allclose(filter_apply_causal(c, np.full(50, 7.0)), 7.0, rtol=1e-12)


def test_filter_is_causal(rng):
    c = butterworth_design(2, 0.05)
    x = rng.normal(size=200)
    y = filter_apply_causal(c, x)
    x2 = x.copy()
    x2[120:] = rng.normal(size=80)
    np.testing.assert_array_equal(filter_apply_causal(c, x2)[:120], y[:120])


def test_gap_restarts_filter(rng):
    c = butterworth_design(2, 0.05)
    x = rng.normal(size=100)
    x[40:43] = np.nan
    y = filter_apply_causal(c, x)
    assert np.all(np.isnan(y[40:43]))
    np.testing.assert_array_equal(y[43:], filter_apply_causal(c, x[43:]))


def test_streaming_equals_offline(rng):
    c = butterworth_design(2, 0.05)
    x = rng.normal(50, 10, (3, 400))
    x[1, 100:105] = np.nan
    offline = np.vstack([filter_apply_causal(c, row) for row in x])
    f = StreamingFilter(c)
    online = np.column_stack([f.step(x[:, t]) for t in range(x.shape[1])])
    np.testing.assert_allclose(online, offline, rtol=1e-12, equal_nan=True)
    g = StreamingFilter(c)
    assert isinstance(g.step(3.0), float)


def test_rolling_sum_by_hand():
    y = rolling_sum(np.arange(6.0), 3)
    assert np.all(np.isnan(y[:2]))
    np.testing.assert_array_equal(y[2:], [3, 6, 9, 12])


def test_resample_hold():
    out = resample_to_minutes([2, 5], [1.0, 2.0], Grid(0, 10), max_hold=3)
    np.testing.assert_array_equal(out, [np.nan, np.nan, 1, 1, 1, 2, 2, 2, 2, np.nan])
    with pytest.raises(ValueError):
        resample_to_minutes([5, 2], [1.0, 2.0], Grid(0, 10))


def test_lagged():
    out = lagged(np.arange(5.0), [0, 2])
    np.testing.assert_array_equal(out[1], [np.nan, np.nan, 0, 1, 2])


def test_lookbacks():
    sums = np.arange(100.0)[None, :]
    w = build_lookbacks([10, 21, 32, 43, 54], [0.1, 0.2, 0.3, 0.4, 0.5], sums, 0, 60)
    np.testing.assert_array_equal(w.occupancy_lags, [0.5, 0.4, 0.3, 0.2, 0.1])
    np.testing.assert_array_equal(w.flow_lags, [[60, 50, 40]])
    assert build_lookbacks([10, 21, 32, 43], [0.1] * 4, sums, 0, 60) is None
    assert build_lookbacks([10, 21, 32, 43, 54], [0.1] * 5, sums, 0, 15) is None
