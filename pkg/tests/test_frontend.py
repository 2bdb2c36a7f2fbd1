import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from oracles import pcen_scalar, smooth_scalar, softmax_scalar
from pcen.errors import ParameterError, ShapeError
from pcen.frontend import (
    PcenParams,
    PerChannelSmoother,
    SingleSmoother,
    SmootherBank,
    alternating_coefficients,
    combine_smoothers,
    iir_smooth,
    log_mel,
    one_hot_logits,
    pcen_compress,
    pcen_forward,
    softmax_weights,
    stream_init,
    stream_step,
)
from pcen.serialization import dumps_params, load_params, loads_params, save_params


def random_gram(seed, shape=(16, 8), low=-3, high=3):
    rng = np.random.default_rng(seed)
    return 10 ** rng.uniform(low, high, shape)


# --- iir_smooth -----------------------------------------------------------


def test_s_one_is_identity():
    e = random_gram(0)
    np.testing.assert_array_equal(iir_smooth(e, 1.0), e)
    np.testing.assert_array_equal(iir_smooth(e, 1.0, init="zero"), e)


def test_constant_input_fixed_point():
    e = np.full((50, 3), 4.25)
    np.testing.assert_allclose(iir_smooth(e, 0.3), e, rtol=1e-15)


@pytest.mark.parametrize("s", [0.015, 0.025, 0.08, 0.5])
def test_unit_step_zero_init_closed_form(s):
    m = iir_smooth(np.ones((200, 1)), s, init="zero")[:, 0]
    t = np.arange(200)
    np.testing.assert_allclose(m, 1 - (1 - s) ** (t + 1), rtol=1e-12)


def test_time_constant_is_40_frames():
    m = iir_smooth(np.ones((100, 1)), 0.025, init="zero")[:, 0]
    first = int(np.argmax(m > 1 - 1 / math.e))
    assert first == 39
    # same answer from the closed form alone
    t = np.arange(100)
    assert int(np.argmax(1 - 0.975 ** (t + 1) > 1 - 1 / math.e)) == 39


def test_iir_matches_scalar_loop():
    e = random_gram(1)
    s = alternating_coefficients(8)
    got = iir_smooth(e, s)
    for f in range(8):
        np.testing.assert_allclose(got[:, f], smooth_scalar(list(e[:, f]), s[f]), rtol=1e-13)


@pytest.mark.parametrize("s", [0.0, -0.1, 1.5, np.nan])
def test_bad_coefficient(s):
    with pytest.raises(ParameterError):
        iir_smooth(np.ones((3, 2)), s)


def test_iir_wrong_length_vector():
    with pytest.raises(ShapeError):
        iir_smooth(np.ones((3, 2)), [0.1, 0.2, 0.3])


# --- combine_smoothers ----------------------------------------------------


def test_single_smoother_bank_ignores_logits():
    e = random_gram(2)
    z = np.random.default_rng(0).normal(size=(1, 8))
    np.testing.assert_array_equal(combine_smoothers(e, [0.04], z), iir_smooth(e, 0.04))


def test_equal_logits_give_uniform_weights():
    w = softmax_weights(np.full((4, 5), 0.3))
    assert np.all(w == 0.25)


def test_dominant_logit_saturates():
    e = random_gram(3)
    z = np.zeros((2, 8))
    z[0] = 50.0
    np.testing.assert_allclose(combine_smoothers(e, [0.015, 0.08], z), iir_smooth(e, 0.015), rtol=1e-15)


def test_empty_bank_rejected():
    with pytest.raises(ParameterError):
        combine_smoothers(np.ones((3, 2)), [], np.zeros((0, 2)))


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=st.floats(-30, 30)))
def test_softmax_weights_are_a_partition(z):
    w = softmax_weights(z)
    assert np.all(w >= 0)
    np.testing.assert_allclose(w.sum(axis=0), 1.0, atol=1e-12)


def test_softmax_matches_scalar():
    z = np.random.default_rng(4).normal(size=(3, 6))
    w = softmax_weights(z)
    for f in range(6):
        np.testing.assert_allclose(w[:, f], softmax_scalar(list(z[:, f])), rtol=1e-14)


# --- compression ----------------------------------------------------------


def test_zero_energy_gives_zero():
    out = pcen_forward(np.zeros((20, 4)))
    assert np.all(out.values == 0)


def test_scalar_closed_form():
    e = np.array([[5.0]])
    out = pcen_compress(e, e, PcenParams(eps=0.0, alpha=1.0, delta=2.0, r=0.5)).values
    assert out[0, 0] == pytest.approx(math.sqrt(3) - math.sqrt(2), rel=1e-15)
    assert out[0, 0] == pytest.approx(0.31783724519578205, rel=1e-15)


@pytest.mark.parametrize("seed", range(5))
def test_defaults_match_scalar_loop(seed):
    e = random_gram(seed)
    ref = pcen_scalar(e.tolist(), 1e-6, [0.98] * 8, [2.0] * 8, [0.5] * 8, [[0.025]] * 8)
    np.testing.assert_allclose(pcen_forward(e).values, ref, rtol=1e-12)


def test_bank_and_per_channel_params_match_scalar_loop():
    rng = np.random.default_rng(9)
    e = random_gram(9, (30, 5))
    alpha, delta, r = rng.uniform(0.5, 1.2, 5), rng.uniform(0.5, 3, 5), rng.uniform(0.2, 1, 5)
    z = rng.normal(size=(3, 5))
    coefs = [0.015, 0.04, 0.08]
    params = PcenParams(1e-6, alpha, delta, r, SmootherBank(coefs, z), init="zero")
    weights = [softmax_scalar(list(z[:, f])) for f in range(5)]
    ref = pcen_scalar(e.tolist(), 1e-6, alpha.tolist(), delta.tolist(), r.tolist(), [coefs] * 5, weights, "zero")
    # exp() may differ by an ulp between numpy and math; for tiny ratios the
    # subtraction of delta**r turns that into ~1e-16 absolute error
    np.testing.assert_allclose(pcen_forward(e, params).values, ref, rtol=1e-12, atol=1e-14)


def test_two_step_composition_bit_exact():
    e = random_gram(5)
    params = PcenParams()
    two_step = pcen_compress(e, iir_smooth(e, params.smoother.s), params)
    np.testing.assert_array_equal(two_step.values, pcen_forward(e, params).values)


def test_alternating_reduction_bit_exact():
    e = random_gram(6, (120, 10))
    per_channel = PcenParams.alternating(10)
    bank = PcenParams(smoother=SmootherBank([0.015, 0.08], one_hot_logits(np.arange(10) % 2, 2)))
    np.testing.assert_array_equal(pcen_forward(e, per_channel).values, pcen_forward(e, bank).values)
    np.testing.assert_array_equal(per_channel.smoother.s[:4], [0.015, 0.08, 0.015, 0.08])


@pytest.mark.parametrize("c", [0.01, 0.1, 10.0, 100.0])
def test_gain_invariance_alpha_one(c):
    e = random_gram(7)
    params = PcenParams(eps=0.0, alpha=1.0)
    base = pcen_forward(e, params).values
    np.testing.assert_allclose(pcen_forward(c * e, params).values, base, rtol=1e-9)


@settings(max_examples=40, deadline=None)
@given(st.floats(0.1, 10.0), st.integers(0, 1000))
def test_gain_monotonicity_default_regime(amplitude_gain, seed):
    # Energies are power, so an amplitude gain c scales them by c**2 and the
    # ratio term by c**(2 * (1 - alpha)). The root compressor is concave with
    # f(0) = 0, so the feature ratio lies between 1 and that factor.
    e = random_gram(seed, (40, 6), low=-1, high=3)
    alpha, tol = 0.98, 1e-3
    base = pcen_forward(e).values
    scaled = pcen_forward(amplitude_gain**2 * e).values
    ratio = scaled / base
    bound = amplitude_gain ** (2 * (1 - alpha))
    lo, hi = min(1.0, bound), max(1.0, bound)
    assert np.all(ratio <= hi * (1 + tol))
    assert np.all(ratio >= lo * (1 - tol))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 40))
def test_causality(seed, cut):
    e = random_gram(seed, (40, 4))
    for params in (PcenParams(), PcenParams.alternating(4), PcenParams(init="zero")):
        full = pcen_forward(e, params).values
        np.testing.assert_array_equal(pcen_forward(e[:cut], params).values, full[:cut])


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (12, 3), elements=st.floats(0, 1e6)), st.floats(0.01, 1))
def test_non_negative(e, s):
    params = PcenParams(smoother=SingleSmoother(s))
    assert np.all(pcen_forward(e, params).values >= 0)


def test_eps_zero_needs_positive_smoother():
    with pytest.raises(ParameterError):
        pcen_forward(np.zeros((4, 2)), PcenParams(eps=0.0))


def test_param_validation():
    with pytest.raises(ParameterError):
        PcenParams(r=0.0)
    with pytest.raises(ParameterError):
        PcenParams(delta=-1.0)
    with pytest.raises(ParameterError):
        PcenParams(init="warm")
    with pytest.raises(ShapeError):
        PcenParams(alpha=np.ones(3), r=np.ones(4))
    with pytest.raises(ShapeError):
        pcen_forward(np.ones((5, 4)), PcenParams(alpha=np.ones(3)))


# --- log-mel --------------------------------------------------------------


def test_log_mel_zero_energy():
    out = log_mel(np.zeros((3, 4)), 0.1, "stabilized")
    assert out.kind == "log-mel"
    np.testing.assert_allclose(out.values, math.log(0.1), rtol=1e-15)


def test_log_mel_clipped_floor():
    out = log_mel(np.full((3, 4), 0.05), 0.1, "clipped")
    assert np.all(out.values == math.log(0.1))


def test_log_mel_bad_args():
    with pytest.raises(ParameterError):
        log_mel(np.ones((2, 2)), 0.0)
    with pytest.raises(ParameterError):
        log_mel(np.ones((2, 2)), 0.1, "natural")


# --- streaming ------------------------------------------------------------


STREAM_PARAMS = [
    PcenParams(),
    PcenParams(init="zero"),
    PcenParams.alternating(6),
    PcenParams(smoother=SmootherBank([0.015, 0.02, 0.08], np.random.default_rng(1).normal(size=(3, 6)))),
    PcenParams(alpha=np.linspace(0.5, 1, 6), delta=np.linspace(1, 3, 6), r=np.linspace(0.2, 0.9, 6)),
]


@pytest.mark.parametrize("params", STREAM_PARAMS)
def test_stream_matches_batch(params):
    e = random_gram(11, (100, 6))
    handle = stream_init(params, 6)
    rows = np.array([stream_step(handle, frame) for frame in e])
    np.testing.assert_array_equal(rows, pcen_forward(e, params).values)


def test_single_frame_stream():
    e = random_gram(12, (1, 6))
    handle = stream_init(PcenParams(), 6)
    np.testing.assert_array_equal(stream_step(handle, e[0]), pcen_forward(e).values[0])


def test_interleaved_handles_are_isolated():
    a, b = random_gram(13, (50, 6)), random_gram(14, (50, 6))
    params = STREAM_PARAMS[3]
    ha, hb = stream_init(params, 6), stream_init(params, 6)
    out_a, out_b = [], []
    for fa, fb in zip(a, b):
        out_a.append(stream_step(ha, fa))
        out_b.append(stream_step(hb, fb))
    np.testing.assert_array_equal(out_a, pcen_forward(a, params).values)
    np.testing.assert_array_equal(out_b, pcen_forward(b, params).values)


def test_stream_reset_and_shape_error():
    e = random_gram(15, (20, 6))
    handle = stream_init(PcenParams(), 6)
    for frame in e:
        stream_step(handle, frame)
    handle.reset()
    rows = np.array([stream_step(handle, frame) for frame in e])
    np.testing.assert_array_equal(rows, pcen_forward(e).values)
    with pytest.raises(ShapeError):
        stream_step(handle, np.ones(5))


# --- parameter files ------------------------------------------------------


@pytest.mark.parametrize("params", STREAM_PARAMS + [PcenParams(eps=0.0, alpha=1.0)])
def test_params_round_trip(params, tmp_path):
    e = random_gram(16, (30, 6))
    again = loads_params(dumps_params(params))
    np.testing.assert_array_equal(pcen_forward(e, again).values, pcen_forward(e, params).values)
    path = tmp_path / "p.json"
    save_params(path, params)
    np.testing.assert_array_equal(pcen_forward(e, load_params(path)).values, pcen_forward(e, params).values)
    assert type(again.smoother) is type(params.smoother)


def test_per_channel_smoother_requires_vector():
    with pytest.raises(ShapeError):
        PerChannelSmoother(np.full((2, 2), 0.1))
