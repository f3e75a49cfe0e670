import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from daocc.gradcheck import GradcheckError, gradcheck
from daocc.oracles import naive_conv1d, naive_mean, naive_mlp
from daocc.ops import (avgpool_axis, conv1d_depthwise, conv1d_depthwise_vjp, mlp_forward, softmax, softmax_vjp)
from daocc.tensor import (DimensionError, Dual, NumericError, as_tensor, load_checkpoint, read_tensor,
                          save_checkpoint, write_tensor)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


# -- conv1d_depthwise ------------------------------------------------------------------------------

def test_conv1d_identity_kernel():
    x = np.array([[[1.0, 2.0, 3.0]]])
    assert conv1d_depthwise(x, np.array([[[1.0]]])).tolist() == [[[1.0, 2.0, 3.0]]]


def test_conv1d_summation_kernel():
    x = np.array([[[1.0, 2.0, 3.0]]])
    assert conv1d_depthwise(x, np.ones((1, 1, 3))).tolist() == [[[6.0]]]


def test_conv1d_matches_quadruple_loop():
    rng = np.random.default_rng(0)
    x, k = rng.standard_normal((2, 3, 9)), rng.standard_normal((2, 3, 5))
    assert np.max(np.abs(conv1d_depthwise(x, k) - naive_conv1d(x, k))) < 1e-12


def test_conv1d_shape_errors():
    with pytest.raises(DimensionError):
        conv1d_depthwise(np.zeros((1, 1, 3)), np.zeros((1, 1, 4)))
    with pytest.raises(DimensionError):
        conv1d_depthwise(np.zeros((1, 2, 3)), np.zeros((1, 1, 2)))


@given(a=finite, seed=st.integers(0, 2**16))
def test_conv1d_linear_in_each_argument(a, seed):
    rng = np.random.default_rng(seed)
    x, k = rng.standard_normal((2, 2, 6)), rng.standard_normal((2, 2, 3))
    base = conv1d_depthwise(x, k)
    np.testing.assert_allclose(conv1d_depthwise(a * x, k), a * base, rtol=1e-12, atol=1e-9)
    np.testing.assert_allclose(conv1d_depthwise(x, a * k), a * base, rtol=1e-12, atol=1e-9)


# -- mlp ---------------------------------------------------------------------------------------------

def test_mlp_zero_weights():
    layers = [(np.zeros((3, 4)), np.zeros(4)), (np.zeros((4, 2)), np.zeros(2))]
    assert np.all(mlp_forward(np.ones((5, 3)), layers) == 0.0)


def test_mlp_identity_layers_positive_part():
    layers = [(np.eye(2), np.zeros(2)), (np.eye(2), np.zeros(2))]
    assert mlp_forward(np.array([[1.0, -1.0]]), layers).tolist() == [[1.0, 0.0]]


def test_mlp_matches_matrix_oracle():
    rng = np.random.default_rng(1)
    layers = [(rng.standard_normal((4, 6)), rng.standard_normal(6)), (rng.standard_normal((6, 3)), rng.standard_normal(3))]
    x = rng.standard_normal((7, 4))
    assert np.max(np.abs(mlp_forward(x, layers) - naive_mlp(x, layers))) < 1e-12


def test_mlp_dimension_mismatch():
    with pytest.raises(DimensionError):
        mlp_forward(np.ones((1, 3)), [(np.zeros((4, 2)), np.zeros(2))])


# -- softmax / avgpool ----------------------------------------------------------------------------------

def test_softmax_examples():
    assert softmax(np.array([0.0, 0.0])).tolist() == [0.5, 0.5]
    assert softmax(np.array([1000.0, 1000.0])).tolist() == [0.5, 0.5]
    v = softmax(np.random.default_rng(2).standard_normal(16))
    assert abs(v.sum() - 1.0) < 1e-12


def test_softmax_rejects_non_finite():
    with pytest.raises(NumericError):
        softmax(np.array([0.0, np.nan]))


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6), elements=finite))
def test_softmax_unit_sum_property(x):
    y = softmax(x, axis=-1)
    assert np.all(y >= 0)
    np.testing.assert_allclose(y.sum(axis=-1), 1.0, atol=1e-12)


def test_avgpool_examples():
    x = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    assert avgpool_axis(x, 3).tolist() == [[[[1.5], [3.5]]]]
    c = np.full((2, 3, 4, 5), 0.7)
    np.testing.assert_allclose(avgpool_axis(c, 2), 0.7, rtol=0, atol=1e-15)
    r = np.random.default_rng(3).standard_normal((2, 4, 8, 8))
    assert np.max(np.abs(avgpool_axis(r, 3) - naive_mean(r, 3))) < 1e-12


# -- gradcheck ---------------------------------------------------------------------------------------------

def test_gradcheck_linear_map():
    rep = gradcheck(lambda x: (2.0 * x, lambda g: 2.0 * g), [np.array([0.3, -1.2])])
    assert rep.passed and rep.max_rel_error < 1e-8


def test_gradcheck_softmax_tight():
    x = np.random.default_rng(4).standard_normal((3, 5))
    rep = gradcheck(lambda a: softmax_vjp(a, axis=1), [x], epsilon=1e-5, tolerance=1e-6)
    assert rep.max_rel_error < 1e-6


def test_gradcheck_conv1d_both_inputs_tight():
    rng = np.random.default_rng(5)
    rep = gradcheck(conv1d_depthwise_vjp, [rng.standard_normal((2, 3, 9)), rng.standard_normal((2, 3, 4))],
                    epsilon=1e-5, tolerance=1e-6)
    assert rep.max_rel_error < 1e-6 and len(rep.inputs) == 2


def test_gradcheck_reports_offending_coordinates():
    wrong = lambda x: (x ** 2, lambda g: g * x)  # missing factor 2  # noqa: E731
    with pytest.raises(GradcheckError) as exc:
        gradcheck(wrong, [np.array([1.0, 2.0])])
    rep = exc.value.report
    assert not rep.passed
    assert [c for c, *_ in rep.inputs[0].offending] == [(0,), (1,)]
    assert "FAIL" in rep.summary()


# -- tensors, duals, serialization -------------------------------------------------------------------

def test_as_tensor_contract():
    t = as_tensor([[1, 2], [3, 4]])
    assert t.dtype == np.float64 and t.flags.c_contiguous
    with pytest.raises(DimensionError):
        as_tensor(np.zeros((0, 3)))


def test_dual_accumulates():
    d = Dual(np.ones((2, 2)))
    d.accumulate(np.full((2, 2), 0.5))
    d.accumulate(np.full((2, 2), 0.5))
    assert np.all(d.grad == 1.0)
    d.zero_grad()
    assert np.all(d.grad == 0.0)
    with pytest.raises(DimensionError):
        d.accumulate(np.ones(3))


def test_daot_layout():
    buf = io.BytesIO()
    write_tensor(buf, np.array([[1.0, 2.0, 3.0]]))
    raw = buf.getvalue()
    assert raw[:4] == b"DAOT"
    assert struct.unpack("<I", raw[4:8]) == (2,)
    assert struct.unpack("<2Q", raw[8:24]) == (1, 3)
    assert np.frombuffer(raw[24:], "<f8").tolist() == [1.0, 2.0, 3.0]


@given(hnp.arrays(np.float64, hnp.array_shapes(min_dims=0, max_dims=4, max_side=5),
                  elements=st.floats(allow_nan=True, allow_infinity=True)))
def test_daot_round_trip_bit_exact(x):
    buf = io.BytesIO()
    write_tensor(buf, x)
    buf.seek(0)
    y = read_tensor(buf)
    assert y.shape == x.shape and y.tobytes() == np.ascontiguousarray(x).tobytes()


def test_daot_rejects_bad_magic_and_truncation():
    with pytest.raises(ValueError):
        read_tensor(io.BytesIO(b"NOPE"))
    buf = io.BytesIO()
    write_tensor(buf, np.ones(4))
    with pytest.raises(ValueError):
        read_tensor(io.BytesIO(buf.getvalue()[:-1]))


def test_checkpoint_round_trip(tmp_path):
    params = {"a.w": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])}
    save_checkpoint(tmp_path, params)
    manifest = (tmp_path / "manifest.txt").read_text().split("\n")
    assert manifest[0].split()[:2] == ["a.w", "2x3"]
    back = load_checkpoint(tmp_path)
    assert set(back) == set(params)
    for k in params:
        assert np.array_equal(back[k], params[k])


@settings(max_examples=20)
@given(seed=st.integers(0, 2**16))
def test_ops_are_deterministic(seed):
    rng = np.random.default_rng(seed)
    x, k = rng.standard_normal((2, 3, 8)), rng.standard_normal((2, 3, 3))
    assert conv1d_depthwise(x, k).tobytes() == conv1d_depthwise(x.copy(), k.copy()).tobytes()
