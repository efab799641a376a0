import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from prlsod.tensor import (
    NonFiniteError,
    Rng,
    Tensor,
    decode_prlt,
    encode_prlt,
    load_named,
    load_tensor,
    no_grad,
    save_named,
    save_tensor,
    set_default_dtype,
    trunc_normal,
)


def test_sum_of_squares_gradient():
    x = Tensor([1.0, 2.0, 3.0], requires_grad=True)
    (x * x).sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])


def test_gradients_accumulate_across_uses():
    x = Tensor([2.0], requires_grad=True)
    y = x * x + x * 3.0  # dy/dx = 2x + 3
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [7.0])


def test_broadcast_gradient_is_reduced_to_operand_shape():
    a = Tensor(np.ones((3, 4)), requires_grad=True)
    b = Tensor(np.arange(4.0), requires_grad=True)
    (a * b).sum().backward()
    assert b.grad.shape == (4,)
    np.testing.assert_array_equal(b.grad, [3.0] * 4)
    np.testing.assert_array_equal(a.grad, np.broadcast_to(np.arange(4.0), (3, 4)))


def test_grad_has_data_shape():
    x = Tensor(np.ones((2, 3, 4)), requires_grad=True)
    x.reshape(6, 4).transpose(1, 0).sum().backward()
    assert x.grad.shape == x.shape


def test_ndarray_on_left_defers_to_tensor():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = np.array([3.0, 4.0]) * x
    assert isinstance(y, Tensor)
    y.sum().backward()
    np.testing.assert_array_equal(x.grad, [3.0, 4.0])


def test_fancy_index_gradient_accumulates_repeats():
    x = Tensor(np.arange(4.0), requires_grad=True)
    x[np.array([0, 0, 2])].sum().backward()
    np.testing.assert_array_equal(x.grad, [2.0, 0.0, 1.0, 0.0])


def test_no_grad_records_nothing():
    x = Tensor([1.0], requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad


def test_non_finite_result_raises():
    with pytest.raises(NonFiniteError), np.errstate(divide="ignore"):
        Tensor([1.0]) / Tensor([0.0])


def test_float32_mode():
    set_default_dtype(np.float32)
    assert Tensor([1.0]).data.dtype == np.float32
    with pytest.raises(ValueError):
        set_default_dtype(np.int32)


def test_rng_streams_are_reproducible_and_distinct():
    a = Rng(7, 0).generator().random(5)
    b = Rng(7, 0).generator().random(5)
    c = Rng(7, 1).generator().random(5)
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


def test_trunc_normal_bounds():
    draws = trunc_normal(Rng(1).generator(), (2000,), std=0.02, bound=2.0)
    assert np.abs(draws).max() <= 0.04
    assert abs(draws.std() - 0.0176) < 0.002  # std of a normal truncated at 2 sigma is 0.880 sigma


def test_prlt_layout():
    buf = encode_prlt(np.array([[1.0, 2.0, 3.0]]))
    assert buf[:4] == b"PRLT"
    assert buf[4:8] == (2).to_bytes(4, "little")
    assert buf[8:16] == (1).to_bytes(4, "little") + (3).to_bytes(4, "little")
    assert np.frombuffer(buf[16:], "<f4").tolist() == [1.0, 2.0, 3.0]


@settings(max_examples=30, deadline=None)
@given(st.lists(st.integers(1, 4), min_size=0, max_size=4), st.integers(0, 2**31))
def test_prlt_round_trip(shape, seed):
    arr = np.random.default_rng(seed).standard_normal(shape).astype(np.float32)
    out, end = decode_prlt(encode_prlt(arr))
    assert end == 8 + 4 * len(shape) + 4 * arr.size
    np.testing.assert_array_equal(out, arr)


def test_prlt_rejects_bad_magic_and_truncation():
    buf = encode_prlt(np.ones((2, 2)))
    with pytest.raises(ValueError):
        decode_prlt(b"XXXX" + buf[4:])
    with pytest.raises(ValueError):
        decode_prlt(buf[:-1])


def test_tensor_and_named_files(tmp_path):
    save_tensor(tmp_path / "a.prlt", np.arange(6.0).reshape(2, 3))
    np.testing.assert_array_equal(load_tensor(tmp_path / "a.prlt"), np.arange(6.0).reshape(2, 3))
    items = [("w", np.ones((2, 3))), ("b", np.zeros(3))]
    manifest = save_named(tmp_path / "ck.prlt", items)
    lines = manifest.read_text().splitlines()
    assert lines == ["w\t2x3\t0", "b\t3\t" + str(8 + 8 + 24)]
    loaded = load_named(tmp_path / "ck.prlt")
    assert list(loaded) == ["w", "b"]
    np.testing.assert_array_equal(loaded["w"], np.ones((2, 3)))
