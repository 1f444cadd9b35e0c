import numpy as np
import pytest
from hypothesis import given, strategies as st

from flowbridge import autodiff as ad
from flowbridge.errors import ContractError, DimensionError, NumericError
from oracles import central_difference, relative_error

PRIMITIVE_TOL = 1e-5


def _check(op, shapes, rng, **kw):
    """Max relative error of d/dx sum(op(*x) * R) against central differences."""
    arrays = [rng.standard_normal(s) for s in shapes]
    weight = rng.standard_normal(op(*[ad.Tensor(a) for a in arrays], **kw).shape)

    def scalar():
        return float((op(*[ad.Tensor(a) for a in arrays], **kw).data * weight).sum())

    leaves = [ad.Tensor(a, requires_grad=True) for a in arrays]
    with ad.GradTape() as tape:
        out = op(*leaves, **kw)
        weighted = ad.reshape(ad.mul(out, ad.Tensor(weight)), (-1,))
        loss = ad.mul(ad.mean(weighted), float(weighted.shape[0]))
    grads = tape.backward(loss)
    numeric = central_difference(scalar, arrays)
    return max(relative_error(grads[leaf], n) for leaf, n in zip(leaves, numeric))


CASES = {
    "matmul": (ad.matmul, [(2, 3, 4), (4, 5)], {}),
    "add": (ad.add, [(3, 4), (3, 4)], {}),
    "broadcast_add": (ad.broadcast_add, [(2, 3, 4), (4,)], {}),
    "sub": (ad.sub, [(3, 4), (1, 4)], {}),
    "mul": (ad.mul, [(2, 3, 4), (2, 1, 4)], {}),
    "neg": (ad.neg, [(3, 4)], {}),
    "affine": (ad.affine, [(2, 3, 4), (4, 5), (5,)], {}),
    "layer_norm": (ad.layer_norm, [(2, 3, 6)], {}),
    "layer_norm_affine": (ad.layer_norm, [(2, 3, 6), (6,), (6,)], {}),
    "gelu": (ad.gelu, [(3, 5)], {}),
    "softmax": (ad.softmax, [(2, 3, 5)], {}),
    "mean_all": (ad.mean, [(3, 4)], {}),
    "mean_axis": (ad.mean, [(2, 3, 4)], {"axis": 1, "keepdims": True}),
    "sum_of_squares": (ad.sum_of_squares, [(3, 4)], {}),
    "concat": (lambda a, b, c: ad.concat([a, b, c]), [(2, 3), (2, 1), (2, 4)], {}),
    "slice": (lambda a: ad.select(a, (Ellipsis, slice(1, 3))), [(2, 3, 5)], {}),
    "slice_row": (lambda a: ad.select(a, (1,)), [(3, 4)], {}),
    "reshape": (lambda a: ad.reshape(a, (4, 6)), [(2, 3, 4)], {}),
    "transpose": (lambda a: ad.transpose(a, (2, 0, 1)), [(2, 3, 4)], {}),
}


@pytest.mark.parametrize("name", sorted(CASES))
def test_primitive_gradients_match_finite_differences(name, f64, rng):
    op, shapes, kw = CASES[name]
    assert _check(op, shapes, rng, **kw) < PRIMITIVE_TOL


def test_every_registered_primitive_has_a_gradient_case():
    covered = {"matmul", "add", "broadcast_add", "sub", "mul", "neg", "affine", "layer_norm", "gelu",
               "softmax_over_last_axis", "mean", "sum_of_squares", "concat_last_axis", "slice", "reshape",
               "transpose"}
    assert set(ad.OPS) == covered


def test_forward_op_dispatches_by_name(f64):
    x = ad.Tensor(np.arange(6.0).reshape(2, 3))
    assert np.allclose(ad.forward_op("softmax_over_last_axis", x).data.sum(axis=-1), 1.0)
    with pytest.raises(ContractError):
        ad.forward_op("no_such_op", x)


def test_shape_mismatch_is_a_dimension_error():
    with pytest.raises(DimensionError):
        ad.matmul(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((4, 2))))
    with pytest.raises(DimensionError):
        ad.add(ad.Tensor(np.ones((2, 3))), ad.Tensor(np.ones((3,))))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_result_names_the_op():
    with pytest.raises(NumericError, match="mul"):
        ad.mul(ad.Tensor(np.array([1e30], dtype=np.float32)), ad.Tensor(np.array([1e30], dtype=np.float32)))
    with pytest.raises(NumericError, match="layer_norm"):
        ad.layer_norm(ad.Tensor(np.array([[np.nan, 1.0]], dtype=np.float32)))


def test_backward_needs_scalar_loss():
    x = ad.Tensor(np.ones(3), requires_grad=True)
    with ad.GradTape() as tape:
        y = ad.mul(x, 2.0)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_unused_leaf_gets_zero_gradient(f64):
    x = ad.Tensor(np.ones(3), requires_grad=True)
    unused = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    with ad.GradTape() as tape:
        loss = ad.sum_of_squares(x)
    g = tape.backward(loss)
    assert np.array_equal(g[x], 2 * np.ones(3))
    assert np.array_equal(g[unused], np.zeros((2, 2)))


def test_fan_out_accumulates(f64):
    x = ad.Tensor(np.array([1.0, -2.0]), requires_grad=True)
    with ad.GradTape() as tape:
        loss = ad.mean(ad.add(ad.mul(x, x), ad.mul(x, 3.0)))
    g = tape.backward(loss)
    assert np.allclose(g[x], (2 * x.data + 3) / 2)


def test_nothing_recorded_without_requires_grad():
    with ad.GradTape() as tape:
        ad.gelu(ad.Tensor(np.ones(4, dtype=np.float32)))
    assert tape.records == []


def test_dtype_switch_is_scoped():
    assert ad.get_dtype() is np.float32
    with ad.precision("float64"):
        assert ad.Tensor([1.0]).data.dtype == np.float64
    assert ad.Tensor([1.0]).data.dtype == np.float32
    with pytest.raises(ContractError):
        ad.set_dtype("float16")


def test_mixed_dtypes_are_rejected():
    a = ad.Tensor(np.ones(2, dtype=np.float32))
    b = ad.Tensor._wrap(np.ones(2, dtype=np.float64), False)
    with pytest.raises(ContractError):
        ad.mul(a, b)


@given(st.lists(st.floats(-50, 50), min_size=2, max_size=12))
def test_softmax_is_a_distribution(values):
    with ad.precision("float64"):
        out = ad.softmax(ad.Tensor(np.array(values))).data
    assert np.all(out >= 0)
    assert abs(out.sum() - 1) < 1e-12


@given(st.integers(2, 8), st.floats(0.1, 10), st.floats(-5, 5))
def test_layer_norm_of_affine_input_matches_closed_form(n, scale, shift):
    x = np.random.default_rng(n).standard_normal((3, n))
    with ad.precision("float64"):
        out = ad.layer_norm(ad.Tensor(x * scale + shift)).data
    centered = (x - x.mean(axis=1, keepdims=True)) * scale
    ref = centered / np.sqrt(scale ** 2 * x.var(axis=1, keepdims=True) + ad.LAYER_NORM_EPS)
    assert np.allclose(out, ref, atol=1e-10)


def test_gelu_matches_tanh_formula(f64):
    x = np.linspace(-4, 4, 33)
    ref = 0.5 * x * (1 + np.tanh(np.sqrt(2 / np.pi) * (x + 0.044715 * x ** 3)))
    assert np.allclose(ad.gelu(ad.Tensor(x)).data, ref, atol=1e-14)
