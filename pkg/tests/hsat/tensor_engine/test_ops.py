import numpy as np
import pytest

from hsat.tensor_engine import ops
from hsat.tensor_engine.gradients import numerical_jvp, relative_error, value_and_grad
from hsat.tensor_engine.tensor import DomainError, ShapeError, Tensor

SEEDS = range(20)


def _away_from_zero(rng, shape):
    draw = rng.normal(size=shape)
    return np.sign(draw) * (0.1 + np.abs(draw))


def _positive(rng, shape):
    return 0.5 + rng.random(shape)


def _rows(rng):
    return int(rng.integers(1, 5)), int(rng.integers(2, 6))


def make_case(name, rng):
    """(f, x) where f maps a Tensor shaped like x to a Tensor."""
    rows = _rows(rng)
    if name == 'add':
        b = rng.normal(size=rows[1:])
        return (lambda x: ops.add(x, b)), rng.normal(size=rows)
    if name == 'add_rhs':
        a = rng.normal(size=rows)
        return (lambda b: ops.add(a, b)), rng.normal(size=rows[1:])
    if name == 'sub':
        a = rng.normal(size=rows)
        return (lambda b: ops.sub(a, b)), rng.normal(size=rows)
    if name == 'mul':
        b = rng.normal(size=rows)
        return (lambda x: ops.mul(x, b)), rng.normal(size=rows)
    if name == 'div':
        b = _positive(rng, rows)
        return (lambda x: ops.div(x, b)), rng.normal(size=rows)
    if name == 'div_rhs':
        a = rng.normal(size=rows)
        return (lambda b: ops.div(a, b)), _positive(rng, rows)
    if name == 'scalar_mul':
        c = float(rng.normal())
        return (lambda x: ops.scalar_mul(x, c)), rng.normal(size=rows)
    if name == 'matmul':
        b = rng.normal(size=(rows[1], 3))
        return (lambda x: ops.matmul(x, b)), rng.normal(size=rows)
    if name == 'matmul_rhs':
        a = rng.normal(size=(3, rows[0]))
        return (lambda b: ops.matmul(a, b)), rng.normal(size=rows)
    if name in ('conv2d', 'conv2d_weight', 'conv2d_bias'):
        n, c = int(rng.integers(1, 5)), int(rng.integers(1, 4))
        x = rng.normal(size=(n, c, 8, 8))
        weight = rng.normal(size=(2, c, 3, 3))
        bias = rng.normal(size=(2,))
        if name == 'conv2d':
            return (lambda t: ops.conv2d(t, weight, bias)), x
        if name == 'conv2d_weight':
            return (lambda t: ops.conv2d(x, t, bias)), weight
        return (lambda t: ops.conv2d(x, weight, t)), bias
    if name == 'avgpool2d':
        return ops.avgpool2d, rng.normal(size=(int(rng.integers(1, 5)), int(rng.integers(1, 4)), 4, 6))
    if name == 'relu':
        return ops.relu, _away_from_zero(rng, rows)
    if name == 'exp':
        return ops.exp, rng.normal(size=rows)
    if name == 'log':
        return ops.log, _positive(rng, rows)
    if name == 'sqrt':
        return ops.sqrt, _positive(rng, rows)
    if name == 'sum_axis':
        return (lambda x: ops.sum(x, axis=1)), rng.normal(size=rows)
    if name == 'sum_all':
        return ops.sum, rng.normal(size=rows)
    if name == 'mean_axis':
        return (lambda x: ops.mean(x, axis=0, keepdims=True)), rng.normal(size=rows)
    if name == 'max_axis':
        return (lambda x: ops.max(x, axis=1)), rng.normal(size=rows)
    if name == 'max_all':
        return ops.max, rng.normal(size=rows)
    if name == 'logsumexp_axis':
        return (lambda x: ops.logsumexp(x, axis=1)), rng.normal(size=rows)
    if name == 'logsumexp_all':
        return ops.logsumexp, rng.normal(size=rows)
    if name == 'gather':
        return (lambda x: ops.gather(x, [2, 0, 2, 1])), rng.normal(size=(3, rows[1]))
    if name == 'concat':
        other = rng.normal(size=(rows[0], 2))
        return (lambda x: ops.concat([x, other, x], axis=1)), rng.normal(size=rows)
    if name == 'reshape':
        return (lambda x: ops.reshape(x, (3, 4))), rng.normal(size=(2, 6))
    if name == 'transpose':
        return (lambda x: ops.transpose(x, (2, 0, 1))), rng.normal(size=(2, 3, 4))
    if name == 'l2_normalize':
        return ops.l2_normalize, rng.normal(size=(rows[0], rows[1] + 1))
    raise KeyError(name)


CASES = ['add', 'add_rhs', 'sub', 'mul', 'div', 'div_rhs', 'scalar_mul', 'matmul', 'matmul_rhs', 'conv2d',
         'conv2d_weight', 'conv2d_bias', 'avgpool2d', 'relu', 'exp', 'log', 'sqrt', 'sum_axis', 'sum_all',
         'mean_axis', 'max_axis', 'max_all', 'logsumexp_axis', 'logsumexp_all', 'gather', 'concat', 'reshape',
         'transpose', 'l2_normalize']


@pytest.mark.parametrize('seed', SEEDS)
@pytest.mark.parametrize('name', CASES)
def test_adjoint_matches_finite_differences(name, seed):
    rng = np.random.default_rng(seed)
    f, x = make_case(name, rng)
    weights = rng.normal(size=f(Tensor(x)).shape)

    def scalar(t):
        return ops.sum(ops.mul(f(t), weights))

    _, grad = value_and_grad(scalar, x)
    direction = rng.normal(size=x.shape)
    analytic = float(np.sum(grad * direction))
    numeric = numerical_jvp(scalar, x, direction, h=1e-5)
    assert relative_error(analytic, numeric) <= 1e-5


def test_relu_forward():
    np.testing.assert_array_equal(ops.relu(Tensor([-1.0, 0.0, 2.0])).data, [0.0, 0.0, 2.0])


def test_relu_subgradient_at_zero():
    x = Tensor([-1.0, 0.0, 2.0], requires_grad=True)
    ops.sum(ops.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])


def test_relu_gradient_example():
    x = Tensor([-1.0, 2.0], requires_grad=True)
    ops.sum(ops.relu(x)).backward()
    np.testing.assert_array_equal(x.grad, [0.0, 1.0])


def test_matmul_identity():
    a = np.random.default_rng(3).normal(size=(3, 3))
    np.testing.assert_array_equal(ops.matmul(np.eye(3), a).data, a)


def test_conv2d_delta_kernel_is_identity():
    ramp = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    kernel = np.zeros((1, 1, 3, 3))
    kernel[0, 0, 1, 1] = 1.0
    np.testing.assert_array_equal(ops.conv2d(ramp, kernel).data, ramp)


def test_conv2d_matches_direct_loop():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 3, 5, 4))
    weight = rng.normal(size=(4, 3, 3, 3))
    bias = rng.normal(size=(4,))
    padded = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    expected = np.zeros((2, 4, 5, 4))
    for n in range(2):
        for o in range(4):
            for i in range(5):
                for j in range(4):
                    expected[n, o, i, j] = np.sum(padded[n, :, i:i + 3, j:j + 3] * weight[o]) + bias[o]
    np.testing.assert_allclose(ops.conv2d(x, weight, bias).data, expected, rtol=1e-12, atol=1e-12)


def test_avgpool2d_values():
    x = np.arange(16, dtype=np.float64).reshape(1, 1, 4, 4)
    np.testing.assert_array_equal(ops.avgpool2d(x).data[0, 0], [[2.5, 4.5], [10.5, 12.5]])


def test_shape_mismatch_names_op_and_shapes():
    with pytest.raises(ShapeError) as error:
        ops.add(np.ones((2, 3)), np.ones((4, 5)))
    assert 'add' in str(error.value)
    assert '(2, 3)' in str(error.value)
    assert '(4, 5)' in str(error.value)


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError, match='matmul'):
        ops.matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_conv2d_needs_four_dims():
    with pytest.raises(ShapeError, match='conv2d'):
        ops.conv2d(np.ones((3, 4, 4)), np.ones((1, 3, 3, 3)))


def test_log_and_sqrt_of_negative_are_domain_errors():
    with pytest.raises(DomainError):
        ops.log(np.array([1.0, -1.0]))
    with pytest.raises(DomainError):
        ops.sqrt(np.array([-0.5]))


def test_l2_normalize_rows_have_unit_norm():
    x = np.random.default_rng(5).normal(size=(7, 9)) * 100.0
    norms = np.linalg.norm(ops.l2_normalize(x).data, axis=1)
    assert np.all(np.abs(norms - 1.0) <= 1e-12)


def test_l2_normalize_zero_row():
    with pytest.raises(DomainError):
        ops.l2_normalize(np.array([[1.0, 0.0], [0.0, 0.0]]))


def test_logsumexp_is_stable():
    out = ops.logsumexp(Tensor([1000.0, 1000.0]))
    assert out.item() == pytest.approx(1000.0 + np.log(2.0))


def test_logsumexp_ignores_minus_infinity():
    x = Tensor([[0.0, -np.inf, 0.0]], requires_grad=True)
    out = ops.logsumexp(x, axis=1)
    assert out.data[0] == pytest.approx(np.log(2.0))
    ops.sum(out).backward()
    np.testing.assert_allclose(x.grad, [[0.5, 0.0, 0.5]])


def test_no_tape_entry_without_grad():
    out = ops.add(np.ones(3), np.ones(3))
    assert out.is_leaf
    assert not out.requires_grad
