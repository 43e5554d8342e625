#!/usr/bin/env python3
"""
Tests for the autodiff core: primitive gradients, ordered reductions and
error contracts.
"""
import sys
from functools import reduce

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal

from src.numerics.gradcheck import grad_check, grad_check_params
from src.numerics.tensor import (
    Graph, Tensor, add, backward, concat, exp, gather, layer_norm, log, log_sigmoid, log_softmax,
    logsumexp, logsumexp_last, matmul, mean, mul, outer_add, parameter, pick, reshape, rnnt_nll,
    seq_sum, shift_rows, sigmoid, silu, softmax, sum as tsum, take, tanh, transpose,
)
from src.utils.errors import NumericError, UsageError
from src.utils.reporting import run_test_functions

PRIMITIVE_TOLERANCE = 1e-6


def _weighted(op, shape_out, rng):
    """Scalar probe sum(op(x) * c) with a fixed random weighting c."""
    c = rng.normal(size=shape_out)
    return lambda t: tsum(mul(op(t), c))


def test_three_layer_composition():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        w1, w2, w3 = rng.normal(size=(4, 5)), rng.normal(size=(5, 3)), rng.normal(size=(3, 2))
        x = Tensor(rng.normal(size=(3, 4)))
        f = lambda t: tsum(tanh(matmul(silu(matmul(tanh(matmul(t, w1)), w2)), w3)))  # noqa: E731
        assert grad_check(f, x) <= PRIMITIVE_TOLERANCE


def test_logsumexp_gradient():
    for seed in range(10):
        x = Tensor(np.random.default_rng(seed).uniform(-1, 1, size=8))
        assert grad_check(logsumexp_last, x) <= PRIMITIVE_TOLERANCE


def test_elementwise_primitives():
    ops = {'tanh': tanh, 'sigmoid': sigmoid, 'log_sigmoid': log_sigmoid, 'silu': silu, 'exp': exp,
           'softmax': softmax, 'log_softmax': log_softmax}
    for seed in range(25):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(2, 5)))
        for name, op in ops.items():
            err = grad_check(_weighted(op, (2, 5), rng), x)
            assert err <= PRIMITIVE_TOLERANCE, f"{name} seed {seed}: {err}"
        positive = Tensor(rng.uniform(0.5, 2.0, size=(2, 5)))
        assert grad_check(_weighted(log, (2, 5), rng), positive) <= PRIMITIVE_TOLERANCE


def test_structural_primitives():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        x = Tensor(rng.normal(size=(4, 3)))
        idx = rng.integers(0, 4, size=6)
        rows = rng.integers(0, 3, size=4)
        flat = rng.integers(0, 12, size=5)
        cases = {
            'take': (lambda t: take(t, idx), (6, 3)),
            'pick': (lambda t: pick(t, rows), (4,)),
            'gather': (lambda t: gather(t, flat), (5,)),
            'shift+': (lambda t: shift_rows(t, 1), (4, 3)),
            'shift-': (lambda t: shift_rows(t, -2), (4, 3)),
            'transpose': (lambda t: transpose(t, (1, 0)), (3, 4)),
            'reshape': (lambda t: reshape(t, (2, 6)), (2, 6)),
            'concat': (lambda t: concat([t, tanh(t)], axis=-1), (4, 6)),
            'outer_add': (lambda t: outer_add(t, tanh(t)), (4, 4, 3)),
        }
        for name, (op, shape_out) in cases.items():
            err = grad_check(_weighted(op, shape_out, rng), x)
            assert err <= PRIMITIVE_TOLERANCE, f"{name} seed {seed}: {err}"


def test_layer_norm_and_mean():
    for seed in range(25):
        rng = np.random.default_rng(seed)
        gamma, beta = parameter(rng.normal(size=4)), parameter(rng.normal(size=4))
        x = Tensor(rng.normal(size=(3, 4)))
        assert grad_check(_weighted(lambda t: layer_norm(t, gamma, beta), (3, 4), rng), x) <= PRIMITIVE_TOLERANCE
        assert grad_check(lambda t: mean(mul(t, t)), x) <= PRIMITIVE_TOLERANCE


def test_rnnt_nll_gradient():
    for seed in range(10):
        rng = np.random.default_rng(seed)
        t_len, u_len, vocab = 3, 2, 4
        targets = list(rng.integers(1, vocab, size=u_len))
        x = Tensor(rng.normal(size=(t_len, u_len + 1, vocab)))
        assert grad_check(lambda t: rnnt_nll(log_softmax(t), targets), x) <= PRIMITIVE_TOLERANCE


def test_grad_check_params_restores_values():
    rng = np.random.default_rng(0)
    w = parameter(rng.normal(size=(3, 2)))
    before = w.data.copy()
    x = rng.normal(size=(4, 3))
    err = grad_check_params(lambda: tsum(tanh(matmul(x, w))), {'w': w})
    assert err <= PRIMITIVE_TOLERANCE
    assert_array_equal(w.data, before)


def test_shared_subexpression_accumulates():
    x = parameter([1.5, -2.0])
    out = tsum(add(mul(x, x), x))
    out.backward()
    assert_allclose(x.grad, 2 * x.data + 1)


def test_graph_order_is_topological():
    x = parameter([1.0, 2.0])
    y = tanh(x)
    out = tsum(mul(y, y))
    graph = Graph.from_output(out)
    position = {id(node): i for i, node in enumerate(graph.nodes)}
    assert position[id(x)] < position[id(y)] < position[id(out)]
    assert len(graph) == 4


def test_untracked_inputs_record_nothing():
    out = tsum(tanh(Tensor([1.0, 2.0])))
    assert not out.requires_grad
    assert out.is_leaf


def test_seq_sum_is_left_to_right():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(5, 17)) * 10.0 ** rng.integers(-8, 8, size=(5, 17))
    got = seq_sum(x, keepdims=False)
    for row, value in zip(x, got):
        assert value == reduce(lambda a, b: a + b, row.tolist())


def test_matmul_accumulates_in_order():
    rng = np.random.default_rng(4)
    a, b = rng.normal(size=(3, 9)), rng.normal(size=(9, 2))
    out = matmul(a, b).data
    for i in range(3):
        for j in range(2):
            expected = a[i, 0] * b[0, j]
            for k in range(1, 9):
                expected = expected + a[i, k] * b[k, j]
            assert out[i, j] == expected


def test_matmul_rows_independent_of_length():
    rng = np.random.default_rng(5)
    a, w = rng.normal(size=(7, 6)), rng.normal(size=(6, 3))
    assert_array_equal(matmul(a[:4], w).data, matmul(a, w).data[:4])


def test_logsumexp_edge_cases():
    assert logsumexp([-np.inf, -np.inf]) == -np.inf
    assert_allclose(logsumexp([0.0, 0.0]), np.log(2.0))
    assert_allclose(logsumexp([1000.0, 1000.0]), 1000.0 + np.log(2.0))
    try:
        logsumexp([])
        raise AssertionError("empty logsumexp accepted")
    except UsageError:
        pass


def test_error_contracts():
    x = parameter(np.ones((2, 3)))
    for call in (lambda: backward(Graph.from_output(x), x),
                 lambda: add(x, np.ones((3, 2))),
                 lambda: matmul(x, np.ones((2, 2))),
                 lambda: rnnt_nll(Tensor(np.zeros((2, 2, 3))), [0])):
        try:
            call()
            raise AssertionError("precondition violation accepted")
        except UsageError:
            pass
    try:
        grad_check(lambda t: log(t), Tensor([-1.0]))
        raise AssertionError("non-finite value accepted")
    except NumericError:
        pass


def test_rnnt_nll_single_cell():
    # T=1, U=0: only the final blank contributes
    logp = np.log(np.array([[[0.25, 0.75]]]))
    assert_allclose(rnnt_nll(Tensor(logp), []).item(), -np.log(0.25))


TESTS = [
    ("Three-layer composition gradient", test_three_layer_composition),
    ("logsumexp gradient", test_logsumexp_gradient),
    ("Elementwise primitive gradients", test_elementwise_primitives),
    ("Structural primitive gradients", test_structural_primitives),
    ("Layer norm and mean gradients", test_layer_norm_and_mean),
    ("Transducer NLL gradient", test_rnnt_nll_gradient),
    ("grad_check_params restores values", test_grad_check_params_restores_values),
    ("Shared subexpressions accumulate", test_shared_subexpression_accumulates),
    ("Graph order is topological", test_graph_order_is_topological),
    ("Untracked inputs record nothing", test_untracked_inputs_record_nothing),
    ("seq_sum is left to right", test_seq_sum_is_left_to_right),
    ("matmul accumulates in order", test_matmul_accumulates_in_order),
    ("matmul rows independent of length", test_matmul_rows_independent_of_length),
    ("logsumexp edge cases", test_logsumexp_edge_cases),
    ("Error contracts", test_error_contracts),
    ("Transducer NLL single cell", test_rnnt_nll_single_cell),
]


def run_all_tests():
    return run_test_functions("Numerics", TESTS)


if __name__ == "__main__":
    sys.exit(0 if run_all_tests() else 1)
