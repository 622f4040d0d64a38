import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from nmlgcl import ndmath as nd
from nmlgcl.errors import ParseError, ShapeError
from nmlgcl.graph import Graph, normalize_adjacency
from nmlgcl.models import (
    EncoderParams,
    NmnParams,
    encoder_forward,
    init_nmn,
    init_params,
    load_checkpoint,
    nmn_forward,
    nmn_scores,
    nmn_scores_reference,
    read_arrays,
    save_checkpoint,
)

from cases import composite_cases, worst_fd_error

seeds = st.integers(0, 2**32 - 1)


def relu(x):
    return np.maximum(x, 0)


def test_zero_weights_zero_embeddings():
    g = Graph(3, [[0, 1]], np.ones((3, 4)))
    out = encoder_forward(EncoderParams(np.zeros((4, 2)), np.zeros((2, 2))), normalize_adjacency(g), g.features)
    np.testing.assert_array_equal(out.value, 0.0)


def test_isolated_node_identity():
    x = np.array([[0.5, 2.0, 0.0]])
    g = Graph(1, [], x)
    out = encoder_forward(EncoderParams(np.eye(3), np.eye(3)), normalize_adjacency(g), x)
    np.testing.assert_array_equal(out.value, x)


def test_two_node_hand_computation():
    x = np.array([[1.0, -2.0], [0.5, 3.0]])
    w1 = np.array([[1.0, 0.5], [-1.0, 2.0]])
    w2 = np.array([[0.3, -0.7], [1.1, 0.2]])
    a = np.full((2, 2), 0.5)
    expected = a @ relu(a @ x @ w1) @ w2
    g = Graph(2, [[0, 1]], x)
    out = encoder_forward(EncoderParams(w1, w2), normalize_adjacency(g), x).value
    np.testing.assert_allclose(out, expected, rtol=0, atol=1e-12)
    out_act = encoder_forward(EncoderParams(w1, w2, final_activation=True), normalize_adjacency(g), x).value
    np.testing.assert_allclose(out_act, relu(expected), rtol=0, atol=1e-12)


def test_encoder_shape_errors():
    g = Graph(2, [[0, 1]], np.ones((2, 3)))
    with pytest.raises(ShapeError):
        encoder_forward(EncoderParams(np.ones((4, 2)), np.ones((2, 2))), normalize_adjacency(g), g.features)


def test_zero_nmn_uniform_rows():
    p = NmnParams(np.zeros((4, 3)), np.zeros((1, 3)), np.zeros((3, 3)), np.zeros((1, 3)),
                  np.zeros((3, 1)), np.zeros((1, 1)))
    m = nmn_forward(p, np.ones((5, 2)), np.arange(10.0).reshape(5, 2)).value
    np.testing.assert_allclose(m, 0.2, atol=1e-15)


def test_nmn_two_node_hand_computation():
    u = np.array([[1.0], [-1.0]])
    v = np.array([[0.5], [2.0]])
    p = NmnParams(np.array([[1.0], [-1.0]]), np.array([[0.2]]), np.array([[2.0]]), np.array([[-0.1]]),
                  np.array([[1.5]]), np.array([[0.3]]))

    def score(a, b):
        h1 = relu(a - b + 0.2)
        h2 = relu(2.0 * h1 - 0.1)
        return 1.5 * h2 + 0.3

    raw = np.array([[score(u[i, 0], v[j, 0]) for j in range(2)] for i in range(2)])
    expected = np.exp(raw) / np.exp(raw).sum(axis=1, keepdims=True)
    np.testing.assert_allclose(nmn_forward(p, u, v).value, expected, rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(seed=seeds)
def test_nmn_rows_stochastic(seed):
    rng = np.random.default_rng(seed)
    n, d, h = rng.integers(1, 10), rng.integers(1, 6), rng.integers(1, 9)
    p = NmnParams(*(a * 3 for a in (init_nmn(rng, d, h).arrays().values())))
    p = p.with_arrays({"b1": rng.standard_normal((1, h)), "b3": rng.standard_normal((1, 1))})
    m = nmn_forward(p, rng.standard_normal((n, d)) * 5, rng.standard_normal((n, d)) * 5).value
    assert np.all((m >= 0) & (m <= 1))
    np.testing.assert_allclose(m.sum(axis=1), 1.0, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seed=seeds, block=st.integers(1, 12))
def test_blocked_scores_match_unblocked(seed, block):
    rng = np.random.default_rng(seed)
    n, d, h = 12, 3, 5
    p = init_nmn(rng, d, h).with_arrays({"b1": rng.standard_normal((1, h)), "b2": rng.standard_normal((1, h))})
    u, v = rng.standard_normal((n, d)), rng.standard_normal((n, d))
    ref = nmn_scores_reference(p, u, v).value
    np.testing.assert_allclose(nmn_scores(p, u, v, block_rows=block).value, ref, rtol=0, atol=1e-12)
    # gradients agree too
    w = rng.standard_normal((n, n))
    grads = []
    for f in (lambda q, a, b: nmn_scores(q, a, b, block_rows=block), nmn_scores_reference):
        tape = nd.Tape()
        q = p.on_tape(tape)
        a, b = tape.leaf(u), tape.leaf(v)
        g = tape.backward(nd.reduce_sum(nd.multiply(f(q, a, b), w)))
        grads.append([g[a], g[b]] + [g[getattr(q, k)] for k in NmnParams.ARRAYS])
    for x, y in zip(*grads):
        np.testing.assert_allclose(x, y, rtol=0, atol=1e-12)


def test_init_deterministic_and_bounded():
    a_enc, a_nmn = init_params(3, 7, 5, 6)
    b_enc, b_nmn = init_params(3, 7, 5, 6)
    c_enc, _ = init_params(4, 7, 5, 6)
    for k in EncoderParams.ARRAYS:
        np.testing.assert_array_equal(a_enc.arrays()[k], b_enc.arrays()[k])
    for k in NmnParams.ARRAYS:
        np.testing.assert_array_equal(a_nmn.arrays()[k], b_nmn.arrays()[k])
    assert not np.array_equal(a_enc.W1, c_enc.W1)
    assert np.abs(a_enc.W1).max() <= np.sqrt(6 / (7 + 5))
    assert np.abs(a_nmn.L1).max() <= np.sqrt(6 / (10 + 6))
    assert a_nmn.L1.shape == (10, 6) and a_nmn.L3.shape == (6, 1) and a_nmn.b3.shape == (1, 1)


@settings(max_examples=20, deadline=None)
@given(seed=seeds)
def test_composite_objective_gradients(seed):
    build, params = next(composite_cases(1, seed=seed))
    err, where = worst_fd_error(build, params)
    assert err < 1e-4, where


def test_b3_cancels_in_metric():
    rng = np.random.default_rng(4)
    p = init_nmn(rng, 3, 5)
    u, v = rng.standard_normal((6, 3)), rng.standard_normal((6, 3))
    shifted = p.with_arrays({"b3": p.b3 + 7.0})
    np.testing.assert_array_equal(nmn_forward(p, u, v).value, nmn_forward(shifted, u, v).value)
    raw = nmn_scores(shifted, u, v).value - nmn_scores(p, u, v).value
    np.testing.assert_allclose(raw, 7.0, atol=1e-12)


def test_checkpoint_roundtrip(tmp_path):
    enc, nmn = init_params(0, 4, 3, 5, final_activation=True)
    path = save_checkpoint(tmp_path / "c.bin", enc, nmn)
    assert path.read_bytes().startswith(b"NMLGCL1")
    e2, n2 = load_checkpoint(path)
    assert e2.final_activation and e2.activation == "relu"
    for k in EncoderParams.ARRAYS:
        np.testing.assert_array_equal(e2.arrays()[k], enc.arrays()[k])
    for k in NmnParams.ARRAYS:
        np.testing.assert_array_equal(n2.arrays()[k], nmn.arrays()[k])
    save_checkpoint(tmp_path / "e.bin", enc)
    assert load_checkpoint(tmp_path / "e.bin")[1] is None


def test_checkpoint_bad_magic_and_truncation(tmp_path):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"NOTIT")
    with pytest.raises(ParseError):
        read_arrays(bad)
    enc, _ = init_params(0, 4, 3, 5)
    data = save_checkpoint(tmp_path / "c.bin", enc).read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-5])
    with pytest.raises(ParseError):
        read_arrays(tmp_path / "t.bin")
