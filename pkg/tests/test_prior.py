import numpy as np
import pytest

from priorfuse import oracles as O
from priorfuse import tensor as T
from priorfuse.errors import ConfigurationError, DimensionError
from priorfuse.gradcheck import grad_check
from priorfuse.prior import TOKEN_LN_EPS, PriorGenerator
from priorfuse.tensor import Tensor

F64 = np.float64


def make(rng, width=8, m=4, heads=2, prev=None, first=False):
    g = PriorGenerator(width, m, heads, rng, F64, prev_width=prev, first=first)
    for p in g.parameters():  # move away from the neutral init so every path matters
        p.data = p.data + 0.3 * rng.standard_normal(p.shape)
    return g


def test_init_priors_broadcast_and_statistics(rng):
    g = PriorGenerator(64, 256, 4, rng, F64, first=True)
    d = g.init_priors(2).data
    assert d.shape == (2, 256, 64)
    np.testing.assert_array_equal(d[0], d[1])
    assert abs(d.mean()) < 2e-3
    assert abs(d.std() - 0.02) < 1e-3
    assert g.gate.data.tolist() == [0.0]


def test_heads_must_divide_width(rng):
    with pytest.raises(ConfigurationError):
        PriorGenerator(6, 4, 4, rng, F64)


def test_align_history_matches_composition(rng):
    g = make(rng, 8, prev=4)
    prev = rng.standard_normal((2, 4, 4))
    y = g.align_history(Tensor(prev)).data
    lin = prev @ g.align.weight.data.T + g.align.bias.data
    gain, shift = g.align_norm.gain.data, g.align_norm.shift.data
    ref = np.array([[O.loop_layer_norm(t, gain, shift, TOKEN_LN_EPS) for t in b] for b in lin])
    np.testing.assert_allclose(y, ref, atol=1e-10)
    with pytest.raises(DimensionError):
        g.align_history(Tensor(rng.standard_normal((2, 4, 8))))


def test_identity_alignment_is_layer_norm(rng):
    g = PriorGenerator(4, 3, 2, rng, F64, prev_width=4)
    g.align.weight.data = np.eye(4)
    prev = rng.standard_normal((1, 3, 4))
    expected = T.layer_norm(Tensor(prev), eps=TOKEN_LN_EPS).data
    np.testing.assert_allclose(g.align_history(Tensor(prev)).data, expected, atol=1e-12)


def test_zero_history_gives_identical_tokens(rng):
    g = make(rng, 8, prev=4)
    y = g.align_history(Tensor(np.zeros((1, 5, 4)))).data[0]
    np.testing.assert_allclose(y, np.broadcast_to(y[0], y.shape), atol=1e-12)


def test_pre_affine_statistics(rng):
    g = PriorGenerator(8, 4, 2, rng, F64, prev_width=4)
    y = g.align_history(Tensor(rng.standard_normal((2, 4, 4)))).data
    np.testing.assert_allclose(y.mean(-1), 0.0, atol=1e-10)
    np.testing.assert_allclose(y.var(-1), 1.0, atol=1e-4)


def test_cross_attention_matches_loop_oracle(rng):
    g = make(rng, 8, m=4, heads=2)
    f = rng.standard_normal((1, 8, 4, 4))
    delta, attn = g.cross_attention(Tensor(f))
    ref, ref_attn = O.loop_cross_attention(
        f[0].reshape(8, -1).T, g.queries.data, g.q_proj.weight.data, g.q_proj.bias.data,
        g.k_proj.weight.data, g.k_proj.bias.data, g.v_proj.weight.data, g.v_proj.bias.data,
        g.o_proj.weight.data, g.o_proj.bias.data, 2)
    assert np.max(np.abs(delta.data[0] - ref)) < 1e-5
    assert np.max(np.abs(attn[0] - ref_attn)) < 1e-5
    np.testing.assert_allclose(attn.sum(-1), 1.0, atol=1e-6)


def test_single_token_attention_is_value_projection(rng):
    g = make(rng, 4, m=3, heads=2)
    f = rng.standard_normal((1, 4, 1, 1))
    delta, attn = g.cross_attention(Tensor(f))
    np.testing.assert_array_equal(attn, np.ones_like(attn))
    v = f[0, :, 0, 0] @ g.v_proj.weight.data.T + g.v_proj.bias.data
    expected = v @ g.o_proj.weight.data.T + g.o_proj.bias.data
    np.testing.assert_allclose(delta.data[0], np.tile(expected, (3, 1)), atol=1e-12)
    dup = np.concatenate([f, f], axis=3)
    np.testing.assert_allclose(g.cross_attention(Tensor(dup))[0].data, delta.data, atol=1e-12)


def test_gate_midpoint_and_limits(rng):
    g = make(rng, 8)
    a, c = Tensor(rng.standard_normal((2, 4, 8))), Tensor(rng.standard_normal((2, 4, 8)))
    g.gate.data[:] = 0.0
    mid = g.out_norm((a + c) * 0.5).data
    np.testing.assert_allclose(g.gated_update(a, c).data, mid, atol=1e-12)
    g.gate.data[:] = -20.0
    assert np.max(np.abs(g.gated_update(a, c).data - g.out_norm(a).data)) < 1e-6
    g.gate.data[:] = 20.0
    assert np.max(np.abs(g.gated_update(a, c).data - g.out_norm(c).data)) < 1e-6


def test_gate_monotone():
    weights = [T.sigmoid(Tensor(np.array([eta]))).item() for eta in (-3.0, -1.0, 0.0, 1.0, 3.0)]
    assert all(x < y for x, y in zip(weights, weights[1:]))
    assert all(0 < w < 1 for w in weights)


def test_modes_and_invariances(rng):
    g = make(rng, 8, prev=4)
    f = rng.standard_normal((2, 8, 3, 3))
    prev = rng.standard_normal((2, 4, 4))
    hist = g(Tensor(f), Tensor(prev), "history_only").data
    np.testing.assert_array_equal(hist, g(Tensor(f + rng.standard_normal(f.shape)), Tensor(prev),
                                          "history_only").data)
    prop = g(Tensor(f), Tensor(prev), "proposal_only").data
    np.testing.assert_array_equal(prop, g(Tensor(f), Tensor(prev + 1.0), "proposal_only").data)
    g.gate.data[:] = -20.0
    assert np.max(np.abs(g(Tensor(f), Tensor(prev), "full").data - hist)) < 1e-4
    g.gate.data[:] = 20.0
    assert np.max(np.abs(g(Tensor(f), Tensor(prev), "full").data - prop)) < 1e-4
    with pytest.raises(ConfigurationError):
        g(Tensor(f), Tensor(prev), "sideways")


def test_shapes_preserve_tokens(rng):
    g = make(rng, 8, m=5, prev=4)
    out = g(Tensor(rng.standard_normal((3, 8, 2, 2))), Tensor(rng.standard_normal((3, 5, 4))))
    assert out.shape == (3, 5, 8)


def test_gradients_reach_all_parameters(rng):
    g = make(rng, 4, m=3, heads=2, prev=2)
    f = Tensor(rng.standard_normal((1, 4, 3, 3)))
    prev = Tensor(rng.standard_normal((1, 3, 2)))
    w = rng.standard_normal((1, 3, 4))
    for name, p in g.named_parameters():
        err = grad_check(lambda _: T.tsum(g(f, prev) * w), p, h=1e-6)
        assert err < 1e-3, name
