import numpy as np
import pytest

from priorfuse import tensor as T
from priorfuse.checks import jitter_parameters
from priorfuse.config import FusionConfig, toy_config
from priorfuse.errors import ConfigurationError, DimensionError
from priorfuse.losses import total_loss
from priorfuse.model import FusionNet
from priorfuse.tensor import Tensor

PROPOSAL = ("queries", "q_proj", "k_proj", "v_proj", "o_proj", "prop_norm")


def pair(rng, size=16, batch=1):
    return rng.random((batch, 1, size, size)), rng.random((batch, 1, size, size))


def perturb(net, rng, keep):
    for name, p in net.named_parameters():
        if keep(name):
            p.data = p.data + rng.standard_normal(p.shape).astype(p.data.dtype)


def test_scale_bookkeeping(rng):
    cfg = FusionConfig()
    net = FusionNet(cfg)
    ir, vis = pair(rng, 64)
    (f_ir, d_ir), _ = net.encode(Tensor(ir.astype(np.float32)), Tensor(vis.astype(np.float32)))
    for i, (f, d) in enumerate(zip(f_ir, d_ir)):
        assert f.shape == (1, cfg.widths[i], 64 >> i, 64 >> i)
        assert d.shape == (1, cfg.num_priors, cfg.widths[i])
    s0 = net.enc_ir.scales[0]
    prior0 = s0.prior.init_priors(1)
    _, _, emb = s0(Tensor(ir.astype(np.float32)), prior0)
    assert emb.shape == (1, 8, 64, 64)
    _, _, emb1 = net.enc_ir.scales[1](f_ir[0], d_ir[0])
    assert emb1.shape == (1, 16, 32, 32)


@pytest.mark.parametrize("size", [64, 96])
def test_output_geometry_and_range(rng, size):
    net = FusionNet(FusionConfig(seed=3))
    out = net(*pair(rng, size)).data
    assert out.shape == (1, 1, size, size) and out.dtype == np.float32
    assert np.all(out > 0) and np.all(out < 1)


def test_float32_preserved_through_loss(rng):
    net = FusionNet(FusionConfig())
    ir, vis = (a.astype(np.float32) for a in pair(rng, 32))
    loss = total_loss(net(ir, vis), ir, vis).tensor
    assert loss.data.dtype == np.float32


def test_input_validation(rng):
    net = FusionNet(toy_config())
    with pytest.raises(DimensionError, match=r"\(1, 1, 16, 16\).*\(1, 1, 8, 8\)"):
        net(np.zeros((1, 1, 16, 16)), np.zeros((1, 1, 8, 8)))
    with pytest.raises(DimensionError):
        net(np.zeros((1, 2, 16, 16)), np.zeros((1, 2, 16, 16)))
    with pytest.raises(ConfigurationError):
        net(np.zeros((1, 1, 15, 15)), np.zeros((1, 1, 15, 15)))


def test_scale_mismatch_in_fusion(rng):
    net = FusionNet(toy_config())
    ir, vis = pair(rng)
    (f_ir, _), (f_vis, _) = net.encode(Tensor(ir), Tensor(vis))
    with pytest.raises(ConfigurationError):
        net.fuse_and_decode(f_ir[:1], f_vis[:1])
    with pytest.raises(ConfigurationError):
        net.fuse_and_decode(f_ir, [f_vis[0], f_vis[0]])


def test_restormer_stand_in_ignores_all_prior_parameters(rng):
    net = FusionNet(toy_config(ddcb_mode="restormer_stand_in"))
    ir, vis = pair(rng)
    before = net(ir, vis).data
    perturb(net, rng, lambda n: ".prior." in n)
    np.testing.assert_array_equal(net(ir, vis).data, before)
    perturb(net, rng, lambda n: ".local." in n)
    assert not np.array_equal(net(ir, vis).data, before)


def test_history_only_ignores_proposal_parameters(rng):
    net = FusionNet(toy_config(apg_mode="history_only"))
    jitter_parameters(net, rng, 0.1)
    ir, vis = pair(rng)
    before = net(ir, vis).data
    perturb(net, rng, lambda n: ".prior." in n and any(f".{p}" in n for p in PROPOSAL))
    np.testing.assert_array_equal(net(ir, vis).data, before)


def test_full_mode_depends_on_priors(rng):
    net = FusionNet(toy_config())
    jitter_parameters(net, rng, 0.1)
    ir, vis = pair(rng)
    before = net(ir, vis).data
    perturb(net, rng, lambda n: n.endswith("init_tokens"))
    assert not np.array_equal(net(ir, vis).data, before)


def test_concat_prior_mode_uses_priors(rng):
    net = FusionNet(toy_config(ddcb_mode="concat_prior"))
    jitter_parameters(net, rng, 0.1)
    ir, vis = pair(rng)
    before = net(ir, vis).data
    perturb(net, rng, lambda n: n.endswith("init_tokens"))
    assert not np.array_equal(net(ir, vis).data, before)


def test_frozen_d0_has_zero_gradient(rng):
    net = FusionNet(toy_config(d0_mode="frozen"))
    ir, vis = pair(rng)
    total_loss(net(ir, vis), ir, vis).tensor.backward()
    for enc in (net.enc_ir, net.enc_vis):
        g = enc.init_tokens.grad
        assert g is None or not np.any(g)
    assert all(p.grad is not None for p in net.trainable_parameters())


def test_shared_d0_is_one_parameter(rng):
    shared = FusionNet(toy_config(d0_mode="shared"))
    separate = FusionNet(toy_config())
    assert shared.enc_ir.init_tokens is shared.enc_vis.init_tokens
    names = [n for n, _ in shared.named_parameters() if n.endswith("init_tokens")]
    assert len(names) == 1
    n_tok = shared.enc_ir.init_tokens.data.size
    assert sum(p.data.size for p in separate.parameters()) - sum(p.data.size for p in shared.parameters()) == n_tok


def test_single_branch_and_plain_conv_modes_run(rng):
    ir, vis = pair(rng)
    for mode in ("single_branch", "plain_conv"):
        out = FusionNet(toy_config(scfb_mode=mode))(ir, vis).data
        assert out.shape == ir.shape


def test_forward_backward_determinism(rng):
    ir, vis = pair(rng)
    grads = []
    for _ in range(2):
        net = FusionNet(toy_config(), seed=7)
        loss = total_loss(net(ir, vis), ir, vis).tensor
        loss.backward()
        grads.append((loss.item(), [p.grad.copy() for p in net.parameters()]))
    assert grads[0][0] == grads[1][0]
    for a, b in zip(grads[0][1], grads[1][1]):
        np.testing.assert_array_equal(a, b)


def test_seed_changes_initialisation():
    a, b = FusionNet(toy_config(), seed=1), FusionNet(toy_config(), seed=2)
    assert any(not np.array_equal(p.data, q.data) for p, q in zip(a.parameters(), b.parameters()))


def test_batch_elements_are_independent(rng):
    net = FusionNet(toy_config())
    jitter_parameters(net, rng, 0.1)
    ir, vis = pair(rng, batch=2)
    both = net(ir, vis).data
    one = net(ir[:1], vis[:1]).data
    np.testing.assert_allclose(both[:1], one, atol=1e-12)


def test_decoder_output_gradient_reaches_every_block(rng):
    net = FusionNet(toy_config())
    jitter_parameters(net, rng, 0.05)
    ir, vis = pair(rng)
    T.tsum(net(ir, vis)).backward()
    dead = [n for n, p in net.named_parameters() if p.grad is None or not np.any(p.grad)]
    assert dead == []
