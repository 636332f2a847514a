import numpy as np
import pytest
import torch
import torch.nn.functional as F
from hypothesis import given, settings, strategies as st

from sdwarp.condition import (ConditionGenerator, FusionBlock, TopologyConfig, post_process,
                              upscale_conditions)
from sdwarp.data import UPPER_CLOTHES, generate_pair
from sdwarp.errors import ArgumentError, ConfigurationError
from sdwarp.kernels import accumulate_flows, grid_sample_2d, identity_flow_3d, upsample_flow
from sdwarp.train import stack_samples

SMALL = (8, 8, 8, 8, 8)


def randomize(module, seed, std=0.05):
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for p in module.parameters():
            p.copy_(torch.randn(p.shape, generator=g) * std)
    return module


def inputs(res=(64, 48), kind="long_sleeve", seed=0, n=1):
    b = stack_samples([generate_pair(kind, seed + i, res) for i in range(n)])
    return b["clothes"], b["clothes_mask"], b["agnostic_seg"], b["pose"]


def test_topology_validation():
    with pytest.raises(ConfigurationError):
        TopologyConfig(connection="residual_baseline", nonroi_removal=True)
    with pytest.raises(ConfigurationError):
        TopologyConfig(connection="parallel")
    with pytest.raises(ConfigurationError):
        TopologyConfig(widths=(8, 8, 8))
    with pytest.raises(ConfigurationError):
        TopologyConfig.ablation("z")
    assert TopologyConfig.ablation("d").nonroi_removal


def test_pyramid_sizes_at_128x96():
    model = ConditionGenerator(TopologyConfig(widths=SMALL))
    e_c, e_s = model.extract_pyramids(*inputs((128, 96)))
    sizes = [tuple(t.shape[-2:]) for t in e_c]
    assert sizes == [(8, 6), (16, 12), (32, 24), (64, 48), (128, 96)]
    assert [tuple(t.shape[-2:]) for t in e_s] == sizes


def test_pyramid_rejects_indivisible_and_handles_zeros():
    model = ConditionGenerator(TopologyConfig(widths=SMALL))
    with pytest.raises(ArgumentError):
        model.extract_pyramids(torch.zeros(1, 3, 40, 48), torch.zeros(1, 1, 40, 48),
                               torch.zeros(1, 40, 48, dtype=torch.long), torch.zeros(1, 3, 40, 48))
    e_c, e_s = model.extract_pyramids(torch.zeros(1, 3, 32, 32), torch.zeros(1, 1, 32, 32),
                                      torch.zeros(1, 32, 32, dtype=torch.long), torch.zeros(1, 3, 32, 32))
    assert all(bool(torch.isfinite(t).all()) for t in e_c + e_s)


def test_output_shapes_and_ranges():
    model = randomize(ConditionGenerator(TopologyConfig(widths=SMALL)), 0)
    out = model(*inputs((128, 96)))
    assert out.layout_logits.shape == (1, 6, 128, 96)
    assert [tuple(f.shape) for f in out.tvob_flows] == [
        (1, 2, 8, 6), (1, 2, 16, 12), (1, 2, 32, 24), (1, 2, 64, 48), (1, 2, 128, 96)]
    assert out.taco_flow.shape == (1, 3, 2, 128, 96)
    assert out.layout.min() >= 0 and out.layout.max() < 6
    assert out.mask_hat.min() >= 0 and out.mask_hat.max() <= 1
    assert all(bool(torch.isfinite(f).all()) for f in out.tvob_flows)


def test_untrained_model_warps_identically():
    for name in "bcd":
        model = ConditionGenerator(TopologyConfig.ablation(name, widths=SMALL))
        c, cm, sa, p = inputs()
        out = model(c, cm, sa, p)
        assert torch.equal(out.warped_clothes, c)
        assert torch.equal(out.warped_mask, cm)


def test_deterministic_forward():
    model = randomize(ConditionGenerator(TopologyConfig(widths=SMALL)), 1)
    a, b = model(*inputs()), model(*inputs())
    assert torch.equal(a.layout_logits, b.layout_logits)
    assert torch.equal(a.warped_clothes, b.warped_clothes)


def test_fusion_block_level_zero_and_zero_delta():
    block = randomize(FusionBlock(0, SMALL), 2)
    e = torch.randn(1, 8, 4, 3)
    flow, seg, delta = block(e, e)
    assert torch.equal(flow, delta)
    block1 = randomize(FusionBlock(1, SMALL), 3)
    with torch.no_grad():
        block1.flow_head.weight.zero_()
        block1.flow_head.bias.zero_()
    prev = torch.randn(1, 2, 4, 3) * 0.1
    flow1, _, _ = block1(torch.randn(1, 8, 8, 6), torch.randn(1, 8, 8, 6), prev, seg)
    assert torch.equal(flow1, upsample_flow(prev, 2))
    with pytest.raises(ArgumentError):
        block1(torch.randn(1, 8, 8, 6), torch.randn(1, 8, 8, 6))
    with pytest.raises(ArgumentError):
        block1(torch.randn(1, 8, 8, 6), torch.randn(1, 8, 6, 6), prev, seg)


def test_fusion_block_recomposes_from_kernel_ops():
    block = randomize(FusionBlock(2, SMALL), 4)
    prev_flow, prev_seg = torch.randn(1, 2, 4, 4) * 0.1, torch.randn(1, 8, 4, 4)
    e_c, e_s = torch.randn(1, 8, 8, 8), torch.randn(1, 8, 8, 8)
    flow, _, delta = block(e_c, e_s, prev_flow, prev_seg)
    up = upsample_flow(prev_flow, 2)
    up_seg = F.interpolate(prev_seg, scale_factor=2, mode="bilinear", align_corners=False)
    expect_delta = block.flow_head(block.flow_body(torch.cat([grid_sample_2d(e_c, up), up_seg, e_s], 1)))
    assert torch.equal(delta, expect_delta)
    assert torch.equal(flow, accumulate_flows(up, expect_delta))


def test_every_level_feeds_the_tvob_chain():
    model = randomize(ConditionGenerator(TopologyConfig.ablation("b", widths=SMALL)), 5)
    args = inputs()
    base = model(*args).tvob_flows[-1]
    for block in model.blocks:
        saved = block.flow_head.bias.detach().clone()
        with torch.no_grad():
            block.flow_head.bias.add_(0.05)
        assert not torch.equal(model(*args).tvob_flows[-1], base)
        with torch.no_grad():
            block.flow_head.bias.copy_(saved)


def test_taco_identity_and_erasure():
    model = randomize(ConditionGenerator(TopologyConfig(widths=SMALL)), 6)
    args = inputs()
    h, w = args[0].shape[-2:]
    ident = identity_flow_3d(h, w).unsqueeze(0)
    out = model(*args, taco_flow_override=ident)
    assert torch.equal(out.warped_clothes, out.warped_clothes_tvob)
    erase = torch.rand(h, w, generator=torch.Generator().manual_seed(0)) < 0.3
    flow = ident.clone()
    flow[0, 2, 0][erase] = 1.0
    out2 = model(*args, taco_flow_override=flow)
    assert bool((out2.warped_clothes[0][:, erase] == 0).all())
    assert torch.equal(out2.warped_clothes[0][:, ~erase], out.warped_clothes_tvob[0][:, ~erase])


def test_layout_depends_on_final_warp():
    model = randomize(ConditionGenerator(TopologyConfig.ablation("c", widths=SMALL)), 7)
    c, cm, sa, p = inputs()
    out = model(c, cm, sa, p)
    e_c, e_s = model.extract_pyramids(c, cm, sa, p)
    flows, segs = None, None
    for l in range(4):
        flows, segs, _ = model.blocks[l](e_c[l], e_s[l], flows, segs)
    sd = model.sd_block(e_c[4], e_s[4], flows, segs, torch.zeros_like(c), torch.zeros_like(cm), sa, p)
    assert torch.equal(model.sd_block(e_c[4], e_s[4], flows, segs, c, cm, sa, p)["logits"], out.layout_logits)
    assert not torch.equal(sd["logits"], out.layout_logits)


def test_post_process():
    logits = torch.zeros(1, 6, 2, 2)
    logits[0, UPPER_CLOTHES, 0, 0] = 5.0
    logits[0, 2, 1, 1] = 5.0
    warped = torch.ones(1, 3, 2, 2)
    layout, clothes_hat, mask = post_process(logits, warped, torch.ones(1, 1, 2, 2))
    assert layout.tolist() == [[[UPPER_CLOTHES, 0], [0, 2]]]  # ties resolve to label 0
    assert mask.tolist() == [[[[1.0, 0.0], [0.0, 0.0]]]]
    assert torch.equal(clothes_hat, warped * mask)
    off = torch.zeros(1, 6, 2, 2)
    off[:, 1] = 1.0
    assert float(post_process(off, warped, torch.ones(1, 1, 2, 2))[1].abs().sum()) == 0


def test_upscaled_identity_reproduces_input():
    for name in "bcd":
        model = ConditionGenerator(TopologyConfig.ablation(name, widths=SMALL))
        c, cm, sa, p = inputs((32, 32))
        out = model(c, cm, sa, p)
        big_c = F.interpolate(c, scale_factor=4, mode="nearest")
        big_m = F.interpolate(cm, scale_factor=4, mode="nearest")
        flow4 = upsample_flow(out.tvob_flows[-1], 4)
        assert torch.equal(grid_sample_2d(big_c, flow4), big_c)
        if out.taco_flow is not None and out.taco_flow.dim() == 5:
            # internal consistency: the upsampled 3D identity still reads depth 0 exactly
            layout, clothes_hat, mask = upscale_conditions(out, big_c, big_m, 4)
            gate = (layout == UPPER_CLOTHES).unsqueeze(1)
            assert torch.equal(clothes_hat, big_c * big_m.clamp(0, 1) * gate)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 10**6))
def test_sequential_identity_matches_baseline(seed):
    b = randomize(ConditionGenerator(TopologyConfig.ablation("b", widths=SMALL)), seed)
    d = ConditionGenerator(TopologyConfig.ablation("d", widths=SMALL))
    d.load_state_dict(b.state_dict(), strict=False)
    args = inputs((32, 32), seed=seed % 50)
    ident = identity_flow_3d(32, 32).unsqueeze(0)
    assert torch.equal(d(*args, taco_flow_override=ident).warped_clothes, b(*args).warped_clothes)
