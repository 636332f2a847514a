import math

import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from oracles import ssim_ref
from sdwarp.condition import ConditionGenerator, TopologyConfig
from sdwarp.data import generate_pair
from sdwarp.diagnostics import (ERASED_TONE, gradient_conflict_probe, gradient_cosine, reference_grid,
                                region_error_report, region_masks, render_warped_grid, sleeve_gap_metric,
                                ssim, ssim_map, waist_period_metric)
from sdwarp.errors import ArgumentError
from sdwarp.kernels import identity_flow_3d
from sdwarp.losses import LayoutDiscriminator
from sdwarp.train import stack_samples


def test_cosine_examples():
    g = torch.randn(50, dtype=torch.float64)
    assert math.isclose(gradient_cosine(g, g)[0], 1.0, rel_tol=1e-12)
    assert math.isclose(gradient_cosine(g, -g)[0], -1.0, rel_tol=1e-12)
    u = torch.randn(50, dtype=torch.float64)
    perp = u - (u @ g) / (g @ g) * g
    assert abs(gradient_cosine(g, perp)[0]) < 1e-6
    assert gradient_cosine(g, torch.zeros(50)) == (0.0, True)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_cosine_symmetric_and_bounded(seed):
    g = torch.Generator().manual_seed(seed)
    a, b = torch.randn(2, 40, generator=g)
    ca, cb = gradient_cosine(a, b)[0], gradient_cosine(b, a)[0]
    assert ca == cb and -1 <= ca <= 1


def test_probe_report_ranges_and_determinism():
    batch = stack_samples([generate_pair("long_sleeve", i, (32, 32)) for i in range(2)])
    torch.manual_seed(0)
    model = ConditionGenerator(TopologyConfig.ablation("b", widths=(8, 8, 8, 8, 8)))
    with torch.no_grad():
        for p in model.parameters():
            p.add_(torch.randn_like(p) * 0.05)
    disc = LayoutDiscriminator()
    a = gradient_conflict_probe(model, batch, disc, seed=3)
    b = gradient_conflict_probe(model, batch, disc, seed=3)
    assert a == b
    assert len(a.cosines) == 5 and all(-1 <= c <= 1 for c in a.cosines)
    assert 0 <= a.gap_opposed_fraction <= 1 and a.gap_entries > 0 and a.batch_size == 2


def test_sleeve_gap_examples():
    s = generate_pair("long_sleeve", 0, (96, 64))
    band = s.gap_band
    assert sleeve_gap_metric(s.gt_clothes_region, band) == 1.0
    assert sleeve_gap_metric(torch.maximum(s.gt_clothes_region, band), band) == 0.0
    half = band.clone()
    idx = torch.nonzero(band[0] > 0)
    n = len(idx)
    fill = torch.zeros_like(band)
    for y, x in idx[: n // 2]:
        fill[0, y, x] = 1
    assert math.isclose(sleeve_gap_metric(fill, half), (n - n // 2) / n)
    with pytest.raises(ArgumentError):
        sleeve_gap_metric(s.gt_clothes_region, torch.zeros_like(band))


def test_sleeve_gap_monotone():
    s = generate_pair("long_sleeve", 1, (96, 64))
    idx = torch.nonzero(s.gap_band[0] > 0)
    mask = s.gt_clothes_region.clone()
    prev = sleeve_gap_metric(mask, s.gap_band)
    for y, x in idx[torch.randperm(len(idx), generator=torch.Generator().manual_seed(0))]:
        mask[0, y, x] = 1
        cur = sleeve_gap_metric(mask, s.gap_band)
        assert cur <= prev
        prev = cur
    assert prev == 0.0


def _stripes(h, w, period, phase=0.0):
    y = torch.arange(h, dtype=torch.float64)[:, None] + phase
    v = torch.where((y % period) < period / 2, 1.0, -1.0).expand(h, w)
    return v.expand(3, h, w).clone()


def test_waist_period_examples():
    band = torch.zeros(1, 32, 16)
    band[0, 8:24, 2:14] = 1
    assert math.isclose(waist_period_metric(_stripes(32, 16, 8), band, 8), 1.0, abs_tol=1e-9)
    ratio = waist_period_metric(_stripes(32, 16, 4), band, 8)
    assert abs(ratio - 0.5) <= 0.1
    assert waist_period_metric(torch.zeros(3, 32, 16), band, 8) is None


def test_waist_period_on_generated_samples():
    for seed in range(4):
        s = generate_pair("tucked_in", seed, (96, 64))
        r = waist_period_metric(s.gt_warped_clothes, s.waist_band, s.period)
        assert r is not None and abs(r - 1) < 0.15


def test_ssim_properties():
    x = torch.rand(3, 16, 16) * 2 - 1
    assert ssim(x, x) == 1.0
    y = torch.rand(3, 16, 16) * 2 - 1
    m = ssim_map(x, y)
    assert float(m.min()) >= -1 and float(m.max()) <= 1
    assert ssim(x, y) == ssim(y, x)


@settings(max_examples=5, deadline=None)
@given(st.integers(0, 10**6))
def test_ssim_matches_windowed_oracle(seed):
    rng = np.random.default_rng(seed)
    x, y = rng.uniform(-1, 1, size=(2, 2, 9, 8))
    assert math.isclose(ssim(torch.from_numpy(x), torch.from_numpy(y)), ssim_ref(x, y), rel_tol=1e-9)


def test_region_report():
    s = generate_pair("short_sleeve", 0, (96, 64))
    masks = region_masks(s.segmentation, s.pose_map)
    union = masks["arm"] | masks["waist"]
    assert bool((s.gt_clothes_region[0][union] == 1).all())
    rows = region_error_report(s.gt_warped_clothes, s.gt_warped_clothes, s.segmentation, s.pose_map)
    assert all(r.l1 == 0 and r.ssim == 1.0 for r in rows if not r.flagged)
    assert {r.region for r in rows} == {"arm", "waist"}
    # perturb only the arm band, far from the waist band
    pert = s.gt_warped_clothes.clone()
    far = masks["arm"].clone()
    far[int(torch.nonzero(masks["waist"].any(1)).min()) - 8:] = False
    pert[:, far] += 0.5
    rows2 = {r.region: r for r in region_error_report(pert, s.gt_warped_clothes, s.segmentation, s.pose_map)}
    base = {r.region: r for r in rows}
    assert rows2["arm"].l1 > 0
    assert rows2["waist"].l1 == base["waist"].l1 and rows2["waist"].ssim == base["waist"].ssim


def test_region_report_flags_empty():
    seg = torch.zeros(32, 32, dtype=torch.long)
    rows = region_error_report(torch.zeros(3, 32, 32), torch.zeros(3, 32, 32), seg, torch.zeros(3, 32, 32))
    assert all(r.flagged and r.l1 is None for r in rows)


def test_render_grid():
    ref = reference_grid(24, 16, 8)
    assert torch.equal(render_warped_grid(torch.zeros(2, 24, 16)), ref)
    shift = torch.zeros(2, 24, 16)
    shift[0] = 2 * 2 / 16  # two pixels
    out = render_warped_grid(shift)
    assert torch.equal(out[:, :, :12], ref[:, :, 2:14])
    flow = identity_flow_3d(24, 16)
    erased = torch.zeros(24, 16, dtype=torch.bool)
    erased[5:9, 3:7] = True
    flow[2, 0][erased] = 1.0
    out3 = render_warped_grid([torch.zeros(2, 24, 16), flow])
    tone = torch.tensor(ERASED_TONE)[:, None]
    assert torch.equal(out3[:, erased], tone.expand(3, int(erased.sum())))
    assert torch.equal(out3[:, ~erased], ref[:, ~erased])
