"""Procedural garment/person pairs and their on-disk dataset format.

Every sample is a flat garment ``c`` (arms out, full length) and a person
wearing it. The on-person garment is the flat one pulled through a known
piecewise backward map, so the ground-truth warped clothes exist
exactly. The torso part of that map translates rows one-to-one, so an
unsqueezed texture keeps its flat vertical period.

Scenarios:

``long_sleeve``  long sleeves, arms hang with a background gap to the torso.
``tucked_in``    short sleeves, arms against the torso, hem cropped at a waist line.
``short_sleeve`` short sleeves, arms against the torso, untucked.
``tucked_out``   sleeveless, untucked.

Label set: 0 background, 1 skin (head/neck), 2 arms, 3 torso skin,
4 upper clothes, 5 lower clothes.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import torch
from PIL import Image

from .errors import ArgumentError, FormatError, VersionError
from .kernels import grid_sample_2d, make_identity_grid

LABELS = ("background", "skin", "arms", "torso", "upper_clothes", "lower_clothes")
NUM_LABELS = len(LABELS)
BACKGROUND, SKIN, ARMS, TORSO, UPPER_CLOTHES, LOWER_CLOTHES = range(NUM_LABELS)

SCENARIOS = ("long_sleeve", "tucked_in", "short_sleeve", "tucked_out")
TEXTURES = ("checkerboard", "stripes", "logo_patch")

# Body parts encoded in the pose map, each with its own color direction.
PARTS = ("background", "head", "torso", "left_arm", "right_arm", "legs")
PART_COLORS = np.array([
    [0.0, 0.0, 0.0],
    [0.9, 0.8, 0.1],
    [0.1, 0.3, 0.9],
    [0.9, 0.1, 0.2],
    [0.1, 0.9, 0.2],
    [0.7, 0.1, 0.9],
], dtype=np.float32)

FORMAT_VERSION = 1
MIN_DIVISOR = 16


@dataclass(frozen=True)
class ScenarioSpec:
    """Scenario kind plus garment/body geometry.

    Extents are fractions of the image width or height and are converted to
    pixels at generation time; ``gap_px`` and ``period`` are already pixels
    (at 64 px width; both scale with the width). ``None`` lets the seed pick.
    """

    kind: str
    texture: str = "checkerboard"
    period: int | None = None
    body_half_width: float = 0.19     # flat garment body, fraction of W
    torso_half_width: float = 0.17    # person torso, fraction of W
    top: float = 0.18                 # collar row on the person, fraction of H
    length: float = 0.62              # garment body length, fraction of H
    arm_width: float = 0.09           # fraction of W
    arm_length: float = 0.45          # fraction of H
    sleeve_reach: float = 0.25        # horizontal cuff offset of the flat sleeve, fraction of W
    gap_px: int | None = None         # long_sleeve arm/torso gap
    crop: float | None = None         # tucked_in waist line, fraction of H

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ArgumentError(f"unknown scenario {self.kind!r}; expected one of {SCENARIOS}")
        if self.texture not in TEXTURES:
            raise ArgumentError(f"unknown texture {self.texture!r}; expected one of {TEXTURES}")


@dataclass
class Sample:
    person_image: torch.Tensor          # [3, H, W]
    clothes: torch.Tensor               # [3, H, W]
    clothes_mask: torch.Tensor          # [1, H, W]
    segmentation: torch.Tensor          # [H, W] int64
    pose_map: torch.Tensor              # [3, H, W]
    agnostic_seg: torch.Tensor          # [H, W] int64
    agnostic_image: torch.Tensor        # [3, H, W]
    gt_warped_clothes: torch.Tensor     # [3, H, W]
    gt_clothes_region: torch.Tensor     # [1, H, W]
    torso_mask: torch.Tensor            # [1, H, W]
    nonroi_mask: torch.Tensor           # [1, H, W]
    gap_band: torch.Tensor              # [1, H, W], empty unless long_sleeve
    waist_band: torch.Tensor            # [1, H, W]
    scenario: str
    seed: int
    texture: str
    period: int
    crop_row: int
    untucked_area: int

    @property
    def resolution(self) -> tuple[int, int]:
        return tuple(self.person_image.shape[-2:])


TENSOR_FIELDS = ("person_image", "clothes", "pose_map", "agnostic_image", "gt_warped_clothes")
MASK_FIELDS = ("clothes_mask", "gt_clothes_region", "torso_mask", "nonroi_mask", "gap_band",
               "waist_band")
LABEL_FIELDS = ("segmentation", "agnostic_seg")
META_FIELDS = ("scenario", "seed", "texture", "period", "crop_row", "untucked_area")


def compute_nonroi_mask(torso_mask: torch.Tensor, clothes_region: torch.Tensor) -> torch.Tensor:
    """Torso pixels outside the upper clothes: ``torso * (1 - clothes)``."""
    if torso_mask.shape != clothes_region.shape:
        raise ArgumentError(
            f"mask shapes differ: {tuple(torso_mask.shape)} vs {tuple(clothes_region.shape)}")
    for name, m in (("torso_mask", torso_mask), ("clothes_region", clothes_region)):
        if not bool(((m == 0) | (m == 1)).all()):
            raise ArgumentError(f"{name} must be binary")
    return torso_mask * (1 - clothes_region)


def _check_resolution(resolution: Sequence[int]) -> tuple[int, int]:
    if len(resolution) != 2:
        raise ArgumentError(f"resolution must be (H, W), got {resolution!r}")
    h, w = (int(v) for v in resolution)
    if h <= 0 or w <= 0 or h % MIN_DIVISOR or w % MIN_DIVISOR:
        raise ArgumentError(
            f"resolution {h}x{w} must be positive and divisible by {MIN_DIVISOR} "
            "(five pyramid levels)")
    return h, w


def _segment_distance(px, py, ax, ay, bx, by):
    dx, dy = bx - ax, by - ay
    t = np.clip(((px - ax) * dx + (py - ay) * dy) / (dx * dx + dy * dy), 0, 1)
    return np.hypot(px - (ax + t * dx), py - (ay + t * dy))


def _texture(kind, xs, ys, period, phase, colors, h, w):
    half = period / 2
    if kind == "checkerboard":
        on = ((np.floor((xs + phase[0]) / half) + np.floor((ys + phase[1]) / half)) % 2).astype(bool)
    elif kind == "stripes":
        on = (np.floor((ys + phase[1]) / half) % 2).astype(bool)
    else:
        on = np.zeros_like(xs, dtype=bool)
        cx, cy = w * 0.5 + phase[0], h * 0.42 + phase[1]
        r = 0.1 * w
        ring = np.abs(np.hypot(xs - cx, ys - cy) - r) < 0.3 * r
        bar = (np.abs(xs - cx) < 0.08 * w) & (np.abs(ys - cy - 1.6 * r) < 0.03 * h)
        on = ring | bar
    img = np.where(on[None], colors[1][:, None, None], colors[0][:, None, None])
    return img.astype(np.float32)


@dataclass
class _Geometry:
    h: int
    w: int
    cx: float
    bw: float
    tw: float
    top_p: float
    top_f: float
    length: float
    aw: float
    arm_len: float
    sh: float
    gap: float
    reach: float
    crop: float
    sleeve: str                # "long", "short" or "none"


def _geometry(spec: ScenarioSpec, rng: np.random.Generator, h: int, w: int) -> _Geometry:
    s = w / 64.0
    cx = w / 2
    bw = round((spec.body_half_width + rng.uniform(-0.01, 0.01)) * w)
    tw = round((spec.torso_half_width + rng.uniform(-0.01, 0.01)) * w)
    top_p = round((spec.top + rng.uniform(-0.01, 0.01)) * h)
    top_f = top_p - round(0.02 * h)
    length = round(spec.length * h)
    aw = max(3, round(spec.arm_width * w))
    sleeve = {"long_sleeve": "long", "tucked_in": "short", "short_sleeve": "short",
              "tucked_out": "none"}[spec.kind]
    arm_len = round(spec.arm_length * h) if sleeve == "long" else round(0.16 * h)
    if spec.kind == "long_sleeve":
        gap = spec.gap_px if spec.gap_px is not None else int(rng.integers(2, 5))
        gap = max(2, round(gap * s))
    else:
        gap = 0
    if spec.kind == "tucked_in":
        frac = spec.crop if spec.crop is not None else rng.uniform(0.58, 0.66)
        crop = round(frac * h)
        crop = min(crop, top_p + length - 4)
    else:
        crop = top_p + length
    return _Geometry(h=h, w=w, cx=cx, bw=bw, tw=tw, top_p=top_p, top_f=top_f, length=length,
                     aw=aw, arm_len=arm_len, sh=round(0.06 * h), gap=gap,
                     reach=spec.sleeve_reach * w, crop=crop, sleeve=sleeve)


def _sleeve_segment(g: _Geometry, side: int):
    """Shoulder and cuff points of the flat sleeve (side -1 left, +1 right)."""
    ax = g.cx + side * g.bw
    ay = g.top_f + 0.04 * g.h
    if g.sleeve == "long":
        bx = ax + side * g.reach
        by = g.top_f + 0.45 * g.h
    else:
        bx = ax + side * 0.09 * g.w
        by = g.top_f + 0.12 * g.h
    return ax, ay, bx, by


def _render_flat(g: _Geometry, spec, rng, period, colors):
    h, w = g.h, g.w
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    body = (np.abs(xs - g.cx) < g.bw) & (ys >= g.top_f) & (ys < g.top_f + g.length)
    neck = np.hypot(xs - g.cx, ys - g.top_f) < 0.07 * w
    mask = body & ~neck
    thick = 0.5 * g.aw * 1.15
    if g.sleeve != "none":
        for side in (-1, 1):
            mask |= _segment_distance(xs, ys, *_sleeve_segment(g, side)) < thick
    phase = rng.uniform(0, period, size=2)
    tex = _texture(spec.texture, xs, ys, period, phase, colors, h, w)
    clothes = tex * mask[None]
    return clothes.astype(np.float32), mask.astype(np.float32)


def _person_layout(g: _Geometry):
    """Label map, part map and the backward map (person pixel -> flat pixel coords)."""
    h, w = g.h, g.w
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64) + 0.5
    seg = np.zeros((h, w), np.int64)
    parts = np.zeros((h, w), np.int64)
    vgrad = np.zeros((h, w), np.float64)
    map_x = xs.copy()
    map_y = ys.copy()

    hip = g.top_p + g.length
    torso = (np.abs(xs - g.cx) < g.tw) & (ys >= g.top_p) & (ys < hip)
    head = np.hypot(xs - g.cx, ys - 0.09 * h) < 0.09 * w
    neck = (np.abs(xs - g.cx) < 0.04 * w) & (ys >= 0.09 * h) & (ys < g.top_p)
    legs = (np.abs(xs - g.cx) < g.tw) & (ys >= hip)
    neckline = np.hypot(xs - g.cx, ys - g.top_p) < 0.06 * w

    parts[head | neck] = 1
    vgrad[head | neck] = np.clip(ys / g.top_p, 0, 1)[head | neck]
    parts[torso] = 2
    vgrad[torso] = ((ys - g.top_p) / g.length)[torso]
    parts[legs] = 5
    vgrad[legs] = ((ys - hip) / max(h - hip, 1))[legs]

    seg[head | neck] = SKIN
    seg[torso] = TORSO
    seg[legs] = LOWER_CLOTHES

    clothes_torso = torso & ~neckline & (ys < g.crop)
    seg[clothes_torso] = UPPER_CLOTHES
    seg[torso & (ys >= g.crop)] = LOWER_CLOTHES
    scale = g.bw / g.tw
    map_x = np.where(clothes_torso, g.cx + (xs - g.cx) * scale, map_x)
    map_y = np.where(clothes_torso, ys - g.top_p + g.top_f, map_y)

    gap_band = np.zeros((h, w), bool)
    for side in (-1, 1):
        inner = g.cx + side * (g.tw + g.gap)
        outer = inner + side * g.aw
        lo, hi = min(inner, outer), max(inner, outer)
        arm = (xs >= lo) & (xs < hi) & (ys >= g.top_p) & (ys < g.top_p + g.arm_len + 0.05 * h)
        part_id = 3 if side < 0 else 4
        parts[arm] = part_id
        vgrad[arm] = ((ys - g.top_p) / (g.arm_len + 0.05 * h))[arm]
        seg[arm] = ARMS
        edge = g.cx + side * g.tw
        bridge_lo, bridge_hi = min(lo, edge), max(hi, edge)
        bridge = (xs >= bridge_lo) & (xs < bridge_hi) & (ys >= g.top_p) & (ys < g.top_p + g.sh)
        if g.gap > 0:
            gap = (xs >= min(inner, edge)) & (xs < max(inner, edge)) \
                & (ys >= g.top_p + g.sh) & (ys < g.top_p + g.arm_len)
            gap_band |= gap
            parts[bridge & ~arm & ~torso] = part_id
            vgrad[bridge & ~arm & ~torso] = 0.0
            seg[bridge & ~arm & ~torso] = ARMS
        if g.sleeve == "none":
            continue
        ax, ay, bx, by = _sleeve_segment(g, side)
        dx, dy = bx - ax, by - ay
        norm = np.hypot(dx, dy)
        # unit normal pointing from the sleeve axis towards the garment body
        nx, ny = -side * dy / norm, side * dx / norm
        sleeve = (bridge | arm) & (ys < g.top_p + g.arm_len)
        arm_cx = (lo + hi) / 2
        t = np.clip((ys - g.top_p) / g.arm_len, 0, 1)
        # u > 0 points towards the torso on both sides
        u = np.clip(-side * (xs - arm_cx) / (g.aw / 2), -1.6, 1.6)
        fx = ax + t * dx + u * (0.5 * g.aw) * nx
        fy = ay + t * dy + u * (0.5 * g.aw) * ny
        seg[sleeve] = UPPER_CLOTHES
        map_x = np.where(sleeve, fx, map_x)
        map_y = np.where(sleeve, fy, map_y)

    # uncovered torso skin keeps the torso label
    return seg, parts, vgrad, map_x, map_y, gap_band, torso, clothes_torso


def _colors(rng: np.random.Generator) -> np.ndarray:
    base = rng.uniform(0.35, 0.9, size=3) * rng.choice([-1.0, 1.0], size=3)
    other = rng.uniform(0.35, 0.9, size=3) * rng.choice([-1.0, 1.0], size=3)
    # keep the two texture colors far apart so periods stay measurable
    if np.abs(base - other).sum() < 1.5:
        other = -base
    return np.asarray([base, other], np.float32)


def _seed_sequence(spec: ScenarioSpec, seed: int) -> list[int]:
    digest = hashlib.sha256(repr(spec).encode()).digest()
    return [int.from_bytes(digest[:4], "little"), int(seed)]


def generate_pair(spec: ScenarioSpec | str, seed: int, resolution: Sequence[int] = (128, 96)) -> Sample:
    """Render one deterministic garment/person pair."""
    if isinstance(spec, str):
        spec = ScenarioSpec(kind=spec)
    h, w = _check_resolution(resolution)
    rng = np.random.default_rng(_seed_sequence(spec, seed))
    g = _geometry(spec, rng, h, w)
    if spec.period is not None:
        period = int(spec.period)
    else:
        period = int(rng.choice([4, 6, 8]))
    period = max(4, round(period * w / 64 / 2) * 2)
    colors = _colors(rng)

    clothes, cmask = _render_flat(g, spec, rng, period, colors)
    seg, parts, vgrad, map_x, map_y, gap_band, torso, clothes_torso = _person_layout(g)

    clothes_region = (seg == UPPER_CLOTHES).astype(np.float32)
    grid = make_identity_grid(h, w, dtype=torch.float64).numpy()
    target = np.stack([2 * map_x / w - 1, 2 * map_y / h - 1])
    flow = torch.from_numpy(target - grid)
    c_t = torch.from_numpy(clothes).double()
    warped = grid_sample_2d(c_t, flow, padding="zeros").float().numpy()
    warped_mask = grid_sample_2d(torch.from_numpy(cmask).double()[None], flow, padding="zeros")
    # pixels the map sends off the garment are not clothes on the person
    clothes_region *= (warped_mask[0].numpy() > 0.5).astype(np.float32)
    seg = np.where((seg == UPPER_CLOTHES) & (clothes_region == 0),
                   np.where(torso, TORSO, np.where(parts >= 3, ARMS, BACKGROUND)), seg)
    gt_warped = warped * clothes_region[None]

    skin = np.array([0.55, 0.15, -0.15], np.float32)
    pants = np.array([-0.6, -0.55, 0.1], np.float32)
    bg = np.array([0.85, 0.85, 0.8], np.float32)
    person = np.empty((3, h, w), np.float32)
    person[:] = bg[:, None, None]
    for label, col in ((SKIN, skin), (ARMS, skin), (TORSO, skin * 0.9), (LOWER_CLOTHES, pants)):
        person[:, seg == label] = col[:, None]
    person = np.where(clothes_region[None] > 0, gt_warped, person)

    pose = PART_COLORS[parts].transpose(2, 0, 1) * (0.5 + 0.5 * vgrad[None]).astype(np.float32)
    pose = np.where(parts[None] > 0, pose, 0).astype(np.float32)

    removed = np.isin(seg, (UPPER_CLOTHES, ARMS, TORSO))
    agnostic_seg = np.where(removed, BACKGROUND, seg)
    agnostic_image = np.where(removed[None], 0.0, person).astype(np.float32)

    torso_mask = torso.astype(np.float32)
    hb = max(8, 2 * period)
    rows = np.arange(h)[:, None]
    waist = (rows >= g.crop - hb) & (rows < g.crop) & (clothes_region > 0) & torso
    untucked = int((clothes_torso | (seg == UPPER_CLOTHES)).sum())
    if spec.kind == "tucked_in":
        hip = g.top_p + g.length
        full_torso = torso & (rows < hip) & ~(np.hypot(
            np.arange(w)[None] + 0.5 - g.cx, rows + 0.5 - g.top_p) < 0.06 * w)
        untucked = int((full_torso | (clothes_region > 0)).sum())

    t = lambda a: torch.from_numpy(np.ascontiguousarray(a))
    cr = t(clothes_region[None])
    tm = t(torso_mask[None])
    return Sample(
        person_image=t(person), clothes=t(clothes), clothes_mask=t(cmask[None]),
        segmentation=t(seg.astype(np.int64)), pose_map=t(pose), agnostic_seg=t(agnostic_seg.astype(np.int64)),
        agnostic_image=t(agnostic_image), gt_warped_clothes=t(gt_warped.astype(np.float32)),
        gt_clothes_region=cr, torso_mask=tm, nonroi_mask=compute_nonroi_mask(tm, cr),
        gap_band=t(gap_band.astype(np.float32)[None]), waist_band=t(waist.astype(np.float32)[None]),
        scenario=spec.kind, seed=int(seed), texture=spec.texture, period=int(period),
        crop_row=int(g.crop), untucked_area=untucked,
    )


def decode_parts(pose_map: torch.Tensor) -> torch.Tensor:
    """Recover the body-part index map from a pose map."""
    p = pose_map.detach().float()
    norm = p.norm(dim=0)
    dirs = torch.from_numpy(PART_COLORS[1:] / np.linalg.norm(PART_COLORS[1:], axis=1, keepdims=True))
    cos = torch.einsum("kc,chw->khw", dirs, p) / norm.clamp_min(1e-8)
    idx = cos.argmax(dim=0) + 1
    return torch.where(norm > 1e-6, idx, torch.zeros_like(idx))


# ---------------------------------------------------------------------------
# on-disk format


@dataclass
class Dataset:
    samples: list[Sample]
    root: Path | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, i: int) -> Sample:
        return self.samples[i]

    @property
    def scenarios(self) -> set[str]:
        return {s.scenario for s in self.samples}

    @property
    def resolution(self) -> tuple[int, int]:
        return self.samples[0].resolution


def _write_kv(path: Path, items: Iterable[tuple[str, object]]) -> None:
    path.write_text("".join(f"{k} = {v}\n" for k, v in items), encoding="utf-8")


def read_kv(path: Path) -> dict[str, str]:
    out = {}
    for n, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise FormatError(f"{path}: line {n} is not 'key = value'")
        k, v = line.split("=", 1)
        out[k.strip()] = v.strip()
    return out


def sample_id(i: int) -> str:
    return f"{i:05d}"


def write_dataset(samples: Sequence[Sample], directory: str | Path) -> Path:
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for i, s in enumerate(samples):
        sid = sample_id(i)
        d = root / sid
        d.mkdir(exist_ok=True)
        for name in TENSOR_FIELDS:
            np.save(d / f"{name}.npy", getattr(s, name).numpy().astype("<f4"))
        for name in MASK_FIELDS:
            arr = (getattr(s, name)[0].numpy() * 255).astype(np.uint8)
            Image.fromarray(arr, mode="L").save(d / f"{name}.png")
        for name in LABEL_FIELDS:
            arr = getattr(s, name).numpy().astype(np.uint16)
            Image.fromarray(arr).save(d / f"{name}.png")
        h, w = s.resolution
        _write_kv(d / "manifest.txt", [("format_version", FORMAT_VERSION), ("scenario", s.scenario),
                                       ("seed", s.seed), ("height", h), ("width", w),
                                       ("texture", s.texture), ("period", s.period),
                                       ("crop_row", s.crop_row), ("untucked_area", s.untucked_area)])
        ids.append(sid)
    _write_kv(root / "manifest.txt", [("format_version", FORMAT_VERSION), ("count", len(ids)),
                                      ("samples", ",".join(ids))])
    return root


def _read_sample(d: Path, sid: str) -> Sample:
    mpath = d / "manifest.txt"
    if not mpath.is_file():
        raise FormatError(f"sample {sid}: missing manifest {mpath}")
    try:
        meta = read_kv(mpath)
        version = int(meta["format_version"])
        h, w = int(meta["height"]), int(meta["width"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"sample {sid}: corrupt manifest {mpath} ({exc})") from exc
    if version != FORMAT_VERSION:
        raise VersionError(f"sample {sid}: format_version {version}, expected {FORMAT_VERSION}")
    values = {}

    def need(path: Path) -> Path:
        if not path.is_file():
            raise FormatError(f"sample {sid}: missing file {path}")
        return path

    for name in TENSOR_FIELDS:
        arr = np.load(need(d / f"{name}.npy"))
        if arr.shape != (3, h, w):
            raise FormatError(f"sample {sid}: {name}.npy has shape {arr.shape}, expected {(3, h, w)}")
        values[name] = torch.from_numpy(arr.astype(np.float32))
    for name in MASK_FIELDS:
        arr = np.asarray(Image.open(need(d / f"{name}.png")))
        values[name] = torch.from_numpy((arr > 127).astype(np.float32)[None])
    for name in LABEL_FIELDS:
        arr = np.asarray(Image.open(need(d / f"{name}.png"))).astype(np.int64)
        values[name] = torch.from_numpy(arr)
    try:
        return Sample(**values, scenario=meta["scenario"], seed=int(meta["seed"]),
                      texture=meta["texture"], period=int(meta["period"]),
                      crop_row=int(meta["crop_row"]), untucked_area=int(meta["untucked_area"]))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"sample {sid}: corrupt manifest {mpath} ({exc})") from exc


def read_dataset(directory: str | Path) -> Dataset:
    root = Path(directory)
    mpath = root / "manifest.txt"
    if not mpath.is_file():
        raise FormatError(f"missing dataset manifest {mpath}")
    meta = read_kv(mpath)
    try:
        version = int(meta["format_version"])
    except (KeyError, ValueError) as exc:
        raise FormatError(f"corrupt dataset manifest {mpath} ({exc})") from exc
    if version != FORMAT_VERSION:
        raise VersionError(f"dataset format_version {version}, expected {FORMAT_VERSION}")
    ids = [s for s in meta.get("samples", "").split(",") if s]
    return Dataset([_read_sample(root / sid, sid) for sid in ids], root=root)


def make_splits(dataset: Dataset | int, mode: str, seed: int = 0) -> list[tuple[int, int]]:
    """(person, clothes) index pairs. Unpaired mode is a seeded derangement."""
    n = dataset if isinstance(dataset, int) else len(dataset)
    if n < 1:
        raise ArgumentError("dataset is empty")
    if mode == "paired":
        return [(i, i) for i in range(n)]
    if mode != "unpaired":
        raise ArgumentError(f"mode must be 'paired' or 'unpaired', got {mode!r}")
    if n == 1:
        raise ArgumentError("unpaired splits need at least 2 samples")
    rng = np.random.default_rng(seed)
    while True:
        perm = rng.permutation(n)
        if not (perm == np.arange(n)).any():
            return [(i, int(j)) for i, j in enumerate(perm)]


def mixed_dataset(counts: dict[str, int], seed: int, resolution: Sequence[int], **spec_kw) -> list[Sample]:
    """Samples for several scenarios, seeds ``seed, seed + 1, ...`` per scenario."""
    out = []
    for kind, count in counts.items():
        spec = ScenarioSpec(kind=kind, **spec_kw)
        out.extend(generate_pair(spec, seed + i, resolution) for i in range(count))
    return out
