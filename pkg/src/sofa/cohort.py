"""Procedural cohort generator with a known ablation-physics ground truth.

Stands in for private clinical data: renders six chamber views per study,
plans encirclement lesion sets with optional gaps, converts delivered
parameters into scar through an explicit dose rule, and draws recurrence
labels from a logistic model of lesion-line coverage. Because every step
is a pure function of (seed, config), each learning phase can be verified
against recoverable ground truth instead of eyeballed.

Dose rule, per pixel (normalized channels):

    dose  = duration^a_dur * power^a_pow * force^a_force * gate(temperature)
    gate  = 1 inside (t_lo, t_hi), linear ramp of width 0.05 outside
    dose *= susceptibility(pre)          # brighter (fibrotic) tissue scars easier
    scar  = gaussian_blur(dose, blur_sigma) >= threshold      (inclusive)
    post  = 0.2 * pre + 0.8 * scar_color inside scar, else pre

The susceptibility factor is an affine map of pre-image luminance. It makes
scar formation depend on tissue visible only in the pre-image, so a model
fusing both modalities holds a real information advantage over one that
sees parameters alone.
"""

from __future__ import annotations

import shutil
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from . import persist
from .study import (
    DEFAULT_RANGES, PARAM_CHANNELS, VIEW_ORDER, ParamMaps, Study, ViewId, ViewSample,
    dequantize_u8, quantize_u8, write_study,
)

SCAR_COLOR = (0.93, 0.87, 0.70)  # bright enhancement tone
SCAR_BLEND = 0.8

# rng stream salts, one per operation
_SALT_ATRIUM = 0xA7
_SALT_LESION = 0x1E
_SALT_LABEL = 0x1A


@dataclass(frozen=True)
class DoseModelConfig:
    blur_sigma: float = 1.5
    threshold: float = 0.15
    a_duration: float = 1.0
    a_power: float = 1.0
    a_force: float = 0.5
    temp_gate: tuple = (0.4, 0.95)
    susc_range: tuple = (0.7, 1.3)  # susceptibility at luminance 0 and 1

    def validate(self) -> None:
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0,1)")
        if min(self.a_duration, self.a_power, self.a_force) <= 0:
            raise ValueError("dose exponents must be positive")
        t_lo, t_hi = self.temp_gate
        if not 0.0 <= t_lo < t_hi <= 1.0:
            raise ValueError("temp_gate must satisfy 0 <= lo < hi <= 1")


@dataclass(frozen=True)
class LabelModelConfig:
    beta0: float = -2.0
    beta1: float = 4.0  # > 0: more gap, more risk

    def validate(self) -> None:
        if self.beta1 < 0:
            raise ValueError("beta1 must be nonnegative")


@dataclass(frozen=True)
class LesionConfig:
    ribbon_width: int = 5  # pixels
    rings_per_view: int = 2
    ring_radius_frac: tuple = (0.09, 0.13)  # of resolution
    max_gaps_per_path: int = 2
    gap_len_range: tuple = (0.06, 0.18)  # fraction of path
    duration_s: tuple = (30.0, 50.0)
    force_g: tuple = (12.0, 30.0)
    temperature_c: tuple = (45.0, 62.0)
    power_w: tuple = (25.0, 40.0)
    jitter: float = 0.08  # relative along-path modulation


@dataclass(frozen=True)
class SynthConfig:
    resolution: int = 256
    strategy: str = "pvi_with_gaps"  # or "pvi_complete"
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))
    dose: DoseModelConfig = field(default_factory=DoseModelConfig)
    label: LabelModelConfig = field(default_factory=LabelModelConfig)
    lesions: LesionConfig = field(default_factory=LesionConfig)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ranges"] = {k: list(v) for k, v in self.ranges.items()}
        d["dose"]["temp_gate"] = list(self.dose.temp_gate)
        d["dose"]["susc_range"] = list(self.dose.susc_range)
        return d


@dataclass(frozen=True)
class PathPlan:
    points: np.ndarray  # [n,2] float (row, col)
    gap_spans: tuple  # ((start_frac, end_frac), ...)
    params_physical: np.ndarray  # [n,4] per-point values

    def gap_point_mask(self) -> np.ndarray:
        n = len(self.points)
        frac = np.arange(n) / n
        in_gap = np.zeros(n, dtype=bool)
        for s, e in self.gap_spans:
            in_gap |= (frac >= s) & (frac < e)
        return in_gap


@dataclass(frozen=True)
class LesionPlan:
    paths: dict  # ViewId -> list[PathPlan]
    severity: float = 0.0  # study-level gap burden latent in [0,1]

    def planned_gap_fraction(self) -> float:
        total = sum(len(p.points) for ps in self.paths.values() for p in ps)
        gapped = sum(int(p.gap_point_mask().sum()) for ps in self.paths.values() for p in ps)
        return gapped / total if total else 0.0


def _rng(*keys: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(list(keys)))


def _smooth_noise(rng, shape, sigma):
    return ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="reflect")


def _silhouette(rng, res: int, area_bounds=(0.24, 0.62)) -> np.ndarray:
    """Smooth star-convex chamber outline with area fraction inside bounds."""
    yy, xx = np.mgrid[0:res, 0:res]
    for _ in range(64):
        cy = res * rng.uniform(0.47, 0.53)
        cx = res * rng.uniform(0.47, 0.53)
        r0 = res * rng.uniform(0.30, 0.40)
        sy = rng.uniform(0.9, 1.1)
        sx = rng.uniform(0.9, 1.1)
        amps = rng.uniform(-0.05, 0.05, size=4) / np.arange(1, 5)
        phases = rng.uniform(0, 2 * np.pi, size=4)
        dy = (yy - cy) / sy
        dx = (xx - cx) / sx
        radius = np.hypot(dy, dx)
        angle = np.arctan2(dy, dx)
        boundary = r0 * (1.0 + sum(a * np.cos((k + 1) * angle + p)
                                   for k, (a, p) in enumerate(zip(amps, phases))))
        mask = radius <= boundary
        frac = mask.mean()
        if area_bounds[0] <= frac <= area_bounds[1]:
            return mask
    raise RuntimeError("silhouette sampling failed to meet area bounds")


def synth_atrium(seed: int, cfg: SynthConfig) -> dict:
    """Six deterministic textured chamber views; background exactly zero."""
    res = cfg.resolution
    views = {}
    base = np.array([0.46, 0.33, 0.40])  # tissue tone, per RGB channel
    for vi, view in enumerate(VIEW_ORDER):
        rng = _rng(seed, vi, _SALT_ATRIUM)
        mask = _silhouette(rng, res)
        texture = 1.0 + 0.22 * np.tanh(_smooth_noise(rng, (res, res), max(2.0, res / 42.0)) * 1.5)
        speckle_field = _smooth_noise(rng, (res, res), max(1.0, res / 120.0))
        speckle = np.clip(speckle_field - np.quantile(speckle_field, 0.9), 0.0, None)
        if speckle.max() > 0:
            speckle = speckle / speckle.max()
        img = np.empty((3, res, res), dtype=np.float64)
        for c in range(3):
            chan = base[c] * texture + (0.4 - 0.05 * c) * speckle
            img[c] = np.clip(chan, 0.02, 1.0)
        img *= mask[None, :, :]
        views[view] = img.astype(np.float32)
    return views


def _eligible_centers(sil: np.ndarray, clearance: float) -> np.ndarray:
    dist = ndimage.distance_transform_edt(sil)
    rows, cols = np.nonzero(dist >= clearance)
    return np.stack([rows, cols], axis=1)


def _sample_gap_spans(rng, max_gaps: int, len_range: tuple, severity: float) -> tuple:
    """Gap spans scaled by the study-level severity latent.

    Severity couples the paths of one study so that study-level gap burden
    varies widely across a cohort instead of averaging out over paths.
    """
    if severity < 0.05:
        return ()
    n_gaps = 1 + int(rng.random() < min(severity * 1.3, 0.95)) \
        + int(rng.random() < max(severity - 0.5, 0.0) * 1.2)
    n_gaps = min(n_gaps, max_gaps)
    spans = []
    for _ in range(n_gaps):
        length = rng.uniform(*len_range) * (0.35 + 0.65 * severity)
        for _attempt in range(10):
            start = rng.uniform(0.0, 1.0 - length)
            end = start + length
            if all(end + 0.02 < s or start > e + 0.02 for s, e in spans):
                spans.append((start, end))
                break
    return tuple(sorted(spans))


def _plan_view_paths(rng, sil: np.ndarray, cfg: SynthConfig, with_gaps: bool,
                     severity: float) -> list:
    res = sil.shape[0]
    lc = cfg.lesions
    paths = []
    half = res / 2.0
    for side in (-1, +1):  # left / right encirclement
        ring_r = res * rng.uniform(*lc.ring_radius_frac)
        placed = False
        for _shrink in range(6):
            clearance = ring_r * 1.15 + lc.ribbon_width
            centers = _eligible_centers(sil, clearance)
            if len(centers) > 0:
                on_side = centers[:, 1] * (1 if side > 0 else -1) >= half * (1 if side > 0 else -1)
                pool = centers[on_side] if on_side.any() else centers
                cy, cx = pool[int(rng.integers(0, len(pool)))]
                placed = True
                break
            ring_r *= 0.8
        if not placed:
            raise RuntimeError("no admissible lesion ring placement in silhouette")
        ry = ring_r * rng.uniform(0.85, 1.15)
        rx = ring_r * rng.uniform(0.85, 1.15)
        n_pts = max(24, int(np.ceil(2 * np.pi * max(rx, ry) * 2)))
        theta = 2 * np.pi * np.arange(n_pts) / n_pts
        points = np.stack([cy + ry * np.sin(theta), cx + rx * np.cos(theta)], axis=1)
        points = np.clip(points, 0, res - 1)

        spans = (_sample_gap_spans(rng, lc.max_gaps_per_path, lc.gap_len_range, severity)
                 if with_gaps else ())

        frac = np.arange(n_pts) / n_pts
        phys = np.empty((n_pts, 4), dtype=np.float64)
        for ci, draw in enumerate((lc.duration_s, lc.force_g, lc.temperature_c, lc.power_w)):
            base = rng.uniform(*draw)
            phase = rng.uniform(0, 1)
            mod = base * (1.0 + lc.jitter * np.sin(2 * np.pi * (frac + phase)))
            phys[:, ci] = np.clip(mod, draw[0], draw[1])
        paths.append(PathPlan(points=points, gap_spans=spans, params_physical=phys))
    return paths


def _rasterize(paths: list, cfg: SynthConfig) -> ParamMaps:
    """Stamp per-point parameters on a ribbon around each path, skipping gaps.

    Overlapping stamps combine by per-channel max so the result is
    independent of stamp order.
    """
    res = cfg.resolution
    radius = cfg.lesions.ribbon_width / 2.0
    r_int = int(np.ceil(radius))
    norm = np.zeros((4, res, res), dtype=np.float64)
    offsets = [(dy, dx) for dy in range(-r_int, r_int + 1) for dx in range(-r_int, r_int + 1)
               if dy * dy + dx * dx <= radius * radius]
    lo = np.array([cfg.ranges[name][0] for name in PARAM_CHANNELS])
    hi = np.array([cfg.ranges[name][1] for name in PARAM_CHANNELS])
    for path in paths:
        in_gap = path.gap_point_mask()
        pts = np.round(path.points).astype(int)
        vals = (path.params_physical - lo) / (hi - lo)
        for j in range(len(pts)):
            if in_gap[j]:
                continue
            py, px = pts[j]
            for dy, dx in offsets:
                y, x = py + dy, px + dx
                if 0 <= y < res and 0 <= x < res:
                    np.maximum(norm[:, y, x], vals[j], out=norm[:, y, x])
    clipped = np.clip(norm, 0.0, 1.0).astype(np.float32)
    return ParamMaps(channels=clipped, ranges=dict(cfg.ranges))


def plan_lesions(seed: int, cfg: SynthConfig, strategy: str,
                 pre_views: dict) -> tuple:
    """Plan encirclement paths per view and rasterize their parameter maps.

    Returns (LesionPlan, dict ViewId -> ParamMaps).
    """
    if strategy not in ("pvi_complete", "pvi_with_gaps"):
        raise ValueError(f"unknown strategy {strategy!r}")
    with_gaps = strategy == "pvi_with_gaps"
    # study-level gap severity; U-shaped so cohorts span near-complete
    # encirclement through badly gapped lines
    severity = float(_rng(seed, _SALT_LESION).beta(0.25, 0.25)) if with_gaps else 0.0
    paths = {}
    maps = {}
    for vi, view in enumerate(VIEW_ORDER):
        rng = _rng(seed, vi, _SALT_LESION)
        sil = (pre_views[view] > 0).any(axis=0)
        view_paths = _plan_view_paths(rng, sil, cfg, with_gaps, severity)
        paths[view] = view_paths
        maps[view] = _rasterize(view_paths, cfg)
    return LesionPlan(paths=paths, severity=severity), maps


def temp_gate(t: np.ndarray, t_lo: float, t_hi: float, ramp: float = 0.05) -> np.ndarray:
    """1 inside (t_lo, t_hi); linear ramp of the given width outside."""
    rising = (t - (t_lo - ramp)) / ramp
    falling = ((t_hi + ramp) - t) / ramp
    return np.clip(np.minimum(rising, falling), 0.0, 1.0)


def susceptibility(pre: np.ndarray, dm: DoseModelConfig) -> np.ndarray:
    lum = pre.astype(np.float64).mean(axis=0)
    s_lo, s_hi = dm.susc_range
    return s_lo + (s_hi - s_lo) * lum


def apply_dose_model(pre: np.ndarray, params: ParamMaps,
                     dm: DoseModelConfig = DoseModelConfig()) -> tuple:
    """Oracle tissue response; see module docstring for the exact rule.

    Returns (post [3,H,W] float32, scar [1,H,W] float32 hard mask).
    Deterministic; scar threshold comparison is inclusive.
    """
    dm.validate()
    ch = params.channels.astype(np.float64)
    if pre.shape[1:] != ch.shape[1:]:
        raise ValueError(f"pre {pre.shape} and params {ch.shape} disagree on H,W")
    dur, force, temp, power = ch[0], ch[1], ch[2], ch[3]
    dose = (dur ** dm.a_duration) * (power ** dm.a_power) * (force ** dm.a_force)
    dose *= temp_gate(temp, *dm.temp_gate)
    dose *= susceptibility(pre, dm)
    blurred = ndimage.gaussian_filter(dose, dm.blur_sigma, mode="reflect", truncate=4.0)
    scar = (blurred >= dm.threshold)
    color = np.array(SCAR_COLOR, dtype=np.float64).reshape(3, 1, 1)
    post = np.where(scar[None, :, :],
                    (1.0 - SCAR_BLEND) * pre.astype(np.float64) + SCAR_BLEND * color,
                    pre.astype(np.float64))
    return post.astype(np.float32), scar[None, :, :].astype(np.float32)


def logistic(x: float) -> float:
    return 1.0 / (1.0 + np.exp(-x))


def coverage_gap_fraction(scars: dict, plan: LesionPlan) -> float:
    """Fraction of planned path pixels (all views, gaps included) without scar."""
    total = 0
    uncovered = 0
    for view, paths in plan.paths.items():
        scar = scars[view][0]
        res = scar.shape[0]
        for path in paths:
            pts = np.round(path.points).astype(int)
            pts = np.unique(np.clip(pts, 0, res - 1), axis=0)
            total += len(pts)
            uncovered += int((scar[pts[:, 0], pts[:, 1]] < 0.5).sum())
    return uncovered / total if total else 0.0


def label_recurrence(scars: dict, plan: LesionPlan, lm: LabelModelConfig,
                     seed: int) -> tuple:
    """Draw the recurrence label: p = logistic(b0 + b1 * gap_frac), y ~ Bernoulli(p).

    Returns (y, p, gap_frac).
    """
    lm.validate()
    gap_frac = coverage_gap_fraction(scars, plan)
    p = float(logistic(lm.beta0 + lm.beta1 * gap_frac))
    rng = _rng(seed, _SALT_LABEL)
    y = int(rng.random() < p)
    return y, p, gap_frac


def relabel_study(study: Study, lm: LabelModelConfig, salt: Optional[int] = None) -> Study:
    """Redraw the label from stored coverage metadata under another label model.

    Without a salt this uses the same seed stream as label_recurrence, so
    relabeling with the original model reproduces the original label; a salt
    yields an independent Bernoulli draw (for repeated null experiments).
    """
    lm.validate()
    gap_frac = float(study.meta["gap_frac"])
    p = float(logistic(lm.beta0 + lm.beta1 * gap_frac))
    keys = [study.meta["seed"], _SALT_LABEL] if salt is None else \
        [study.meta["seed"], _SALT_LABEL, salt]
    y = int(_rng(*keys).random() < p)
    return Study(id=study.id, samples=study.samples, label=y, meta=dict(study.meta, p=p))


def _plan_meta(plan: LesionPlan) -> dict:
    out = {}
    for view, paths in plan.paths.items():
        out[view.value] = [{
            "points": [[round(float(r), 2), round(float(c), 2)] for r, c in p.points],
            "gap_spans": [[float(s), float(e)] for s, e in p.gap_spans],
        } for p in paths]
    return out


def synth_study(study_seed: int, cfg: SynthConfig, study_id: str,
                label_model: Optional[LabelModelConfig] = None) -> Study:
    """Generate one fully-labeled study (pure function of arguments)."""
    lm = label_model if label_model is not None else cfg.label
    pre_raw = synth_atrium(study_seed, cfg)
    # train/eval consumers read quantized PNGs; run the physics on exactly
    # those values so the on-disk oracle relation holds bit-for-bit
    pre_q = {v: dequantize_u8(quantize_u8(img)) for v, img in pre_raw.items()}
    plan, maps = plan_lesions(study_seed, cfg, cfg.strategy, pre_q)
    samples = {}
    scars = {}
    for view in VIEW_ORDER:
        post, scar = apply_dose_model(pre_q[view], maps[view], cfg.dose)
        scars[view] = scar
        samples[view] = ViewSample(view=view, pre=pre_q[view], params=maps[view],
                                   post=dequantize_u8(quantize_u8(post)), scar=scar)
    y, p, gap_frac = label_recurrence(scars, plan, lm, study_seed)
    meta = {
        "seed": study_seed,
        "strategy": cfg.strategy,
        "p": p,
        "gap_frac": gap_frac,
        "planned_gap_frac": plan.planned_gap_fraction(),
        "gap_severity": plan.severity,
        "plan": _plan_meta(plan),
    }
    return Study(id=study_id, samples=samples, label=y, meta=meta)


def generate_cohort(n: int, seed: int, cfg: SynthConfig, out_dir: str | Path,
                    label_model: Optional[LabelModelConfig] = None) -> dict:
    """Write n studies plus manifest.json; regeneration is bit-identical.

    A study that fails to generate is cleaned up and omitted from the
    manifest rather than left half-written.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cfg_dict = cfg.to_dict()
    entries = []
    for i in range(n):
        study_id = f"study_{i:04d}"
        study_seed = int(np.random.SeedSequence([seed, i]).generate_state(1)[0])
        try:
            study = synth_study(study_seed, cfg, study_id, label_model)
            path = write_study(study, out)
            entries.append({"id": study_id, "hash": persist.sha256_tree(path)})
        except Exception:
            shutil.rmtree(out / study_id, ignore_errors=True)
            raise
    manifest = {
        "format_version": persist.FORMAT_VERSION,
        "n": len(entries),
        "seed": seed,
        "config": cfg_dict,
        "config_hash": persist.config_hash(cfg_dict),
        "studies": entries,
    }
    persist.write_json(out / "manifest.json", manifest)
    return manifest
