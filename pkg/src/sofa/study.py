"""Canonical representation of studies, views, and parameter maps.

A study is one patient: six fixed anatomical views, each carrying a
pre-ablation RGB image [3,H,W], four normalized procedural parameter
channels [4,H,W] (duration, force, temperature, power), and, when ground
truth exists, a post-ablation image and a hard scar mask.

Arrays are float32 in [0,1]. A pixel is "untouched" iff all four parameter
channels are exactly zero; downstream masking relies on that convention.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image

from . import persist


class ViewId(enum.Enum):
    """The six anatomical views, in fixed serialization order."""

    ANTERIOR = "anterior"
    POSTERIOR = "posterior"
    LEFT_LATERAL = "left_lateral"
    RIGHT_LATERAL = "right_lateral"
    SUPERIOR = "superior"
    INFERIOR = "inferior"


VIEW_ORDER = tuple(ViewId)

PARAM_CHANNELS = ("duration", "force", "temperature", "power")

# Physical units: seconds, grams, degrees C, watts. The defaults are
# clinically plausible RF-ablation magnitudes; every dataset manifest
# records the ranges actually used.
DEFAULT_RANGES = {
    "duration": (0.0, 60.0),
    "force": (0.0, 40.0),
    "temperature": (20.0, 70.0),
    "power": (0.0, 50.0),
}

DEFAULT_RESOLUTION = 256


@dataclass(frozen=True)
class ParamMaps:
    """Normalized procedural parameter channels plus their physical ranges."""

    channels: np.ndarray  # [4,H,W] float32 in [0,1]
    ranges: dict = field(default_factory=lambda: dict(DEFAULT_RANGES))

    def physical(self) -> np.ndarray:
        return denormalize_params(self)


@dataclass(frozen=True)
class ViewSample:
    view: ViewId
    pre: np.ndarray  # [3,H,W] float32 in [0,1]
    params: ParamMaps
    post: Optional[np.ndarray] = None  # [3,H,W], present iff scar present
    scar: Optional[np.ndarray] = None  # [1,H,W]

    @property
    def resolution(self) -> int:
        return self.pre.shape[1]


@dataclass(frozen=True)
class Study:
    id: str
    samples: dict  # ViewId -> ViewSample, one per view
    label: Optional[int] = None  # recurrence, 1 = recurred
    meta: dict = field(default_factory=dict)

    def view(self, view: ViewId) -> ViewSample:
        return self.samples[view]

    @property
    def resolution(self) -> int:
        return next(iter(self.samples.values())).resolution

    def has_targets(self) -> bool:
        return all(s.post is not None and s.scar is not None for s in self.samples.values())


@dataclass(frozen=True)
class ValidationIssue:
    code: str
    message: str
    view: Optional[str] = None
    channel: Optional[int] = None


@dataclass(frozen=True)
class ValidationReport:
    issues: tuple

    def ok(self) -> bool:
        return not self.issues

    def summary(self) -> str:
        return "ok" if self.ok() else "; ".join(i.message for i in self.issues)


def _check_array(issues, arr, name, view, nchan, resolution):
    if arr.shape != (nchan, resolution, resolution):
        issues.append(ValidationIssue(
            "shape_mismatch",
            f"{view}/{name}: shape {tuple(arr.shape)} != {(nchan, resolution, resolution)}",
            view=view,
        ))
        return
    if not np.isfinite(arr).all():
        issues.append(ValidationIssue("non_finite", f"{view}/{name}: non-finite values", view=view))
        return
    if name == "params":
        for c in range(4):
            ch = arr[c]
            if ch.min() < 0.0 or ch.max() > 1.0:
                issues.append(ValidationIssue(
                    "out_of_range",
                    f"{view}/params channel {c} ({PARAM_CHANNELS[c]}): values outside [0,1]",
                    view=view, channel=c,
                ))
    elif arr.min() < 0.0 or arr.max() > 1.0:
        issues.append(ValidationIssue("out_of_range", f"{view}/{name}: values outside [0,1]", view=view))


def validate_study(study: Study) -> ValidationReport:
    """Collect every invariant violation; never raises.

    An empty report guarantees the study is accepted by every downstream
    module (generator, classifier, optimizer, writers).
    """
    issues: list[ValidationIssue] = []
    resolution = None
    for v in VIEW_ORDER:
        if v not in study.samples:
            issues.append(ValidationIssue("missing_view", f"missing view {v.value}", view=v.value))
    for v, sample in study.samples.items():
        if not isinstance(v, ViewId):
            issues.append(ValidationIssue("unknown_view", f"unknown view key {v!r}"))
            continue
        if sample.view is not v:
            issues.append(ValidationIssue(
                "duplicate_view", f"sample stored under {v.value} claims view {sample.view.value}",
                view=v.value,
            ))
        if resolution is None:
            resolution = sample.pre.shape[-1]
        _check_array(issues, sample.pre, "pre", v.value, 3, resolution)
        _check_array(issues, sample.params.channels, "params", v.value, 4, resolution)
        for name, (lo, hi) in sample.params.ranges.items():
            if not lo < hi:
                issues.append(ValidationIssue(
                    "bad_range", f"{v.value}/params range {name}: lo {lo} >= hi {hi}", view=v.value,
                ))
        if (sample.post is None) != (sample.scar is None):
            issues.append(ValidationIssue(
                "post_scar_pairing", f"{v.value}: post and scar must be present together", view=v.value,
            ))
        if sample.post is not None:
            _check_array(issues, sample.post, "post", v.value, 3, resolution)
        if sample.scar is not None:
            _check_array(issues, sample.scar, "scar", v.value, 1, resolution)
    if study.label is not None and study.label not in (0, 1):
        issues.append(ValidationIssue("label_invalid", f"label {study.label!r} not in {{0,1}}"))
    return ValidationReport(tuple(issues))


def normalize_params(raw: np.ndarray, ranges: dict = None) -> ParamMaps:
    """Map physical-unit maps to [0,1] channels via (x - lo) / (hi - lo), clamped.

    Pixels that are exactly zero in all four physical channels stay exactly
    zero in all normalized channels, preserving the untouched convention
    even for ranges whose lo does not map 0 to 0.
    """
    ranges = dict(ranges or DEFAULT_RANGES)
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 3 or raw.shape[0] != 4:
        raise ValueError(f"expected [4,H,W] physical maps, got shape {tuple(raw.shape)}")
    if not np.isfinite(raw).all():
        raise ValueError("physical parameter maps contain non-finite values")
    for name, (lo, hi) in ranges.items():
        if not lo < hi:
            raise ValueError(f"range {name}: lo {lo} must be < hi {hi}")
    out = np.empty_like(raw)
    for c, name in enumerate(PARAM_CHANNELS):
        lo, hi = ranges[name]
        out[c] = np.clip((raw[c] - lo) / (hi - lo), 0.0, 1.0)
    untouched = (raw == 0.0).all(axis=0)
    out[:, untouched] = 0.0
    return ParamMaps(channels=out.astype(np.float32), ranges=ranges)


def denormalize_params(p: ParamMaps) -> np.ndarray:
    """Inverse of normalize_params on the open interval: lo + x * (hi - lo)."""
    out = np.empty(p.channels.shape, dtype=np.float64)
    for c, name in enumerate(PARAM_CHANNELS):
        lo, hi = p.ranges[name]
        out[c] = lo + p.channels[c].astype(np.float64) * (hi - lo)
    return out


# -- on-disk layout ----------------------------------------------------------
#
# cohort/<study_id>/<view>/pre.png            8-bit RGB
#                          post.png           8-bit RGB (when targets exist)
#                          scar.png           8-bit gray
#                          params.f32         raw <f4, channel-major [4,H,W]
#                          params.json        shape, channel order, ranges
# cohort/<study_id>/study.json                label, meta, resolution
# cohort/manifest.json                        study list + config hash


def quantize_u8(x: np.ndarray) -> np.ndarray:
    return np.round(np.clip(x, 0.0, 1.0) * 255.0).astype(np.uint8)


def dequantize_u8(x: np.ndarray) -> np.ndarray:
    return (x.astype(np.float32) / 255.0).astype(np.float32)


def _save_png(path: Path, arr: np.ndarray) -> None:
    """arr: [3,H,W] or [1,H,W] float in [0,1]."""
    u8 = quantize_u8(arr)
    if u8.shape[0] == 3:
        img = Image.fromarray(np.transpose(u8, (1, 2, 0)), mode="RGB")
    else:
        img = Image.fromarray(u8[0], mode="L")
    img.save(path, format="PNG")


def _load_png(path: Path) -> np.ndarray:
    img = Image.open(path)
    arr = np.asarray(img)
    if arr.ndim == 2:
        arr = arr[None, :, :]
    else:
        arr = np.transpose(arr, (2, 0, 1))
    return dequantize_u8(arr)


def write_study(study: Study, cohort_dir: str | Path) -> Path:
    """Write one study directory; returns its path."""
    root = Path(cohort_dir) / study.id
    for view, sample in sorted(study.samples.items(), key=lambda kv: kv[0].value):
        vdir = root / view.value
        vdir.mkdir(parents=True, exist_ok=True)
        _save_png(vdir / "pre.png", sample.pre)
        if sample.post is not None:
            _save_png(vdir / "post.png", sample.post)
            _save_png(vdir / "scar.png", sample.scar)
        persist.write_f32(vdir / "params.f32", sample.params.channels)
        persist.write_json(vdir / "params.json", {
            "shape": [4, sample.resolution, sample.resolution],
            "channel_order": list(PARAM_CHANNELS),
            "ranges": {k: list(v) for k, v in sample.params.ranges.items()},
            "dtype": "float32-le",
        })
    persist.write_json(root / "study.json", {
        "format_version": persist.FORMAT_VERSION,
        "id": study.id,
        "label": study.label,
        "resolution": study.resolution,
        "meta": study.meta,
    })
    return root


def read_study(study_dir: str | Path) -> Study:
    root = Path(study_dir)
    info = persist.read_json(root / "study.json")
    resolution = info["resolution"]
    samples = {}
    for view in VIEW_ORDER:
        vdir = root / view.value
        if not vdir.is_dir():
            continue
        pmeta = persist.read_json(vdir / "params.json")
        ranges = {k: tuple(v) for k, v in pmeta["ranges"].items()}
        params = ParamMaps(
            channels=persist.read_f32(vdir / "params.f32", tuple(pmeta["shape"])),
            ranges=ranges,
        )
        post = scar = None
        if (vdir / "post.png").exists():
            post = _load_png(vdir / "post.png")
            scar = _load_png(vdir / "scar.png")
        samples[view] = ViewSample(
            view=view, pre=_load_png(vdir / "pre.png"), params=params, post=post, scar=scar,
        )
    label = info["label"]
    return Study(
        id=info["id"], samples=samples,
        label=None if label is None else int(label),
        meta=info.get("meta", {}),
    )


def list_cohort(cohort_dir: str | Path) -> list[str]:
    """Study ids from the manifest, falling back to directory scan."""
    root = Path(cohort_dir)
    manifest = root / "manifest.json"
    if manifest.exists():
        return [s["id"] for s in persist.read_json(manifest)["studies"]]
    return sorted(p.name for p in root.iterdir() if (p / "study.json").exists())


def read_cohort(cohort_dir: str | Path) -> list[Study]:
    root = Path(cohort_dir)
    return [read_study(root / sid) for sid in list_cohort(cohort_dir)]
