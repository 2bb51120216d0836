"""Comparison-panel rendering.

Phase-1 panels show one row per view with columns
[Pre, Time, Force, Temp, Power, Pred, Post]; Phase-3 panels show the rows
[original, optimized, signed diff] for the four parameter channels, with a
diverging palette on the diff row (red: original > optimized; blue:
original < optimized; white: unchanged). Rendering uses PIL only, so a
panel regenerated from identical inputs is byte-identical.
"""

from __future__ import annotations

from pathlib import Path
from typing import Optional

import numpy as np
from PIL import Image, ImageDraw

from .study import PARAM_CHANNELS, Study, VIEW_ORDER, quantize_u8

_LABEL_H = 14
_PAD = 2
_PHASE1_COLUMNS = ("Pre", "Time", "Force", "Temp", "Power", "Pred", "Post")


def _tile_rgb(arr: Optional[np.ndarray], size: int) -> np.ndarray:
    """[3,H,W] or [1,H,W] in [0,1] -> [size,size,3] uint8; None -> gray blank."""
    if arr is None:
        return np.full((size, size, 3), 64, dtype=np.uint8)
    a = np.asarray(arr)
    if a.ndim == 2:
        a = a[None]
    if a.shape[0] == 1:
        a = np.repeat(a, 3, axis=0)
    u8 = quantize_u8(a).transpose(1, 2, 0)
    if u8.shape[0] != size:
        img = Image.fromarray(u8).resize((size, size), resample=Image.NEAREST)
        u8 = np.asarray(img)
    return u8


def diverging_rgb(diff: np.ndarray, scale: Optional[float] = None) -> np.ndarray:
    """Signed map -> [H,W,3] uint8. Negative red, positive blue, zero white."""
    d = np.asarray(diff, dtype=np.float64)
    if d.ndim == 3:
        d = d[0]
    if scale is None:
        scale = float(np.abs(d).max())
    v = d / scale if scale > 0 else np.zeros_like(d)
    v = np.clip(v, -1.0, 1.0)
    rgb = np.ones((*v.shape, 3))
    neg = v < 0
    pos = v > 0
    rgb[neg, 1] = 1.0 + v[neg]
    rgb[neg, 2] = 1.0 + v[neg]
    rgb[pos, 0] = 1.0 - v[pos]
    rgb[pos, 1] = 1.0 - v[pos]
    return np.round(rgb * 255.0).astype(np.uint8)


def _grid(tiles: list, labels_top: tuple, labels_left: tuple, tile_size: int) -> Image.Image:
    rows = len(labels_left)
    cols = len(labels_top)
    width = _LABEL_H * 4 + cols * (tile_size + _PAD)
    height = _LABEL_H + rows * (tile_size + _PAD)
    canvas = Image.new("RGB", (width, height), (24, 24, 24))
    draw = ImageDraw.Draw(canvas)
    for c, label in enumerate(labels_top):
        draw.text((_LABEL_H * 4 + c * (tile_size + _PAD) + 2, 2), label, fill=(220, 220, 220))
    for r, label in enumerate(labels_left):
        draw.text((2, _LABEL_H + r * (tile_size + _PAD) + 2), label, fill=(220, 220, 220))
    for r in range(rows):
        for c in range(cols):
            tile, text = tiles[r * cols + c]
            x = _LABEL_H * 4 + c * (tile_size + _PAD)
            y = _LABEL_H + r * (tile_size + _PAD)
            canvas.paste(Image.fromarray(tile), (x, y))
            if text:
                draw.text((x + 3, y + 3), text, fill=(255, 200, 80))
    return canvas


def _tile_size(resolution: int) -> int:
    return resolution * max(1, 64 // resolution)


def phase1_panel(study: Study, predictions: Optional[dict], out_path: str | Path) -> Path:
    """6x7 grid; missing predictions or targets become labeled blanks."""
    size = _tile_size(study.resolution)
    tiles = []
    for view in VIEW_ORDER:
        sample = study.samples[view]
        tiles.append((_tile_rgb(sample.pre, size), ""))
        for c in range(4):
            tiles.append((_tile_rgb(sample.params.channels[c:c + 1], size), ""))
        if predictions is not None and view in predictions:
            tiles.append((_tile_rgb(predictions[view][0], size), ""))
        else:
            tiles.append((_tile_rgb(None, size), "no pred"))
        if sample.post is not None:
            tiles.append((_tile_rgb(sample.post, size), ""))
        else:
            tiles.append((_tile_rgb(None, size), "no post"))
    img = _grid(tiles, _PHASE1_COLUMNS, tuple(v.value for v in VIEW_ORDER), size)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    img.save(out, format="PNG")
    return out


def phase3_panel(params0: np.ndarray, params_star: np.ndarray,
                 out_path: str | Path, resolution: int) -> Path:
    """Rows [original, optimized, diff] by parameter channel, one view."""
    size = _tile_size(resolution)
    diff = params_star - params0
    scale = float(np.abs(diff).max())
    tiles = []
    for row_arr, diverge in ((params0, False), (params_star, False), (diff, True)):
        for c in range(4):
            if diverge:
                tiles.append((_upscale(diverging_rgb(row_arr[c], scale or None), size), ""))
            else:
                tiles.append((_tile_rgb(row_arr[c:c + 1], size), ""))
    img = _grid(tiles, tuple(n.capitalize() for n in PARAM_CHANNELS),
                ("original", "optimized", "diff"), size)
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    img.save(out, format="PNG")
    return out


def _upscale(rgb: np.ndarray, size: int) -> np.ndarray:
    if rgb.shape[0] == size:
        return rgb
    return np.asarray(Image.fromarray(rgb).resize((size, size), resample=Image.NEAREST))


def emit_panels(study: Study, outputs: dict, out_dir: str | Path) -> list:
    """Render every panel supported by the available outputs.

    outputs keys: "predictions" (view -> (post_hat, scar_hat)) for the
    Phase-1 panel; "params_star" ([V,4,H,W]) for per-view Phase-3 panels.
    """
    out = Path(out_dir)
    written = []
    written.append(phase1_panel(study, outputs.get("predictions"), out / f"{study.id}_phase1.png"))
    if "params_star" in outputs:
        params_star = outputs["params_star"]
        for vi, view in enumerate(VIEW_ORDER):
            params0 = study.samples[view].params.channels
            written.append(phase3_panel(
                params0, params_star[vi],
                out / f"{study.id}_phase3_{view.value}.png", study.resolution))
    return written
