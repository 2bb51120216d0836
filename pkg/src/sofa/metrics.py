"""Image-quality and classification metrics, fold splitting, and reports.

Conventions (chosen once, applied everywhere): metrics are computed per
image and then averaged; PSNR of identical images is capped at 99 dB;
empty-vs-empty Dice is 1; AUC uses the rank (Mann-Whitney) form with ties
counted as 0.5.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.stats import rankdata

PSNR_CAP_DB = 99.0


def mse(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def psnr_from_mse(err: float, max_val: float = 1.0) -> float:
    if err <= 0.0:
        return PSNR_CAP_DB
    return min(10.0 * math.log10(max_val * max_val / err), PSNR_CAP_DB)


def psnr(a: np.ndarray, b: np.ndarray, max_val: float = 1.0) -> float:
    return psnr_from_mse(mse(a, b), max_val)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    g /= g.sum()
    return np.outer(g, g)


def ssim(a: np.ndarray, b: np.ndarray, max_val: float = 1.0,
         win_size: int = 11, sigma: float = 1.5,
         k1: float = 0.01, k2: float = 0.03) -> float:
    """Structural similarity, 11x11 Gaussian windows, channel-averaged.

    The map is evaluated on the valid interior (no padding) and averaged.
    Inputs are [C,H,W] or [H,W] in [0, max_val].
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a = a[None]
        b = b[None]
    if min(a.shape[1], a.shape[2]) < win_size:
        raise ValueError(f"images smaller than the {win_size}x{win_size} window")
    window = _gaussian_window(win_size, sigma)
    c1 = (k1 * max_val) ** 2
    c2 = (k2 * max_val) ** 2
    half = win_size // 2

    def _filt(x):
        full = ndimage.correlate(x, window, mode="constant")
        return full[half:x.shape[0] - half, half:x.shape[1] - half]

    scores = []
    for c in range(a.shape[0]):
        x, y = a[c], b[c]
        mu_x = _filt(x)
        mu_y = _filt(y)
        xx = _filt(x * x) - mu_x * mu_x
        yy = _filt(y * y) - mu_y * mu_y
        xy = _filt(x * y) - mu_x * mu_y
        num = (2 * mu_x * mu_y + c1) * (2 * xy + c2)
        den = (mu_x * mu_x + mu_y * mu_y + c1) * (xx + yy + c2)
        scores.append(np.mean(num / den))
    return float(np.mean(scores))


def dice_score(pred_mask: np.ndarray, gt_mask: np.ndarray, threshold: float = 0.5) -> float:
    """Hard Dice 2|A∩B| / (|A|+|B|) after thresholding; empty-vs-empty is 1."""
    a = np.asarray(pred_mask, dtype=np.float64) > threshold
    b = np.asarray(gt_mask, dtype=np.float64) > threshold
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    total = a.sum() + b.sum()
    if total == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / total)


def auc(scores: Sequence[float], labels: Sequence[int]) -> Optional[float]:
    """Rank-based AUC with ties counted 0.5; None when only one class is present."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks on ties
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = 0.5) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    return float(np.mean((scores > threshold).astype(np.int64) == labels))


@dataclass(frozen=True)
class FoldSplit:
    folds: tuple  # tuple of tuples of study ids
    k: int
    seed: int

    def train_ids(self, fold: int) -> list:
        return [i for f in range(self.k) if f != fold for i in self.folds[f]]

    def test_ids(self, fold: int) -> list:
        return list(self.folds[fold])


def kfold_split(ids: Sequence[str], k: int = 5, seed: int = 0) -> FoldSplit:
    """Seeded shuffle then contiguous chunking; fold sizes differ by at most 1."""
    ids = list(ids)
    if k > len(ids):
        raise ValueError(f"k={k} exceeds cohort size {len(ids)}")
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xF01D]))
    order = rng.permutation(len(ids))
    shuffled = [ids[i] for i in order]
    folds = [tuple(chunk) for chunk in np.array_split(np.array(shuffled, dtype=object), k)]
    return FoldSplit(folds=tuple(tuple(str(x) for x in f) for f in folds), k=k, seed=seed)


def percent_reduction(before: float, after: float) -> float:
    """100 * (before - after) / before; the Phase-3 headline arithmetic."""
    if before == 0:
        raise ValueError("undefined reduction from a zero baseline")
    return 100.0 * (before - after) / before


def mean_std(values: Sequence[float]) -> dict:
    """Summary over folds; NaN entries (undefined metrics) are skipped."""
    arr = np.asarray(values, dtype=np.float64)
    defined = arr[~np.isnan(arr)]
    return {
        "mean": float(defined.mean()) if defined.size else float("nan"),
        "std": float(defined.std(ddof=0)) if defined.size else float("nan"),
        "per_fold": [float(v) for v in arr],
    }


@dataclass
class EvalReport:
    phase: int
    metrics: dict = field(default_factory=dict)  # model -> metric -> mean_std dict
    config_hash: Optional[str] = None
    cohort_hash: Optional[str] = None
    extra: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "phase": self.phase,
            "metrics": self.metrics,
            "config_hash": self.config_hash,
            "cohort_hash": self.cohort_hash,
            "extra": self.extra,
        }
