"""Recurrence prediction from frozen fusion features.

Each view is embedded as the spatial global average of the fused
bottleneck, the six embeddings are averaged into one patient vector, and a
small feed-forward head maps it to a recurrence logit. The Phase-1 model
acts purely as a feature extractor; its weights are never updated here and
the classifier checkpoint records the extractor hash it was trained
against so mismatched pairs are rejected.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoints import load_checkpoint, save_checkpoint
from .generator import FusionGenerator
from .metrics import accuracy, auc, kfold_split, mean_std
from .study import Study, VIEW_ORDER, ViewId, ViewSample


@dataclass(frozen=True)
class ClassifierConfig:
    hidden: int = 64
    lr: float = 1e-2
    weight_decay: float = 1e-3
    epochs: int = 300
    folds: int = 5
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "ClassifierConfig":
        return ClassifierConfig(**{k: v for k, v in d.items() if k in ClassifierConfig.__dataclass_fields__})


@dataclass(frozen=True)
class ViewEmbedding:
    z: np.ndarray  # [D]
    view: ViewId


class RiskClassifier(nn.Module):
    """Standardize the patient vector, then a 2-layer perceptron to one logit."""

    def __init__(self, dim: int, hidden: int = 64):
        super().__init__()
        self.dim = dim
        self.register_buffer("feat_mean", torch.zeros(dim))
        self.register_buffer("feat_std", torch.ones(dim))
        self.fc1 = nn.Linear(dim, hidden)
        self.fc2 = nn.Linear(hidden, 1)

    def set_normalizer(self, mean: np.ndarray, std: np.ndarray) -> None:
        self.feat_mean.copy_(torch.as_tensor(mean, dtype=torch.float32))
        self.feat_std.copy_(torch.as_tensor(np.maximum(std, 1e-6), dtype=torch.float32))

    def forward(self, z):
        if z.shape[-1] != self.dim:
            raise ValueError(f"expected embeddings of size {self.dim}, got {z.shape[-1]}")
        x = (z - self.feat_mean) / self.feat_std
        return self.fc2(F.silu(self.fc1(x))).squeeze(-1)


def embed_view(sample: ViewSample, gen: FusionGenerator) -> ViewEmbedding:
    """Deterministic eval-mode embedding; never mutates the extractor."""
    gen.eval()
    with torch.no_grad():
        pre = torch.from_numpy(sample.pre).float()
        feat = torch.from_numpy(sample.params.channels).float()
        z = gen.embed(pre, feat)[0].numpy()
    return ViewEmbedding(z=z, view=sample.view)


def aggregate_views(embeddings: list) -> np.ndarray:
    """Arithmetic mean over the six views, accumulated in canonical view
    order so the result is bitwise independent of input order."""
    by_view = {e.view: e for e in embeddings}
    missing = [v.value for v in VIEW_ORDER if v not in by_view]
    if missing:
        raise ValueError(f"missing views: {', '.join(missing)}")
    if len(embeddings) != len(VIEW_ORDER):
        raise ValueError("duplicate view embeddings")
    stacked = np.stack([by_view[v].z for v in VIEW_ORDER])
    return stacked.mean(axis=0)


def embed_study(study: Study, gen: FusionGenerator) -> np.ndarray:
    return aggregate_views([embed_view(s, gen) for s in study.samples.values()])


def predict_risk(z_bar: np.ndarray, clf: RiskClassifier) -> float:
    """Recurrence logit for one patient vector; apply a sigmoid for probability."""
    clf.eval()
    with torch.no_grad():
        return float(clf(torch.as_tensor(z_bar, dtype=torch.float32)))


def bce_loss(logit, y) -> torch.Tensor:
    """Stable binary cross-entropy on a logit: softplus(logit) - y * logit."""
    if not torch.is_tensor(logit):
        logit = torch.tensor(float(logit), dtype=torch.float64)
    y = torch.as_tensor(y, dtype=logit.dtype)
    return F.softplus(logit) - y * logit


def _fit_mlp(x: np.ndarray, y: np.ndarray, cfg: ClassifierConfig, seed: int) -> RiskClassifier:
    torch.manual_seed(seed)
    clf = RiskClassifier(x.shape[1], cfg.hidden)
    clf.set_normalizer(x.mean(axis=0), x.std(axis=0))
    xt = torch.from_numpy(x).float()
    yt = torch.from_numpy(y).float()
    opt = torch.optim.Adam(clf.parameters(), lr=cfg.lr, weight_decay=cfg.weight_decay)
    for _ in range(cfg.epochs):
        logits = clf(xt)
        loss = F.binary_cross_entropy_with_logits(logits, yt)
        opt.zero_grad()
        loss.backward()
        opt.step()
    clf.eval()
    return clf


def _scores(clf: RiskClassifier, x: np.ndarray) -> np.ndarray:
    with torch.no_grad():
        return torch.sigmoid(clf(torch.from_numpy(x).float())).numpy()


def train_phase2(studies: list, gen: FusionGenerator, cfg: ClassifierConfig,
                 log=None) -> tuple:
    """Cross-validated training on frozen embeddings.

    Returns (final classifier trained on all labeled studies, report with
    per-fold AUC/accuracy). Rejects unlabeled studies.
    """
    unlabeled = [s.id for s in studies if s.label is None]
    if unlabeled:
        raise ValueError(f"unlabeled studies in training cohort: {', '.join(unlabeled[:5])}")
    if len(studies) < cfg.folds:
        raise ValueError(f"cohort of {len(studies)} too small for {cfg.folds}-fold CV")
    ids = [s.id for s in studies]
    x = np.stack([embed_study(s, gen) for s in studies])
    y = np.array([s.label for s in studies], dtype=np.float64)
    index = {sid: i for i, sid in enumerate(ids)}

    split = kfold_split(ids, k=cfg.folds, seed=cfg.seed)
    aucs, accs = [], []
    for fold in range(cfg.folds):
        tr = [index[i] for i in split.train_ids(fold)]
        te = [index[i] for i in split.test_ids(fold)]
        clf = _fit_mlp(x[tr], y[tr], cfg, seed=cfg.seed * 1000 + fold)
        scores = _scores(clf, x[te])
        fold_auc = auc(scores, y[te].astype(int))
        aucs.append(fold_auc if fold_auc is not None else float("nan"))
        accs.append(accuracy(scores, y[te].astype(int)))
        if log:
            log(f"fold {fold + 1}/{cfg.folds} auc {aucs[-1]:.3f} acc {accs[-1]:.3f}")

    final = _fit_mlp(x, y, cfg, seed=cfg.seed)
    with torch.no_grad():
        final_loss = float(F.binary_cross_entropy_with_logits(
            final(torch.from_numpy(x).float()), torch.from_numpy(y).float()))
    report = {
        "auc": mean_std(aucs),
        "accuracy": mean_std(accs),
        "folds": cfg.folds,
        "final_train_loss": final_loss,
        "n_studies": len(studies),
    }
    return final, report


def save_classifier(clf: RiskClassifier, cfg: ClassifierConfig, out_dir,
                    extractor_hash: str, report: dict) -> dict:
    config = dict(cfg.to_dict(), dim=clf.dim)
    return save_checkpoint(out_dir, "classifier", clf, config,
                           {"extractor_hash": extractor_hash, "cv_report": report,
                            "seed": cfg.seed})


def load_classifier(ckpt_dir) -> tuple:
    def build(config):
        return RiskClassifier(config["dim"], config["hidden"])
    return load_checkpoint(ckpt_dir, build, "classifier")
