"""Cohort-level evaluation for the three phases.

Phase 1 compares the fusion generator against two comparators: copying the
pre-image (with an empty scar prediction) and a generator trained on
parameters alone. Phase 2 runs fold-wise training/evaluation on frozen
embeddings. Phase 3 aggregates per-study risk before and after parameter
optimization. Figures of merit are computed per image, then averaged per
fold, then summarized mean +/- std across folds.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from .classifier import ClassifierConfig, _fit_mlp, _scores, embed_study
from .generator import FusionGenerator, predict_study
from .metrics import (EvalReport, accuracy, auc, dice_score, kfold_split,
                      mean_std, mse, percent_reduction, psnr, ssim)
from .optimizer import FrozenStack, OptimizerConfig, optimize_params
from .study import Study


def _phase1_image_metrics(pred_post, gt_post, pred_scar, gt_scar) -> dict:
    return {
        "mse": mse(pred_post, gt_post),
        "psnr": psnr(pred_post, gt_post),
        "ssim": ssim(pred_post, gt_post),
        "dice": dice_score(pred_scar, gt_scar),
    }


def evaluate_phase1(studies: list, gen: FusionGenerator,
                    params_only_gen: Optional[FusionGenerator] = None,
                    folds: int = 5, seed: int = 0) -> EvalReport:
    """Image-synthesis metrics per model, per-image averaged within folds."""
    per_study: dict = {}
    for study in studies:
        if not study.has_targets():
            raise ValueError(f"{study.id}: evaluation requires post/scar targets")
        rows: dict = {"sofa": [], "copy_pre": []}
        preds = predict_study(gen, study)
        preds_po = predict_study(params_only_gen, study) if params_only_gen else None
        if preds_po is not None:
            rows["params_only"] = []
        for view, sample in study.samples.items():
            post_hat, scar_hat = preds[view]
            rows["sofa"].append(_phase1_image_metrics(post_hat, sample.post, scar_hat, sample.scar))
            rows["copy_pre"].append(_phase1_image_metrics(
                sample.pre, sample.post, np.zeros_like(sample.scar), sample.scar))
            if preds_po is not None:
                po_post, po_scar = preds_po[view]
                rows["params_only"].append(_phase1_image_metrics(po_post, sample.post, po_scar, sample.scar))
        per_study[study.id] = rows

    split = kfold_split([s.id for s in studies], k=min(folds, len(studies)), seed=seed)
    models = list(next(iter(per_study.values())).keys())
    metrics_out: dict = {}
    for model in models:
        metrics_out[model] = {}
        for metric in ("mse", "psnr", "ssim", "dice"):
            fold_means = []
            for fold in range(split.k):
                vals = [row[metric]
                        for sid in split.test_ids(fold)
                        for row in per_study[sid][model]]
                fold_means.append(float(np.mean(vals)))
            metrics_out[model][metric] = mean_std(fold_means)
    return EvalReport(phase=1, metrics=metrics_out)


def _demographic_features(study: Study) -> np.ndarray:
    """Deliberately weak covariates (anatomy summaries, no procedural data)."""
    areas = []
    lums = []
    for sample in study.samples.values():
        sil = (sample.pre > 0).any(axis=0)
        areas.append(sil.mean())
        lums.append(sample.pre.mean())
    return np.array([np.mean(areas), np.mean(lums)], dtype=np.float64)


def _post_fed_embedding(study: Study, gen: FusionGenerator) -> np.ndarray:
    """Comparator that sees the real outcome: pre replaced by the oracle post."""
    from .study import ViewSample
    swapped = {
        v: ViewSample(view=v, pre=s.post, params=s.params, post=s.post, scar=s.scar)
        for v, s in study.samples.items()
    }
    return embed_study(Study(id=study.id, samples=swapped, label=study.label), gen)


def evaluate_phase2(studies: list, gen: FusionGenerator,
                    cfg: ClassifierConfig = ClassifierConfig(),
                    comparators: bool = False) -> EvalReport:
    """Fold-wise held-out AUC/accuracy on frozen embeddings."""
    labeled = [s for s in studies if s.label is not None]
    if len(labeled) < cfg.folds:
        raise ValueError("not enough labeled studies for the requested folds")
    ids = [s.id for s in labeled]
    y = np.array([s.label for s in labeled], dtype=np.float64)
    feature_sets = {"sofa": np.stack([embed_study(s, gen) for s in labeled])}
    if comparators:
        feature_sets["real_post"] = np.stack([_post_fed_embedding(s, gen) for s in labeled])
        feature_sets["demographic"] = np.stack([_demographic_features(s) for s in labeled])

    split = kfold_split(ids, k=cfg.folds, seed=cfg.seed)
    index = {sid: i for i, sid in enumerate(ids)}
    metrics_out: dict = {}
    for name, x in feature_sets.items():
        aucs, accs = [], []
        for fold in range(split.k):
            tr = [index[i] for i in split.train_ids(fold)]
            te = [index[i] for i in split.test_ids(fold)]
            clf = _fit_mlp(x[tr].astype(np.float32), y[tr], cfg, seed=cfg.seed * 1000 + fold)
            scores = _scores(clf, x[te].astype(np.float32))
            fold_auc = auc(scores, y[te].astype(int))
            aucs.append(fold_auc if fold_auc is not None else float("nan"))
            accs.append(accuracy(scores, y[te].astype(int)))
        metrics_out[name] = {"auc": mean_std(aucs), "accuracy": mean_std(accs)}
    return EvalReport(phase=2, metrics=metrics_out)


def evaluate_phase3(studies: list, stack: FrozenStack, cfg: OptimizerConfig,
                    limit: Optional[int] = None) -> dict:
    """Risk before/after optimization over a cohort, plus percent reduction."""
    subset = studies[:limit] if limit else studies
    rows = []
    for study in subset:
        trace = optimize_params(study, cfg, stack)
        rows.append({
            "id": study.id,
            "initial_risk": trace.risks[0],
            "final_risk": trace.best_risk,
            "best_step": trace.best_step,
            "no_improvement": trace.no_improvement,
        })
    initial = float(np.mean([r["initial_risk"] for r in rows]))
    final = float(np.mean([r["final_risk"] for r in rows]))
    return {
        "phase": 3,
        "n_studies": len(rows),
        "mean_initial_risk": initial,
        "mean_final_risk": final,
        "percent_reduction": percent_reduction(initial, final),
        "per_study": rows,
        "optimizer_config": cfg.to_dict(),
        "model_version": stack.version,
    }
