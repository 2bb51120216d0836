"""Risk-driven refinement of ablation parameter maps.

With the generator and classifier frozen, the parameter maps are the only
free variable. Each step follows the analytic gradient of

    loss = -log(1 - sigmoid(logit)) + lambda_reg * ||params - params0||^2

(the first term computed as softplus(logit) for stability), gated so that
only pixels inside the ablation support mask ever change:

    next = mask * clamp(current - eta * grad, 0, 1) + (1 - mask) * params0

The mask is the morphologically closed support of the initial maps.
Outside-mask pixels are copied from params0 bit-for-bit, and the optimizer
returns the best-risk iterate seen so a run can never end worse than it
started by its own metric.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field
from pathlib import Path

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from . import persist
from .classifier import RiskClassifier, load_classifier
from .generator import FusionGenerator, load_generator
from .study import PARAM_CHANNELS, Study, VIEW_ORDER


@dataclass(frozen=True)
class OptimizerConfig:
    eta: float = 0.05
    max_steps: int = 100
    lambda_reg: float = 0.1
    closing_radius: int = 2
    stop_tol: float = 1e-5
    patience: int = 10
    clamp: bool = True

    def validate(self) -> None:
        # max_steps 0 is the evaluate-only degenerate case used by the service
        if self.eta <= 0 or self.max_steps < 0:
            raise ValueError("eta must be > 0 and max_steps >= 0")
        if self.lambda_reg < 0 or self.closing_radius < 1:
            raise ValueError("lambda_reg must be >= 0 and closing_radius >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "OptimizerConfig":
        return OptimizerConfig(**{k: v for k, v in d.items()
                                  if k in OptimizerConfig.__dataclass_fields__})


@dataclass
class OptimizationTrace:
    risks: list  # risk at every visited iterate; index 0 is the input
    losses: list
    reg_terms: list
    running_best: list  # best risk seen up to each step (non-increasing)
    best_step: int
    best_risk: float
    no_improvement: bool
    params_final: np.ndarray  # [V,4,H,W], best-seen iterate
    params_last: np.ndarray  # [V,4,H,W], last visited iterate (for chained runs)
    diff: np.ndarray  # params_final - params0
    config: dict = field(default_factory=dict)
    model_version: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "risks": self.risks,
            "losses": self.losses,
            "reg_terms": self.reg_terms,
            "running_best": self.running_best,
            "best_step": self.best_step,
            "best_risk": self.best_risk,
            "no_improvement": self.no_improvement,
            "config": self.config,
            "model_version": self.model_version,
        }

    def save(self, out_dir: str | Path) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        persist.write_json(out / "trace.json", self.to_dict())
        for vi, view in enumerate(VIEW_ORDER):
            vdir = out / view.value
            vdir.mkdir(exist_ok=True)
            persist.write_f32(vdir / "params_optimized.f32", self.params_final[vi])
            for ci, name in enumerate(PARAM_CHANNELS):
                persist.write_f32(vdir / f"diff_{name}.f32", self.diff[vi, ci])


def disk_structure(radius: int) -> np.ndarray:
    r = int(radius)
    yy, xx = np.mgrid[-r:r + 1, -r:r + 1]
    return (yy * yy + xx * xx) <= r * r


def build_ablation_mask(params0: np.ndarray, radius: int = 2) -> np.ndarray:
    """Hard [1,H,W] mask: closed support of any nonzero parameter channel.

    Closing runs on a zero-padded frame so the result matches the
    infinite-plane definition (dilation then erosion; never removes
    original support, fills holes up to the structuring disk).
    """
    support = (np.asarray(params0) > 0).any(axis=0)
    structure = disk_structure(radius)
    pad = int(radius)
    padded = np.pad(support, pad)
    closed = ndimage.binary_closing(padded, structure=structure)
    closed = closed[pad:-pad, pad:-pad]
    return (closed > 0.5).astype(np.float32)[None, :, :]


class FrozenStack:
    """Generator + classifier pair with verified compatibility hashes."""

    def __init__(self, gen: FusionGenerator, clf: RiskClassifier,
                 gen_hash: str = "", clf_hash: str = ""):
        self.gen = gen.eval()
        self.clf = clf.eval()
        for p in self.gen.parameters():
            p.requires_grad_(False)
        for p in self.clf.parameters():
            p.requires_grad_(False)
        self.gen_hash = gen_hash
        self.clf_hash = clf_hash

    @staticmethod
    def load(gen_dir, clf_dir) -> "FrozenStack":
        gen, gen_meta = load_generator(gen_dir)
        clf, clf_meta = load_classifier(clf_dir)
        if clf_meta["extractor_hash"] != gen_meta["weights_hash"]:
            raise ValueError(
                "classifier was trained against a different generator "
                f"({clf_meta['extractor_hash'][:12]} != {gen_meta['weights_hash'][:12]})")
        return FrozenStack(gen, clf, gen_meta["weights_hash"], clf_meta["weights_hash"])

    @property
    def version(self) -> dict:
        return {"generator": self.gen_hash, "classifier": self.clf_hash}

    def logit(self, pre_views: torch.Tensor, param_views: torch.Tensor) -> torch.Tensor:
        """Differentiable six-view risk logit; views are the batch dimension."""
        z = self.gen.embed(pre_views, param_views)  # [V, D]
        return self.clf(z.mean(dim=0))

    def study_tensors(self, study: Study) -> tuple:
        pre = torch.from_numpy(np.stack(
            [study.samples[v].pre for v in VIEW_ORDER])).float()
        params = torch.from_numpy(np.stack(
            [study.samples[v].params.channels for v in VIEW_ORDER])).float()
        return pre, params


def phase3_loss(stack: FrozenStack, pre_views: torch.Tensor, params: torch.Tensor,
                params0: torch.Tensor, lambda_reg: float) -> tuple:
    """Returns (loss tensor, risk float). Loss is softplus(logit) plus the
    squared L2 deviation from the initial plan summed over all views,
    channels, and pixels."""
    logit = stack.logit(pre_views, params)
    loss = F.softplus(logit) + lambda_reg * ((params - params0) ** 2).sum()
    if not torch.isfinite(loss):
        raise RuntimeError("non-finite optimization loss")
    return loss, float(torch.sigmoid(logit.detach()))


def masked_step(params_t, grad, eta: float, mask, params0):
    """One gated descent update; outside-mask pixels equal params0 exactly.

    Clamping to [0,1] applies only inside the mask, so frozen pixels are
    bit-identical copies of the initial plan.
    """
    params_t = torch.as_tensor(params_t)
    grad = torch.as_tensor(grad)
    params0 = torch.as_tensor(params0)
    hard = torch.as_tensor(mask) > 0.5
    updated = torch.clamp(params_t - eta * grad, 0.0, 1.0)
    return torch.where(hard, updated, params0)


def optimize_params(study: Study, cfg: OptimizerConfig, stack: FrozenStack,
                    anchor_params: np.ndarray = None) -> OptimizationTrace:
    """Run masked gradient descent on one study's parameter maps.

    Each accepted update is the gated step above; the step size backtracks
    (halves, up to 12 times) whenever a trial step would increase the loss,
    so the recorded loss sequence is strictly decreasing and a huge
    regularizer pins the result near the initial plan instead of diverging.

    anchor_params ([V,4,H,W], optional) is the plan that defines both the
    ablation mask and the deviation penalty reference. It defaults to the
    study's own parameter maps; passing the original plan while the study
    carries partially-optimized maps makes chained incremental runs follow
    the same trajectory as one long run.
    """
    cfg.validate()
    pre, start = stack.study_tensors(study)
    if anchor_params is None:
        params0 = start.clone()
    else:
        params0 = torch.as_tensor(np.asarray(anchor_params), dtype=start.dtype).clone()
        if params0.shape != start.shape:
            raise ValueError(f"anchor shape {tuple(params0.shape)} != {tuple(start.shape)}")
    mask = torch.from_numpy(np.stack(
        [build_ablation_mask(params0[vi].numpy(), cfg.closing_radius)
         for vi in range(len(VIEW_ORDER))]))

    def record(loss, risk, params, step):
        nonlocal best_risk, best_step, best_params
        risks.append(risk)
        losses.append(float(loss))
        regs.append(float(cfg.lambda_reg * ((params - params0) ** 2).sum()))
        if risk < best_risk:
            best_risk, best_step, best_params = risk, step, params.clone()

    risks, losses, regs = [], [], []
    best_risk, best_step, best_params = float("inf"), 0, start.clone()
    current = start.clone()
    leaf = current.detach().requires_grad_(True)
    loss, risk = phase3_loss(stack, pre, leaf, params0, cfg.lambda_reg)
    record(loss.detach(), risk, current, 0)
    stall = 0
    for step in range(1, cfg.max_steps + 1):
        (grad,) = torch.autograd.grad(loss, leaf)
        eta = cfg.eta
        accepted = None
        for _trial in range(12):
            if cfg.clamp:
                candidate = masked_step(current, grad, eta, mask, params0)
            else:
                candidate = torch.where(mask > 0.5, current - eta * grad, params0)
            with torch.no_grad():
                cand_loss, _ = phase3_loss(stack, pre, candidate, params0, cfg.lambda_reg)
            if float(cand_loss) < losses[-1]:
                accepted = candidate
                break
            eta *= 0.5
        if accepted is None:
            break  # no descent direction left at any step size
        current = accepted
        leaf = current.detach().requires_grad_(True)
        loss, risk = phase3_loss(stack, pre, leaf, params0, cfg.lambda_reg)
        record(loss.detach(), risk, current, step)
        stall = stall + 1 if losses[-2] - losses[-1] < cfg.stop_tol else 0
        if stall >= cfg.patience:
            break

    running_best = np.minimum.accumulate(risks).tolist()
    diff = (best_params - start).numpy()
    return OptimizationTrace(
        risks=risks, losses=losses, reg_terms=regs, running_best=running_best,
        best_step=best_step, best_risk=best_risk,
        no_improvement=best_step == 0,
        params_final=best_params.numpy(), params_last=current.detach().numpy(),
        diff=diff, config=cfg.to_dict(), model_version=stack.version,
    )


def diff_maps(params0: np.ndarray, params_star: np.ndarray) -> np.ndarray:
    """Signed per-channel change, optimized minus original.

    Positive values mean the optimizer raised a parameter (rendered blue in
    the comparison panels; red marks original > optimized).
    """
    params0 = np.asarray(params0)
    params_star = np.asarray(params_star)
    if params0.shape != params_star.shape:
        raise ValueError(f"shape mismatch: {params0.shape} vs {params_star.shape}")
    return params_star - params0
