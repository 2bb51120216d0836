"""Post-ablation image synthesis with cross-attention fusion of two encoders.

The pre-image and the parameter maps are encoded separately into bottleneck
features [C, H_b, W_b]. Flattened to [N, C] rows (row-major over spatial
positions, N = H_b * W_b), queries come from the pre-image features and
keys/values from the parameter features:

    Q = W_q z_pre,  K = W_k z_feat,  V = W_v z_feat        (per row)
    fused = softmax(Q K^T / sqrt(C)) V,  projected by W_o

The fused bottleneck is decoded into a post-ablation image; a small
convolutional head extracts a soft scar map from that image. Training
minimizes mean L1 image error plus a weighted Dice complement on the mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .checkpoints import load_checkpoint, save_checkpoint
from .study import Study


@dataclass(frozen=True)
class GeneratorConfig:
    resolution: int = 256
    channels: int = 128  # bottleneck C
    depth: int = 4  # stride-2 encoder blocks; H_b = resolution / 2^depth
    dice_weight: float = 1.0
    dice_eps: float = 1e-6
    skip_connections: bool = True
    input_mode: str = "fusion"  # "fusion" | "params_only"
    mask_hidden: int = 8
    lr: float = 1e-3
    epochs: int = 40
    batch_size: int = 4
    val_frac: float = 0.25
    seed: int = 0

    def validate(self) -> None:
        if self.channels <= 0 or self.depth < 1:
            raise ValueError("channels and depth must be positive")
        if self.resolution % (1 << self.depth) != 0:
            raise ValueError(f"resolution {self.resolution} not divisible by 2^{self.depth}")
        if self.dice_weight < 0 or self.dice_eps <= 0:
            raise ValueError("dice_weight must be >= 0 and dice_eps > 0")
        if self.input_mode not in ("fusion", "params_only"):
            raise ValueError(f"unknown input_mode {self.input_mode!r}")

    @property
    def bottleneck(self) -> int:
        return self.resolution >> self.depth

    def to_dict(self) -> dict:
        return asdict(self)

    @staticmethod
    def from_dict(d: dict) -> "GeneratorConfig":
        return GeneratorConfig(**d)


def _widths(channels: int, depth: int) -> list:
    return [max(channels >> (depth - 1 - i), min(channels, 4)) for i in range(depth)]


class _EncoderBlock(nn.Module):
    def __init__(self, in_ch, out_ch):
        super().__init__()
        self.conv = nn.Conv2d(in_ch, out_ch, 3, stride=2, padding=1)
        self.norm = nn.GroupNorm(1, out_ch)

    def forward(self, x):
        return F.silu(self.norm(self.conv(x)))


class Encoder(nn.Module):
    """Stack of stride-2 blocks; returns the bottleneck and per-block features."""

    def __init__(self, in_ch: int, channels: int, depth: int):
        super().__init__()
        widths = _widths(channels, depth)
        blocks = []
        prev = in_ch
        for w in widths:
            blocks.append(_EncoderBlock(prev, w))
            prev = w
        self.blocks = nn.ModuleList(blocks)

    def forward(self, x):
        feats = []
        for block in self.blocks:
            x = block(x)
            feats.append(x)
        return x, feats


class CrossAttentionFusion(nn.Module):
    """Single-head scaled dot-product attention across the two modalities."""

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.w_q = nn.Linear(channels, channels, bias=False)
        self.w_k = nn.Linear(channels, channels, bias=False)
        self.w_v = nn.Linear(channels, channels, bias=False)
        self.w_o = nn.Linear(channels, channels, bias=False)

    def _flatten(self, z):
        # [B,C,Hb,Wb] -> [B,N,C], row-major over spatial positions
        return z.flatten(2).transpose(1, 2)

    def attention_weights(self, z_pre, z_feat):
        q = self.w_q(self._flatten(z_pre))
        k = self.w_k(self._flatten(z_feat))
        logits = q @ k.transpose(1, 2) / math.sqrt(self.channels)
        return torch.softmax(logits, dim=-1)

    def forward(self, z_pre, z_feat):
        if z_pre.shape[1] != self.channels or z_feat.shape[1] != self.channels:
            raise ValueError(f"fusion expects C={self.channels}, got {z_pre.shape[1]} and {z_feat.shape[1]}")
        b, c, hb, wb = z_pre.shape
        v = self.w_v(self._flatten(z_feat))
        fused = self.w_o(self.attention_weights(z_pre, z_feat) @ v)
        return fused.transpose(1, 2).reshape(b, c, hb, wb)


class Decoder(nn.Module):
    """Mirror of the encoder with nearest-neighbor upsampling.

    When skip connections are enabled, each upsampled feature is
    concatenated with the pre-image encoder feature at the same resolution
    (there is none at full resolution, so the last block has no skip).
    """

    def __init__(self, channels: int, depth: int, skip: bool, out_ch: int = 3):
        super().__init__()
        widths = _widths(channels, depth)
        self.depth = depth
        self.skip = skip
        convs = []
        norms = []
        prev = channels
        for i in range(depth):
            skip_w = widths[depth - 2 - i] if (skip and i < depth - 1) else 0
            out_w = widths[depth - 2 - i] if i < depth - 1 else widths[0]
            convs.append(nn.Conv2d(prev + skip_w, out_w, 3, padding=1))
            norms.append(nn.GroupNorm(1, out_w))
            prev = out_w
        self.convs = nn.ModuleList(convs)
        self.norms = nn.ModuleList(norms)
        self.head = nn.Conv2d(prev, out_ch, 3, padding=1)

    def forward(self, x, skips):
        for i in range(self.depth):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            if self.skip and i < self.depth - 1:
                x = torch.cat([x, skips[self.depth - 2 - i]], dim=1)
            x = F.silu(self.norms[i](self.convs[i](x)))
        return torch.sigmoid(self.head(x))


class MaskHead(nn.Module):
    """Two conv layers mapping the synthesized image to scar logits."""

    def __init__(self, hidden: int = 8):
        super().__init__()
        self.conv1 = nn.Conv2d(3, hidden, 3, padding=1)
        self.conv2 = nn.Conv2d(hidden, 1, 3, padding=1)

    def forward(self, img):
        return self.conv2(F.silu(self.conv1(img)))


class FusionGenerator(nn.Module):
    def __init__(self, config: GeneratorConfig):
        super().__init__()
        config.validate()
        self.config = config
        self.encoder_pre = Encoder(3, config.channels, config.depth)
        self.encoder_feat = Encoder(4, config.channels, config.depth)
        self.fusion = CrossAttentionFusion(config.channels)
        self.decoder = Decoder(config.channels, config.depth, config.skip_connections)
        self.mask_head = MaskHead(config.mask_hidden)

    def _check(self, x, nchan, name):
        if x.dim() == 3:
            x = x.unsqueeze(0)
        if x.shape[1] != nchan or x.shape[2] != self.config.resolution or x.shape[3] != self.config.resolution:
            raise ValueError(
                f"{name}: expected [{nchan},{self.config.resolution},{self.config.resolution}], "
                f"got {tuple(x.shape[1:])}")
        return x

    def encode_pre(self, pre):
        z, _ = self.encoder_pre(self._check(pre, 3, "pre"))
        return z

    def encode_feat(self, feat):
        z, _ = self.encoder_feat(self._check(feat, 4, "params"))
        return z

    def bottleneck(self, pre, feat):
        """Fused bottleneck [B, C, H_b, W_b]; the Phase-2/3 feature source."""
        pre = self._check(pre, 3, "pre")
        feat = self._check(feat, 4, "params")
        if self.config.input_mode == "params_only":
            pre = torch.zeros_like(pre)
        z_pre, skips = self.encoder_pre(pre)
        z_feat, _ = self.encoder_feat(feat)
        return self.fusion(z_pre, z_feat), skips

    def forward(self, pre, feat):
        """Returns (post_hat, mask_logits, b_fused), batched."""
        b_fused, skips = self.bottleneck(pre, feat)
        post_hat = self.decoder(b_fused, skips)
        return post_hat, self.mask_head(post_hat), b_fused

    def embed(self, pre, feat):
        """Spatial global average of the fused bottleneck: [B, C]."""
        b_fused, _ = self.bottleneck(pre, feat)
        return b_fused.mean(dim=(2, 3))


def cross_attention_fuse(z_pre, z_feat, fusion: CrossAttentionFusion) -> torch.Tensor:
    """Functional form for a single [C,H_b,W_b] pair."""
    z_pre = torch.as_tensor(z_pre)
    z_feat = torch.as_tensor(z_feat)
    return fusion(z_pre.unsqueeze(0), z_feat.unsqueeze(0)).squeeze(0)


def extract_scar(model: FusionGenerator, post_hat) -> torch.Tensor:
    return torch.sigmoid(model.mask_head(torch.as_tensor(post_hat)))


def dice_term(m_hat, m, eps: float = 1e-6) -> torch.Tensor:
    """Dice complement 1 - (2*sum(m_hat*m) + eps) / (sum(m_hat) + sum(m) + eps).

    Sums run over every pixel of the pair; both masks empty gives exactly 0.
    """
    m_hat = torch.as_tensor(m_hat)
    m = torch.as_tensor(m)
    inter = (m_hat * m).sum()
    return 1.0 - (2.0 * inter + eps) / (m_hat.sum() + m.sum() + eps)


def _dice_batch(m_hat, m, eps):
    dims = tuple(range(1, m_hat.dim()))
    inter = (m_hat * m).sum(dim=dims)
    return (1.0 - (2.0 * inter + eps) / (m_hat.sum(dim=dims) + m.sum(dim=dims) + eps)).mean()


def phase1_loss(post_hat, post, m_hat, m, dice_weight: float = 1.0,
                eps: float = 1e-6) -> torch.Tensor:
    """Mean-per-pixel L1 plus weighted Dice complement; zero iff exact match."""
    post_hat = torch.as_tensor(post_hat)
    post = torch.as_tensor(post)
    l1 = (post_hat - post).abs().mean()
    return l1 + dice_weight * dice_term(m_hat, m, eps)


def _study_tensors(studies, require_targets: bool):
    pres, feats, posts, scars = [], [], [], []
    for study in studies:
        for view, sample in sorted(study.samples.items(), key=lambda kv: kv[0].value):
            if sample.post is None:
                if require_targets:
                    raise ValueError(f"{study.id}/{view.value}: missing post/scar targets")
                continue
            pres.append(sample.pre)
            feats.append(sample.params.channels)
            posts.append(sample.post)
            scars.append(sample.scar)
    to = lambda arrs: torch.from_numpy(np.stack(arrs)).float()
    return to(pres), to(feats), to(posts), to(scars)


def _epoch_loss(model, tensors, cfg, batch=64):
    pre, feat, post, scar = tensors
    model.eval()
    total = 0.0
    with torch.no_grad():
        for i in range(0, len(pre), batch):
            sl = slice(i, min(i + batch, len(pre)))
            post_hat, logits, _ = model(pre[sl], feat[sl])
            l1 = (post_hat - post[sl]).abs().mean()
            loss = l1 + cfg.dice_weight * _dice_batch(torch.sigmoid(logits), scar[sl], cfg.dice_eps)
            total += float(loss) * (sl.stop - sl.start)
    return total / len(pre)


def train_phase1(studies: list, cfg: GeneratorConfig,
                 log=None) -> tuple:
    """Train the generator; returns (model, history).

    Fully seeded: weight init, study split, and batch order all derive from
    cfg.seed, so reruns reproduce the loss trajectory exactly.
    """
    cfg.validate()
    if not studies:
        raise ValueError("empty training cohort")
    torch.manual_seed(cfg.seed)
    model = FusionGenerator(cfg)

    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0x9E1]))
    order = rng.permutation(len(studies))
    n_val = int(round(cfg.val_frac * len(studies)))
    n_val = min(max(n_val, 1 if cfg.val_frac > 0 and len(studies) > 1 else 0), len(studies) - 1)
    val_idx = set(order[:n_val].tolist())
    train_studies = [studies[i] for i in range(len(studies)) if i not in val_idx]
    val_studies = [studies[i] for i in sorted(val_idx)]

    train_t = _study_tensors(train_studies, require_targets=True)
    val_t = _study_tensors(val_studies, require_targets=True) if val_studies else None

    opt = torch.optim.Adam(model.parameters(), lr=cfg.lr)
    history = {"train_loss": [], "val_loss": [], "initial_loss": _epoch_loss(model, train_t, cfg)}
    n = len(train_t[0])
    for epoch in range(cfg.epochs):
        model.train()
        perm = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xB5, epoch])).permutation(n)
        running = 0.0
        for i in range(0, n, cfg.batch_size):
            idx = torch.from_numpy(perm[i:i + cfg.batch_size].copy())
            pre, feat = train_t[0][idx], train_t[1][idx]
            post, scar = train_t[2][idx], train_t[3][idx]
            post_hat, logits, _ = model(pre, feat)
            l1 = (post_hat - post).abs().mean()
            loss = l1 + cfg.dice_weight * _dice_batch(torch.sigmoid(logits), scar, cfg.dice_eps)
            if not torch.isfinite(loss):
                raise RuntimeError(f"non-finite training loss at epoch {epoch}")
            opt.zero_grad()
            loss.backward()
            opt.step()
            running += float(loss.detach()) * len(idx)
        history["train_loss"].append(running / n)
        history["val_loss"].append(_epoch_loss(model, val_t, cfg) if val_t else float("nan"))
        if log:
            log(f"epoch {epoch + 1}/{cfg.epochs} train {history['train_loss'][-1]:.4f} "
                f"val {history['val_loss'][-1]:.4f}")
    model.eval()
    return model, history


def save_generator(model: FusionGenerator, out_dir, history: dict) -> dict:
    extra = {
        "seed": model.config.seed,
        "loss_history": {k: history[k] for k in ("train_loss", "val_loss")},
        "initial_loss": history["initial_loss"],
        "final_train_loss": history["train_loss"][-1] if history["train_loss"] else None,
        "final_val_loss": history["val_loss"][-1] if history["val_loss"] else None,
    }
    return save_checkpoint(out_dir, "generator", model, model.config.to_dict(), extra)


def load_generator(ckpt_dir) -> tuple:
    return load_checkpoint(
        ckpt_dir, lambda cfg: FusionGenerator(GeneratorConfig.from_dict(cfg)), "generator")


def predict_study(model: FusionGenerator, study: Study) -> dict:
    """Eval-mode synthesis for every view: view -> (post_hat, soft_scar) arrays."""
    model.eval()
    out = {}
    with torch.no_grad():
        for view, sample in study.samples.items():
            pre = torch.from_numpy(sample.pre).float().unsqueeze(0)
            feat = torch.from_numpy(sample.params.channels).float().unsqueeze(0)
            post_hat, logits, _ = model(pre, feat)
            out[view] = (post_hat[0].numpy(), torch.sigmoid(logits)[0].numpy())
    return out
