"""Identity-Artifact Correlation Compression.

A dual cross-attention gate estimates, elementwise, how strongly an identity
feature map and its artifact map are correlated; the gated parts of both maps
are then replaced by Gaussian noise whose per-channel moments match the map
being purified. An information-optimization loss pushes the identity and
artifact distributions apart while keeping purified artifacts close to their
blended originals.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn as nn

from .seeding import torch_generator

VAR_FLOOR = 1e-6
KL_SUM_CLAMP = 20.0  # pre-exponentiation cap on each KL sum


@dataclass
class GaussianStats:
    """Per-channel mean and (floored) variance of a feature map."""

    mean: torch.Tensor  # [C]
    var: torch.Tensor   # [C], >= VAR_FLOOR


@dataclass
class InfoLossTerms:
    kl_id_art: tuple[torch.Tensor, torch.Tensor]
    kl_art_art: tuple[torch.Tensor, torch.Tensor]
    total: torch.Tensor


def gaussian_stats(feat: torch.Tensor) -> GaussianStats:
    """Empirical per-channel moments pooled over batch and space."""
    if feat.ndim != 4:
        raise ValueError(f"invalid-argument: expected [B,C,H,W], got {tuple(feat.shape)}")
    b, _, h, w = feat.shape
    if b * h * w < 2:
        raise ValueError("invalid-argument: need at least 2 values per channel for stats")
    mean = feat.mean(dim=(0, 2, 3))
    var = feat.var(dim=(0, 2, 3), unbiased=False).clamp_min(VAR_FLOOR)
    return GaussianStats(mean=mean, var=var)


def kl_diag_gauss(p: GaussianStats, q: GaussianStats) -> torch.Tensor:
    """Channel-mean closed-form KL(N(mu_p, var_p) || N(mu_q, var_q))."""
    if p.mean.shape != q.mean.shape:
        raise ValueError("invalid-argument: channel counts differ")
    kl = 0.5 * (torch.log(q.var / p.var) + (p.var + (p.mean - q.mean) ** 2) / q.var - 1.0)
    return kl.mean()


def purify(feat: torch.Tensor, gate: torch.Tensor, noise_seed: int, mode: str = "sample") -> torch.Tensor:
    """Mix feat with moment-matched Gaussian noise: (1 - W) * feat + W * eps.

    mode="sample" draws eps ~ N(mean_c, var_c) per channel (reparameterized, so
    gradients flow through the moments); mode="mean" replaces eps by its mean,
    which is the deterministic inference path.
    """
    if feat.shape != gate.shape:
        raise ValueError(f"invalid-argument: feat {tuple(feat.shape)} vs gate {tuple(gate.shape)}")
    if mode not in ("sample", "mean"):
        raise ValueError(f"invalid-argument: mode must be 'sample' or 'mean', got {mode!r}")
    stats = gaussian_stats(feat)
    mean = stats.mean[None, :, None, None]
    if mode == "mean":
        eps = mean.expand_as(feat)
    else:
        gen = torch_generator(noise_seed, "iacc-noise")
        z = torch.randn(feat.shape, generator=gen, dtype=feat.dtype, device=feat.device)
        eps = mean + stats.var.sqrt()[None, :, None, None] * z
    return (1.0 - gate) * feat + gate * eps


class DualCrossAttentionGate(nn.Module):
    """Correlation controller W in [0,1], same shape as its two inputs.

    Two cross-attention passes (identity querying artifact, and the reverse)
    are summed, projected by a 1x1 conv, and squashed by a sigmoid.
    """

    def __init__(self, channels: int):
        super().__init__()
        self.id_to_art = _CrossAttention2d(channels)
        self.art_to_id = _CrossAttention2d(channels)
        self.project = nn.Conv2d(channels, channels, 1)

    def forward(self, ident: torch.Tensor, artifact: torch.Tensor) -> torch.Tensor:
        if ident.shape != artifact.shape:
            raise ValueError(f"invalid-argument: {tuple(ident.shape)} vs {tuple(artifact.shape)}")
        mixed = self.id_to_art(ident, artifact) + self.art_to_id(artifact, ident)
        return torch.sigmoid(self.project(mixed))


class _CrossAttention2d(nn.Module):
    """Spatial attention with queries from one map, keys/values from another."""

    def __init__(self, channels: int):
        super().__init__()
        self.query = nn.Conv2d(channels, channels, 1)
        self.key = nn.Conv2d(channels, channels, 1)
        self.value = nn.Conv2d(channels, channels, 1)

    def forward(self, query_map: torch.Tensor, context_map: torch.Tensor) -> torch.Tensor:
        b, c, h, w = query_map.shape
        q = self.query(query_map).flatten(2).transpose(1, 2)   # [B, HW, C]
        k = self.key(context_map).flatten(2)                   # [B, C, HW]
        v = self.value(context_map).flatten(2).transpose(1, 2)  # [B, HW, C]
        attn = torch.softmax(q @ k / math.sqrt(c), dim=-1)
        return (attn @ v).transpose(1, 2).reshape(b, c, h, w)


def info_loss(bundle) -> InfoLossTerms:
    """Information-optimization loss over a disentangled bundle.

    total = exp(-sum_n KL[p(id_raw_n) || p(art_raw_n)])
          + 0.5 * exp(sum_n KL[p(art_pure_n) || p(art_raw_n)])
    with each sum clamped to [0, KL_SUM_CLAMP] before exponentiation. At all-
    equal distributions this is exactly 1.5.
    """
    kl_id_art = tuple(
        kl_diag_gauss(gaussian_stats(bundle.id_raw[n]), gaussian_stats(bundle.art_raw[n]))
        for n in range(2))
    kl_art_art = tuple(
        kl_diag_gauss(gaussian_stats(bundle.art_pure[n]), gaussian_stats(bundle.art_raw[n]))
        for n in range(2))
    separation = torch.clamp(kl_id_art[0] + kl_id_art[1], 0.0, KL_SUM_CLAMP)
    retention = torch.clamp(kl_art_art[0] + kl_art_art[1], 0.0, KL_SUM_CLAMP)
    total = torch.exp(-separation) + 0.5 * torch.exp(retention)
    return InfoLossTerms(kl_id_art=kl_id_art, kl_art_art=kl_art_art, total=total)
