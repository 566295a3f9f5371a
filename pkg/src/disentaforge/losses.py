"""Training losses: classification, reconstruction, identity-artifact
separation contrast, and the weighted total."""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F

PROB_EPS = 1e-7
COS_EPS = 1e-8


class TrainingFault(RuntimeError):
    """A loss component went non-finite; carries the component name."""

    def __init__(self, component: str, value: float, context: str = ""):
        self.component = component
        suffix = f" ({context})" if context else ""
        super().__init__(f"training-fault: non-finite loss component {component!r} = {value}{suffix}")


@dataclass
class LossWeights:
    """Defaults follow the published setting: 5, 0.1, 0.5, 0.5."""

    lambda1: float = 5.0   # classification
    lambda2: float = 0.1   # reconstruction (self + cross)
    lambda3: float = 0.5   # separation contrast (real + fake)
    lambda4: float = 0.5   # information optimization

    def validate(self) -> None:
        for name in ("lambda1", "lambda2", "lambda3", "lambda4"):
            if getattr(self, name) < 0:
                raise ValueError(f"invalid-argument: {name} must be >= 0")

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in ("lambda1", "lambda2", "lambda3", "lambda4")}


@dataclass
class LossBreakdown:
    bce: float
    rec_self: float
    rec_cross: float
    con_real: float
    con_fake: float
    info: float
    total: float

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "bce", "rec_self", "rec_cross", "con_real", "con_fake", "info", "total")}


def bce_loss(probs: torch.Tensor, labels: torch.Tensor) -> torch.Tensor:
    """Mean binary cross-entropy on probabilities (clamped at 1e-7)."""
    if probs.shape != labels.shape:
        raise ValueError(f"invalid-argument: probs {tuple(probs.shape)} vs labels {tuple(labels.shape)}")
    p = probs.clamp(PROB_EPS, 1.0 - PROB_EPS)
    y = labels.to(p.dtype)
    return -(y * torch.log(p) + (1.0 - y) * torch.log(1.0 - p)).mean()


def reconstruction_loss(originals: tuple[torch.Tensor, torch.Tensor],
                        selfrec: tuple[torch.Tensor, torch.Tensor],
                        crossrec: tuple[torch.Tensor, torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Pixel-mean L1 between originals and their self/cross reconstructions.

    Each of the two images contributes one mean-absolute-error term, so a
    uniform offset of 0.1 on both self-reconstructions gives rec_self = 0.2.
    """
    for group in (selfrec, crossrec):
        for orig, rec in zip(originals, group):
            if orig.shape != rec.shape:
                raise ValueError("invalid-argument: reconstruction shape differs from original")
    rec_self = sum((o - r).abs().mean() for o, r in zip(originals, selfrec))
    rec_cross = sum((o - r).abs().mean() for o, r in zip(originals, crossrec))
    return rec_self, rec_cross


def _pooled(feat: torch.Tensor) -> torch.Tensor:
    return feat.mean(dim=(2, 3))


def separation_contrastive_loss(bundle_real, bundle_fake) -> tuple[torch.Tensor, torch.Tensor]:
    """Cosine pull (real) / push (fake) between pooled artifact and identity.

    Per branch n: the real term is 1 - cos(artifact_n, identity_n), the fake
    term is cos(artifact_n, identity_n); both are summed over branches and
    averaged over the batch.
    """
    con_real = 0.0
    con_fake = 0.0
    for n in range(2):
        a_r, i_r = _pooled(bundle_real.art_pure[n]), _pooled(bundle_real.id_pure[n])
        a_f, i_f = _pooled(bundle_fake.art_pure[n]), _pooled(bundle_fake.id_pure[n])
        con_real = con_real + (1.0 - F.cosine_similarity(a_r, i_r, dim=1, eps=COS_EPS)).mean()
        con_fake = con_fake + F.cosine_similarity(a_f, i_f, dim=1, eps=COS_EPS).mean()
    return con_real, con_fake


def total_loss(bce, rec_self, rec_cross, con_real, con_fake, info,
               weights: LossWeights, context: str = "") -> tuple[torch.Tensor, LossBreakdown]:
    """Weighted sum of all components; returns the backprop tensor plus a
    float breakdown for logging. Non-finite components raise TrainingFault.

    Components may be tensors (active) or plain floats (gated-off); python
    scalars do not promote tensor dtypes, so a float32 training graph stays
    float32.
    """
    components = {"bce": bce, "rec_self": rec_self, "rec_cross": rec_cross,
                  "con_real": con_real, "con_fake": con_fake, "info": info}
    values = {}
    for name, comp in components.items():
        val = float(comp.detach()) if torch.is_tensor(comp) else float(comp)
        if not math.isfinite(val):
            raise TrainingFault(name, val, context)
        values[name] = val
    total = (weights.lambda1 * bce
             + weights.lambda2 * (rec_self + rec_cross)
             + weights.lambda3 * (con_real + con_fake)
             + weights.lambda4 * info)
    if not torch.is_tensor(total):
        total = torch.as_tensor(float(total), dtype=torch.float64)
    breakdown = LossBreakdown(total=float(total.detach()), **values)
    return total, breakdown
