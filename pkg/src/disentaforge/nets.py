"""Network blocks: dual identity encoders, artifact separator, face decoder,
artifact classifier, and the bundle they exchange.

All feature maps are [batch, channels, h, w] with channels = cfg.d and
h = w = image_size / 8. Every block is a deterministic function of its inputs
and parameters; noise enters only through the purification step (see iacc).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import torch
import torch.nn as nn
import torch.nn.functional as F

from .seeding import seed_for
from . import iacc

ABLATIONS = ("efn", "pd", "pd_iacc", "full")


@dataclass
class ModelConfig:
    d: int = 64
    encoder_depth: int = 4
    decoder_depth: int = 3
    image_size: int = 64
    classifier_hidden: int = 128
    seed: int = 0
    freeze_encoder: bool = False

    def validate(self) -> None:
        for name in ("d", "encoder_depth", "decoder_depth", "image_size", "classifier_hidden"):
            if getattr(self, name) <= 0:
                raise ValueError(f"invalid-argument: {name} must be positive")
        if self.image_size % 8 != 0:
            raise ValueError("invalid-argument: image_size must be divisible by 8")
        if self.encoder_depth < 4:
            raise ValueError("invalid-argument: encoder_depth must be >= 4 (stem + 3 strided stages)")
        if self.decoder_depth < 3:
            raise ValueError("invalid-argument: decoder_depth must be >= 3 (three upsample stages)")

    @property
    def feat_size(self) -> int:
        return self.image_size // 8

    def to_dict(self) -> dict:
        return {k: getattr(self, k) for k in (
            "d", "encoder_depth", "decoder_depth", "image_size", "classifier_hidden",
            "seed", "freeze_encoder")}

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


@dataclass
class DisentangledBundle:
    """Per-image-batch quadruple of identity/artifact features.

    raw = straight out of the separator; pure = after correlation-gated noise
    mixing (equal to raw when the gate stage is absent). identity_agg and
    artifact_agg are the channel concatenations of the two purified branches.
    """

    id_raw: tuple[torch.Tensor, torch.Tensor]
    art_raw: tuple[torch.Tensor, torch.Tensor]
    id_pure: tuple[torch.Tensor, torch.Tensor]
    art_pure: tuple[torch.Tensor, torch.Tensor]
    gates: tuple[torch.Tensor, torch.Tensor] | None
    identity_agg: torch.Tensor = field(init=False)
    artifact_agg: torch.Tensor = field(init=False)

    def __post_init__(self):
        self.identity_agg, self.artifact_agg = aggregate(self.id_pure, self.art_pure)


def aggregate(id_pure: tuple[torch.Tensor, torch.Tensor],
              art_pure: tuple[torch.Tensor, torch.Tensor]) -> tuple[torch.Tensor, torch.Tensor]:
    """Channel-concatenate the two purified branches into (identity, artifact)."""
    if id_pure[0].shape != id_pure[1].shape or art_pure[0].shape != art_pure[1].shape:
        raise ValueError("invalid-argument: branch shapes differ")
    return torch.cat(id_pure, dim=1), torch.cat(art_pure, dim=1)


def _norm_groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


def _conv_block(cin: int, cout: int, stride: int = 1) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(cin, cout, 3, stride=stride, padding=1),
        nn.GroupNorm(_norm_groups(cout), cout),
        nn.SiLU(),
    )


def seeded_init_(module: nn.Module, seed: int) -> None:
    """Reinitialize conv/linear weights deterministically from `seed`.

    Uses the stock kaiming-uniform scheme but with an explicit generator so
    parameter values never depend on global RNG state.
    """
    gen = torch.Generator()
    gen.manual_seed(seed)
    for m in module.modules():
        if isinstance(m, (nn.Conv2d, nn.Linear)):
            nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5), generator=gen)
            if m.bias is not None:
                fan_in = nn.init._calculate_fan_in_and_fan_out(m.weight)[0]
                bound = 1.0 / math.sqrt(fan_in) if fan_in > 0 else 0.0
                nn.init.uniform_(m.bias, -bound, bound, generator=gen)
        elif isinstance(m, nn.GroupNorm):
            nn.init.ones_(m.weight)
            nn.init.zeros_(m.bias)


class IdentityEncoder(nn.Module):
    """Strided conv encoder: image -> [B, d, image_size/8, image_size/8]."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d
        blocks = [
            _conv_block(3, max(8, d // 4)),
            _conv_block(max(8, d // 4), max(8, d // 2), stride=2),
            _conv_block(max(8, d // 2), d, stride=2),
            _conv_block(d, d, stride=2),
        ]
        blocks += [_conv_block(d, d) for _ in range(cfg.encoder_depth - 4)]
        self.blocks = nn.Sequential(*blocks)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.blocks(x)


class ArtifactSeparator(nn.Module):
    """Joint block consuming both blended identities, emitting four maps.

    Two shared 3x3 conv layers over the concatenated pair feed four 1x1 heads:
    (identity, artifact) for each branch, all at the input shape.
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d
        self.body = nn.Sequential(_conv_block(2 * d, 2 * d), _conv_block(2 * d, 2 * d))
        self.heads = nn.ModuleList([nn.Conv2d(2 * d, d, 1) for _ in range(4)])

    def forward(self, ident_1: torch.Tensor, ident_2: torch.Tensor):
        if ident_1.shape != ident_2.shape:
            raise ValueError("invalid-argument: branch feature shapes differ")
        h = self.body(torch.cat([ident_1, ident_2], dim=1))
        id_1, art_1, id_2, art_2 = (head(h) for head in self.heads)
        return (id_1, art_1), (id_2, art_2)


class StyleAttentionDecoder(nn.Module):
    """Face decoder conditioned on artifacts.

    One attention block (queries from the identity stack, keys/values from the
    artifact stack) followed by three x2 upsampling conv stages and a sigmoid
    output, so pixels land in [0,1].
    """

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d = cfg.d
        self.query = nn.Conv2d(2 * d, d, 1)
        self.key = nn.Conv2d(2 * d, d, 1)
        self.value = nn.Conv2d(2 * d, d, 1)
        self.mix = nn.Conv2d(d, d, 1)
        self.refine = nn.Sequential(*[_conv_block(d, d) for _ in range(cfg.decoder_depth - 3)])
        c1, c2 = max(8, d // 2), max(8, d // 4)
        self.up = nn.Sequential(
            nn.Upsample(scale_factor=2, mode="nearest"), _conv_block(d, c1),
            nn.Upsample(scale_factor=2, mode="nearest"), _conv_block(c1, c2),
            nn.Upsample(scale_factor=2, mode="nearest"), _conv_block(c2, c2),
        )
        self.out = nn.Conv2d(c2, 3, 3, padding=1)

    def forward(self, identity_agg: torch.Tensor, artifact_agg: torch.Tensor) -> torch.Tensor:
        if identity_agg.shape != artifact_agg.shape:
            raise ValueError("invalid-argument: identity/artifact stacks differ in shape")
        b, _, h, w = identity_agg.shape
        q = self.query(identity_agg).flatten(2).transpose(1, 2)  # [B, HW, d]
        k = self.key(artifact_agg).flatten(2)                    # [B, d, HW]
        v = self.value(artifact_agg).flatten(2).transpose(1, 2)  # [B, HW, d]
        attn = torch.softmax(q @ k / math.sqrt(q.shape[-1]), dim=-1)
        styled = (attn @ v).transpose(1, 2).reshape(b, -1, h, w)
        x = self.query(identity_agg) + self.mix(styled)
        x = self.refine(x)
        x = self.up(x)
        return torch.sigmoid(self.out(x))


class ArtifactClassifier(nn.Module):
    """Pool the artifact stack and emit one fake-probability per sample."""

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.expected_channels = 2 * cfg.d
        self.head = nn.Sequential(
            nn.Linear(2 * cfg.d, cfg.classifier_hidden),
            nn.SiLU(),
            nn.Linear(cfg.classifier_hidden, 1),
        )

    def forward(self, artifact_agg: torch.Tensor) -> torch.Tensor:
        if artifact_agg.shape[1] != self.expected_channels:
            raise ValueError(
                f"invalid-argument: expected {self.expected_channels} channels, got {artifact_agg.shape[1]}")
        pooled = artifact_agg.mean(dim=(2, 3))
        return torch.sigmoid(self.head(pooled)).squeeze(-1)


class DisentangleNet(nn.Module):
    """The full forward graph, with components gated by the ablation tag.

    efn:     encoders + classifier (classifier reads the raw encoder concat)
    pd:      + separator and decoder (pure features = raw separator outputs)
    pd_iacc: + correlation gate and noise purification
    full:    same parameters as pd_iacc (the contrastive loss adds none)
    """

    def __init__(self, cfg: ModelConfig, ablation: str = "full",
                 dtype: torch.dtype | None = None):
        super().__init__()
        cfg.validate()
        if ablation not in ABLATIONS:
            raise ValueError(f"invalid-argument: ablation must be one of {ABLATIONS}, got {ablation!r}")
        self.cfg = cfg
        self.ablation = ablation
        self.encoder_1 = IdentityEncoder(cfg)
        self.encoder_2 = IdentityEncoder(cfg)
        self.classifier = ArtifactClassifier(cfg)
        seeded_init_(self.encoder_1, seed_for(cfg.seed, "encoder-1"))
        seeded_init_(self.encoder_2, seed_for(cfg.seed, "encoder-2"))
        seeded_init_(self.classifier, seed_for(cfg.seed, "classifier"))
        if ablation != "efn":
            self.separator = ArtifactSeparator(cfg)
            self.decoder = StyleAttentionDecoder(cfg)
            seeded_init_(self.separator, seed_for(cfg.seed, "separator"))
            seeded_init_(self.decoder, seed_for(cfg.seed, "decoder"))
        if ablation in ("pd_iacc", "full"):
            self.gate = iacc.DualCrossAttentionGate(cfg.d)
            seeded_init_(self.gate, seed_for(cfg.seed, "dcam"))
        if cfg.freeze_encoder:
            for p in self.encoder_1.parameters():
                p.requires_grad_(False)
            for p in self.encoder_2.parameters():
                p.requires_grad_(False)
        if dtype is not None:
            self.to(dtype)

    @property
    def has_separation(self) -> bool:
        return self.ablation != "efn"

    @property
    def has_purification(self) -> bool:
        return self.ablation in ("pd_iacc", "full")

    def encode(self, images: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        if images.ndim != 4 or images.shape[1] != 3 or images.shape[2] != self.cfg.image_size \
                or images.shape[3] != self.cfg.image_size:
            raise ValueError(
                f"invalid-argument: expected [B,3,{self.cfg.image_size},{self.cfg.image_size}] images, "
                f"got {tuple(images.shape)}")
        return self.encoder_1(images), self.encoder_2(images)

    def disentangle(self, images: torch.Tensor, noise_seed: int = 0,
                    sample_noise: bool = False) -> DisentangledBundle:
        """Run encode -> separate -> (gate + purify) and bundle the results."""
        if not self.has_separation:
            raise ValueError("invalid-argument: efn ablation has no separator")
        blended_1, blended_2 = self.encode(images)
        (id_1, art_1), (id_2, art_2) = self.separator(blended_1, blended_2)
        if self.has_purification:
            mode = "sample" if sample_noise else "mean"
            w1 = self.gate(id_1, art_1)
            w2 = self.gate(id_2, art_2)
            bundle = DisentangledBundle(
                id_raw=(id_1, id_2), art_raw=(art_1, art_2),
                id_pure=(iacc.purify(id_1, w1, seed_for(noise_seed, "iacc-noise", 0), mode),
                         iacc.purify(id_2, w2, seed_for(noise_seed, "iacc-noise", 1), mode)),
                art_pure=(iacc.purify(art_1, w1, seed_for(noise_seed, "iacc-noise", 2), mode),
                          iacc.purify(art_2, w2, seed_for(noise_seed, "iacc-noise", 3), mode)),
                gates=(w1, w2))
        else:
            bundle = DisentangledBundle(
                id_raw=(id_1, id_2), art_raw=(art_1, art_2),
                id_pure=(id_1, id_2), art_pure=(art_1, art_2), gates=None)
        return bundle

    def decode(self, identity_agg: torch.Tensor, artifact_agg: torch.Tensor) -> torch.Tensor:
        if not self.has_separation:
            raise ValueError("invalid-argument: efn ablation has no decoder")
        return self.decoder(identity_agg, artifact_agg)

    def score(self, images: torch.Tensor, noise_seed: int = 0) -> torch.Tensor:
        """Deterministic fake-probabilities (noise replaced by its mean)."""
        if self.ablation == "efn":
            return self.classifier(torch.cat(self.encode(images), dim=1))
        bundle = self.disentangle(images, noise_seed=noise_seed, sample_noise=False)
        return self.classifier(bundle.artifact_agg)


def parameter_count(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
