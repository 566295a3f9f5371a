"""Training loop over (real, fake) image pairs.

One step runs the full graph for the active ablation: encode both images,
separate artifacts, purify (pd_iacc/full), aggregate, decode self- and
cross-reconstructions (artifact stacks swapped within the pair), classify,
and apply one Adam update on the weighted loss. Checkpoints restore training
bit-exactly in deterministic mode.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from . import iacc
from .datagen import CorpusManifest, ImageStore
from .losses import LossBreakdown, LossWeights, bce_loss, reconstruction_loss, \
    separation_contrastive_loss, total_loss
from .nets import ABLATIONS, DisentangleNet, ModelConfig
from .seeding import active_dtype, seed_for

CHECKPOINT_SUFFIX = ".pt"
SIDECAR_SUFFIX = ".json"


@dataclass
class TrainConfig:
    lr: float = 1e-4
    batch_size: int = 8  # published setting is 16; 8 is the desk default
    steps: int = 3000
    seed: int = 0
    weights: LossWeights = field(default_factory=LossWeights)
    ablation: str = "full"
    checkpoint_every: int = 1000
    model: ModelConfig = field(default_factory=ModelConfig)

    def validate(self) -> None:
        if self.lr <= 0:
            raise ValueError("invalid-argument: lr must be > 0")
        if self.batch_size < 2 or self.batch_size % 2 != 0:
            raise ValueError("invalid-argument: batch_size must be even (real/fake pairs)")
        if self.steps < 0:
            raise ValueError("invalid-argument: steps must be >= 0")
        if self.ablation not in ABLATIONS:
            raise ValueError(f"invalid-argument: ablation must be one of {ABLATIONS}")
        self.weights.validate()
        self.model.validate()

    def to_dict(self) -> dict:
        return {
            "lr": self.lr, "batch_size": self.batch_size, "steps": self.steps,
            "seed": self.seed, "weights": self.weights.to_dict(),
            "ablation": self.ablation, "checkpoint_every": self.checkpoint_every,
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        d["model"] = ModelConfig.from_dict(d.get("model", {}))
        return cls(**d)


@dataclass
class PairBatch:
    real: torch.Tensor  # [N, 3, H, W]
    fake: torch.Tensor  # [N, 3, H, W]
    real_ids: list[str]
    fake_ids: list[str]


@dataclass
class TrainState:
    config: TrainConfig
    model: DisentangleNet
    optimizer: torch.optim.Optimizer
    rng: np.random.Generator
    step: int = 0
    loss_history: list[dict] = field(default_factory=list)


def init_state(config: TrainConfig, dtype: torch.dtype | None = None) -> TrainState:
    config.validate()
    model = DisentangleNet(config.model, ablation=config.ablation,
                           dtype=dtype or active_dtype())
    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(seed_for(config.seed, "pair-sampling"))
    return TrainState(config=config, model=model, optimizer=optimizer, rng=rng)


def _to_tensor(images: np.ndarray, dtype: torch.dtype) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(images.transpose(0, 3, 1, 2))).to(dtype)


def sample_pairs(manifest: CorpusManifest, split: str, batch: int,
                 rng: np.random.Generator, store: ImageStore | None = None,
                 dtype: torch.dtype | None = None) -> PairBatch:
    """Draw batch/2 (real, fake) pairs uniformly from a split.

    Sampling is without replacement whenever the split has enough records of
    each label; degenerate splits repeat samples (with a warning).
    """
    if batch < 2 or batch % 2 != 0:
        raise ValueError("invalid-argument: batch must be even and >= 2")
    records = manifest.split_records(split)
    reals = [r.sample_id for r in records if r.label == "real"]
    fakes = [r.sample_id for r in records if r.label == "fake"]
    if not reals or not fakes:
        raise ValueError(f"invalid-argument: split {split!r} is missing a label")
    n = batch // 2
    picks = []
    for ids in (reals, fakes):
        if len(ids) >= n:
            picks.append([ids[i] for i in rng.choice(len(ids), size=n, replace=False)])
        else:
            warnings.warn(f"split {split!r} has only {len(ids)} samples of one label; repeating")
            picks.append([ids[i] for i in rng.choice(len(ids), size=n, replace=True)])
    store = store or ImageStore(manifest)
    dtype = dtype or active_dtype()
    real_imgs = np.stack([store.get(s) for s in picks[0]])
    fake_imgs = np.stack([store.get(s) for s in picks[1]])
    return PairBatch(real=_to_tensor(real_imgs, dtype), fake=_to_tensor(fake_imgs, dtype),
                     real_ids=picks[0], fake_ids=picks[1])


def _forward_losses(model: DisentangleNet, pairs: PairBatch, config: TrainConfig,
                    step: int) -> tuple[torch.Tensor, LossBreakdown]:
    weights = config.weights
    zeros = torch.zeros(pairs.real.shape[0], dtype=pairs.real.dtype)
    ones = torch.ones(pairs.fake.shape[0], dtype=pairs.fake.dtype)
    labels = torch.cat([zeros, ones])

    if config.ablation == "efn":
        probs = torch.cat([
            model.classifier(torch.cat(model.encode(pairs.real), dim=1)),
            model.classifier(torch.cat(model.encode(pairs.fake), dim=1)),
        ])
        bce = bce_loss(probs, labels)
        return total_loss(bce, 0.0, 0.0, 0.0, 0.0, 0.0, weights, context=f"step {step}")

    sample_noise = model.has_purification
    bundle_real = model.disentangle(pairs.real, noise_seed=seed_for(config.seed, "iacc-noise", step, 0),
                                    sample_noise=sample_noise)
    bundle_fake = model.disentangle(pairs.fake, noise_seed=seed_for(config.seed, "iacc-noise", step, 1),
                                    sample_noise=sample_noise)

    probs = torch.cat([model.classifier(bundle_real.artifact_agg),
                       model.classifier(bundle_fake.artifact_agg)])
    bce = bce_loss(probs, labels)

    self_real = model.decode(bundle_real.identity_agg, bundle_real.artifact_agg)
    self_fake = model.decode(bundle_fake.identity_agg, bundle_fake.artifact_agg)
    cross_real = model.decode(bundle_real.identity_agg, bundle_fake.artifact_agg)
    cross_fake = model.decode(bundle_fake.identity_agg, bundle_real.artifact_agg)
    rec_self, rec_cross = reconstruction_loss(
        (pairs.real, pairs.fake), (self_real, self_fake), (cross_real, cross_fake))

    info = 0.0
    if config.ablation in ("pd_iacc", "full"):
        info = 0.5 * (iacc.info_loss(bundle_real).total + iacc.info_loss(bundle_fake).total)

    con_real, con_fake = 0.0, 0.0
    if config.ablation == "full":
        con_real, con_fake = separation_contrastive_loss(bundle_real, bundle_fake)

    return total_loss(bce, rec_self, rec_cross, con_real, con_fake, info,
                      weights, context=f"step {step}")


def train_step(state: TrainState, pairs: PairBatch, config: TrainConfig) -> tuple[TrainState, LossBreakdown]:
    """One optimizer update; returns the state and the loss breakdown."""
    state.model.train()
    state.optimizer.zero_grad(set_to_none=True)
    total, breakdown = _forward_losses(state.model, pairs, config, state.step)
    total.backward()
    state.optimizer.step()
    state.loss_history.append({"step": state.step, **breakdown.to_dict()})
    state.step += 1
    return state, breakdown


def save_checkpoint(state: TrainState, path: Path) -> Path:
    """Write `<path>.pt` (tensors + rng + optimizer) and a `<path>.json` sidecar."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "params": state.model.state_dict(),
        "optimizer": state.optimizer.state_dict(),
        "step": state.step,
        "rng_state": state.rng.bit_generator.state,
        "loss_history": state.loss_history,
        "config": state.config.to_dict(),
    }
    torch.save(payload, path.with_suffix(CHECKPOINT_SUFFIX))
    sidecar = {"model": state.config.model.to_dict(), "ablation": state.config.ablation,
               "step": state.step}
    path.with_suffix(SIDECAR_SUFFIX).write_text(json.dumps(sidecar, indent=2, sort_keys=True),
                                                encoding="utf-8")
    return path.with_suffix(CHECKPOINT_SUFFIX)


def load_checkpoint(path: Path, expect_ablation: str | None = None,
                    dtype: torch.dtype | None = None) -> TrainState:
    """Restore a TrainState exactly; optionally guard the ablation tag."""
    path = Path(path)
    ckpt_path = path if path.suffix == CHECKPOINT_SUFFIX else path.with_suffix(CHECKPOINT_SUFFIX)
    if not ckpt_path.exists():
        raise OSError(f"io-error: no checkpoint at {ckpt_path}")
    try:
        payload = torch.load(ckpt_path, map_location="cpu", weights_only=False)
        config = TrainConfig.from_dict(payload["config"])
    except (OSError, ValueError):
        raise
    except Exception as exc:
        raise OSError(f"io-error: corrupt checkpoint {ckpt_path}: {exc}") from exc
    if expect_ablation is not None and config.ablation != expect_ablation:
        raise ValueError(
            f"invalid-argument: checkpoint has ablation {config.ablation!r}, expected {expect_ablation!r}"
            " (component mismatch)")
    state = init_state(config, dtype=dtype)
    state.model.load_state_dict(payload["params"])
    state.optimizer.load_state_dict(payload["optimizer"])
    state.step = int(payload["step"])
    state.rng.bit_generator.state = payload["rng_state"]
    state.loss_history = list(payload["loss_history"])
    return state


def run_training(manifest: CorpusManifest, config: TrainConfig, out_dir: Path,
                 dtype: torch.dtype | None = None, log_every: int = 1) -> TrainState:
    """Train for config.steps on the train split, writing log.jsonl, periodic
    ckpt-<step> files, a final checkpoint, and config.json."""
    config.validate()
    if config.model.image_size != manifest.image_size:
        raise ValueError(
            f"invalid-argument: model image_size {config.model.image_size} != corpus {manifest.image_size}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True),
                                         encoding="utf-8")
    state = init_state(config, dtype=dtype)
    store = ImageStore(manifest)
    model_dtype = next(state.model.parameters()).dtype
    with (out_dir / "log.jsonl").open("w", encoding="utf-8") as log:
        for _ in range(config.steps):
            pairs = sample_pairs(manifest, "train", config.batch_size, state.rng,
                                 store=store, dtype=model_dtype)
            state, breakdown = train_step(state, pairs, config)
            if state.step % log_every == 0 or state.step == config.steps:
                log.write(json.dumps({"step": state.step - 1, **breakdown.to_dict()}) + "\n")
            if config.checkpoint_every and state.step % config.checkpoint_every == 0 \
                    and state.step < config.steps:
                save_checkpoint(state, out_dir / f"ckpt-{state.step}")
    save_checkpoint(state, out_dir / f"ckpt-{state.step}")
    return state
