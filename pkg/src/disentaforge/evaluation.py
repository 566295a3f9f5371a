"""Evaluation: frame/video AUC, split reports, embedding exports, and the
ablation matrix (efn -> pd -> pd_iacc -> full) over multiple seeds."""

from __future__ import annotations

import csv
import json
import statistics
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch
from scipy.stats import rankdata

from .datagen import CorpusManifest, ImageStore
from .nets import ABLATIONS
from .training import TrainConfig, TrainState, load_checkpoint, run_training

FEATURE_KINDS = ("id_pure1", "id_pure2", "art_pure1", "art_pure2", "id_raw1", "id_raw2")
EVAL_BATCH = 32


def roc_auc(scores, labels) -> float:
    """P(random positive outranks random negative), ties counted 0.5."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("invalid-argument: scores and labels must be equal-length vectors")
    pos = labels == 1
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise ValueError("invalid-argument: both classes must be present")
    ranks = rankdata(scores)  # average ranks implement the 0.5 tie convention
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def video_auc(frame_scores, group_ids, labels) -> float:
    """AUC over per-group mean scores; every group must be single-label."""
    frame_scores = np.asarray(frame_scores, dtype=np.float64)
    labels = np.asarray(labels)
    groups: dict[str, list[int]] = {}
    for i, gid in enumerate(group_ids):
        groups.setdefault(gid, []).append(i)
    means, glabels = [], []
    for gid, idx in groups.items():
        glab = set(labels[idx].tolist())
        if len(glab) != 1:
            raise ValueError(f"invalid-argument: group {gid!r} mixes labels")
        means.append(frame_scores[idx].mean())
        glabels.append(glab.pop())
    return roc_auc(np.array(means), np.array(glabels))


@dataclass
class EvalReport:
    splits: dict[str, dict]  # split -> {frame_auc, video_auc, n_frames, n_groups}
    ablation: str
    seed: int
    checkpoint: str

    def to_dict(self) -> dict:
        return {"splits": self.splits, "ablation": self.ablation,
                "seed": self.seed, "checkpoint": self.checkpoint}


def _score_split(state: TrainState, manifest: CorpusManifest, split: str,
                 store: ImageStore) -> tuple[np.ndarray, np.ndarray, list[str]]:
    records = manifest.split_records(split)
    dtype = next(state.model.parameters()).dtype
    scores = []
    state.model.eval()
    with torch.no_grad():
        for start in range(0, len(records), EVAL_BATCH):
            chunk = records[start:start + EVAL_BATCH]
            imgs = np.stack([store.get(r.sample_id) for r in chunk]).transpose(0, 3, 1, 2)
            batch = torch.from_numpy(np.ascontiguousarray(imgs)).to(dtype)
            scores.append(state.model.score(batch).numpy())
    labels = np.array([1 if r.label == "fake" else 0 for r in records])
    groups = [r.group_id for r in records]
    return np.concatenate(scores), labels, groups


def evaluate(checkpoint: Path, manifest: CorpusManifest,
             splits: tuple[str, ...] | None = None) -> EvalReport:
    """Score every requested split with deterministic (mean-noise) inference."""
    state = load_checkpoint(Path(checkpoint))
    if state.config.model.image_size != manifest.image_size:
        raise ValueError(
            f"invalid-argument: checkpoint image_size {state.config.model.image_size} "
            f"!= corpus {manifest.image_size}")
    splits = splits or tuple(manifest.splits.keys())
    store = ImageStore(manifest)
    report_splits = {}
    for split in splits:
        scores, labels, groups = _score_split(state, manifest, split, store)
        report_splits[split] = {
            "frame_auc": roc_auc(scores, labels),
            "video_auc": video_auc(scores, groups, labels),
            "n_frames": int(len(scores)),
            "n_groups": int(len(set(groups))),
        }
    return EvalReport(splits=report_splits, ablation=state.config.ablation,
                      seed=state.config.seed, checkpoint=str(checkpoint))


def bundle_vectors(state: TrainState, images: torch.Tensor) -> dict[str, np.ndarray]:
    """Pooled per-sample vectors for each exportable feature kind."""
    with torch.no_grad():
        if state.model.has_separation:
            bundle = state.model.disentangle(images, sample_noise=False)
            feats = {
                "id_pure1": bundle.id_pure[0], "id_pure2": bundle.id_pure[1],
                "art_pure1": bundle.art_pure[0], "art_pure2": bundle.art_pure[1],
                "id_raw1": bundle.id_raw[0], "id_raw2": bundle.id_raw[1],
            }
        else:
            enc1, enc2 = state.model.encode(images)
            feats = {"id_raw1": enc1, "id_raw2": enc2}
    return {k: v.mean(dim=(2, 3)).numpy() for k, v in feats.items()}


def export_embeddings(checkpoint: Path, manifest: CorpusManifest, split: str,
                      kinds: tuple[str, ...], out_csv: Path) -> Path:
    """Write pooled feature vectors as CSV: sample_id,label,method,kind,v0..v{d-1}."""
    unknown = set(kinds) - set(FEATURE_KINDS)
    if unknown:
        raise ValueError(f"invalid-argument: unknown feature kinds {sorted(unknown)}")
    state = load_checkpoint(Path(checkpoint))
    if not state.model.has_separation and any(not k.startswith("id_raw") for k in kinds):
        raise ValueError("invalid-argument: efn checkpoints expose only id_raw kinds")
    records = manifest.split_records(split)
    store = ImageStore(manifest)
    dtype = next(state.model.parameters()).dtype
    d = state.config.model.d
    out_csv = Path(out_csv)
    out_csv.parent.mkdir(parents=True, exist_ok=True)
    state.model.eval()
    with out_csv.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample_id", "label", "method", "kind"] + [f"v{i}" for i in range(d)])
        for start in range(0, len(records), EVAL_BATCH):
            chunk = records[start:start + EVAL_BATCH]
            imgs = np.stack([store.get(r.sample_id) for r in chunk]).transpose(0, 3, 1, 2)
            batch = torch.from_numpy(np.ascontiguousarray(imgs)).to(dtype)
            vectors = bundle_vectors(state, batch)
            for kind in kinds:
                for rec, vec in zip(chunk, vectors[kind]):
                    writer.writerow([rec.sample_id, rec.label, rec.method, kind]
                                    + [f"{v:.8g}" for v in vec.tolist()])
    return out_csv


@dataclass
class AblationResult:
    """Per-tag AUC lists (one entry per seed) plus their mean/std summary."""

    seeds: list[int]
    steps: int
    per_tag: dict[str, dict[str, list[float]]] = field(default_factory=dict)

    def mean(self, tag: str, split: str) -> float:
        return statistics.fmean(self.per_tag[tag][split])

    def std(self, tag: str, split: str) -> float:
        vals = self.per_tag[tag][split]
        return statistics.stdev(vals) if len(vals) > 1 else 0.0

    def rows(self) -> list[dict]:
        out = []
        for tag in ABLATIONS:
            if tag not in self.per_tag:
                continue
            out.append({
                "variant": tag,
                "test_in_mean": self.mean(tag, "test_in"),
                "test_in_std": self.std(tag, "test_in"),
                "test_cross_mean": self.mean(tag, "test_cross"),
                "test_cross_std": self.std(tag, "test_cross"),
                "n_seeds": len(self.seeds),
            })
        return out

    def write_csv(self, path: Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        rows = self.rows()
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
            writer.writeheader()
            writer.writerows(rows)
        return path


def run_ablation_matrix(manifest: CorpusManifest, seeds: tuple[int, ...], steps: int,
                        out_dir: Path, base_config: TrainConfig | None = None,
                        tags: tuple[str, ...] = ABLATIONS,
                        dtype: torch.dtype | None = None,
                        eval_splits: tuple[str, ...] = ("test_in", "test_cross")) -> AblationResult:
    """Train every ablation tag per seed, evaluate, and tabulate frame AUCs.

    Run directories land under out_dir/<tag>-seed<seed>; a summary CSV goes to
    out_dir/ablation.csv.
    """
    if len(seeds) < 2:
        raise ValueError("invalid-argument: need >= 2 seeds for the ablation matrix")
    base = base_config or TrainConfig()
    out_dir = Path(out_dir)
    result = AblationResult(seeds=list(seeds), steps=steps)
    for tag in tags:
        result.per_tag[tag] = {split: [] for split in eval_splits}
        for seed in seeds:
            config = TrainConfig.from_dict(base.to_dict())
            config.ablation = tag
            config.seed = seed
            config.steps = steps
            config.model.seed = seed
            config.model.image_size = manifest.image_size
            run_dir = out_dir / f"{tag}-seed{seed}"
            state = run_training(manifest, config, run_dir, dtype=dtype)
            report = evaluate(run_dir / f"ckpt-{state.step}", manifest, splits=eval_splits)
            (run_dir / "report.json").write_text(
                json.dumps(report.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
            for split in eval_splits:
                result.per_tag[tag][split].append(report.splits[split]["frame_auc"])
    result.write_csv(out_dir / "ablation.csv")
    return result
