"""Synthetic real/fake face-like corpus.

"Real" images are procedural faces rendered from an IdentitySpec (palette,
ellipse geometry, texture frequency — all derived from one seed). "Fake"
images splice the face interior of a *source* identity into a *target* render
and post-process it with one of four styles, so every fake carries content
from two identities coupled together. Frames are grouped into pseudo-videos;
splits follow a leave-one-method-out protocol with disjoint identity pools
between train and test_cross.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.ndimage import binary_dilation, binary_erosion, gaussian_filter, map_coordinates

from .seeding import seed_for, rng_for

METHODS = ("blend_hue", "boundary_splice", "noise_texture", "warp_lowfreq")
REAL_METHOD = "none"
LABELS = ("real", "fake")
SPLIT_NAMES = ("train", "test_in", "test_cross")

MIN_IMAGE_SIZE = 16
SEAM_MARGIN_PX = 4  # boundary_splice edits stay within face mask +/- this


# ---------------------------------------------------------------------------
# identity specs and rendering
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IdentitySpec:
    """Parameters of one procedural face; fully determined by its seed."""

    seed: int
    palette: tuple[tuple[float, float, float], ...]  # background, skin, accent
    geometry: tuple[float, ...]  # cx, cy, rx, ry, eye_dx, eye_y, eye_r, mouth_y, mouth_rx, mouth_ry, theta
    texture_freq: float

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "palette": [list(c) for c in self.palette],
            "geometry": list(self.geometry),
            "texture_freq": self.texture_freq,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IdentitySpec":
        return cls(
            seed=int(d["seed"]),
            palette=tuple(tuple(float(v) for v in c) for c in d["palette"]),
            geometry=tuple(float(v) for v in d["geometry"]),
            texture_freq=float(d["texture_freq"]),
        )


def make_identity_spec(seed: int) -> IdentitySpec:
    """Draw palette/geometry/texture for an identity from its seed."""
    rng = rng_for(seed, "identity-spec")
    palette = tuple(tuple(rng.uniform(0.15, 0.9, size=3).tolist()) for _ in range(3))
    geometry = (
        rng.uniform(0.46, 0.54),   # face center x
        rng.uniform(0.47, 0.55),   # face center y
        rng.uniform(0.26, 0.33),   # face radius x
        rng.uniform(0.30, 0.38),   # face radius y
        rng.uniform(0.10, 0.14),   # eye offset from center
        rng.uniform(0.38, 0.45),   # eye row
        rng.uniform(0.030, 0.050), # eye radius
        rng.uniform(0.60, 0.67),   # mouth row
        rng.uniform(0.08, 0.14),   # mouth radius x
        rng.uniform(0.025, 0.045), # mouth radius y
        rng.uniform(0.0, np.pi),   # texture orientation
    )
    texture_freq = float(rng.uniform(2.5, 6.0))
    return IdentitySpec(seed=int(seed), palette=palette, geometry=geometry, texture_freq=texture_freq)


def jitter_identity_spec(spec: IdentitySpec, frame: int, scale: float = 1.0) -> IdentitySpec:
    """Small per-frame perturbation of a base identity (same face, new frame).

    The jittered spec gets its own derived seed so the seed->image invariant
    stays intact; palette shifts <=0.02 and geometry <=2% keep frames of a
    group visually the same identity.
    """
    rng = rng_for(spec.seed, "frame-jitter", frame)
    palette = tuple(
        tuple(np.clip(np.asarray(c) + rng.uniform(-0.02, 0.02, size=3) * scale, 0.02, 0.98).tolist())
        for c in spec.palette
    )
    geo = np.asarray(spec.geometry)
    geo = geo * (1.0 + rng.uniform(-0.02, 0.02, size=geo.shape) * scale)
    texture_freq = float(spec.texture_freq * (1.0 + scale * rng.uniform(-0.03, 0.03)))
    derived_seed = seed_for(spec.seed, "frame-jitter", frame, 1)
    return IdentitySpec(seed=derived_seed, palette=palette, geometry=tuple(geo.tolist()),
                        texture_freq=texture_freq)


def _grid(size: int) -> tuple[np.ndarray, np.ndarray]:
    axis = (np.arange(size, dtype=np.float64) + 0.5) / size
    return np.meshgrid(axis, axis)  # xx, yy


def _soft_ellipse(xx, yy, cx, cy, rx, ry, size, edge_px: float = 1.5) -> np.ndarray:
    """Ellipse mask with a soft edge about edge_px wide, values in [0,1]."""
    q = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    signed_px = (1.0 - q) * min(rx, ry) * size
    return np.clip(0.5 + signed_px / (2.0 * edge_px), 0.0, 1.0)


def render_identity(spec: IdentitySpec, size: int) -> np.ndarray:
    """Render one face; returns (size, size, 3) float32 in [0,1]."""
    if size < MIN_IMAGE_SIZE:
        raise ValueError(f"invalid-argument: size must be >= {MIN_IMAGE_SIZE}, got {size}")
    xx, yy = _grid(size)
    cx, cy, rx, ry, eye_dx, eye_y, eye_r, mouth_y, mouth_rx, mouth_ry, theta = spec.geometry
    bg, skin, accent = (np.asarray(c) for c in spec.palette)

    tex = 0.5 * (1.0 + np.sin(2.0 * np.pi * spec.texture_freq * (xx * np.cos(theta) + yy * np.sin(theta))))
    shade = 0.80 + 0.25 * yy + 0.10 * tex
    img = bg[None, None, :] * shade[..., None]

    face = _soft_ellipse(xx, yy, cx, cy, rx, ry, size)
    face_color = skin[None, None, :] * (0.72 + 0.30 * tex)[..., None]
    img = img * (1.0 - face[..., None]) + face_color * face[..., None]

    dark = accent * 0.25
    for sign in (-1.0, 1.0):
        eye = _soft_ellipse(xx, yy, cx + sign * eye_dx, eye_y, eye_r, eye_r, size)
        img = img * (1.0 - eye[..., None]) + dark[None, None, :] * eye[..., None]

    mouth = _soft_ellipse(xx, yy, cx, mouth_y, mouth_rx, mouth_ry, size)
    img = img * (1.0 - mouth[..., None]) + accent[None, None, :] * mouth[..., None]

    return np.clip(img, 0.0, 1.0).astype(np.float32)


def face_region_mask(spec: IdentitySpec, size: int) -> np.ndarray:
    """Binary interior-of-face mask (slightly inside the face ellipse)."""
    xx, yy = _grid(size)
    cx, cy, rx, ry = spec.geometry[:4]
    q = np.sqrt(((xx - cx) / rx) ** 2 + ((yy - cy) / ry) ** 2)
    return q <= 0.92


# ---------------------------------------------------------------------------
# forgery methods
# ---------------------------------------------------------------------------

def _hue_rotation_matrix(angle: float) -> np.ndarray:
    """Rotation of RGB space around the gray axis by `angle` radians."""
    c, s = np.cos(angle), np.sin(angle)
    one_third = 1.0 / 3.0
    sq = np.sqrt(1.0 / 3.0)
    m = np.full((3, 3), one_third * (1.0 - c))
    m += np.eye(3) * c
    m += s * np.array([[0.0, -sq, sq], [sq, 0.0, -sq], [-sq, sq, 0.0]])
    return m


def forge(source: IdentitySpec, target: IdentitySpec, method: str, size: int,
          noise_seed: int) -> np.ndarray:
    """Splice the source face interior into the target render.

    Outside the target's face region the output equals render_identity(target)
    (boundary_splice may additionally touch a seam band of +/-2 px around the
    region edge). Deterministic in all arguments.
    """
    if method not in METHODS:
        raise ValueError(f"invalid-argument: method must be one of {METHODS}, got {method!r}")
    tgt = render_identity(target, size).astype(np.float64)
    src = render_identity(source, size).astype(np.float64)
    mask = face_region_mask(target, size)
    mf = mask.astype(np.float64)[..., None]
    rng = rng_for(noise_seed, "forge", source.seed, target.seed, METHODS.index(method))

    if method == "blend_hue":
        inner = 0.65 * src + 0.35 * tgt
        angle = 0.5 + 0.35 * rng.random()
        inner = np.clip(inner @ _hue_rotation_matrix(angle).T, 0.0, 1.0)
        out = tgt * (1.0 - mf) + inner * mf
    elif method == "boundary_splice":
        out = tgt * (1.0 - mf) + src * mf
        band = binary_dilation(mask, iterations=2) & ~binary_erosion(mask, iterations=2)
        blurred = gaussian_filter(out, sigma=(1.2, 1.2, 0.0))
        out = np.where(band[..., None], blurred, out)
    elif method == "noise_texture":
        noise = gaussian_filter(rng.standard_normal((size, size, 3)), sigma=(1.5, 1.5, 0.0))
        noise /= max(noise.std(), 1e-8)
        out = np.clip(tgt * (1.0 - mf) + (src + 0.12 * noise) * mf, 0.0, 1.0)
    else:  # warp_lowfreq
        yy_px, xx_px = np.mgrid[0:size, 0:size].astype(np.float64)
        amp = 0.035 * size
        kx, ky = rng.integers(1, 3), rng.integers(1, 3)
        ph1, ph2 = rng.uniform(0, 2 * np.pi, size=2)
        dx = amp * np.sin(2 * np.pi * ky * yy_px / size + ph1)
        dy = amp * np.cos(2 * np.pi * kx * xx_px / size + ph2)
        warped = np.stack(
            [map_coordinates(src[..., c], [yy_px + dy, xx_px + dx], order=1, mode="nearest")
             for c in range(3)], axis=-1)
        out = tgt * (1.0 - mf) + warped * mf

    return np.clip(out, 0.0, 1.0).astype(np.float32)


# ---------------------------------------------------------------------------
# corpus records and manifest
# ---------------------------------------------------------------------------

@dataclass
class ForgeryRecord:
    sample_id: str
    label: str  # "real" | "fake"
    source_identity: IdentitySpec | None
    target_identity: IdentitySpec
    method: str  # "none" for reals
    group_id: str
    image_path: str

    def to_dict(self) -> dict:
        return {
            "sample_id": self.sample_id,
            "label": self.label,
            "source_identity": None if self.source_identity is None else self.source_identity.to_dict(),
            "target_identity": self.target_identity.to_dict(),
            "method": self.method,
            "group_id": self.group_id,
            "image_path": self.image_path,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ForgeryRecord":
        return cls(
            sample_id=d["sample_id"],
            label=d["label"],
            source_identity=None if d["source_identity"] is None else IdentitySpec.from_dict(d["source_identity"]),
            target_identity=IdentitySpec.from_dict(d["target_identity"]),
            method=d["method"],
            group_id=d["group_id"],
            image_path=d["image_path"],
        )


@dataclass
class CorpusManifest:
    records: list[ForgeryRecord]
    image_size: int
    splits: dict[str, list[str]]
    generator_seed: int
    root: Path | None = None  # set on load; not serialized

    def record_by_id(self, sample_id: str) -> ForgeryRecord:
        if not hasattr(self, "_index"):
            self._index = {r.sample_id: r for r in self.records}
        return self._index[sample_id]

    def split_records(self, split: str) -> list[ForgeryRecord]:
        if split not in self.splits:
            raise ValueError(f"invalid-argument: unknown split {split!r}")
        return [self.record_by_id(s) for s in self.splits[split]]

    def to_dict(self) -> dict:
        return {
            "records": [r.to_dict() for r in self.records],
            "image_size": self.image_size,
            "splits": self.splits,
            "generator_seed": self.generator_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CorpusManifest":
        return cls(
            records=[ForgeryRecord.from_dict(r) for r in d["records"]],
            image_size=int(d["image_size"]),
            splits={k: list(v) for k, v in d["splits"].items()},
            generator_seed=int(d["generator_seed"]),
        )


def save_manifest(manifest: CorpusManifest, root: Path) -> Path:
    path = Path(root) / "manifest.json"
    path.write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True), encoding="utf-8")
    return path


def load_manifest(root: Path) -> CorpusManifest:
    root = Path(root)
    path = root / "manifest.json"
    if not path.exists():
        raise OSError(f"io-error: no manifest at {path}")
    manifest = CorpusManifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
    manifest.root = root
    return manifest


def load_image(manifest: CorpusManifest, record: ForgeryRecord) -> np.ndarray:
    """Decode one corpus image to float32 (H, W, 3) in [0,1]."""
    if manifest.root is None:
        raise ValueError("invalid-argument: manifest has no root directory; load it via load_manifest")
    with Image.open(Path(manifest.root) / record.image_path) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return arr


def validate_manifest(manifest: CorpusManifest, check_files: bool = True) -> None:
    """Raise ValueError on any violated corpus invariant."""
    seen: set[str] = set()
    for split, ids in manifest.splits.items():
        for sid in ids:
            if sid in seen:
                raise ValueError(f"invalid-argument: sample {sid} appears in multiple splits")
            seen.add(sid)
        labels = {manifest.record_by_id(s).label for s in ids}
        if labels != set(LABELS):
            raise ValueError(f"invalid-argument: split {split!r} lacks a label: has {labels}")
    group_tag: dict[str, tuple[str, str]] = {}
    for rec in manifest.records:
        real = rec.label == "real"
        if real != (rec.method == REAL_METHOD) or real != (rec.source_identity is None):
            raise ValueError(f"invalid-argument: label/method/source inconsistent for {rec.sample_id}")
        tag = (rec.label, rec.method)
        if group_tag.setdefault(rec.group_id, tag) != tag:
            raise ValueError(f"invalid-argument: group {rec.group_id} mixes labels or methods")
        if check_files and manifest.root is not None:
            if not (Path(manifest.root) / rec.image_path).exists():
                raise OSError(f"io-error: missing image file {rec.image_path}")


# ---------------------------------------------------------------------------
# corpus generation
# ---------------------------------------------------------------------------

@dataclass
class GeneratorConfig:
    out_dir: Path
    seed: int = 0
    identities: int = 8
    methods: tuple[str, ...] = METHODS
    holdout: str = "warp_lowfreq"
    frames_per_group: int = 4
    groups: int = 60
    image_size: int = 64
    cross_fraction: float = 0.25   # share of groups in test_cross
    test_in_fraction: float = 0.20  # share of groups in test_in

    def validate(self) -> None:
        if self.identities < 8:
            raise ValueError("invalid-argument: need at least 8 identities")
        if len(self.methods) < 2:
            raise ValueError("invalid-argument: need at least 2 forgery methods")
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"invalid-argument: unknown methods {sorted(unknown)}")
        if self.holdout not in self.methods:
            raise ValueError(f"invalid-argument: holdout {self.holdout!r} not in methods")
        if self.frames_per_group < 4:
            raise ValueError("invalid-argument: frames_per_group must be >= 4")
        if self.image_size < MIN_IMAGE_SIZE:
            raise ValueError(f"invalid-argument: image_size must be >= {MIN_IMAGE_SIZE}")
        if self.groups < 6:
            raise ValueError("invalid-argument: need >= 6 groups (two per split)")


def _split_group_counts(cfg: GeneratorConfig) -> dict[str, int]:
    n_cross = max(2, round(cfg.groups * cfg.cross_fraction))
    n_test_in = max(2, round(cfg.groups * cfg.test_in_fraction))
    n_train = cfg.groups - n_cross - n_test_in
    if n_train < 2:
        raise ValueError("invalid-argument: too few groups for the train split")
    return {"train": n_train, "test_in": n_test_in, "test_cross": n_cross}


def generate_corpus(cfg: GeneratorConfig) -> CorpusManifest:
    """Render the corpus to cfg.out_dir and return its manifest.

    Split design: train and test_in draw identities from one pool and use all
    methods except the holdout; test_cross uses only the holdout method and a
    disjoint identity pool. Groups are pseudo-videos: frames of one group share
    a base identity (or identity pair) with small per-frame jitter.
    """
    cfg.validate()
    root = Path(cfg.out_dir)
    try:
        (root / "images").mkdir(parents=True, exist_ok=True)
        probe = root / ".write-probe"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise OSError(f"io-error: output directory not writable: {root} ({exc})") from exc

    layout_rng = rng_for(cfg.seed, "corpus-layout")
    n_cross_pool = max(2, int(np.ceil(cfg.identities * 0.3)))
    identity_seeds = [seed_for(cfg.seed, "identity-spec", i) for i in range(cfg.identities)]
    pools = {
        "train": identity_seeds[: cfg.identities - n_cross_pool],
        "test_in": identity_seeds[: cfg.identities - n_cross_pool],
        "test_cross": identity_seeds[cfg.identities - n_cross_pool:],
    }
    train_methods = [m for m in cfg.methods if m != cfg.holdout]
    split_methods = {"train": train_methods, "test_in": train_methods, "test_cross": [cfg.holdout]}
    counts = _split_group_counts(cfg)

    records: list[ForgeryRecord] = []
    splits: dict[str, list[str]] = {name: [] for name in SPLIT_NAMES}
    gidx = 0
    sample_counter = 0
    for split in SPLIT_NAMES:
        pool = pools[split]
        methods = split_methods[split]
        n_groups = counts[split]
        n_fake = max(1, n_groups // 2)
        n_real = n_groups - n_fake
        if n_real < 1:
            raise ValueError("invalid-argument: split too small to hold both labels")
        plans = []
        for k in range(n_real):
            tgt = pool[int(layout_rng.integers(len(pool)))]
            plans.append(("real", REAL_METHOD, None, tgt))
        for k in range(n_fake):
            method = methods[k % len(methods)]
            src, tgt = layout_rng.choice(len(pool), size=2, replace=False)
            plans.append(("fake", method, pool[int(src)], pool[int(tgt)]))
        layout_rng.shuffle(plans)

        for label, method, src_seed, tgt_seed in plans:
            group_id = f"g{gidx:04d}-{label}-{method}-t{identity_seeds.index(tgt_seed)}" + (
                f"-s{identity_seeds.index(src_seed)}" if src_seed is not None else "")
            tgt_base = make_identity_spec(tgt_seed)
            src_base = make_identity_spec(src_seed) if src_seed is not None else None
            for f in range(cfg.frames_per_group):
                frame_key = gidx * 100003 + f
                tgt_spec = jitter_identity_spec(tgt_base, frame_key)
                sample_id = f"s{sample_counter:05d}"
                image_path = f"images/{sample_id}.png"
                if label == "real":
                    img = render_identity(tgt_spec, cfg.image_size)
                    src_spec = None
                else:
                    src_spec = jitter_identity_spec(src_base, frame_key)
                    noise_seed = seed_for(cfg.seed, "forge", gidx, f)
                    img = forge(src_spec, tgt_spec, method, cfg.image_size, noise_seed)
                Image.fromarray((np.round(img * 255.0)).astype(np.uint8)).save(root / image_path)
                records.append(ForgeryRecord(
                    sample_id=sample_id, label=label, source_identity=src_spec,
                    target_identity=tgt_spec, method=method, group_id=group_id,
                    image_path=image_path))
                splits[split].append(sample_id)
                sample_counter += 1
            gidx += 1

    manifest = CorpusManifest(records=records, image_size=cfg.image_size,
                              splits=splits, generator_seed=cfg.seed, root=root)
    validate_manifest(manifest)
    save_manifest(manifest, root)
    return manifest


class ImageStore:
    """In-memory cache of decoded corpus images keyed by sample id."""

    def __init__(self, manifest: CorpusManifest):
        self.manifest = manifest
        self._cache: dict[str, np.ndarray] = {}

    def get(self, sample_id: str) -> np.ndarray:
        arr = self._cache.get(sample_id)
        if arr is None:
            arr = load_image(self.manifest, self.manifest.record_by_id(sample_id))
            self._cache[sample_id] = arr
        return arr
