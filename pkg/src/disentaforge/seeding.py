"""Seed derivation and numeric-mode control.

Every random stream in the project is derived from a single run seed through
`seed_for(root, stream, *extra)`, so any module can be re-run in isolation and
reproduce exactly what a full run would have done. The stream names below are
the documented counter scheme; extra integers (e.g. a step counter) extend the
derivation.

Setting the environment variable ``DISENTAFORGE_DETERMINISTIC=1`` switches all
tensor math to float64 and enables torch's deterministic algorithms; this is
the mode the reproducibility tests run in.
"""

from __future__ import annotations

import os

import numpy as np
import torch

DETERMINISTIC_ENV = "DISENTAFORGE_DETERMINISTIC"

# Stream ids for seed derivation. Keep stable: checkpoints and corpora
# generated under one scheme must replay under the same scheme.
STREAMS = {
    "identity-spec": 0,
    "frame-jitter": 1,
    "forge": 2,
    "corpus-layout": 3,
    "encoder-1": 4,
    "encoder-2": 5,
    "separator": 6,
    "dcam": 7,
    "decoder": 8,
    "classifier": 9,
    "pair-sampling": 10,
    "iacc-noise": 11,
    "plot": 12,
}

_MASK64 = (1 << 64) - 1


def seed_for(root: int, stream: str, *extra: int) -> int:
    """Derive a 63-bit seed for a named stream from the run seed."""
    entropy = [int(root) & _MASK64, STREAMS[stream]]
    entropy.extend(int(e) & _MASK64 for e in extra)
    state = np.random.SeedSequence(entropy).generate_state(1, dtype=np.uint64)[0]
    return int(state) >> 1  # keep it in torch's signed-int64 comfort zone


def rng_for(root: int, stream: str, *extra: int) -> np.random.Generator:
    return np.random.default_rng(seed_for(root, stream, *extra))


def torch_generator(root: int, stream: str, *extra: int) -> torch.Generator:
    gen = torch.Generator()
    gen.manual_seed(seed_for(root, stream, *extra))
    return gen


def deterministic_mode() -> bool:
    return os.environ.get(DETERMINISTIC_ENV, "") == "1"


def active_dtype() -> torch.dtype:
    """float64 under DISENTAFORGE_DETERMINISTIC=1, float32 otherwise."""
    return torch.float64 if deterministic_mode() else torch.float32


def configure_torch() -> None:
    """Apply process-wide determinism settings when the env var is set."""
    if deterministic_mode():
        torch.use_deterministic_algorithms(True)
