"""
Random stream derivation

Every random draw in a run descends from the single experiment seed. Streams
are keyed by name so that, for instance, the reward-noise stream can be held
fixed while the action stream varies.
"""

import zlib
from typing import Sequence

import numpy as np
import torch

STREAMS = ("init", "actions", "noise", "restarts", "evaluation")


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def derive_seed_sequence(seed: int, stream: str, *path: int) -> np.random.SeedSequence:
    """SeedSequence for (master seed, named stream, integer path such as iteration/worker)."""
    return np.random.SeedSequence([int(seed), stream_key(stream), *[int(p) for p in path]])


def derive_rng(seed: int, stream: str, *path: int) -> np.random.Generator:
    return np.random.default_rng(derive_seed_sequence(seed, stream, *path))


def spawn_rngs(seed: int, stream: str, count: int, *path: int) -> Sequence[np.random.Generator]:
    """Independent generators, one per worker/rollout, for a given (stream, path)."""
    children = derive_seed_sequence(seed, stream, *path).spawn(count)
    return [np.random.default_rng(child) for child in children]


def torch_generator(seed: int, stream: str = "init") -> torch.Generator:
    state = derive_seed_sequence(seed, stream).generate_state(1, dtype=np.uint64)[0]
    generator = torch.Generator()
    generator.manual_seed(int(state) & 0x7FFF_FFFF_FFFF_FFFF)
    return generator
