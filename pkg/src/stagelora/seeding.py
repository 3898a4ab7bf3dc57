"""Named sub-seeds derived from one root seed."""

from __future__ import annotations

import os
import zlib

import numpy as np

SEED_ENV = "SLRA_SEED"


def derive_seed(root: int, *names: str | int) -> int:
    """Deterministic 32-bit sub-seed for ``root`` and a path of names."""
    words = [int(root) & 0xFFFFFFFF]
    for n in names:
        words.append(n & 0xFFFFFFFF if isinstance(n, int) else zlib.crc32(n.encode("utf-8")))
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def rng_for(root: int, *names: str | int) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *names))


def default_seed(fallback: int = 0) -> int:
    raw = os.environ.get(SEED_ENV)
    return int(raw) if raw not in (None, "") else fallback


def fisher_yates(n: int, rng: np.random.Generator) -> list[int]:
    """Seeded Fisher-Yates permutation of ``range(n)``."""
    order = list(range(n))
    for i in range(n - 1, 0, -1):
        j = int(rng.integers(0, i + 1))
        order[i], order[j] = order[j], order[i]
    return order
