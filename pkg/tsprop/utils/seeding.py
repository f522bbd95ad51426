import hashlib
import json

import numpy as np

_SEED_MASK = (1 << 64) - 1


def derive_seed(master: int, purpose: str, index: int = 0) -> int:
    """Stable 64-bit sub-seed for (master, purpose, index); independent across purposes."""
    payload = {"master": int(master), "purpose": purpose, "index": int(index)}
    digest = hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).digest()
    return int.from_bytes(digest[:8], "little") & _SEED_MASK


def child_rng(seed: int, *key: int) -> np.random.Generator:
    """Generator for a fixed position in the spawn tree of `seed`."""
    ss = np.random.SeedSequence(entropy=int(seed) & _SEED_MASK, spawn_key=tuple(int(k) for k in key))
    return np.random.default_rng(ss)


def content_seed(master: int, purpose: str, values: np.ndarray) -> int:
    """Sub-seed keyed by the bytes of `values`, so a record gets the same seed in any batch."""
    digest = hashlib.sha256(np.ascontiguousarray(values, dtype=float).tobytes()).digest()
    return derive_seed(master, purpose, int.from_bytes(digest[:7], "little"))
