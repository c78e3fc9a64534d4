import zlib
from typing import Optional, Tuple

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from .exceptions import InvalidRangeError

_MASK64 = (1 << 64) - 1


def _tag_key(tag: str) -> int:
    # CRC-32 is stable across interpreter runs, unlike hash()
    return zlib.crc32(tag.encode("utf-8"))


class SeedPath(BaseModel):
    """Addresses one independent random stream: a root seed plus (purpose, index) steps.

    The stream is counter-based (Philox), so sample k of a dataset can be
    drawn without touching samples 0..k-1.
    """
    model_config = ConfigDict(frozen=True)

    root_seed: int = Field(..., ge=0)
    path: Tuple[Tuple[str, int], ...] = ()

    def child(self, tag: str, index: int = 0) -> "SeedPath":
        return SeedPath(root_seed=self.root_seed, path=self.path + ((tag, int(index)),))

    def spawn_key(self) -> Tuple[int, ...]:
        key: list[int] = []
        for tag, index in self.path:
            key.extend((_tag_key(tag), int(index) & _MASK64))
        return tuple(key)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(self.root_seed & _MASK64, spawn_key=self.spawn_key())
        return np.random.Generator(np.random.Philox(seq))

    def __str__(self) -> str:
        steps = "/".join(f"{t}:{i}" for t, i in self.path)
        return f"{self.root_seed}/{steps}" if steps else str(self.root_seed)


# --- Sampling helpers ---

def _rng(rng) -> np.random.Generator:
    return rng.generator() if isinstance(rng, SeedPath) else rng


def sample_uniform(lo: float, hi: float, rng, size: Optional[int] = None):
    """Uniform draw on [lo, hi]; a degenerate range returns lo exactly."""
    if lo > hi:
        raise InvalidRangeError(f"Invalid range [{lo}, {hi}]: lo > hi")
    gen = _rng(rng)
    if lo == hi:
        return float(lo) if size is None else np.full(size, float(lo))
    value = gen.uniform(lo, hi, size=size)
    return float(value) if size is None else value


def sample_uniform_int(lo: int, hi: int, rng) -> int:
    """Uniform integer on [lo, hi], both ends inclusive."""
    if lo > hi:
        raise InvalidRangeError(f"Invalid range [{lo}, {hi}]: lo > hi")
    return int(_rng(rng).integers(lo, hi, endpoint=True))


def sample_bernoulli(p: float, rng) -> bool:
    if not 0.0 <= p <= 1.0:
        raise InvalidRangeError(f"Probability {p} outside [0, 1]")
    return bool(_rng(rng).random() < p)


def sample_unit(rng, size: Optional[int] = None):
    """The symmetric draw on [-1, 1] used by every strength formula."""
    return sample_uniform(-1.0, 1.0, rng, size=size)
