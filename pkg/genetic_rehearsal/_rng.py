"""
Seed fan-out helpers.

Every experiment starts from a single master seed.  Each stage draws its own
stream from ``SeedSequence([master, crc32(stage), len(indices), *indices])``
so that re-running one stage never perturbs the numbers another stage sees.
The index count is part of the key: ``(stage,)`` and ``(stage, 0)`` differ::

    from genetic_rehearsal._rng import derive_rng

    rng = derive_rng(7, "ga", 3, 0)   # class 3, culture 0
"""

from __future__ import annotations

import zlib
from typing import Union

import numpy as np

RngLike = Union[None, int, np.random.Generator]


def _stage_key(stage: str) -> int:
    return zlib.crc32(stage.encode("utf-8"))


def derive_seed(master: int, stage: str, *indices: int) -> int:
    """Return a 32-bit seed for ``stage`` (and optional integer indices)."""
    seq = np.random.SeedSequence([int(master), _stage_key(stage), len(indices), *(int(i) for i in indices)])
    return int(seq.generate_state(1)[0])


def derive_rng(master: int, stage: str, *indices: int) -> np.random.Generator:
    """Return an independent generator for ``stage``."""
    return np.random.default_rng(derive_seed(master, stage, *indices))


def as_generator(rng: RngLike) -> np.random.Generator:
    """Coerce ``None`` / an int seed / a generator into a ``numpy.random.Generator``."""
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def int_seed(rng: np.random.Generator) -> int:
    """Draw a plain int seed for APIs that take ``random_state`` (scikit-learn)."""
    return int(rng.integers(0, 2**31 - 1))
