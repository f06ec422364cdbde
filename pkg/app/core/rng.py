"""
Counter-based random streams.

Each stream is a Philox generator whose 128-bit key packs (seed, stream
index). Monte Carlo path i draws from stream (seed, i); batches only
group paths for the workers, so results depend on the seed alone and never
on the batch size or the number of workers.
"""
import numpy as np

from app.exceptions import ValidationFailure

_U64 = 1 << 64


def stream(seed: int, index: int = 0) -> np.random.Generator:
    if not (0 <= seed < _U64 and 0 <= index < _U64):
        raise ValidationFailure(f"seed and stream index must fit in 64 bits, got {seed}, {index}")
    return np.random.Generator(np.random.Philox(key=(seed << 64) | index))


def batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    if batch_size < 1:
        raise ValidationFailure(f"batch size must be positive, got {batch_size}")
    return [(lo, min(lo + batch_size, n)) for lo in range(0, n, batch_size)]
