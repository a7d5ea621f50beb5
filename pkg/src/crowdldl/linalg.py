"""Small numeric helpers shared by every module: stable softmax variants,
Xavier-uniform initialization, and named deterministic RNG streams.

Everything is float64. Shape mismatches raise instead of broadcasting so the
hand-written gradient code stays auditable.
"""

import numpy as np

# fixed ids for the named streams; order is part of the reproducibility contract
STREAMS = {"init": 0, "datagen": 1, "shuffle": 2}


class DimensionError(ValueError):
    pass


def rng_stream(seed, stream):
    """Deterministic generator for a (seed, stream-name) pair.

    Philox is counter-based, so identical (seed, stream) gives identical
    draws on every platform.
    """
    if stream not in STREAMS:
        raise ValueError(f"unknown rng stream {stream!r}")
    return np.random.Generator(np.random.Philox(key=np.uint64(seed) * np.uint64(1000) + np.uint64(STREAMS[stream])))


def substream(seed, stream, index):
    """Per-item generator (e.g. one per dataset sample), independent of order."""
    base = rng_stream(seed, stream)
    # jumped(i) gives non-overlapping counter ranges of the same Philox stream
    return np.random.Generator(base.bit_generator.jumped(index + 1))


def as_vector(v):
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise DimensionError(f"expected a vector, got shape {a.shape}")
    return a


def softmax(v):
    """Stable softmax; output sums to 1, entries in [0, 1]."""
    a = as_vector(v)
    if a.size == 0:
        raise DimensionError("softmax of empty vector")
    e = np.exp(a - np.max(a))
    return e / np.sum(e)


def log_softmax(v):
    """log(softmax(v)) without intermediate underflow."""
    a = as_vector(v)
    if a.size == 0:
        raise DimensionError("log_softmax of empty vector")
    shifted = a - np.max(a)
    return shifted - np.log(np.sum(np.exp(shifted)))


def xavier_uniform(rows, cols, rng):
    """Uniform on [-b, b] with b = sqrt(6 / (fan_in + fan_out)), fan_in=rows."""
    if rows < 1 or cols < 1:
        raise DimensionError(f"invalid shape ({rows}, {cols})")
    bound = np.sqrt(6.0 / (rows + cols))
    return rng.uniform(-bound, bound, size=(rows, cols))
