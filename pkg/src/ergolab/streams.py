"""Deterministic random streams.

Every simulated path owns generators derived from ``(seed, path_index)``
through :class:`numpy.random.SeedSequence` spawn keys, so a path's
randomness never depends on how many paths are run, in which order, or on
how many workers share the load.  The spawn key layout is::

    (path_index, purpose)

with ``purpose`` one of :data:`NOISE`, :data:`ACTION`, :data:`BRIDGE`.
Experiment-level seeds are split the same way with a string label hashed
into the key (:func:`child_seed`).
"""

import hashlib

import numpy as np

NOISE = 0
ACTION = 1
BRIDGE = 2
AUX = 3

SEED_MASK = (1 << 64) - 1


def path_generator(seed, path_index, purpose=NOISE):
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=(int(path_index), int(purpose)))
    return np.random.Generator(np.random.PCG64(ss))


def label_key(label):
    digest = hashlib.sha256(label.encode()).digest()
    return int.from_bytes(digest[:4], "little")


def child_seed(seed, *labels):
    """64-bit seed for a named sub-experiment of ``seed``.

    Labels may be strings or non-negative integers (e.g. a replicate index).
    """
    key = tuple(label_key(lab) if isinstance(lab, str) else int(lab) for lab in labels)
    ss = np.random.SeedSequence(int(seed) & SEED_MASK, spawn_key=key)
    lo, hi = ss.generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)


def aux_generator(seed, *labels):
    """Generator for non-path randomness (bootstrap resampling, synthetic draws)."""
    return np.random.Generator(np.random.PCG64(child_seed(seed, "aux", *labels)))
