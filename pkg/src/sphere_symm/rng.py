"""Seeded, splittable randomness (Philox counter-based streams; no global state)."""

import numpy as np


def seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF)


def generator(seed):
    return np.random.Generator(np.random.Philox(seed_sequence(seed)))


def split(seed, n):
    """n independent child seed sequences, stable for a given parent seed."""
    return seed_sequence(seed).spawn(n)


def child_seed(seed, index):
    """Deterministic 64-bit integer seed for the index-th child stream."""
    ss = np.random.SeedSequence(seed_sequence(seed).entropy, spawn_key=(int(index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])
