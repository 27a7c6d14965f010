"""One top-level seed, split deterministically per consumer."""

import numpy as np

CONSUMERS = {"data": 0, "init": 1, "batches": 2, "eps": 3, "probe": 4}


def seed_for(seed: int, consumer: str) -> np.random.SeedSequence:
    return np.random.SeedSequence([int(seed), CONSUMERS[consumer]])


def rng_for(seed: int, consumer: str) -> np.random.Generator:
    return np.random.default_rng(seed_for(seed, consumer))
