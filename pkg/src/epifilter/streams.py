"""Named random streams derived deterministically from one master seed.

Every stochastic operation in the package draws from an explicit
``numpy.random.Generator``.  An experiment splits its master seed into
independent named streams (population, spinup, truth, ensemble init,
observation noise, one stream per member) so that a run is reproducible
bit-for-bit and members can be advanced in any order or in parallel
without changing the result.
"""
from __future__ import annotations

import numpy as np

# Stable spawn-key slots; never renumber, or old seeds change meaning.
POPULATION = 0
SPINUP = 1
TRUTH = 2
INIT = 3
NOISE = 4
MEMBER = 5

_NAMES = {
    POPULATION: "population",
    SPINUP: "spinup",
    TRUTH: "truth",
    INIT: "init",
    NOISE: "noise",
}


def derive(master_seed: int, *key: int) -> np.random.Generator:
    """Generator for the stream addressed by ``key`` under ``master_seed``."""
    return np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=tuple(key)))


def member_stream(master_seed: int, k: int) -> np.random.Generator:
    """Stream that advances member ``k`` (1-based; the reference member is N+1)."""
    return derive(master_seed, MEMBER, k)


def stream_table(master_seed: int, n_members: int) -> dict[str, list[int]]:
    """Name -> spawn key map for the run manifest."""
    table = {name: [slot] for slot, name in _NAMES.items()}
    for k in range(1, n_members + 1):
        table[f"member-{k}"] = [MEMBER, k]
    table[f"member-{n_members + 1}-reference"] = [MEMBER, n_members + 1]
    return table
