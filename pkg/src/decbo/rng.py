"""Deterministic random-stream derivation keyed by (agent, role, k, t).

Every stream is derived from the master seed through a SeedSequence
spawn key, so results never depend on scheduling or worker count.
"""

from dataclasses import dataclass

import numpy as np

ROLE_IDS = {
    "data": 0,
    "init": 1,
    "inner": 2,
    "outer": 3,
    "hypergrad": 4,
    "jhip": 5,
}


@dataclass(frozen=True)
class RngPlan:
    master_seed: int

    def stream(self, agent: int, role: str, outer: int = 0, inner: int = 0) -> np.random.Generator:
        """Independent generator for the given key; same key, same stream."""
        key = (int(agent), ROLE_IDS[role], int(outer), int(inner))
        seq = np.random.SeedSequence(entropy=int(self.master_seed), spawn_key=key)
        return np.random.default_rng(seq)
