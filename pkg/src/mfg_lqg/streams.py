"""Counter-based random streams keyed by (seed, replica, role, index).

Each stream is a Philox generator whose key comes from the experiment seed and
whose starting counter encodes the replica, the role and a sub-index (e.g. a
player number). Streams are therefore independent of the order in which they
are created, and the first ``k`` draws of a stream never depend on how many
draws follow, which gives common random numbers across player counts.
"""

from __future__ import annotations

import numpy as np

ROLES = {"W": 0, "B": 1, "Y": 2, "init": 3}


def _key(seed: int) -> np.ndarray:
    return np.random.SeedSequence(seed).generate_state(2, np.uint64)


def stream(seed: int, replica: int, role: str, index: int = 0) -> np.random.Generator:
    """Generator for one (replica, role, index) triple of an experiment."""
    if role not in ROLES:
        raise ValueError(f"unknown role {role!r}, expected one of {sorted(ROLES)}")
    counter = np.array([0, index, replica, ROLES[role]], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=_key(seed), counter=counter))


class StreamFactory:
    """Caches the key of an experiment seed."""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._key = _key(self.seed)

    def __call__(self, replica: int, role: str, index: int = 0) -> np.random.Generator:
        counter = np.array([0, index, replica, ROLES[role]], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))
