"""Deterministic seed splitting.

Every subordinate seed is ``SeedSequence([master, crc32(role), *indices])``
reduced to one 63-bit integer, so streams depend only on labels and never
on scheduling or worker count.
"""
from __future__ import annotations

import zlib

import numpy as np

NO_SEED = 2**32  # stands in for ``None`` inside seed material


def derive_seed(master: int | None, role: str, *indices: int | None) -> int:
    material = [NO_SEED if master is None else int(master), zlib.crc32(role.encode())]
    material += [NO_SEED if i is None else int(i) for i in indices]
    state = np.random.SeedSequence(material).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & (2**63 - 1)


def rng_for(master: int | None, role: str, *indices: int | None) -> np.random.Generator:
    return np.random.default_rng(derive_seed(master, role, *indices))
