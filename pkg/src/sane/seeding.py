"""Named, independent random streams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np

STREAMS = ("init", "env", "action", "reservoir", "replay", "merge", "eval")


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode("utf-8"))


def seed_streams(master_seed: int, names=STREAMS) -> dict[str, np.random.Generator]:
    """One generator per name, keyed by the name's CRC32 so streams are stable
    under reordering and independent of how often any other stream is used."""
    return {
        name: np.random.Generator(np.random.PCG64(
            np.random.SeedSequence(int(master_seed), spawn_key=(stream_key(name),))))
        for name in names
    }
