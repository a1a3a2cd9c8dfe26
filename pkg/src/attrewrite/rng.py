"""Named random streams derived from one seed.

Each stream name maps to a fixed spawn key, so adding a consumer of one
stream never shifts the draws seen by another.
"""
from __future__ import annotations

import zlib
from typing import Dict

import numpy as np

STREAMS = ("data", "noise", "bt", "init", "probe", "eval")


def stream(seed: int, name: str) -> np.random.Generator:
    key = zlib.crc32(name.encode("utf-8"))
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(key,))))


def streams(seed: int, names=STREAMS) -> Dict[str, np.random.Generator]:
    return {n: stream(seed, n) for n in names}


def get_state(gen: np.random.Generator) -> dict:
    return gen.bit_generator.state


def set_state(gen: np.random.Generator, state: dict) -> None:
    gen.bit_generator.state = state
