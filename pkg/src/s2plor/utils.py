from __future__ import annotations

import os
import time
import uuid
from collections.abc import Iterator
from contextlib import contextmanager

import numpy as np

UNIT_ROUNDOFF = 2.0**-52


def env_flag(name: str, default: bool = False) -> bool:
    value = os.getenv(name)
    if value is None:
        return default
    return value.strip().lower() in {"1", "true", "yes", "on"}


def env_int(name: str, default: int) -> int:
    value = os.getenv(name)
    if value is None or not value.strip():
        return default
    return int(value)


def env_float(name: str, default: float) -> float:
    value = os.getenv(name)
    if value is None or not value.strip():
        return default
    return float(value)


def env_interval(name: str, default: tuple[float, float]) -> tuple[float, float]:
    value = os.getenv(name)
    if value is None or not value.strip():
        return default
    lo, hi = (float(part) for part in value.split(",", 1))
    return lo, hi


def make_rng(*entropy: int) -> np.random.Generator:
    return np.random.default_rng([int(e) for e in entropy])


def derive_session_id(seed: int) -> uuid.UUID:
    return uuid.UUID(bytes=make_rng(seed, 0x5E55).bytes(16))


def relative_errors(actual: np.ndarray, expected: np.ndarray) -> np.ndarray:
    actual = np.asarray(actual, dtype=np.float64)
    expected = np.asarray(expected, dtype=np.float64)
    diff = np.abs(actual - expected)
    denom = np.abs(expected)
    out = np.zeros_like(diff)
    # zero and subnormal oracles fall back to absolute error
    normal = denom >= np.finfo(np.float64).tiny
    out[normal] = diff[normal] / denom[normal]
    out[~normal] = diff[~normal]
    return out


def parse_address(value: str) -> tuple[str, int]:
    host, _, port = value.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"Endereco invalido: {value!r} (use host:porta).")
    return host, int(port)


class PhaseTimer:
    PHASES = ("offline", "online", "verification", "communication")

    def __init__(self) -> None:
        self.totals: dict[str, float] = {name: 0.0 for name in self.PHASES}

    def add(self, phase: str, seconds: float) -> None:
        self.totals[phase] = self.totals.get(phase, 0.0) + seconds

    @contextmanager
    def phase(self, name: str) -> Iterator[None]:
        start = time.perf_counter()
        try:
            yield
        finally:
            self.add(name, time.perf_counter() - start)

    def reset(self) -> None:
        for name in list(self.totals):
            self.totals[name] = 0.0

    def snapshot(self) -> dict[str, float]:
        return dict(self.totals)
