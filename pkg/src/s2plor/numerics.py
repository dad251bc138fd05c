from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import NumericsError, ShapeError

SIGN_WEIGHT_LOW = 0.1


class SplitMode(str, Enum):
    SIGN_CONSISTENT = "sign"
    RANGE_EXPANDED = "range"


@dataclass(frozen=True)
class SplitParams:
    rho: int = 2
    mode: SplitMode = SplitMode.SIGN_CONSISTENT
    theta: float = 1.0

    def __post_init__(self) -> None:
        if self.rho < 2:
            raise NumericsError(f"rho precisa ser >= 2 (recebido {self.rho}).")
        if not self.theta >= 1:
            raise NumericsError(f"theta precisa ser >= 1 (recebido {self.theta}).")
        object.__setattr__(self, "mode", SplitMode(self.mode))

    @property
    def lifted(self) -> int:
        return self.rho * self.rho


def as_vector(values, name: str = "vetor") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 0:
        arr = arr.reshape(1)
    if arr.ndim == 2 and 1 in arr.shape:
        arr = arr.reshape(-1)
    if arr.ndim != 1:
        raise ShapeError(f"{name} precisa ser unidimensional (shape {arr.shape}).")
    if arr.size < 1:
        raise ShapeError(f"{name} vazio.")
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{name} contem valores nao finitos.")
    return arr


def as_matrix(values, name: str = "matriz") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr.reshape(-1, 1)
    if arr.ndim != 2:
        raise ShapeError(f"{name} precisa ser bidimensional (shape {arr.shape}).")
    if arr.size < 1:
        raise ShapeError(f"{name} vazia.")
    if not np.all(np.isfinite(arr)):
        raise NumericsError(f"{name} contem valores nao finitos.")
    return arr


def mask_bound(data_range: tuple[float, float], theta: float) -> float:
    lo, hi = data_range
    if not lo <= hi:
        raise NumericsError(f"Intervalo de dados invalido: {data_range}.")
    bound = theta * max(abs(lo), abs(hi))
    if not bound > 0 or not np.isfinite(bound):
        raise NumericsError("Intervalo de mascaras degenerado (use um intervalo nao nulo).")
    return float(bound)


def low_rank_matrix(
    rows: int, cols: int, rank: int, bound: float, rng: np.random.Generator
) -> np.ndarray:
    if rank < 1:
        raise NumericsError("O posto maximo precisa ser >= 1.")
    while True:
        left = rng.uniform(-1.0, 1.0, size=(rows, rank))
        right = rng.uniform(-1.0, 1.0, size=(rank, cols))
        product = left @ right
        peak = float(np.max(np.abs(product)))
        if peak > 0:
            return product * (bound / peak)


def gen_rank_deficient(
    rows: int,
    cols: int,
    data_range: tuple[float, float],
    theta: float,
    rng: np.random.Generator,
    max_rank: int | None = None,
) -> np.ndarray:
    if min(rows, cols) < 2:
        raise NumericsError(
            f"Mascara {rows}x{cols} nao pode ser deficiente de posto sem ser nula."
        )
    if not theta >= 1:
        raise NumericsError(f"theta precisa ser >= 1 (recebido {theta}).")
    rank = min(rows, cols) - 1 if max_rank is None else max_rank
    if not 1 <= rank < min(rows, cols):
        raise NumericsError(f"Posto {rank} fora de [1, {min(rows, cols) - 1}].")
    return low_rank_matrix(rows, cols, rank, mask_bound(data_range, theta), rng)


def numerical_rank(matrix: np.ndarray, rtol: float = 1e-9) -> int:
    sigma = np.linalg.svd(np.asarray(matrix, dtype=np.float64), compute_uv=False)
    if sigma.size == 0 or sigma[0] == 0:
        return 0
    return int(np.sum(sigma > rtol * sigma[0]))


def split_vector(a, params: SplitParams, rng: np.random.Generator) -> np.ndarray:
    a = as_vector(a)
    n, rho = a.size, params.rho
    if params.mode is SplitMode.SIGN_CONSISTENT:
        weights = rng.uniform(SIGN_WEIGHT_LOW, 1.0, size=(n, rho))
        parts = a[:, None] * (weights / weights.sum(axis=1, keepdims=True))
    else:
        spread = params.theta * np.abs(a)[:, None]
        parts = rng.uniform(-1.0, 1.0, size=(n, rho)) * spread
    parts[:, -1] = a - parts[:, :-1].sum(axis=1)
    return parts


def split_scalar(a: float, params: SplitParams, rng: np.random.Generator) -> np.ndarray:
    return split_vector(np.array([a], dtype=np.float64), params, rng)[0]


def ra2a(a, params: SplitParams, rng: np.random.Generator) -> np.ndarray:
    splits = split_vector(a, params, rng)
    return np.tile(splits, (1, params.rho))


def latin_index(rho: int) -> np.ndarray:
    r = np.arange(rho)
    return (r[:, None] + r[None, :]) % rho


def rb2b(b, params: SplitParams, rng: np.random.Generator) -> np.ndarray:
    splits = split_vector(b, params, rng)
    n, rho = splits.shape
    perms = rng.permuted(np.tile(np.arange(rho), (n, 1)), axis=1)
    # T_i[r, c] = beta_i[pi_i[(c + r) % rho]]: each column of T_i holds every split once.
    order = perms[:, latin_index(rho)]
    blocks = np.take_along_axis(splits, order.reshape(n, -1), axis=1)
    return np.ascontiguousarray(blocks.T)


def diag2v(matrix) -> np.ndarray:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ShapeError(f"diag2v exige matriz quadrada (shape {m.shape}).")
    return np.diagonal(m).copy()


def v2diag(v, rng: np.random.Generator, bound: float = 1.0) -> np.ndarray:
    v = as_vector(v)
    out = rng.uniform(-bound, bound, size=(v.size, v.size))
    np.fill_diagonal(out, v)
    return out


LDEXP_LIMIT = 2200
LN2_HI = 6.93147180369123816490e-01
LN2_LO = 1.90821492927058770002e-10
LOG2_E = 1.44269504088896338700e00


def safe_ldexp(values, exponents) -> np.ndarray:
    # beyond +-2200 every finite double has already overflowed or flushed to zero
    exps = np.clip(np.asarray(exponents, dtype=np.int64), -LDEXP_LIMIT, LDEXP_LIMIT)
    return np.ldexp(np.asarray(values, dtype=np.float64), exps.astype(np.int32))


def _exponents(peaks: np.ndarray) -> np.ndarray:
    _, exps = np.frexp(peaks)
    # frexp puts the mantissa in [0.5, 1); shift by one for [1, 2). Zero lines keep -1.
    return exps.astype(np.int64) - 1


def row_exponents(matrix: np.ndarray) -> np.ndarray:
    """Per-row e with max|row| / 2^e in [1, 2)."""
    return _exponents(np.max(np.abs(matrix), axis=1))


def col_exponents(matrix: np.ndarray) -> np.ndarray:
    return _exponents(np.max(np.abs(matrix), axis=0))


def exp_split(x) -> tuple[np.ndarray, np.ndarray]:
    """e^x as mantissa * 2^k with mantissa in [sqrt(1/2), sqrt(2)] and integer k.

    The high half of ln 2 keeps 32 significant bits, so k * LN2_HI is exact for |k| < 2^21.
    """
    x = as_vector(x)
    k = np.rint(x * LOG2_E)
    reduced = (x - k * LN2_HI) - k * LN2_LO
    return np.exp(reduced), k.astype(np.int64)
