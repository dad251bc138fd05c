from __future__ import annotations

from .errors import S2plorError
from .utils import UNIT_ROUNDOFF

WORD_BITS = 64

# number of S2PM verifications (each failing with probability 4^-l) composed by a protocol
VERIFIED_MULTIPLICATIONS = {
    "s2pm": 1,
    "s2phm": 2,
    "s2php": 1,
    "s2patp": 1,
    "s2pr": 2,
    "s2ps": 3,
    "s2plort": 7,
    "s2plorp": 5,
}

# (with CS batching, without) one-way message counts; logistic regression per batch step
ROUNDS = {
    "s2pm": (6, 6),
    "s2phm": (10, 12),
    "s2php": (6, 6),
    "s2patp": (7, 7),
    "s2pr": (11, 13),
    "s2ps": (15, 19),
    "s2plort": (31, 43),
    "s2plorp": (23, 31),
}


def _known(protocol: str, table: dict) -> str:
    key = protocol.lower()
    if key not in table:
        raise S2plorError(f"Protocolo desconhecido: {protocol!r}.")
    return key


def verification_failure_bound(protocol: str, l: int) -> float:
    return 4.0 ** (-VERIFIED_MULTIPLICATIONS[_known(protocol, VERIFIED_MULTIPLICATIONS)] * l)


def communication_rounds(protocol: str, batched: bool = True, steps: int = 1) -> int:
    with_batch, without = ROUNDS[_known(protocol, ROUNDS)]
    return (with_batch if batched else without) * steps


def s2pm_bits(n: int, s: int, m: int) -> int:
    preprocessing = n * s + s * m + 4 * n * m
    online = n * s + s * m + 3 * n * m
    return (preprocessing + online) * WORD_BITS


def communication_bits(protocol: str, n: int, rho: int = 2) -> int:
    lifted = rho * rho
    php = 4 * n * lifted + 7 * n * n
    words = {
        "s2php": php,
        "s2patp": php + n,
        "s2pr": 2 * php + n,
        "s2ps": 3 * php + n,
    }
    return words[_known(protocol, words)] * WORD_BITS


def practical_security_probability(theta: float, model: str = "uniform-sum") -> float:
    if theta < 1:
        raise S2plorError(f"theta precisa ser >= 1 (recebido {theta}).")
    if model == "uniform-sum":
        return 1.0 - 2.0 / (theta + 1.0)
    if model == "fixed-operand":
        return 1.0 - 1.0 / theta
    raise S2plorError(f"Modelo de seguranca desconhecido: {model!r}.")


def digit_loss_probability_analytic(n: int, d: int) -> float:
    if n < 1 or d < 1:
        raise S2plorError("n e d precisam ser >= 1.")
    return (1.0 - (1.0 - 10.0**-d) ** n) / 2.0


def dot_product_error_bound(n: int) -> float:
    return 1.25 * n * UNIT_ROUNDOFF


def precision_bound(protocol: str, rho: int = 2) -> float:
    if protocol.lower() == "s2php":
        return dot_product_error_bound(rho * rho)
    return 1.11e-12
