from __future__ import annotations

import logging
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .cs import TripleSpec
from .errors import DegenerateDenominator, ShapeError
from .numerics import as_vector, diag2v, exp_split, ra2a, rb2b, safe_ldexp
from .s2pm import s2pm_scaled
from .session import ALICE, PartyPair, ProtocolSession
from .wire import Tag, encode_json

logger = logging.getLogger(__name__)


@dataclass
class AddShares:
    v_a: np.ndarray
    v_b: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.v_a + self.v_b


@dataclass
class MulShares:
    v_a: np.ndarray
    v_b: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.v_a * self.v_b


def s2php_plan(n: int, rho: int) -> list[TripleSpec]:
    return [TripleSpec(n, rho * rho, n, ALICE)]


def s2patp_plan(n: int, rho: int) -> list[TripleSpec]:
    return s2php_plan(n, rho)


def s2pr_plan(n: int, rho: int) -> list[TripleSpec]:
    return s2patp_plan(n, rho) + s2php_plan(n, rho)


def s2ps_plan(n: int, rho: int) -> list[TripleSpec]:
    return s2php_plan(n, rho) + s2pr_plan(n, rho)


def s2php_scaled(session: ProtocolSession, x, offsets=None) -> tuple[np.ndarray, np.ndarray]:
    """Share p and public exponent e with p_a + p_b = a * b * 2^-e elementwise."""
    x = as_vector(x)
    params = session.config.split_params
    plan = s2php_plan(x.size, session.config.rho)
    if session.role == ALICE:
        lifted = ra2a(x, params, session.rng)
    else:
        lifted = rb2b(x, params, session.rng)
    with session.invocation(plan):
        share = s2pm_scaled(session, lifted, plan[0], offsets)
    exponents = share.row_exp + share.col_exp
    return diag2v(share.value), exponents


def s2php(session: ProtocolSession, x) -> np.ndarray:
    share, exponents = s2php_scaled(session, x)
    return safe_ldexp(share, exponents)


def _draw_nonzero(session: ProtocolSession, n: int) -> np.ndarray:
    lo, hi = session.config.atp_range
    magnitude = np.exp(session.rng.uniform(np.log(lo), np.log(hi), size=n))
    sign = session.rng.choice([-1.0, 1.0], size=n)
    return sign * magnitude


def s2patp(session: ProtocolSession, x) -> np.ndarray:
    """Multiplicative share of a + b: v_a * v_b = a + b."""
    x = as_vector(x)
    with session.invocation(s2patp_plan(x.size, session.config.rho)):
        if session.role == ALICE:
            v_a = _draw_nonzero(session, x.size)
            t_a = 1.0 / v_a
            a_hat = x * t_a
            u_a = s2php(session, t_a)
            session.send(Tag.ATP_T, a_hat + u_a)
            return v_a
        u_b = s2php(session, x)
        (t,) = session.recv(Tag.ATP_T)
        return u_b + t.reshape(-1)


def _guard_denominator(session: ProtocolSession, v_b: np.ndarray) -> None:
    floor = session.config.eps_den / session.config.atp_range[1]
    with np.errstate(divide="ignore"):
        inverse = 1.0 / v_b
    bad = ~np.isfinite(inverse) | (np.abs(v_b) < floor)
    if not np.any(bad):
        return
    message = f"Denominador degenerado em {int(bad.sum())} posicao(oes) (|a+b| < eps_den)."
    session.peer.send(Tag.ERROR, encode_json({"error": message}))
    raise DegenerateDenominator(message)


def s2pr(session: ProtocolSession, x) -> np.ndarray:
    x = as_vector(x)
    with session.invocation(s2pr_plan(x.size, session.config.rho)):
        v = s2patp(session, x)
        if session.role != ALICE:
            _guard_denominator(session, v)
        return s2php(session, 1.0 / v)


def s2ps(session: ProtocolSession, x) -> np.ndarray:
    """Additive share of sigmoid(a + b).

    e^-a * e^-b is carried as mantissa * 2^e with a public e, so 1 + e^-(a+b) is formed
    at scale 2^-max(e, 0) and never overflows.
    """
    x = as_vector(x)
    mantissa, k = exp_split(-x)
    with session.invocation(s2ps_plan(x.size, session.config.rho)):
        p, exponents = s2php_scaled(session, mantissa, offsets=k)
        shift = np.maximum(exponents, 0)
        u = safe_ldexp(p, exponents - shift)
        if session.role == ALICE:
            u = u + safe_ldexp(np.ones_like(u), -shift)
        return safe_ldexp(s2pr(session, u), -shift)


def out_of_domain_count(a, b, bound: float) -> int:
    a = np.asarray(a)
    b = np.asarray(b)
    return int(np.sum((np.abs(a) > bound) | (np.abs(b) > bound)))


def _check_lengths(a, b) -> tuple[np.ndarray, np.ndarray]:
    a = as_vector(a, "a")
    b = as_vector(b, "b")
    if a.size != b.size:
        raise ShapeError(f"Vetores com tamanhos diferentes: {a.size} e {b.size}.")
    return a, b


def s2php_run(pair: PartyPair, a, b) -> AddShares:
    a, b = _check_lengths(a, b)
    return AddShares(*pair.run(s2php, a, b))


def s2patp_run(pair: PartyPair, a, b) -> MulShares:
    a, b = _check_lengths(a, b)
    return MulShares(*pair.run(s2patp, a, b))


def s2pr_run(pair: PartyPair, a, b) -> AddShares:
    a, b = _check_lengths(a, b)
    return AddShares(*pair.run(s2pr, a, b))


def s2ps_run(pair: PartyPair, a, b) -> AddShares:
    a, b = _check_lengths(a, b)
    return AddShares(*pair.run(s2ps, a, b))


def sigmoid(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    positive = x >= 0
    out[positive] = 1.0 / (1.0 + np.exp(-x[positive]))
    expx = np.exp(x[~positive])
    out[~positive] = expx / (1.0 + expx)
    return out


@dataclass(frozen=True)
class VectorProtocol:
    name: str
    run: Callable[[PartyPair, np.ndarray, np.ndarray], AddShares | MulShares]
    oracle: Callable[[np.ndarray, np.ndarray], np.ndarray]
    plan: Callable[[int, int], list[TripleSpec]]


VECTOR_PROTOCOLS: dict[str, VectorProtocol] = {
    "s2php": VectorProtocol("s2php", s2php_run, lambda a, b: a * b, s2php_plan),
    "s2patp": VectorProtocol("s2patp", s2patp_run, lambda a, b: a + b, s2patp_plan),
    "s2pr": VectorProtocol("s2pr", s2pr_run, lambda a, b: 1.0 / (a + b), s2pr_plan),
    "s2ps": VectorProtocol("s2ps", s2ps_run, lambda a, b: sigmoid(a + b), s2ps_plan),
}
