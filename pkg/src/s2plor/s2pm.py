from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .cs import MaskTriple, TripleSpec
from .errors import ShapeError, VerificationError
from .numerics import as_matrix, col_exponents, mask_bound, row_exponents, safe_ldexp
from .session import ALICE, BOB, PartyPair, ProtocolSession, Verdict
from .utils import UNIT_ROUNDOFF
from .wire import Tag

logger = logging.getLogger(__name__)

__all__ = [
    "MaskTriple",
    "PairShares",
    "ScaledShare",
    "VerifyBundle",
    "matmul_spec",
    "s2phm",
    "s2phm_plan",
    "s2phm_run",
    "s2pm",
    "s2pm_run",
    "s2pm_scaled",
    "s2pm_verify",
]


@dataclass
class VerifyBundle:
    vf_self: np.ndarray
    vf_peer: np.ndarray
    St: np.ndarray
    l: int
    inner: int = 2


@dataclass
class PairShares:
    V_a: np.ndarray
    V_b: np.ndarray

    def reconstruct(self) -> np.ndarray:
        return self.V_a + self.V_b


@dataclass
class VerifyOutcome:
    accepted: bool
    rounds_run: int
    residual: float
    tolerance: float


def matmul_spec(n: int, s: int, m: int, left: str) -> TripleSpec:
    # an inner dimension of 1 is padded with a zero column/row so a rank < s mask exists
    return TripleSpec(n, max(s, 2), m, left)


def s2phm_plan(n: int, s: int, m: int) -> list[TripleSpec]:
    return [matmul_spec(n, s, m, ALICE), matmul_spec(n, s, m, BOB)]


def verification_tolerance(bundle: VerifyBundle, slack: float = 1024.0) -> float:
    scale = max(
        float(np.max(np.abs(bundle.vf_self))),
        float(np.max(np.abs(bundle.vf_peer))),
        float(np.max(np.abs(bundle.St))),
        np.finfo(np.float64).tiny,
    )
    m = bundle.St.shape[1]
    return slack * UNIT_ROUNDOFF * bundle.inner * m * scale


def s2pm_verify(
    bundle: VerifyBundle, rng: np.random.Generator, slack: float = 1024.0
) -> VerifyOutcome:
    if not bundle.vf_self.shape == bundle.vf_peer.shape == bundle.St.shape:
        raise ShapeError("VF_a, VF_b e S_t precisam ter o mesmo formato.")
    tolerance = verification_tolerance(bundle, slack)
    diff = bundle.vf_self + bundle.vf_peer - bundle.St
    m = diff.shape[1]
    worst = 0.0
    for round_idx in range(1, bundle.l + 1):
        delta = rng.integers(0, 2, size=m).astype(np.float64)
        residual = float(np.max(np.abs(diff @ delta)))
        worst = max(worst, residual)
        if residual > tolerance:
            return VerifyOutcome(False, round_idx, residual, tolerance)
    return VerifyOutcome(True, bundle.l, worst, tolerance)


def _pad_operand(operand: np.ndarray, spec: TripleSpec, is_left: bool) -> np.ndarray:
    expected = (spec.n, spec.s) if is_left else (spec.s, spec.m)
    if operand.shape == expected:
        return operand
    inner = operand.shape[1] if is_left else operand.shape[0]
    outer = operand.shape[0] if is_left else operand.shape[1]
    if inner == 1 and spec.s == 2 and outer == (spec.n if is_left else spec.m):
        if is_left:
            return np.hstack([operand, np.zeros((spec.n, 1))])
        return np.vstack([operand, np.zeros((1, spec.m))])
    raise ShapeError(f"Operando {operand.shape} incompativel com {expected} ({spec}).")


def _verify(session: ProtocolSession, vf_self, vf_peer, St, inner: int, index: int) -> None:
    if session.config.l == 0:
        session.verdicts.append(Verdict(index, session.role, True, 0, 0.0))
        return
    bundle = VerifyBundle(vf_self, vf_peer, St, session.config.l, inner)
    with session.timer.phase("verification"):
        outcome = s2pm_verify(bundle, session.rng, session.config.verify_slack)
    session.verdicts.append(
        Verdict(index, session.role, outcome.accepted, outcome.rounds_run, outcome.residual)
    )
    if outcome.accepted:
        return
    logger.warning(
        f"{session.role} rejeitou a multiplicacao #{index}: residuo {outcome.residual:.3e} "
        f"> {outcome.tolerance:.3e} na rodada {outcome.rounds_run}"
    )
    if session.config.abort_on_reject:
        raise VerificationError(session.role, index, outcome.rounds_run, outcome.residual)


@dataclass
class ScaledShare:
    """Additive share of a product held as value * 2^(row_exp[i] + col_exp[j])."""

    value: np.ndarray
    row_exp: np.ndarray
    col_exp: np.ndarray

    @property
    def exponents(self) -> np.ndarray:
        return self.row_exp[:, None] + self.col_exp[None, :]

    def scaled(self) -> np.ndarray:
        return safe_ldexp(self.value, self.exponents)


def _normalize(operand: np.ndarray, is_left: bool, offsets) -> tuple[np.ndarray, np.ndarray]:
    if is_left:
        exps = row_exponents(operand)
        unit = safe_ldexp(operand, -exps[:, None])
    else:
        exps = col_exponents(operand)
        unit = safe_ldexp(operand, -exps[None, :])
    if offsets is not None:
        exps = exps + np.asarray(offsets, dtype=np.int64).reshape(-1)
    return unit, exps


def s2pm_scaled(
    session: ProtocolSession, operand, spec: TripleSpec, offsets=None
) -> ScaledShare:
    """One party's side of a verified masked matrix product.

    Each holder scales its rows (left) or columns (right) into [1, 2) by powers of two and
    publishes the exponents, plus any `offsets`, with its masked operand.
    """
    is_left = session.role == spec.left
    operand = _pad_operand(as_matrix(operand, "operando"), spec, is_left)
    operand, own_exp = _normalize(operand, is_left, offsets)
    triple = session.take_triple(spec)
    index = session.s2pm_count
    session.s2pm_count += 1

    if is_left:
        with session.timer.phase("online"):
            masked = operand + triple.R
        session.send_scaled(Tag.MASKED_LEFT, masked, own_exp)
        peer_masked, peer_exp = session.recv_scaled(Tag.MASKED_RIGHT)
        vf_peer, t = session.recv(Tag.VF_RIGHT_AND_T, 2)
        with session.timer.phase("online"):
            correction = triple.R @ peer_masked
            share = t + triple.r - correction
            vf_self = share + correction
        session.send(Tag.VF_LEFT, vf_self)
        row_exp, col_exp = own_exp, peer_exp
    else:
        peer_masked, peer_exp = session.recv_scaled(Tag.MASKED_LEFT)
        with session.timer.phase("online"):
            masked = operand + triple.R
        session.send_scaled(Tag.MASKED_RIGHT, masked, own_exp)
        with session.timer.phase("online"):
            bound = mask_bound(session.config.data_range, session.config.theta)
            share = session.rng.uniform(-bound, bound, size=(spec.n, spec.m))
            vf_self = share - peer_masked @ operand
            t = triple.r - vf_self
            fault = session.take_fault()
            if fault is not None:
                target = vf_self if fault.target == "vf_b" else t
                target[fault.row % spec.n, fault.col % spec.m] += fault.magnitude
        session.send(Tag.VF_RIGHT_AND_T, vf_self, t)
        (vf_peer,) = session.recv(Tag.VF_LEFT)
        row_exp, col_exp = peer_exp, own_exp

    if row_exp.shape != (spec.n,) or col_exp.shape != (spec.m,):
        raise ShapeError(f"Expoentes incompativeis com {spec}.")
    _verify(session, vf_self, vf_peer, triple.St, spec.s, index)
    return ScaledShare(share, row_exp, col_exp)


def s2pm(session: ProtocolSession, operand, spec: TripleSpec) -> np.ndarray:
    return s2pm_scaled(session, operand, spec).scaled()


def s2phm(session: ProtocolSession, x1, x2) -> np.ndarray:
    x1 = as_matrix(x1, "x1")
    x2 = as_matrix(x2, "x2")
    if x1.shape[1] != x2.shape[0]:
        raise ShapeError(f"Dimensoes incompativeis: {x1.shape} x {x2.shape}.")
    n, s = x1.shape
    m = x2.shape[1]
    plan = s2phm_plan(n, s, m)
    with session.invocation(plan):
        local = x1 @ x2
        cross_left = s2pm(session, x1 if session.role == ALICE else x2, plan[0])
        cross_right = s2pm(session, x1 if session.role == BOB else x2, plan[1])
    return local + cross_left + cross_right


def s2pm_run(pair: PartyPair, A, B) -> PairShares:
    A = as_matrix(A, "A")
    B = as_matrix(B, "B")
    if A.shape[1] != B.shape[0]:
        raise ShapeError(f"Dimensoes incompativeis: {A.shape} x {B.shape}.")
    spec = matmul_spec(A.shape[0], A.shape[1], B.shape[1], ALICE)
    V_a, V_b = pair.run(s2pm, A, B, spec)
    return PairShares(V_a, V_b)


def s2phm_run(pair: PartyPair, A1, A2, B1, B2) -> PairShares:
    V_a, V_b = pair.run_each(
        lambda session: s2phm(session, A1, A2),
        lambda session: s2phm(session, B1, B2),
    )
    return PairShares(V_a, V_b)
