from __future__ import annotations

import logging
import os
import socket
import time
import uuid
from collections import deque
from collections.abc import Callable, Iterator
from concurrent.futures import FIRST_EXCEPTION, ThreadPoolExecutor, wait
from contextlib import contextmanager
from dataclasses import asdict, dataclass, field, replace
from typing import Any

import numpy as np

from .cs import CsServer, CsService, MaskTriple, TripleSpec, decode_bundle
from .errors import HandshakeError, PreprocessingError, S2plorError, TransportError
from .numerics import SplitMode, SplitParams
from .transport import Channel, Link, LinkModel, MemoryChannel, TcpChannel, Transcript
from .transport import merge_transcripts, transcript_stats
from .utils import (
    PhaseTimer,
    derive_session_id,
    env_flag,
    env_float,
    env_int,
    env_interval,
    make_rng,
)
from .wire import (
    PROTOCOL_VERSION,
    Tag,
    decode_handshake,
    decode_matrices,
    decode_scaled,
    encode_handshake,
    encode_json,
    encode_matrices,
    encode_scaled,
)

logger = logging.getLogger(__name__)

ALICE = "alice"
BOB = "bob"
ROLE_INDEX = {ALICE: 0, BOB: 1}


def other_role(role: str) -> str:
    return BOB if role == ALICE else ALICE


@dataclass(frozen=True)
class ProtocolConfig:
    rho: int = 2
    split_mode: str = SplitMode.SIGN_CONSISTENT.value
    theta: float = 1e4
    data_range: tuple[float, float] = (-1.0, 1.0)
    l: int = 20
    batching: bool = True
    eps_den: float = 1e-12
    exp_domain: float = 1e9
    verify_slack: float = 1024.0
    atp_range: tuple[float, float] = (1e-2, 1e2)
    timeout_s: float = 30.0
    abort_on_reject: bool = True

    def __post_init__(self) -> None:
        if self.l < 0:
            raise S2plorError(f"Rodadas de verificacao invalidas: {self.l}.")
        lo, hi = self.atp_range
        if not 0 < lo <= hi:
            raise S2plorError(f"Intervalo de v_a invalido: {self.atp_range}.")
        SplitParams(self.rho, SplitMode(self.split_mode), self.theta)
        if not self.exp_domain > 0:
            raise S2plorError(f"exp_domain precisa ser positivo (recebido {self.exp_domain}).")

    @classmethod
    def from_env(cls, **overrides: Any) -> ProtocolConfig:
        base = cls(
            rho=env_int("S2PLOR_RHO", cls.rho),
            split_mode=SplitMode(
                (os.getenv("S2PLOR_SPLIT_MODE") or cls.split_mode).strip()
            ).value,
            theta=env_float("S2PLOR_THETA", cls.theta),
            data_range=env_interval("S2PLOR_DATA_RANGE", cls.data_range),
            l=env_int("S2PLOR_L", cls.l),
            batching=env_flag("S2PLOR_BATCHING", cls.batching),
            eps_den=env_float("S2PLOR_EPS_DEN", cls.eps_den),
            exp_domain=env_float("S2PLOR_EXP_DOMAIN", cls.exp_domain),
            verify_slack=env_float("S2PLOR_VERIFY_SLACK", cls.verify_slack),
            timeout_s=env_float("S2PLOR_TIMEOUT", cls.timeout_s),
        )
        clean = {key: value for key, value in overrides.items() if value is not None}
        return replace(base, **clean) if clean else base

    @property
    def split_params(self) -> SplitParams:
        return SplitParams(self.rho, SplitMode(self.split_mode), self.theta)

    def to_dict(self) -> dict:
        data = asdict(self)
        data["data_range"] = list(self.data_range)
        data["atp_range"] = list(self.atp_range)
        return data


@dataclass
class Fault:
    target: str = "vf_b"
    row: int = 0
    col: int = 0
    magnitude: float = 1.0
    consumed: bool = False

    def __post_init__(self) -> None:
        if self.target not in ("vf_b", "t"):
            raise S2plorError(f"Alvo de adulteracao invalido: {self.target!r}.")


@dataclass
class Verdict:
    invocation: int
    role: str
    accepted: bool
    rounds_run: int
    residual: float


@dataclass
class ProtocolSession:
    role: str
    config: ProtocolConfig
    peer: Link
    cs: Link
    session_id: uuid.UUID
    seed: int = 0
    transcript: Transcript | None = None
    timer: PhaseTimer = field(default_factory=PhaseTimer)
    fault: Fault | None = None

    def __post_init__(self) -> None:
        if self.role not in ROLE_INDEX:
            raise S2plorError(f"Papel invalido para sessao de protocolo: {self.role!r}.")
        if self.transcript is None:
            self.transcript = self.peer.transcript
        self.rng = make_rng(self.seed, ROLE_INDEX[self.role])
        self.request_counter = 0
        self.s2pm_count = 0
        self.verdicts: list[Verdict] = []
        self._batch: deque[tuple[TripleSpec, MaskTriple]] | None = None

    @property
    def peer_role(self) -> str:
        return other_role(self.role)

    def reseed(self, seed: int, session_id: uuid.UUID | None = None) -> None:
        self.seed = seed
        self.session_id = session_id or derive_session_id(seed)
        self.rng = make_rng(seed, ROLE_INDEX[self.role])
        self.request_counter = 0

    def reset_counters(self) -> None:
        self.transcript.clear()
        self.timer.reset()
        self.verdicts.clear()
        self.s2pm_count = 0

    def send(self, tag: Tag, *matrices: np.ndarray) -> None:
        self.peer.send(tag, encode_matrices(*matrices))

    def recv(self, tag: Tag, count: int = 1) -> list[np.ndarray]:
        return decode_matrices(self.peer.recv(tag), count)

    def send_scaled(self, tag: Tag, matrix: np.ndarray, exponents: np.ndarray) -> None:
        self.peer.send(tag, encode_scaled(matrix, exponents))

    def recv_scaled(self, tag: Tag) -> tuple[np.ndarray, np.ndarray]:
        return decode_scaled(self.peer.recv(tag))

    def _request(self, plan: list[TripleSpec]) -> list[MaskTriple]:
        request = {
            "session_id": str(self.session_id),
            "request_id": self.request_counter,
            "role": self.role,
            "plan": [spec.as_list() for spec in plan],
            "theta": self.config.theta,
            "data_range": list(self.config.data_range),
        }
        self.request_counter += 1
        with self.timer.phase("offline"):
            self.cs.send(Tag.PREPROCESS_REQUEST, encode_json(request))
            payload = self.cs.recv(Tag.TRIPLE_BUNDLE)
            triples = decode_bundle(decode_matrices(payload, 3 * len(plan)))
        for spec, triple in zip(plan, triples):
            self._check_triple(spec, triple)
        logger.debug(f"{self.role} recebeu {len(triples)} tripla(s) do CS")
        return triples

    def _check_triple(self, spec: TripleSpec, triple: MaskTriple) -> None:
        mask_shape = (spec.n, spec.s) if spec.left == self.role else (spec.s, spec.m)
        if triple.R.shape != mask_shape or triple.r.shape != (spec.n, spec.m):
            raise PreprocessingError(
                f"Tripla com formato inesperado para {spec}: R{triple.R.shape}, r{triple.r.shape}."
            )
        if triple.St.shape != (spec.n, spec.m):
            raise PreprocessingError(f"S_t com formato inesperado para {spec}.")

    @contextmanager
    def invocation(self, plan: list[TripleSpec]) -> Iterator[None]:
        if not self.config.batching or self._batch is not None:
            yield
            return
        self._batch = deque(zip(plan, self._request(plan)))
        try:
            yield
            if self._batch:
                raise PreprocessingError(f"{len(self._batch)} tripla(s) do plano nao usadas.")
        finally:
            self._batch = None

    def take_triple(self, spec: TripleSpec) -> MaskTriple:
        if self._batch is None:
            return self._request([spec])[0]
        if not self._batch:
            raise PreprocessingError(f"Plano de preprocessamento esgotado antes de {spec}.")
        planned, triple = self._batch.popleft()
        if planned != spec:
            raise PreprocessingError(f"Tripla planejada {planned} difere da pedida {spec}.")
        return triple

    def take_fault(self) -> Fault | None:
        fault = self.fault
        if fault is None or fault.consumed:
            return None
        fault.consumed = True
        return fault

    def close(self) -> None:
        self.peer.close()
        self.cs.close()


def _handshake(link: Link, role: str, session_id: uuid.UUID, expected: str) -> None:
    link.send(Tag.HANDSHAKE, encode_handshake(role, session_id))
    version, peer, peer_session = decode_handshake(link.recv(Tag.HANDSHAKE))
    if version != PROTOCOL_VERSION:
        raise HandshakeError(f"Versao de protocolo {version} incompativel com {PROTOCOL_VERSION}.")
    if peer != expected:
        raise HandshakeError(f"Papel inesperado no handshake: {peer} (esperado {expected}).")
    if expected != "cs" and peer_session != session_id:
        raise HandshakeError("Sessao divergente no handshake.")


def handshake_session(session: ProtocolSession) -> None:
    _handshake(session.cs, session.role, session.session_id, "cs")
    _handshake(session.peer, session.role, session.session_id, session.peer_role)


def build_session(
    role: str,
    config: ProtocolConfig,
    peer_channel: Channel,
    cs_channel: Channel,
    session_id: uuid.UUID,
    seed: int,
    link_model: LinkModel | None = None,
) -> ProtocolSession:
    transcript = Transcript(owner=role)
    timer = PhaseTimer()
    peer = Link(peer_channel, transcript, other_role(role), link_model, timer)
    cs = Link(cs_channel, transcript, "cs", link_model, timer)
    return ProtocolSession(
        role=role,
        config=config,
        peer=peer,
        cs=cs,
        session_id=session_id,
        seed=seed,
        transcript=transcript,
        timer=timer,
    )


class PartyPair:
    def __init__(
        self,
        alice: ProtocolSession,
        bob: ProtocolSession,
        cs_service: CsService | None = None,
        cs_server: CsServer | None = None,
    ) -> None:
        self.alice = alice
        self.bob = bob
        self.cs_service = cs_service
        self.cs_server = cs_server
        self.broken = False
        self._pool = ThreadPoolExecutor(max_workers=2, thread_name_prefix="s2plor-party")

    @property
    def config(self) -> ProtocolConfig:
        return self.alice.config

    def run_each(
        self,
        alice_fn: Callable[[ProtocolSession], Any],
        bob_fn: Callable[[ProtocolSession], Any],
    ) -> tuple[Any, Any]:
        if self.broken:
            raise TransportError("Par de sessoes interrompido por uma falha anterior.")
        futures = {
            self._pool.submit(alice_fn, self.alice): ALICE,
            self._pool.submit(bob_fn, self.bob): BOB,
        }
        done, pending = wait(futures, return_when=FIRST_EXCEPTION)
        failed = [f for f in done if f.exception() is not None]
        if failed:
            self.broken = True
            self.alice.close()
            self.bob.close()
            wait(pending)
            errors = [f.exception() for f in futures if f.exception() is not None]
            primary = next((e for e in errors if not isinstance(e, TransportError)), errors[0])
            logger.warning(f"Execucao interrompida: {primary}")
            raise primary
        results = {futures[f]: f.result() for f in futures}
        return results[ALICE], results[BOB]

    def run(self, protocol: Callable[..., Any], alice_input, bob_input, *args, **kwargs):
        return self.run_each(
            lambda session: protocol(session, alice_input, *args, **kwargs),
            lambda session: protocol(session, bob_input, *args, **kwargs),
        )

    def reseed(self, seed: int) -> None:
        session_id = derive_session_id(seed)
        self.alice.reseed(seed, session_id)
        self.bob.reseed(seed, session_id)

    def set_fault(self, fault: Fault | None) -> None:
        self.bob.fault = fault

    def reset_counters(self) -> None:
        self.alice.reset_counters()
        self.bob.reset_counters()

    def transcript(self) -> Transcript:
        return merge_transcripts(self.alice.transcript, self.bob.transcript)

    def stats(self) -> tuple[int, int]:
        return transcript_stats(self.transcript())

    def verdicts(self) -> list[Verdict]:
        return [*self.alice.verdicts, *self.bob.verdicts]

    def timings(self) -> dict[str, float]:
        totals: dict[str, float] = {}
        for session in (self.alice, self.bob):
            for name, value in session.timer.snapshot().items():
                totals[name] = totals.get(name, 0.0) + value
        return totals

    def close(self) -> None:
        self.alice.close()
        self.bob.close()
        if self.cs_server is not None:
            self.cs_server.close()
        self._pool.shutdown(wait=False, cancel_futures=True)

    def __enter__(self) -> PartyPair:
        return self

    def __exit__(self, *exc_info) -> None:
        self.close()


def _tcp_pair(timeout_s: float) -> tuple[TcpChannel, TcpChannel]:
    listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
    listener.bind(("127.0.0.1", 0))
    listener.listen(1)
    listener.settimeout(timeout_s)
    try:
        bob_end = TcpChannel.connect(listener.getsockname()[:2], timeout_s)
        conn, _ = listener.accept()
    finally:
        listener.close()
    return TcpChannel(conn, timeout_s), bob_end


def connect_parties(
    config: ProtocolConfig | None = None,
    *,
    transport: str = "mem",
    seed: int = 0,
    cs_seed: int | None = None,
    link_model: LinkModel | None = None,
    session_id: uuid.UUID | None = None,
) -> PartyPair:
    config = config or ProtocolConfig()
    session_id = session_id or derive_session_id(seed)
    cs_seed = seed + 1 if cs_seed is None else cs_seed
    timeout = config.timeout_s
    service = CsService(cs_seed)
    server: CsServer | None = None
    if transport == "mem":
        alice_peer, bob_peer = MemoryChannel.pair(timeout)
        alice_cs = service.attach_memory(timeout)
        bob_cs = service.attach_memory(timeout)
    elif transport == "tcp":
        server = CsServer(service, ("127.0.0.1", 0), timeout).start()
        alice_peer, bob_peer = _tcp_pair(timeout)
        alice_cs = TcpChannel.connect(server.address, timeout)
        bob_cs = TcpChannel.connect(server.address, timeout)
    else:
        raise S2plorError(f"Transporte desconhecido: {transport!r} (use mem ou tcp).")

    alice = build_session(ALICE, config, alice_peer, alice_cs, session_id, seed, link_model)
    bob = build_session(BOB, config, bob_peer, bob_cs, session_id, seed, link_model)
    pair = PartyPair(alice, bob, service, server)
    pair.run_each(handshake_session, handshake_session)
    logger.info(f"Sessao {session_id} conectada via {transport}")
    return pair


def connect_party(
    role: str,
    config: ProtocolConfig,
    *,
    cs_address: tuple[str, int],
    bind: tuple[str, int] | None = None,
    peer: tuple[str, int] | None = None,
    session_id: uuid.UUID,
    seed: int = 0,
    link_model: LinkModel | None = None,
) -> ProtocolSession:
    timeout = config.timeout_s
    if role == ALICE:
        if bind is None:
            raise S2plorError("Alice precisa de --bind para aguardar Bob.")
        listener = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        listener.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        listener.bind(bind)
        listener.listen(1)
        listener.settimeout(timeout)
        logger.info(f"Alice aguardando Bob em {bind[0]}:{bind[1]}")
        try:
            conn, _ = listener.accept()
        except OSError as exc:
            raise TransportError(f"Bob nao conectou em {timeout}s.") from exc
        finally:
            listener.close()
        peer_channel: TcpChannel = TcpChannel(conn, timeout)
    elif role == BOB:
        if peer is None:
            raise S2plorError("Bob precisa de --peer com o endereco de Alice.")
        deadline = time.monotonic() + timeout
        while True:
            try:
                peer_channel = TcpChannel.connect(peer, timeout)
                break
            except TransportError:
                if time.monotonic() > deadline:
                    raise
                time.sleep(0.2)
    else:
        raise S2plorError(f"Papel invalido para sessao de protocolo: {role!r}.")
    cs_channel = TcpChannel.connect(cs_address, timeout)
    session = build_session(role, config, peer_channel, cs_channel, session_id, seed, link_model)
    handshake_session(session)
    logger.info(f"{role} conectado na sessao {session_id}")
    return session
