from __future__ import annotations

import logging
import socket
import threading
import time
import uuid
from collections.abc import Callable
from dataclasses import dataclass

import numpy as np

from .errors import CsContractError, FrameError, PreprocessingError, TransportError
from .numerics import low_rank_matrix, mask_bound
from .transport import Channel, MemoryChannel, TcpChannel, Transcript
from .utils import make_rng
from .wire import (
    PROTOCOL_VERSION,
    Tag,
    decode_handshake,
    decode_json,
    encode_handshake,
    encode_json,
    encode_matrices,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TripleSpec:
    n: int
    s: int
    m: int
    left: str

    def as_list(self) -> list:
        return [self.n, self.s, self.m, self.left]

    @classmethod
    def from_list(cls, raw) -> TripleSpec:
        n, s, m, left = raw
        return cls(int(n), int(s), int(m), str(left))


@dataclass
class MaskTriple:
    R: np.ndarray
    r: np.ndarray
    St: np.ndarray

    def matrices(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.R, self.r, self.St


def cs_preprocess(
    n: int,
    s: int,
    m: int,
    data_range: tuple[float, float],
    theta: float,
    rng: np.random.Generator,
) -> tuple[MaskTriple, MaskTriple]:
    if s < 2:
        raise PreprocessingError(f"Dimensao interna s={s} < 2 vazaria o operando.")
    if min(n, m) < 1:
        raise PreprocessingError(f"Dimensoes invalidas n={n}, m={m}.")
    if not theta >= 1:
        raise PreprocessingError(f"theta precisa ser >= 1 (recebido {theta}).")
    bound = mask_bound(data_range, theta)
    R_a = low_rank_matrix(n, s, min(n, s - 1), bound, rng)
    R_b = low_rank_matrix(s, m, min(m, s - 1), bound, rng)
    St = R_a @ R_b
    r_a = rng.uniform(-bound, bound, size=(n, m))
    r_b = St - r_a
    return MaskTriple(R_a, r_a, St), MaskTriple(R_b, r_b, St.copy())


def encode_bundle(triples: list[MaskTriple]) -> bytes:
    return encode_matrices(*(m for triple in triples for m in triple.matrices()))


def decode_bundle(matrices: list[np.ndarray]) -> list[MaskTriple]:
    if len(matrices) % 3:
        raise PreprocessingError("Pacote de triplas com numero de matrizes invalido.")
    return [MaskTriple(*matrices[i : i + 3]) for i in range(0, len(matrices), 3)]


class CsService:
    """Commodity server core: answers preprocessing requests, never sees operands.

    Requests from Alice and Bob for the same (session, request id) are paired:
    whoever arrives first triggers generation and the other half waits for its peer.
    """

    def __init__(
        self,
        seed: int = 0,
        session_ttl_s: float = 600.0,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self.seed = seed
        self.session_ttl_s = session_ttl_s
        self.transcript = Transcript(owner="cs")
        self.refused = 0
        self._clock = clock
        self._pending: dict[tuple[str, int], tuple[dict, str, list[MaskTriple]]] = {}
        self._served: set[tuple[str, int]] = set()
        self._last_seen: dict[str, float] = {}
        self._lock = threading.Lock()
        self._threads: list[threading.Thread] = []

    @property
    def open_sessions(self) -> int:
        with self._lock:
            return len(self._last_seen)

    def _expire(self, now: float) -> None:
        stale = {sid for sid, seen in self._last_seen.items() if now - seen > self.session_ttl_s}
        if not stale:
            return
        self._pending = {k: v for k, v in self._pending.items() if k[0] not in stale}
        self._served = {k for k in self._served if k[0] not in stale}
        for sid in stale:
            del self._last_seen[sid]
        logger.info(f"CS expirou {len(stale)} sessao(oes) ociosa(s)")

    @staticmethod
    def _request_key(request: dict) -> tuple[str, int]:
        return str(request["session_id"]), int(request["request_id"])

    @staticmethod
    def _public_terms(request: dict) -> dict:
        return {k: v for k, v in request.items() if k != "role"}

    def _generate(self, request: dict) -> dict[str, list[MaskTriple]]:
        sid = uuid.UUID(str(request["session_id"]))
        rng = make_rng(self.seed, sid.int, int(request["request_id"]))
        data_range = tuple(float(x) for x in request["data_range"])
        theta = float(request["theta"])
        halves: dict[str, list[MaskTriple]] = {"alice": [], "bob": []}
        for raw in request["plan"]:
            spec = TripleSpec.from_list(raw)
            if spec.left not in halves:
                raise CsContractError(f"Papel esquerdo invalido no plano: {spec.left!r}.")
            left, right = cs_preprocess(spec.n, spec.s, spec.m, data_range, theta, rng)
            right_role = "bob" if spec.left == "alice" else "alice"
            halves[spec.left].append(left)
            halves[right_role].append(right)
        return halves

    def bundle_for(self, request: dict) -> list[MaskTriple]:
        for key in ("session_id", "request_id", "role", "plan", "theta", "data_range"):
            if key not in request:
                raise CsContractError(f"Pedido de preprocessamento sem o campo {key!r}.")
        role = request["role"]
        if role not in ("alice", "bob"):
            raise CsContractError(f"Papel invalido no pedido: {role!r}.")
        key = self._request_key(request)
        with self._lock:
            now = self._clock()
            self._expire(now)
            self._last_seen[key[0]] = now
            if key in self._served:
                raise CsContractError(f"Pedido {key[1]} da sessao {key[0]} ja foi atendido.")
            pending = self._pending.get(key)
            if pending is not None:
                terms, first_role, half = pending
                if first_role == role:
                    raise CsContractError(f"Pedido duplicado de {role}.")
                del self._pending[key]
                if terms != self._public_terms(request):
                    raise CsContractError("Pedidos de Alice e Bob divergem para a mesma sessao.")
                self._served.add(key)
                return half
            halves = self._generate(request)
            other = "bob" if role == "alice" else "alice"
            self._pending[key] = (self._public_terms(request), role, halves[other])
        logger.debug(f"CS gerou {len(request['plan'])} tripla(s) para a sessao {key[0]}#{key[1]}")
        return halves[role]

    def _refuse(self, channel: Channel, peer: str, message: str) -> None:
        self.refused += 1
        logger.warning(f"CS recusou quadro de {peer}: {message}")
        payload = encode_json({"error": message})
        self.transcript.record("send", peer, Tag.ERROR, payload, counted=False)
        try:
            channel.send_frame(Tag.ERROR, payload)
        except TransportError:
            pass

    def serve_channel(self, channel: Channel) -> None:
        peer = "?"
        try:
            frame = channel.recv_frame()
            if frame.tag != Tag.HANDSHAKE:
                self._refuse(channel, peer, f"esperado handshake, recebido 0x{frame.tag:02x}")
                return
            version, peer, session_id = decode_handshake(frame.payload)
            self.transcript.record("recv", peer, frame.tag, frame.payload, counted=False)
            if version != PROTOCOL_VERSION or peer not in ("alice", "bob"):
                self._refuse(channel, peer, f"handshake invalido (versao {version}, papel {peer})")
                return
            ack = encode_handshake("cs", session_id)
            channel.send_frame(Tag.HANDSHAKE, ack)
            self.transcript.record("send", peer, Tag.HANDSHAKE, ack, counted=False)
            while True:
                frame = channel.recv_frame()
                if frame.tag != Tag.PREPROCESS_REQUEST:
                    # operand frames are refused without being recorded
                    self._refuse(channel, peer, f"tag 0x{frame.tag:02x} fora do preprocessamento")
                    return
                self.transcript.record("recv", peer, frame.tag, frame.payload, counted=False)
                try:
                    request = decode_json(frame.payload)
                except FrameError as exc:
                    self._refuse(channel, peer, str(exc))
                    return
                if request.get("role") != peer:
                    self._refuse(channel, peer, "papel do pedido difere do handshake")
                    return
                try:
                    triples = self.bundle_for(request)
                except PreprocessingError as exc:
                    self._refuse(channel, peer, str(exc))
                    return
                payload = encode_bundle(triples)
                channel.send_frame(Tag.TRIPLE_BUNDLE, payload)
                self.transcript.record("send", peer, Tag.TRIPLE_BUNDLE, payload, counted=False)
        except TransportError:
            logger.debug(f"CS encerrou o canal com {peer}")
        finally:
            channel.close()

    def attach_memory(self, timeout_s: float | None = 30.0) -> MemoryChannel:
        party_end, cs_end = MemoryChannel.pair(timeout_s)
        worker = threading.Thread(target=self.serve_channel, args=(cs_end,), daemon=True)
        worker.start()
        self._threads.append(worker)
        return party_end


class CsServer:
    def __init__(self, service: CsService, bind: tuple[str, int], timeout_s: float = 30.0):
        self.service = service
        self.timeout_s = timeout_s
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._sock.bind(bind)
        self._sock.listen()
        self._stopped = threading.Event()
        self._thread: threading.Thread | None = None

    @property
    def address(self) -> tuple[str, int]:
        host, port = self._sock.getsockname()[:2]
        return host, port

    def serve_forever(self) -> None:
        logger.info(f"CS escutando em {self.address[0]}:{self.address[1]}")
        while not self._stopped.is_set():
            try:
                conn, addr = self._sock.accept()
            except OSError:
                break
            logger.debug(f"CS aceitou conexao de {addr[0]}:{addr[1]}")
            channel = TcpChannel(conn, self.timeout_s)
            threading.Thread(
                target=self.service.serve_channel, args=(channel,), daemon=True
            ).start()

    def start(self) -> CsServer:
        self._thread = threading.Thread(target=self.serve_forever, daemon=True)
        self._thread.start()
        return self

    def close(self) -> None:
        self._stopped.set()
        try:
            self._sock.close()
        except OSError:
            pass


def serve_cs(
    bind: tuple[str, int],
    seed: int = 0,
    timeout_s: float = 30.0,
    background: bool = True,
    session_ttl_s: float = 600.0,
) -> CsServer:
    server = CsServer(CsService(seed, session_ttl_s), bind, timeout_s)
    if background:
        return server.start()
    server.serve_forever()
    return server
