from __future__ import annotations

import hashlib
import logging
import queue
import socket
import threading
import time
from dataclasses import dataclass, field

from .errors import FrameError, TransportError
from .utils import PhaseTimer
from .wire import (
    CONTROL_TAGS,
    FRAME_HEADER,
    Frame,
    Tag,
    decode_json,
    frame_decode,
    frame_encode,
    parse_header,
    payload_elements,
)

logger = logging.getLogger(__name__)

_CLOSED = object()
PARTY_PEERS = ("alice", "bob")


@dataclass(frozen=True)
class LinkModel:
    latency_s: float = 0.0
    bandwidth_bps: float | None = None
    # one frame on the shared medium at a time, across every link using this model
    _medium: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def delay(self, wire_bytes: int) -> float:
        seconds = self.latency_s
        if self.bandwidth_bps:
            seconds += wire_bytes * 8 / self.bandwidth_bps
        return seconds

    def apply(self, wire_bytes: int) -> None:
        seconds = self.delay(wire_bytes)
        if seconds > 0:
            with self._medium:
                time.sleep(seconds)


@dataclass
class TranscriptEntry:
    direction: str
    peer: str
    tag: int
    payload_bits: int
    wire_bytes: int
    digest: str
    timestamp: float
    counted: bool


@dataclass
class Transcript:
    owner: str
    entries: list[TranscriptEntry] = field(default_factory=list)
    started: float = field(default_factory=time.perf_counter)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False, compare=False)

    def record(
        self,
        direction: str,
        peer: str,
        tag: int,
        payload: bytes,
        *,
        counted: bool,
    ) -> TranscriptEntry:
        bits = 0 if tag in CONTROL_TAGS else 64 * payload_elements(payload, tag)
        entry = TranscriptEntry(
            direction=direction,
            peer=peer,
            tag=int(tag),
            payload_bits=bits,
            wire_bytes=FRAME_HEADER.size + len(payload),
            digest=hashlib.sha256(payload).hexdigest(),
            timestamp=time.perf_counter() - self.started,
            counted=counted,
        )
        with self._lock:
            self.entries.append(entry)
        return entry

    @property
    def rounds(self) -> int:
        return sum(1 for entry in self.entries if entry.counted)

    @property
    def payload_bits(self) -> int:
        return sum(entry.payload_bits for entry in self.entries if entry.counted)

    def tags(self) -> set[int]:
        return {entry.tag for entry in self.entries}

    def clear(self) -> None:
        with self._lock:
            self.entries.clear()
        self.started = time.perf_counter()

    def fingerprint(self) -> str:
        digest = hashlib.sha256()
        for entry in self.entries:
            line = (
                f"{entry.direction}|{entry.peer}|{entry.tag}|{entry.payload_bits}|"
                f"{entry.wire_bytes}|{entry.digest}|{int(entry.counted)}\n"
            )
            digest.update(line.encode("ascii"))
        return digest.hexdigest()


def transcript_stats(transcript: Transcript) -> tuple[int, int]:
    return transcript.rounds, transcript.payload_bits


def merge_transcripts(*transcripts: Transcript) -> Transcript:
    merged = Transcript(owner="+".join(t.owner for t in transcripts))
    entries = [entry for t in transcripts for entry in t.entries]
    merged.entries = sorted(entries, key=lambda entry: entry.timestamp)
    return merged


class Channel:
    def send_frame(self, tag: int, payload: bytes) -> None:
        raise NotImplementedError

    def recv_frame(self) -> Frame:
        raise NotImplementedError

    def close(self) -> None:
        raise NotImplementedError


class MemoryChannel(Channel):
    def __init__(
        self, inbox: queue.Queue, outbox: queue.Queue, timeout_s: float | None = 30.0
    ) -> None:
        self._inbox = inbox
        self._outbox = outbox
        self.timeout_s = timeout_s
        self.closed = False

    @classmethod
    def pair(cls, timeout_s: float | None = 30.0) -> tuple[MemoryChannel, MemoryChannel]:
        left: queue.Queue = queue.Queue()
        right: queue.Queue = queue.Queue()
        return cls(left, right, timeout_s), cls(right, left, timeout_s)

    def send_frame(self, tag: int, payload: bytes) -> None:
        if self.closed:
            raise TransportError("Canal fechado.")
        self._outbox.put(frame_encode(tag, payload))

    def recv_frame(self) -> Frame:
        if self.closed:
            raise TransportError("Canal fechado.")
        try:
            data = self._inbox.get(timeout=self.timeout_s)
        except queue.Empty as exc:
            message = f"Tempo esgotado ({self.timeout_s}s) aguardando mensagem."
            raise TransportError(message) from exc
        if data is _CLOSED:
            self.closed = True
            raise TransportError("Canal fechado pelo outro lado.")
        return frame_decode(data)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        self._outbox.put(_CLOSED)
        self._inbox.put(_CLOSED)


def recv_exact(sock: socket.socket, size: int) -> bytes:
    chunks: list[bytes] = []
    remaining = size
    while remaining > 0:
        chunk = sock.recv(min(remaining, 1 << 20))
        if not chunk:
            raise TransportError("Conexao encerrada pelo outro lado.")
        chunks.append(chunk)
        remaining -= len(chunk)
    return b"".join(chunks)


class TcpChannel(Channel):
    def __init__(self, sock: socket.socket, timeout_s: float | None = 30.0) -> None:
        self.sock = sock
        self.sock.settimeout(timeout_s)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.closed = False

    @classmethod
    def connect(cls, address: tuple[str, int], timeout_s: float | None = 30.0) -> TcpChannel:
        try:
            sock = socket.create_connection(address, timeout=timeout_s)
        except OSError as exc:
            raise TransportError(f"Falha ao conectar em {address[0]}:{address[1]}: {exc}") from exc
        return cls(sock, timeout_s)

    def send_frame(self, tag: int, payload: bytes) -> None:
        try:
            self.sock.sendall(frame_encode(tag, payload))
        except OSError as exc:
            raise TransportError(f"Falha no envio: {exc}") from exc

    def recv_frame(self) -> Frame:
        try:
            tag, length = parse_header(recv_exact(self.sock, FRAME_HEADER.size))
            payload = recv_exact(self.sock, length) if length else b""
        except TimeoutError as exc:
            raise TransportError("Tempo esgotado aguardando mensagem.") from exc
        except OSError as exc:
            raise TransportError(f"Falha na recepcao: {exc}") from exc
        return Frame(tag=tag, payload=payload)

    def close(self) -> None:
        if self.closed:
            return
        self.closed = True
        try:
            self.sock.shutdown(socket.SHUT_RDWR)
        except OSError:
            pass
        self.sock.close()


class Link:
    def __init__(
        self,
        channel: Channel,
        transcript: Transcript,
        peer: str,
        link_model: LinkModel | None = None,
        timer: PhaseTimer | None = None,
    ) -> None:
        self.channel = channel
        self.transcript = transcript
        self.peer = peer
        self.link_model = link_model
        self.timer = timer

    def _charge(self, started: float) -> None:
        if self.timer is not None:
            self.timer.add("communication", time.perf_counter() - started)

    def send(self, tag: Tag, payload: bytes, *, counted: bool | None = None) -> None:
        if counted is None:
            counted = tag not in CONTROL_TAGS and self.peer in PARTY_PEERS
        started = time.perf_counter()
        if counted and self.link_model is not None:
            self.link_model.apply(FRAME_HEADER.size + len(payload))
        self.channel.send_frame(tag, payload)
        self._charge(started)
        entry = self.transcript.record("send", self.peer, tag, payload, counted=counted)
        logger.debug(
            f"{self.transcript.owner} -> {self.peer}: tag=0x{int(tag):02x} "
            f"bytes={entry.wire_bytes}"
        )

    def recv(self, *expected: Tag) -> bytes:
        started = time.perf_counter()
        frame = self.channel.recv_frame()
        if frame.tag == Tag.ERROR:
            self._charge(started)
            message = decode_json(frame.payload).get("error", "erro remoto")
            raise TransportError(f"{self.peer} reportou erro: {message}")
        if expected and frame.tag not in expected:
            self._charge(started)
            wanted = ", ".join(f"0x{int(t):02x}" for t in expected)
            raise FrameError(
                f"Tag inesperada 0x{int(frame.tag):02x} de {self.peer} (esperado {wanted})."
            )
        counted = frame.tag not in CONTROL_TAGS and self.peer == "cs"
        if counted and self.link_model is not None:
            self.link_model.apply(FRAME_HEADER.size + len(frame.payload))
        self._charge(started)
        entry = self.transcript.record("recv", self.peer, frame.tag, frame.payload, counted=counted)
        logger.debug(
            f"{self.transcript.owner} <- {self.peer}: tag=0x{int(frame.tag):02x} "
            f"bytes={entry.wire_bytes}"
        )
        return frame.payload

    def close(self) -> None:
        self.channel.close()
