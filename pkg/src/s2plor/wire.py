from __future__ import annotations

import json
import struct
import uuid
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import FrameError

FRAME_HEADER = struct.Struct("<IQ")
MATRIX_HEADER = struct.Struct("<II")
EXPONENT_HEADER = struct.Struct("<I")
HANDSHAKE = struct.Struct("<BB16s")
PROTOCOL_VERSION = 1
MAX_PAYLOAD = 2**63


class Tag(IntEnum):
    HANDSHAKE = 0x00
    MASKED_LEFT = 0x01
    MASKED_RIGHT = 0x02
    VF_RIGHT_AND_T = 0x03
    VF_LEFT = 0x04
    ATP_T = 0x05
    TRIPLE_BUNDLE = 0x10
    PREPROCESS_REQUEST = 0x11
    ERROR = 0x1E


CONTROL_TAGS = frozenset({Tag.HANDSHAKE, Tag.PREPROCESS_REQUEST, Tag.ERROR})
PREPROCESSING_TAGS = frozenset(
    {Tag.HANDSHAKE, Tag.PREPROCESS_REQUEST, Tag.TRIPLE_BUNDLE, Tag.ERROR}
)
SCALED_TAGS = frozenset({Tag.MASKED_LEFT, Tag.MASKED_RIGHT})
ROLE_CODES = {"alice": 1, "bob": 2, "cs": 3, "client": 4}
ROLE_NAMES = {code: name for name, code in ROLE_CODES.items()}


@dataclass(frozen=True)
class Frame:
    tag: Tag
    payload: bytes


def frame_encode(tag: int, payload: bytes) -> bytes:
    if len(payload) > MAX_PAYLOAD:
        raise FrameError("Payload excede o limite do quadro.")
    return FRAME_HEADER.pack(int(Tag(tag)), len(payload)) + payload


def parse_header(header: bytes) -> tuple[Tag, int]:
    if len(header) < FRAME_HEADER.size:
        raise FrameError(f"Quadro truncado: {len(header)} bytes de cabecalho.")
    raw_tag, length = FRAME_HEADER.unpack_from(header)
    try:
        tag = Tag(raw_tag)
    except ValueError as exc:
        raise FrameError(f"Tag desconhecida: 0x{raw_tag:02x}.") from exc
    return tag, length


def frame_decode(data: bytes) -> Frame:
    tag, length = parse_header(data)
    body = data[FRAME_HEADER.size :]
    if len(body) != length:
        raise FrameError(f"Quadro truncado: esperado {length} bytes, recebido {len(body)}.")
    return Frame(tag=tag, payload=bytes(body))


def encode_matrix(matrix: np.ndarray) -> bytes:
    m = np.asarray(matrix, dtype=np.float64)
    if m.ndim == 1:
        m = m.reshape(-1, 1)
    rows, cols = m.shape
    return MATRIX_HEADER.pack(rows, cols) + np.ascontiguousarray(m, dtype="<f8").tobytes()


def decode_matrix(data: bytes, offset: int = 0) -> tuple[np.ndarray, int]:
    if len(data) - offset < MATRIX_HEADER.size:
        raise FrameError("Cabecalho de matriz truncado.")
    rows, cols = MATRIX_HEADER.unpack_from(data, offset)
    start = offset + MATRIX_HEADER.size
    end = start + 8 * rows * cols
    if end > len(data):
        raise FrameError(f"Corpo de matriz {rows}x{cols} truncado.")
    body = np.frombuffer(data, dtype="<f8", count=rows * cols, offset=start)
    return body.astype(np.float64).reshape(rows, cols), end


def encode_matrices(*matrices: np.ndarray) -> bytes:
    return b"".join(encode_matrix(m) for m in matrices)


def decode_matrices(data: bytes, count: int) -> list[np.ndarray]:
    out: list[np.ndarray] = []
    offset = 0
    for _ in range(count):
        matrix, offset = decode_matrix(data, offset)
        out.append(matrix)
    if offset != len(data):
        raise FrameError(f"{len(data) - offset} bytes sobrando apos {count} matrizes.")
    return out


def encode_scaled(matrix: np.ndarray, exponents: np.ndarray) -> bytes:
    exps = np.ascontiguousarray(np.asarray(exponents).reshape(-1), dtype="<i8")
    return encode_matrix(matrix) + EXPONENT_HEADER.pack(exps.size) + exps.tobytes()


def _skip_exponents(data: bytes, offset: int) -> tuple[np.ndarray, int]:
    if len(data) - offset < EXPONENT_HEADER.size:
        raise FrameError("Bloco de expoentes truncado.")
    (count,) = EXPONENT_HEADER.unpack_from(data, offset)
    start = offset + EXPONENT_HEADER.size
    end = start + 8 * count
    if end > len(data):
        raise FrameError(f"Bloco de {count} expoentes truncado.")
    exps = np.frombuffer(data, dtype="<i8", count=count, offset=start)
    return exps.astype(np.int64), end


def decode_scaled(data: bytes) -> tuple[np.ndarray, np.ndarray]:
    matrix, offset = decode_matrix(data)
    exps, offset = _skip_exponents(data, offset)
    if offset != len(data):
        raise FrameError(f"{len(data) - offset} bytes sobrando apos matriz escalada.")
    return matrix, exps


def encode_handshake(role: str, session_id: uuid.UUID) -> bytes:
    return HANDSHAKE.pack(PROTOCOL_VERSION, ROLE_CODES[role], session_id.bytes)


def decode_handshake(payload: bytes) -> tuple[int, str, uuid.UUID]:
    if len(payload) != HANDSHAKE.size:
        raise FrameError("Handshake com tamanho invalido.")
    version, role_code, sid = HANDSHAKE.unpack(payload)
    if role_code not in ROLE_NAMES:
        raise FrameError(f"Papel desconhecido no handshake: {role_code}.")
    return version, ROLE_NAMES[role_code], uuid.UUID(bytes=sid)


def encode_json(data: dict) -> bytes:
    return json.dumps(data, sort_keys=True, separators=(",", ":")).encode("utf-8")


def decode_json(payload: bytes) -> dict:
    try:
        data = json.loads(payload.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FrameError("Payload JSON invalido.") from exc
    if not isinstance(data, dict):
        raise FrameError("Payload JSON precisa ser um objeto.")
    return data


def payload_elements(payload: bytes, tag: int | None = None) -> int:
    if tag is not None and Tag(tag) in SCALED_TAGS:
        matrix, _ = decode_scaled(payload)
        return int(matrix.size)
    total = 0
    offset = 0
    while offset < len(payload):
        if len(payload) - offset < MATRIX_HEADER.size:
            raise FrameError("Payload de dados com matriz truncada.")
        rows, cols = MATRIX_HEADER.unpack_from(payload, offset)
        offset += MATRIX_HEADER.size + 8 * rows * cols
        total += rows * cols
    if offset != len(payload):
        raise FrameError("Payload de dados com matriz truncada.")
    return total
