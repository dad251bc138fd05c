from __future__ import annotations

import json
import logging
import os
import uuid
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .cs import serve_cs
from .errors import DatasetError, S2plorError
from .logreg import (
    TrainConfig,
    load_dataset_csv,
    load_features_csv,
    load_share,
    merge_model_shares,
    plain_predict,
    s2plorp,
    s2plort,
    save_model,
    save_share,
)
from .metrics import evaluate
from .session import ALICE, BOB, ProtocolConfig, connect_party
from .transport import LinkModel
from .utils import derive_session_id, parse_address

logger = logging.getLogger(__name__)

NODE_ROLES = ("cs", ALICE, BOB, "client")
DEFAULT_CS_ADDR = "127.0.0.1:7300"


def default_cs_address() -> tuple[str, int]:
    return parse_address(os.getenv("S2PLOR_CS_ADDR") or DEFAULT_CS_ADDR)


def parse_session(value: str | None, seed: int) -> uuid.UUID:
    if not value:
        return derive_session_id(seed)
    try:
        return uuid.UUID(value)
    except ValueError as exc:
        raise S2plorError(f"Identificador de sessao invalido: {value!r}.") from exc


@dataclass
class PartyJob:
    role: str
    task: str
    data_path: Path
    output: Path
    model_path: Path | None = None


def run_cs_node(bind: tuple[str, int], seed: int, timeout_s: float) -> None:
    logger.info(f"CS escutando em {bind[0]}:{bind[1]}")
    serve_cs(bind, seed, timeout_s, background=False)


def _party_labels(role: str, path: Path, rows: int, y: np.ndarray | None) -> np.ndarray:
    if role == ALICE:
        if y is None:
            raise DatasetError(f"Alice precisa da coluna 'label' em {path.name} para treinar.")
        return y
    return np.zeros(rows)


def run_party_node(
    job: PartyJob,
    config: ProtocolConfig,
    cfg: TrainConfig,
    *,
    cs_address: tuple[str, int],
    session_id: uuid.UUID,
    bind: tuple[str, int] | None = None,
    peer: tuple[str, int] | None = None,
    link_model: LinkModel | None = None,
) -> Path:
    if job.task not in ("train", "predict"):
        raise S2plorError(f"Tarefa desconhecida: {job.task!r} (use train ou predict).")
    X, y, _ = load_features_csv(job.data_path)
    session = connect_party(
        job.role,
        config,
        cs_address=cs_address,
        bind=bind,
        peer=peer,
        session_id=session_id,
        seed=cfg.seed,
        link_model=link_model,
    )
    try:
        if job.task == "train":
            labels = _party_labels(job.role, job.data_path, X.shape[0], y)
            w_share = s2plort(session, X, labels, cfg)
            save_share(job.output, job.role, w_share, cfg.to_dict())
        else:
            if job.model_path is None:
                raise S2plorError("Predicao exige --model com a parte do modelo deste no.")
            role, w_share = load_share(job.model_path)
            if role != job.role:
                raise DatasetError(f"Parte de modelo de {role} usada pelo no {job.role}.")
            scores = s2plorp(session, X, w_share)
            save_prediction_share(job.output, job.role, scores)
        rounds, bits = session.transcript.rounds, session.transcript.payload_bits
    finally:
        session.close()
    logger.info(f"{job.role}: {job.task} concluido ({rounds} rodadas, {bits} bits)")
    return job.output


def save_prediction_share(path: Path, role: str, scores: np.ndarray) -> None:
    data = {"role": role, "scores": np.asarray(scores, dtype=np.float64).tolist()}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, ensure_ascii=False, indent=2), encoding="utf-8")


def load_prediction_share(path: Path) -> tuple[str, np.ndarray]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        return data["role"], np.asarray(data["scores"], dtype=np.float64)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"Parte de predicao invalida em {path}: {exc}") from exc


def merge_prediction_shares(paths: list[Path]) -> np.ndarray:
    shares = dict(load_prediction_share(path) for path in paths)
    if set(shares) != {ALICE, BOB}:
        raise DatasetError("Informe exatamente uma predicao de Alice e uma de Bob.")
    if shares[ALICE].size != shares[BOB].size:
        raise DatasetError("Partes de predicao com tamanhos diferentes.")
    return shares[ALICE] + shares[BOB]


def run_client_node(
    share_paths: list[Path], output: Path, evaluate_path: Path | None = None
) -> dict:
    model = merge_model_shares(share_paths)
    save_model(output, model)
    result: dict = {"model": str(output), "weights": model.merged().tolist()}
    if evaluate_path is not None:
        X, y, _ = load_dataset_csv(evaluate_path)
        result["metrics"] = evaluate(y, plain_predict(X, model.merged())).to_dict()
    logger.info(f"Cliente combinou {len(share_paths)} partes em {output}")
    return result


def run_client_scores(
    score_paths: list[Path], output: Path, evaluate_path: Path | None = None
) -> dict:
    scores = merge_prediction_shares(score_paths)
    output.parent.mkdir(parents=True, exist_ok=True)
    output.write_text(json.dumps({"scores": scores.tolist()}, indent=2), encoding="utf-8")
    result: dict = {"scores_path": str(output), "scores": scores.tolist()}
    if evaluate_path is not None:
        _, y, _ = load_features_csv(evaluate_path)
        if y is None:
            raise DatasetError(f"{evaluate_path.name} nao tem a coluna de rotulos.")
        result["metrics"] = evaluate(y, scores).to_dict()
    logger.info(f"Cliente combinou {scores.size} predicoes em {output}")
    return result
