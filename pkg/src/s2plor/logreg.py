from __future__ import annotations

import json
import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from sklearn.metrics import log_loss
from sklearn.model_selection import train_test_split as sk_train_test_split
from sklearn.preprocessing import MinMaxScaler

from .errors import DatasetError, ProtocolAbort, S2plorError, ShapeError, TransportError
from .numerics import as_matrix, as_vector
from .protocols import AddShares, s2ps, s2ps_plan, sigmoid
from .s2pm import s2phm, s2phm_plan
from .session import ALICE, BOB, PartyPair, ProtocolConfig, ProtocolSession

logger = logging.getLogger(__name__)

LABEL_COLUMN = "label"
IterationCallback = Callable[[int, np.ndarray], None]


@dataclass
class PartitionedDataset:
    X_a: np.ndarray
    X_b: np.ndarray
    y: np.ndarray

    def __post_init__(self) -> None:
        self.X_a = as_matrix(self.X_a, "X_a")
        self.X_b = as_matrix(self.X_b, "X_b")
        self.y = as_vector(self.y, "y")
        if self.X_a.shape != self.X_b.shape:
            raise ShapeError(f"X_a {self.X_a.shape} e X_b {self.X_b.shape} diferem.")
        if self.X_a.shape[0] != self.y.size:
            raise ShapeError(f"{self.X_a.shape[0]} linhas para {self.y.size} rotulos.")
        if not np.all(np.isin(self.y, (0.0, 1.0))):
            raise DatasetError("Rotulos precisam ser 0 ou 1.")

    @property
    def X(self) -> np.ndarray:
        return self.X_a + self.X_b


@dataclass(frozen=True)
class TrainConfig:
    eta: float = 0.05
    batch_size: int = 32
    iterations: int = 5
    rho: int = 2
    l: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.eta >= 0:
            raise S2plorError(f"Taxa de aprendizado invalida: {self.eta}.")
        if self.batch_size < 1:
            raise S2plorError(f"Tamanho de lote invalido: {self.batch_size}.")
        if self.iterations < 1:
            raise S2plorError(f"Numero de iteracoes invalido: {self.iterations}.")
        if self.rho < 2:
            raise S2plorError(f"rho precisa ser >= 2 (recebido {self.rho}).")

    def protocol_config(self, base: ProtocolConfig | None = None, **overrides) -> ProtocolConfig:
        return replace(base or ProtocolConfig.from_env(), rho=self.rho, l=self.l, **overrides)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModelShares:
    w_a: np.ndarray
    w_b: np.ndarray

    def merged(self) -> np.ndarray:
        return self.w_a + self.w_b


def vertical_partition(X, split_point: int) -> tuple[np.ndarray, np.ndarray]:
    X = as_matrix(X, "X")
    d = X.shape[1]
    if not 0 <= split_point <= d:
        raise ShapeError(f"Ponto de divisao {split_point} fora de [0, {d}].")
    X_a = np.zeros_like(X)
    X_b = np.zeros_like(X)
    X_a[:, :split_point] = X[:, :split_point]
    X_b[:, split_point:] = X[:, split_point:]
    return X_a, X_b


def batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    count = math.ceil(n / batch_size)
    return [(i * batch_size, min(n, (i + 1) * batch_size)) for i in range(count)]


def augment(X: np.ndarray, role: str) -> np.ndarray:
    fill = 1.0 if role == ALICE else 0.0
    return np.hstack([np.full((X.shape[0], 1), fill), X])


def training_step_plan(batch_rows: int, width: int, rho: int) -> list:
    return (
        s2phm_plan(batch_rows, width, 1)
        + s2ps_plan(batch_rows, rho)
        + s2phm_plan(width, batch_rows, 1)
    )


def s2plort(
    session: ProtocolSession,
    X_share,
    y,
    cfg: TrainConfig,
    on_iteration: IterationCallback | None = None,
) -> np.ndarray:
    X_hat = augment(as_matrix(X_share, "X"), session.role)
    y = as_vector(y, "y")
    n, width = X_hat.shape
    if y.size != n:
        raise ShapeError(f"{n} linhas para {y.size} rotulos.")
    w = np.zeros(width)
    for iteration in range(cfg.iterations):
        for batch, (lo, hi) in enumerate(batch_bounds(n, cfg.batch_size)):
            rows = X_hat[lo:hi]
            try:
                with session.invocation(training_step_plan(hi - lo, width, session.config.rho)):
                    logits = s2phm(session, rows, w.reshape(-1, 1)).reshape(-1)
                    residual = s2ps(session, logits)
                    if session.role == ALICE:
                        residual = residual - y[lo:hi]
                    grad = s2phm(session, rows.T, residual.reshape(-1, 1)).reshape(-1)
            except (TransportError, ProtocolAbort):
                raise
            except S2plorError as exc:
                raise ProtocolAbort(str(exc), iteration=iteration, batch=batch) from exc
            w = w - cfg.eta * grad / (hi - lo)
        logger.info(f"{session.role}: iteracao {iteration + 1}/{cfg.iterations} concluida")
        if on_iteration is not None:
            on_iteration(iteration, w.copy())
    return w


def s2plorp(session: ProtocolSession, X_share, w_share) -> np.ndarray:
    X_hat = augment(as_matrix(X_share, "X"), session.role)
    w = as_vector(w_share, "w")
    if w.size != X_hat.shape[1]:
        raise ShapeError(f"Modelo com {w.size} pesos para {X_hat.shape[1] - 1} atributos.")
    n, width = X_hat.shape
    plan = s2phm_plan(n, width, 1) + s2ps_plan(n, session.config.rho)
    with session.invocation(plan):
        logits = s2phm(session, X_hat, w.reshape(-1, 1)).reshape(-1)
        return s2ps(session, logits)


def s2plort_run(
    pair: PartyPair,
    data: PartitionedDataset,
    cfg: TrainConfig,
    trajectory: list[np.ndarray] | None = None,
) -> ModelShares:
    history: dict[str, list[np.ndarray]] = {ALICE: [], BOB: []}

    def _party(role: str, X_share):
        def run(session: ProtocolSession):
            return s2plort(
                session, X_share, data.y, cfg, lambda _, w: history[role].append(w)
            )

        return run

    w_a, w_b = pair.run_each(_party(ALICE, data.X_a), _party(BOB, data.X_b))
    if trajectory is not None:
        trajectory.extend(a + b for a, b in zip(history[ALICE], history[BOB]))
    return ModelShares(w_a, w_b)


def s2plorp_run(pair: PartyPair, X_a, X_b, model: ModelShares) -> AddShares:
    y_a, y_b = pair.run_each(
        lambda session: s2plorp(session, X_a, model.w_a),
        lambda session: s2plorp(session, X_b, model.w_b),
    )
    return AddShares(y_a, y_b)


def s2plorp_batched(
    connect: Callable[[int], PartyPair],
    X_a,
    X_b,
    model: ModelShares,
    batch_size: int = 256,
    workers: int = 2,
) -> AddShares:
    X_a = as_matrix(X_a, "X_a")
    X_b = as_matrix(X_b, "X_b")
    bounds = batch_bounds(X_a.shape[0], batch_size)

    def _one(index: int) -> AddShares:
        lo, hi = bounds[index]
        with connect(index) as pair:
            return s2plorp_run(pair, X_a[lo:hi], X_b[lo:hi], model)

    with ThreadPoolExecutor(max_workers=max(1, workers)) as pool:
        parts = list(pool.map(_one, range(len(bounds))))
    return AddShares(
        np.concatenate([p.v_a for p in parts]), np.concatenate([p.v_b for p in parts])
    )


def plain_lort(
    X, y, cfg: TrainConfig, on_iteration: IterationCallback | None = None
) -> np.ndarray:
    X_hat = np.hstack([np.ones((np.shape(X)[0], 1)), as_matrix(X, "X")])
    y = as_vector(y, "y")
    w = np.zeros(X_hat.shape[1])
    for iteration in range(cfg.iterations):
        for lo, hi in batch_bounds(X_hat.shape[0], cfg.batch_size):
            rows = X_hat[lo:hi]
            grad = rows.T @ (sigmoid(rows @ w) - y[lo:hi])
            w = w - cfg.eta * grad / (hi - lo)
        if on_iteration is not None:
            on_iteration(iteration, w.copy())
    return w


def plain_predict(X, w) -> np.ndarray:
    X_hat = np.hstack([np.ones((np.shape(X)[0], 1)), as_matrix(X, "X")])
    return sigmoid(X_hat @ as_vector(w, "w"))


def logistic_loss(X, y, w) -> float:
    return float(log_loss(as_vector(y, "y"), plain_predict(X, w), labels=[0.0, 1.0]))


def _read_table(path: Path) -> tuple[list[str], np.ndarray]:
    if not path.exists():
        raise DatasetError(f"Arquivo nao encontrado: {path}")
    with path.open(encoding="utf-8") as handle:
        header = [col.strip() for col in handle.readline().strip().split(",")]
    try:
        raw = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, dtype=np.float64)
    except ValueError as exc:
        raise DatasetError(f"Falha ao ler {path.name}: {exc}") from exc
    if raw.shape[0] == 0 or raw.shape[1] != len(header):
        raise DatasetError(f"{path.name} sem linhas ou com colunas inconsistentes.")
    if not np.all(np.isfinite(raw)):
        raise DatasetError(f"{path.name} contem valores nao finitos.")
    return header, raw


def _check_labels(y: np.ndarray) -> np.ndarray:
    if not np.all(np.isin(y, (0.0, 1.0))):
        raise DatasetError("Rotulos precisam ser 0 ou 1.")
    return y


def load_dataset_csv(path: Path) -> tuple[np.ndarray, np.ndarray, list[str]]:
    header, raw = _read_table(path)
    if header[-1] != LABEL_COLUMN:
        raise DatasetError(f"A ultima coluna de {path.name} precisa se chamar '{LABEL_COLUMN}'.")
    return raw[:, :-1], _check_labels(raw[:, -1]), header[:-1]


def load_features_csv(path: Path) -> tuple[np.ndarray, np.ndarray | None, list[str]]:
    header, raw = _read_table(path)
    if header[-1] == LABEL_COLUMN:
        return raw[:, :-1], _check_labels(raw[:, -1]), header[:-1]
    return raw, None, header


def save_dataset_csv(
    path: Path, X: np.ndarray, y: np.ndarray | None = None, names: list[str] | None = None
) -> None:
    names = names or [f"x{i}" for i in range(X.shape[1])]
    columns, table = list(names), np.asarray(X, dtype=np.float64)
    if y is not None:
        columns.append(LABEL_COLUMN)
        table = np.hstack([table, np.asarray(y, dtype=np.float64).reshape(-1, 1)])
    path.parent.mkdir(parents=True, exist_ok=True)
    np.savetxt(path, table, delimiter=",", header=",".join(columns), comments="", fmt="%.17g")


def train_test_split(
    X: np.ndarray, y: np.ndarray, train_size: int | float, seed: int = 0, shuffle: bool = True
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    n = X.shape[0]
    cut = int(round(train_size * n)) if isinstance(train_size, float) else int(train_size)
    if not 0 < cut < n:
        raise DatasetError(f"Divisao treino/teste invalida: {cut} de {n} linhas.")
    X_train, X_test, y_train, y_test = sk_train_test_split(
        X, y, train_size=cut, random_state=seed if shuffle else None, shuffle=shuffle
    )
    return X_train, X_test, y_train, y_test


def min_max_scale(X_train: np.ndarray, X_test: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    scaler = MinMaxScaler().fit(X_train)
    return scaler.transform(X_train), scaler.transform(X_test)


def save_model(path: Path, model: ModelShares | np.ndarray, config: dict | None = None) -> None:
    if isinstance(model, ModelShares):
        data = {"w_a": model.w_a.tolist(), "w_b": model.w_b.tolist(), "w": model.merged().tolist()}
    else:
        data = {"w": as_vector(model, "w").tolist()}
    data["config"] = config or {}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, ensure_ascii=False, indent=2), encoding="utf-8")


def save_share(path: Path, role: str, w_share: np.ndarray, config: dict | None = None) -> None:
    data = {"role": role, f"w_{role[0]}": as_vector(w_share, "w").tolist(), "config": config or {}}
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, ensure_ascii=False, indent=2), encoding="utf-8")


def load_model(path: Path) -> ModelShares | np.ndarray:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise DatasetError(f"Modelo invalido em {path}: {exc}") from exc
    if "w_a" in data and "w_b" in data:
        return ModelShares(np.asarray(data["w_a"], float), np.asarray(data["w_b"], float))
    if "w" in data:
        return np.asarray(data["w"], dtype=np.float64)
    raise DatasetError(f"{path.name} nao contem pesos (w, w_a/w_b).")


def load_share(path: Path) -> tuple[str, np.ndarray]:
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
        role = data["role"]
        return role, np.asarray(data[f"w_{role[0]}"], dtype=np.float64)
    except (OSError, KeyError, TypeError, json.JSONDecodeError) as exc:
        raise DatasetError(f"Parte de modelo invalida em {path}: {exc}") from exc


def merge_model_shares(paths: list[Path]) -> ModelShares:
    shares = dict(load_share(path) for path in paths)
    if set(shares) != {ALICE, BOB}:
        raise DatasetError("Informe exatamente uma parte de Alice e uma de Bob.")
    if shares[ALICE].size != shares[BOB].size:
        raise DatasetError("Partes do modelo com tamanhos diferentes.")
    return ModelShares(shares[ALICE], shares[BOB])
