from __future__ import annotations

import logging
import math
from collections.abc import Callable
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import asdict, dataclass, field, replace
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from .analysis import (
    digit_loss_probability_analytic,
    practical_security_probability,
    precision_bound,
    verification_failure_bound,
)
from .errors import S2plorError
from .logreg import (
    PartitionedDataset,
    TrainConfig,
    load_dataset_csv,
    min_max_scale,
    plain_lort,
    logistic_loss,
    plain_predict,
    s2plorp_run,
    s2plort_run,
    train_test_split,
    vertical_partition,
)
from .metrics import evaluate
from .protocols import VECTOR_PROTOCOLS, out_of_domain_count
from .s2pm import s2pm_run
from .session import Fault, PartyPair, ProtocolConfig, connect_parties
from .transport import LinkModel
from .utils import make_rng, relative_errors

logger = logging.getLogger(__name__)

TrialFn = Callable[[PartyPair, int, int], Any]
ProgressFn = Callable[[int, int], None]


@dataclass
class PrecisionReport:
    protocol: str
    delta_x: int
    n: int
    trials: int
    mre: float
    are: float
    bound: float
    resampled: int = 0
    out_of_domain: int = 0
    same_sign: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class BenchReport:
    dataset: str
    n_train: int
    n_test: int
    features: int
    split_point: int
    timings: dict[str, float]
    total_seconds: float
    rounds: int
    payload_bits: int
    secure: dict
    plaintext: dict
    accuracy_gap: float
    weight_drift: float
    train_config: dict
    protocol_config: dict
    weights: dict = field(default_factory=dict)
    train_loss: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return asdict(self)


def _now() -> datetime:
    return datetime.now(timezone.utc)


def trial_seeds(seed: int, trials: int) -> list[int]:
    children = np.random.SeedSequence(seed).spawn(trials)
    return [int(child.generate_state(1, np.uint64)[0]) for child in children]


def run_trials(
    trials: int,
    seed: int,
    trial_fn: TrialFn,
    config: ProtocolConfig | None = None,
    transport: str = "mem",
    workers: int = 1,
    link_model: LinkModel | None = None,
    on_trial_done: ProgressFn | None = None,
) -> list[Any]:
    if trials < 1:
        raise S2plorError("Numero de ensaios precisa ser >= 1.")
    seeds = trial_seeds(seed, trials)
    workers = max(1, min(workers, trials))
    chunks = [list(range(k, trials, workers)) for k in range(workers)]
    results: dict[int, Any] = {}
    done = 0

    def _worker(indices: list[int]) -> dict[int, Any]:
        out: dict[int, Any] = {}
        with connect_parties(
            config, transport=transport, seed=seeds[indices[0]], link_model=link_model
        ) as pair:
            for index in indices:
                pair.reseed(seeds[index])
                pair.reset_counters()
                out[index] = trial_fn(pair, seeds[index], index)
        return out

    with ThreadPoolExecutor(max_workers=workers) as pool:
        futures = [pool.submit(_worker, chunk) for chunk in chunks]
        for future in as_completed(futures):
            part = future.result()
            results.update(part)
            done += len(part)
            if on_trial_done is not None:
                on_trial_done(done, trials)
    return [results[i] for i in range(trials)]


def delta_range_values(x: int, size: int, rng: np.random.Generator) -> np.ndarray:
    mantissa = 1.0 + rng.integers(0, 10**15, size=size) / 1e15
    exponent = rng.integers(-x, x + 1, size=size)
    sign = rng.choice([-1.0, 1.0], size=size)
    return sign * mantissa * np.power(10.0, exponent)


def _draw_operands(
    protocol: str, x: int, n: int, rng: np.random.Generator, same_sign: bool, eps_den: float
) -> tuple[np.ndarray, np.ndarray, int]:
    a = delta_range_values(x, n, rng)
    b = delta_range_values(x, n, rng)
    if same_sign:
        sign = rng.choice([-1.0, 1.0], size=n)
        a, b = sign * np.abs(a), sign * np.abs(b)
    resampled = 0
    if protocol == "s2pr":
        bad = np.abs(a + b) < eps_den
        while np.any(bad):
            resampled += int(bad.sum())
            b[bad] = delta_range_values(x, int(bad.sum()), rng)
            bad = np.abs(a + b) < eps_den
    return a, b, resampled


def precision_experiment(
    protocol: str,
    delta_x: int,
    n: int = 500,
    trials: int = 10,
    seed: int = 0,
    config: ProtocolConfig | None = None,
    same_sign: bool = False,
    transport: str = "mem",
    workers: int = 1,
    on_trial_done: ProgressFn | None = None,
) -> PrecisionReport:
    key = protocol.lower()
    if key not in VECTOR_PROTOCOLS:
        raise S2plorError(f"Protocolo desconhecido: {protocol!r}.")
    spec = VECTOR_PROTOCOLS[key]
    config = config or ProtocolConfig.from_env()

    def _trial(pair: PartyPair, trial_seed: int, _: int) -> tuple[np.ndarray, int, int]:
        rng = make_rng(trial_seed, 0xDA7A)
        a, b, resampled = _draw_operands(key, delta_x, n, rng, same_sign, config.eps_den)
        shares = spec.run(pair, a, b)
        errors = relative_errors(shares.reconstruct(), spec.oracle(a, b))
        outside = out_of_domain_count(a, b, config.exp_domain) if key == "s2ps" else 0
        return errors, resampled, outside

    outcomes = run_trials(
        trials, seed, _trial, config, transport, workers, on_trial_done=on_trial_done
    )
    errors = np.concatenate([item[0] for item in outcomes])
    report = PrecisionReport(
        protocol=key,
        delta_x=delta_x,
        n=n,
        trials=trials,
        mre=float(np.max(errors)),
        are=float(np.mean(errors)),
        bound=precision_bound(key, config.rho),
        resampled=sum(item[1] for item in outcomes),
        out_of_domain=sum(item[2] for item in outcomes),
        same_sign=same_sign,
    )
    logger.info(f"{key} delta=[-{delta_x},{delta_x}]: MRE={report.mre:.3e} ARE={report.are:.3e}")
    return report


def precision_sweep(
    protocol: str, delta_xs: list[int], **kwargs
) -> list[PrecisionReport]:
    return [precision_experiment(protocol, x, **kwargs) for x in delta_xs]


def _binomial_sigma(p: float, trials: int) -> float:
    return math.sqrt(max(p * (1.0 - p), 0.0) / trials)


def security_theta_probability(
    theta: float, trials: int = 100_000, seed: int = 0, model: str = "uniform-sum"
) -> dict:
    if theta < 1:
        raise S2plorError(f"theta precisa ser >= 1 (recebido {theta}).")
    if trials < 10_000:
        raise S2plorError("O jogo de seguranca exige pelo menos 10^4 ensaios.")
    expected = practical_security_probability(theta, model)
    rng = make_rng(seed, 0x7E7A)
    l1, r1 = -1.0, 1.0
    l2, r2 = -theta, theta
    if model == "uniform-sum":
        # the masked value itself is uniform on the summed range; fixed-operand draws A and R_a
        masked = rng.uniform(l1 + l2, r1 + r2, size=trials)
    else:
        masked = rng.uniform(l1, r1, size=trials) + rng.uniform(l2, r2, size=trials)
    kept = (masked >= l2 + r1) & (masked <= l1 + r2)
    estimate = float(np.mean(kept))
    sigma = _binomial_sigma(expected, trials)
    return {
        "theta": theta,
        "model": model,
        "trials": trials,
        "estimate": estimate,
        "expected": expected,
        "sigma": sigma,
        "within_3sigma": abs(estimate - expected) <= 3 * sigma + 1e-12,
    }


def digit_loss_probability(
    n: int, d: int, trials: int = 10_000, seed: int = 0, chunk: int = 1000
) -> dict:
    analytic = digit_loss_probability_analytic(n, d)
    rng = make_rng(seed, 0xD161)
    losses = 0
    remaining = trials
    while remaining > 0:
        size = min(chunk, remaining)
        remaining -= size
        subtract = rng.random(size) < 0.5
        x = rng.uniform(1.0, 10.0, size=(size, n))
        y = rng.uniform(1.0, 10.0, size=(size, n))
        cancels = np.abs(x - y) <= np.maximum(x, y) * 10.0**-d
        losses += int(np.sum(subtract & cancels.any(axis=1)))
    empirical = losses / trials
    return {
        "n": n,
        "d": d,
        "trials": trials,
        "analytic": analytic,
        "empirical": empirical,
        "ratio": empirical / analytic if analytic else float("nan"),
    }


def verification_failure_experiment(
    l: int,
    tamper_magnitude: float = 1.0,
    trials: int = 1000,
    seed: int = 0,
    target: str = "vf_b",
    dims: tuple[int, int, int] = (2, 4, 2),
    config: ProtocolConfig | None = None,
    workers: int = 1,
    on_trial_done: ProgressFn | None = None,
) -> dict:
    config = replace(config or ProtocolConfig.from_env(), l=l, abort_on_reject=False)
    n, s, m = dims

    def _trial(pair: PartyPair, trial_seed: int, _: int) -> tuple[bool, bool]:
        rng = make_rng(trial_seed, 0xF417)
        if tamper_magnitude:
            pair.set_fault(
                Fault(target, int(rng.integers(n)), int(rng.integers(m)), tamper_magnitude)
            )
        else:
            pair.set_fault(None)
        A = rng.uniform(-1.0, 1.0, size=(n, s))
        B = rng.uniform(-1.0, 1.0, size=(s, m))
        s2pm_run(pair, A, B)
        alice, bob = pair.alice.verdicts[-1], pair.bob.verdicts[-1]
        return alice.accepted, bob.accepted

    outcomes = run_trials(
        trials, seed, _trial, config, workers=workers, on_trial_done=on_trial_done
    )
    both = sum(1 for a, b in outcomes if a and b)
    bound = verification_failure_bound("s2pm", l)
    sigma = _binomial_sigma(bound, trials)
    rate = both / trials
    return {
        "l": l,
        "tamper_magnitude": tamper_magnitude,
        "target": target,
        "trials": trials,
        "miss_rate": rate,
        "alice_miss_rate": sum(1 for a, _ in outcomes if a) / trials,
        "bob_miss_rate": sum(1 for _, b in outcomes if b) / trials,
        "bound": bound,
        "sigma": sigma,
        "within_bound": rate <= bound + 3 * sigma if tamper_magnitude else None,
    }


def verification_proportion(
    protocol: str = "s2php",
    dims: list[int] | None = None,
    l_values: list[int] | None = None,
    repeats: int = 3,
    seed: int = 0,
    config: ProtocolConfig | None = None,
) -> list[dict]:
    key = protocol.lower()
    if key not in VECTOR_PROTOCOLS:
        raise S2plorError(f"Protocolo desconhecido: {protocol!r}.")
    dims = dims or [50, 100, 200]
    l_values = l_values if l_values is not None else [0, 10, 20]
    base = config or ProtocolConfig.from_env()
    rows: list[dict] = []
    for dim in dims:
        for l in l_values:
            cfg = replace(base, l=l)

            def _trial(pair: PartyPair, trial_seed: int, _: int) -> dict[str, float]:
                rng = make_rng(trial_seed, dim)
                a = rng.uniform(1.0, 2.0, size=dim)
                b = rng.uniform(1.0, 2.0, size=dim)
                VECTOR_PROTOCOLS[key].run(pair, a, b)
                return pair.timings()

            timings = run_trials(repeats, seed + dim, _trial, cfg)
            totals = {name: sum(t[name] for t in timings) for name in timings[0]}
            total = sum(totals.values())
            proportion = totals["verification"] / total if total > 0 and l > 0 else 0.0
            rows.append(
                {
                    "protocol": key,
                    "dim": dim,
                    "l": l,
                    "repeats": repeats,
                    **{f"{name}_seconds": value / repeats for name, value in totals.items()},
                    "proportion": proportion,
                }
            )
            logger.info(f"{key} dim={dim} l={l}: verificacao {proportion:.1%}")
    return rows


def make_synthetic_dataset(
    n: int, d: int, seed: int = 0, noise: float = 0.0
) -> tuple[np.ndarray, np.ndarray]:
    rng = make_rng(seed, 0x5E7)
    X = rng.uniform(-1.0, 1.0, size=(n, d))
    w_true = rng.uniform(-2.0, 2.0, size=d)
    margin = X @ w_true + rng.normal(0.0, noise, size=n) if noise else X @ w_true
    return X, (margin > 0).astype(np.float64)


def run_lr_benchmark_arrays(
    X: np.ndarray,
    y: np.ndarray,
    cfg: TrainConfig,
    *,
    split_point: int | None = None,
    train_size: int | float = 0.8,
    scale: bool = True,
    shuffle: bool = True,
    threshold: float = 0.5,
    dataset: str = "arrays",
    config: ProtocolConfig | None = None,
    transport: str = "mem",
    link_model: LinkModel | None = None,
) -> BenchReport:
    X_train, X_test, y_train, y_test = train_test_split(X, y, train_size, cfg.seed, shuffle)
    if scale:
        X_train, X_test = min_max_scale(X_train, X_test)
    d = X.shape[1]
    split_point = d // 2 if split_point is None else split_point
    protocol = cfg.protocol_config(config)

    started = _now()
    with connect_parties(
        protocol, transport=transport, seed=cfg.seed, link_model=link_model
    ) as pair:
        train_a, train_b = vertical_partition(X_train, split_point)
        model = s2plort_run(pair, PartitionedDataset(train_a, train_b, y_train), cfg)
        test_a, test_b = vertical_partition(X_test, split_point)
        scores = s2plorp_run(pair, test_a, test_b, model).reconstruct()
        rounds, bits = pair.stats()
        timings = pair.timings()
    total = (_now() - started).total_seconds()

    plain_w = plain_lort(X_train, y_train, cfg)
    plain_scores = plain_predict(X_test, plain_w)
    secure_metrics = evaluate(y_test, scores, threshold)
    plain_metrics = evaluate(y_test, plain_scores, threshold)
    merged = model.merged()
    drift = float(np.max(np.abs(merged - plain_w)) / max(np.max(np.abs(plain_w)), 1e-12))
    report = BenchReport(
        dataset=dataset,
        n_train=int(X_train.shape[0]),
        n_test=int(X_test.shape[0]),
        features=d,
        split_point=split_point,
        timings=timings,
        total_seconds=total,
        rounds=rounds,
        payload_bits=bits,
        secure=secure_metrics.to_dict(),
        plaintext=plain_metrics.to_dict(),
        accuracy_gap=abs(secure_metrics.accuracy - plain_metrics.accuracy),
        weight_drift=drift,
        train_config=cfg.to_dict(),
        protocol_config=protocol.to_dict(),
        weights={"secure": merged.tolist(), "plaintext": plain_w.tolist()},
        train_loss={
            "secure": logistic_loss(X_train, y_train, merged),
            "plaintext": logistic_loss(X_train, y_train, plain_w),
        },
    )
    logger.info(
        f"{dataset}: acuracia segura {secure_metrics.accuracy:.4f}, "
        f"texto claro {plain_metrics.accuracy:.4f}"
    )
    return report


def run_lr_benchmark(dataset_path: Path, cfg: TrainConfig, **kwargs) -> BenchReport:
    X, y, _ = load_dataset_csv(dataset_path)
    return run_lr_benchmark_arrays(X, y, cfg, dataset=dataset_path.name, **kwargs)
