from __future__ import annotations

import logging
from pathlib import Path

import numpy as np
import typer

from .experiments import (
    digit_loss_probability,
    make_synthetic_dataset,
    precision_sweep,
    run_lr_benchmark,
    run_lr_benchmark_arrays,
    security_theta_probability,
    verification_failure_experiment,
    verification_proportion,
)
from .logreg import (
    ModelShares,
    PartitionedDataset,
    TrainConfig,
    load_dataset_csv,
    load_features_csv,
    load_model,
    plain_predict,
    s2plorp_batched,
    s2plort_run,
    save_dataset_csv,
    save_model,
    vertical_partition,
)
from .metrics import evaluate
from .node import (
    NODE_ROLES,
    PartyJob,
    default_cs_address,
    parse_session,
    run_client_node,
    run_client_scores,
    run_cs_node,
    run_party_node,
)
from .protocols import VECTOR_PROTOCOLS
from .reporting import build_report, format_summary, write_report
from .session import ProtocolConfig, connect_parties
from .transport import LinkModel
from .utils import parse_address

app = typer.Typer(
    add_completion=False,
    help="Computacao segura de duas partes: produto, sigmoide e regressao logistica",
)

OUTPUT_ROOT = Path("outputs")

RhoOption = typer.Option(None, "--rho", min=2, help="Numero de partes de cada split")
ThetaOption = typer.Option(None, "--theta", min=1.0, help="Fator de expansao das mascaras")
RoundsOption = typer.Option(None, "--l", min=0, help="Rodadas de verificacao por S2PM")
SeedOption = typer.Option(0, "--seed", help="Semente dos experimentos")
TransportOption = typer.Option("mem", "--transport", help="Transporte: mem ou tcp")
LatencyOption = typer.Option(0.0, "--latency-ms", min=0.0, help="Latencia simulada por mensagem")
BatchingOption = typer.Option(
    False, "--no-batching", help="Pede uma tripla por multiplicacao ao CS"
)
WorkersOption = typer.Option(1, "--workers", min=1, help="Sessoes em paralelo")
OutOption = typer.Option(None, "-o", "--out", help="Relatorio JSON de saida")
VerboseOption = typer.Option(0, "-v", "--verbose", count=True, help="-v info, -vv debug")


def _configure_logging(verbose: int) -> None:
    level = logging.WARNING if verbose <= 0 else logging.INFO if verbose == 1 else logging.DEBUG
    logging.basicConfig(
        level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s", force=True
    )


def _protocol_config(
    rho: int | None, theta: float | None, l: int | None, no_batching: bool
) -> ProtocolConfig:
    return ProtocolConfig.from_env(
        rho=rho, theta=theta, l=l, batching=False if no_batching else None
    )


def _link_model(latency_ms: float) -> LinkModel | None:
    return LinkModel(latency_s=latency_ms / 1000.0) if latency_ms > 0 else None


def _ensure_transport(transport: str) -> None:
    if transport not in {"mem", "tcp"}:
        raise typer.BadParameter("transporte invalido. Use mem ou tcp.")


def _ensure_csv(path: Path) -> None:
    if not path.exists():
        raise typer.BadParameter("Arquivo nao encontrado.")
    if path.suffix.lower() != ".csv":
        raise typer.BadParameter("Arquivo precisa ser .csv.")


def _address(value: str) -> tuple[str, int]:
    try:
        return parse_address(value)
    except ValueError as exc:
        raise typer.BadParameter(str(exc)) from exc


def _fail(exc: Exception) -> typer.Exit:
    typer.secho(str(exc), fg=typer.colors.RED)
    return typer.Exit(code=1)


def _progress(done: int, total: int) -> None:
    typer.echo(f"[{done}/{total}] ensaios concluidos")


def _emit(report: dict, out: Path | None, csv_rows: list[dict] | None = None) -> None:
    path = out or OUTPUT_ROOT / f"{report['kind']}.json"
    for written in write_report(path, report, csv_rows):
        typer.secho(f"Relatorio salvo em {written}", fg=typer.colors.GREEN)
    typer.echo("")
    typer.echo(format_summary(report))


@app.command()
def precision(
    protocol: str = typer.Option("s2php", "--protocol", help="s2php, s2patp, s2pr, s2ps ou all"),
    ranges: list[int] = typer.Option([0, 2, 4, 6, 8], "--range", help="Expoente x de [-x, x]"),
    n: int = typer.Option(500, "--n", min=1, help="Tamanho dos vetores"),
    trials: int = typer.Option(10, "--trials", min=1, help="Pares de vetores por faixa"),
    same_sign: bool = typer.Option(
        False, "--same-sign", help="Operandos com o mesmo sinal (sem cancelamento)"
    ),
    seed: int = SeedOption,
    rho: int | None = RhoOption,
    theta: float | None = ThetaOption,
    l: int | None = RoundsOption,
    no_batching: bool = BatchingOption,
    transport: str = TransportOption,
    workers: int = WorkersOption,
    out: Path | None = OutOption,
    verbose: int = VerboseOption,
) -> None:
    _configure_logging(verbose)
    _ensure_transport(transport)
    names = list(VECTOR_PROTOCOLS) if protocol == "all" else [protocol.lower()]
    if any(name not in VECTOR_PROTOCOLS for name in names):
        raise typer.BadParameter("protocolo invalido. Use s2php, s2patp, s2pr, s2ps ou all.")

    typer.echo(f"Medindo precisao de {', '.join(names)} em {len(ranges)} faixa(s)...")
    try:
        config = _protocol_config(rho, theta, l, no_batching)
        rows = [
            report.to_dict()
            for name in names
            for report in precision_sweep(
                name,
                ranges,
                n=n,
                trials=trials,
                seed=seed,
                config=config,
                same_sign=same_sign,
                transport=transport,
                workers=workers,
            )
        ]
    except RuntimeError as exc:
        raise _fail(exc) from exc
    params = {"protocols": names, "ranges": ranges, "n": n, "trials": trials, "seed": seed}
    _emit(build_report("precision", rows, config.to_dict(), params), out, rows)


@app.command("security-theta")
def security_theta(
    thetas: list[float] = typer.Option([3.0, 100.0, 1e4], "--theta", help="Valores de theta"),
    trials: int = typer.Option(100_000, "--trials", min=10_000, help="Ensaios de Monte Carlo"),
    model: str = typer.Option(
        "uniform-sum", "--model", help="Jogo: uniform-sum ou fixed-operand"
    ),
    seed: int = SeedOption,
    out: Path | None = OutOption,
    verbose: int = VerboseOption,
) -> None:
    _configure_logging(verbose)
    try:
        rows = [security_theta_probability(t, trials, seed, model) for t in thetas]
    except RuntimeError as exc:
        raise _fail(exc) from exc
    params = {"trials": trials, "model": model, "seed": seed}
    _emit(build_report("security-theta", rows, params=params), out, rows)


@app.command("digit-loss")
def digit_loss(
    counts: list[int] = typer.Option([500], "--n", help="Numero de somas"),
    digits: list[int] = typer.Option([3, 4], "--d", help="Digitos perdidos"),
    trials: int = typer.Option(10_000, "--trials", min=1, help="Ensaios de Monte Carlo"),
    seed: int = SeedOption,
    out: Path | None = OutOption,
    verbose: int = VerboseOption,
) -> None:
    _configure_logging(verbose)
    try:
        rows = [digit_loss_probability(n, d, trials, seed) for n in counts for d in digits]
    except RuntimeError as exc:
        raise _fail(exc) from exc
    _emit(build_report("digit-loss", rows, params={"trials": trials, "seed": seed}), out, rows)


@app.command("verify-fail")
def verify_fail(
    l_values: list[int] = typer.Option([1, 2, 4], "--l", help="Rodadas de verificacao"),
    trials: int = typer.Option(1000, "--trials", min=1, help="Multiplicacoes adulteradas"),
    magnitude: float = typer.Option(1.0, "--magnitude", help="Valor somado a uma entrada"),
    target: str = typer.Option("vf_b", "--target", help="Entrada adulterada: vf_b ou t"),
    control: bool = typer.Option(
        False, "--control", help="Inclui execucoes honestas (sem adulteracao)"
    ),
    seed: int = SeedOption,
    rho: int | None = RhoOption,
    theta: float | None = ThetaOption,
    workers: int = WorkersOption,
    out: Path | None = OutOption,
    verbose: int = VerboseOption,
) -> None:
    _configure_logging(verbose)
    magnitudes = [magnitude, 0.0] if control else [magnitude]
    typer.echo(f"Adulterando {trials} multiplicacao(oes) por valor de l...")
    try:
        config = _protocol_config(rho, theta, None, False)
        rows = [
            verification_failure_experiment(
                l, m, trials, seed, target, config=config, workers=workers,
            )
            for l in l_values
            for m in magnitudes
        ]
    except RuntimeError as exc:
        raise _fail(exc) from exc
    params = {"trials": trials, "target": target, "seed": seed}
    _emit(build_report("verify-fail", rows, config.to_dict(), params), out, rows)


@app.command("verify-proportion")
def verify_proportion(
    protocol: str = typer.Option("s2php", "--protocol", help="Protocolo medido"),
    dims: list[int] = typer.Option([50, 100, 200], "--dim", help="Tamanhos dos vetores"),
    l_values: list[int] = typer.Option([0, 10, 20], "--l", help="Rodadas de verificacao"),
    repeats: int = typer.Option(3, "--repeats", min=1, help="Repeticoes por ponto"),
    seed: int = SeedOption,
    rho: int | None = RhoOption,
    theta: float | None = ThetaOption,
    out: Path | None = OutOption,
    verbose: int = VerboseOption,
) -> None:
    _configure_logging(verbose)
    try:
        config = _protocol_config(rho, theta, None, False)
        rows = verification_proportion(protocol, dims, l_values, repeats, seed, config)
    except RuntimeError as exc:
        raise _fail(exc) from exc
    params = {"protocol": protocol, "repeats": repeats, "seed": seed}
    _emit(build_report("verify-proportion", rows, config.to_dict(), params), out, rows)


def _parse_shape(value: str) -> tuple[int, int]:
    try:
        rows, cols = (int(part) for part in value.lower().split("x", 1))
    except ValueError as exc:
        raise typer.BadParameter("Use o formato LINHASxCOLUNAS, ex.: 200x4.") from exc
    return rows, cols


@app.command("bench-lr")
def bench_lr(
    dataset: Path | None = typer.Argument(None, help="CSV com a coluna final 'label'"),
    synthetic: str | None = typer.Option(
        None, "--synthetic", help="Gera dados separaveis LINHASxCOLUNAS no lugar do CSV"
    ),
    split_point: int | None = typer.Option(
        None, "--split-point", help="Colunas de Alice (padrao: metade)"
    ),
    eta: float = typer.Option(0.05, "--eta", help="Taxa de aprendizado"),
    batch_size: int = typer.Option(32, "--batch-size", min=1, help="Tamanho do lote"),
    iterations: int = typer.Option(5, "--iterations", min=1, help="Epocas de treino"),
    train_size: float = typer.Option(0.8, "--train-size", help="Fracao de treino"),
    scale: bool = typer.Option(True, "--scale/--no-scale", help="Normalizacao min-max"),
    seed: int = SeedOption,
    rho: int | None = RhoOption,
    theta: float | None = ThetaOption,
    l: int | None = RoundsOption,
    no_batching: bool = BatchingOption,
    transport: str = TransportOption,
    latency_ms: float = LatencyOption,
    out: Path | None = OutOption,
    verbose: int = VerboseOption,
) -> None:
    _configure_logging(verbose)
    _ensure_transport(transport)
    if dataset is None and synthetic is None:
        raise typer.BadParameter("Informe um CSV ou --synthetic LINHASxCOLUNAS.")
    if dataset is not None:
        _ensure_csv(dataset)

    typer.echo("Treinando modelos seguro e em texto claro...")
    try:
        config = _protocol_config(rho, theta, l, no_batching)
        cfg = TrainConfig(eta, batch_size, iterations, config.rho, config.l, seed)
        options = dict(
            split_point=split_point,
            train_size=train_size,
            scale=scale,
            config=config,
            transport=transport,
            link_model=_link_model(latency_ms),
        )
        if dataset is not None:
            result = run_lr_benchmark(dataset, cfg, **options)
        else:
            rows, cols = _parse_shape(synthetic)
            X, y = make_synthetic_dataset(rows, cols, seed)
            result = run_lr_benchmark_arrays(X, y, cfg, dataset=f"synthetic-{synthetic}", **options)
    except RuntimeError as exc:
        raise _fail(exc) from exc
    results = result.to_dict()
    flat = {key: value for key, value in results.items() if key != "weights"}
    _emit(build_report("bench-lr", results, config.to_dict()), out, [flat])


@app.command()
def split(
    dataset: Path = typer.Argument(..., help="CSV com a coluna final 'label'"),
    split_point: int = typer.Option(..., "--split-point", help="Colunas que ficam com Alice"),
    output_dir: Path = typer.Option(Path("outputs") / "partes", "-o", "--output-dir"),
) -> None:
    """Particiona verticalmente um CSV em alice.csv (com rotulos) e bob.csv."""
    _ensure_csv(dataset)
    try:
        X, y, names = load_dataset_csv(dataset)
        X_a, X_b = vertical_partition(X, split_point)
    except RuntimeError as exc:
        raise _fail(exc) from exc
    save_dataset_csv(output_dir / "alice.csv", X_a, y, names)
    save_dataset_csv(output_dir / "bob.csv", X_b, None, names)
    typer.secho(f"Partes salvas em {output_dir}", fg=typer.colors.GREEN)


@app.command()
def train(
    dataset: Path = typer.Argument(..., help="CSV com a coluna final 'label'"),
    split_point: int | None = typer.Option(None, "--split-point", help="Colunas de Alice"),
    eta: float = typer.Option(0.05, "--eta", help="Taxa de aprendizado"),
    batch_size: int = typer.Option(32, "--batch-size", min=1, help="Tamanho do lote"),
    iterations: int = typer.Option(5, "--iterations", min=1, help="Epocas de treino"),
    seed: int = SeedOption,
    rho: int | None = RhoOption,
    theta: float | None = ThetaOption,
    l: int | None = RoundsOption,
    no_batching: bool = BatchingOption,
    transport: str = TransportOption,
    latency_ms: float = LatencyOption,
    output: Path = typer.Option("model.json", "-o", "--output", help="Modelo JSON de saida"),
    verbose: int = VerboseOption,
) -> None:
    _configure_logging(verbose)
    _ensure_csv(dataset)
    _ensure_transport(transport)

    typer.echo(f"Treinando com {dataset}...")
    try:
        config = _protocol_config(rho, theta, l, no_batching)
        cfg = TrainConfig(eta, batch_size, iterations, config.rho, config.l, seed)
        X, y, _ = load_dataset_csv(dataset)
        X_a, X_b = vertical_partition(X, X.shape[1] // 2 if split_point is None else split_point)
        with connect_parties(
            cfg.protocol_config(config),
            transport=transport,
            seed=seed,
            link_model=_link_model(latency_ms),
        ) as pair:
            model = s2plort_run(pair, PartitionedDataset(X_a, X_b, y), cfg)
            rounds, bits = pair.stats()
    except RuntimeError as exc:
        raise _fail(exc) from exc
    save_model(output, model, {"train": cfg.to_dict(), "protocol": config.to_dict()})
    metrics = evaluate(y, plain_predict(X, model.merged()))
    typer.secho(
        f"Modelo salvo em {output} (rodadas={rounds}, bits={bits})", fg=typer.colors.GREEN
    )
    typer.echo(f"Acuracia no treino: {metrics.accuracy:.4f} | F1: {metrics.f1:.4f}")


@app.command()
def predict(
    model_path: Path = typer.Argument(..., help="Modelo JSON (w_a/w_b ou w)"),
    dataset: Path = typer.Argument(..., help="CSV de atributos (label opcional)"),
    split_point: int | None = typer.Option(None, "--split-point", help="Colunas de Alice"),
    batch_size: int = typer.Option(256, "--batch-size", min=1, help="Linhas por sessao"),
    workers: int = WorkersOption,
    seed: int = SeedOption,
    rho: int | None = RhoOption,
    l: int | None = RoundsOption,
    transport: str = TransportOption,
    output: Path = typer.Option("scores.csv", "-o", "--output", help="CSV de probabilidades"),
    verbose: int = VerboseOption,
) -> None:
    _configure_logging(verbose)
    _ensure_csv(dataset)
    _ensure_transport(transport)
    if not model_path.exists():
        raise typer.BadParameter("Arquivo nao encontrado.")

    try:
        config = _protocol_config(rho, None, l, False)
        model = load_model(model_path)
        if not isinstance(model, ModelShares):
            model = ModelShares(model, np.zeros_like(model))
        X, y, _ = load_features_csv(dataset)
        X_a, X_b = vertical_partition(X, X.shape[1] // 2 if split_point is None else split_point)
        shares = s2plorp_batched(
            lambda index: connect_parties(config, transport=transport, seed=seed + index),
            X_a,
            X_b,
            model,
            batch_size,
            workers,
        )
    except RuntimeError as exc:
        raise _fail(exc) from exc
    scores = shares.reconstruct()
    save_dataset_csv(output, scores.reshape(-1, 1), y, ["score"])
    typer.secho(f"Predicoes salvas em {output} ({scores.size} linhas)", fg=typer.colors.GREEN)
    if y is not None:
        metrics = evaluate(y, scores)
        typer.echo(
            f"Acuracia: {metrics.accuracy:.4f} | F1: {metrics.f1:.4f} | AUC: {metrics.auc:.4f}"
        )


@app.command()
def node(
    role: str = typer.Option(..., "--role", help="cs, alice, bob ou client"),
    task: str = typer.Option("train", "--task", help="train ou predict (alice/bob)"),
    data: Path | None = typer.Option(None, "--data", help="CSV da parte deste no"),
    model: Path | None = typer.Option(None, "--model", help="Parte do modelo para predict"),
    shares: list[Path] = typer.Option([], "--share", help="Partes do modelo (client)"),
    scores: list[Path] = typer.Option([], "--scores", help="Partes da predicao (client)"),
    evaluate_path: Path | None = typer.Option(
        None, "--evaluate", help="CSV rotulado para avaliar o modelo combinado (client)"
    ),
    bind: str | None = typer.Option(None, "--bind", help="host:porta de escuta"),
    peer: str | None = typer.Option(None, "--peer", help="host:porta de Alice (bob)"),
    cs: str | None = typer.Option(None, "--cs", help="host:porta do CS (padrao S2PLOR_CS_ADDR)"),
    session: str | None = typer.Option(None, "--session", help="UUID da sessao"),
    eta: float = typer.Option(0.05, "--eta", help="Taxa de aprendizado"),
    batch_size: int = typer.Option(32, "--batch-size", min=1, help="Tamanho do lote"),
    iterations: int = typer.Option(5, "--iterations", min=1, help="Epocas de treino"),
    seed: int = SeedOption,
    rho: int | None = RhoOption,
    theta: float | None = ThetaOption,
    l: int | None = RoundsOption,
    latency_ms: float = LatencyOption,
    output: Path | None = typer.Option(None, "-o", "--output", help="Arquivo de saida"),
    verbose: int = VerboseOption,
) -> None:
    _configure_logging(max(verbose, 1))
    if role not in NODE_ROLES:
        raise typer.BadParameter("papel invalido. Use cs, alice, bob ou client.")

    try:
        config = _protocol_config(rho, theta, l, False)
        cs_address = _address(cs) if cs else default_cs_address()
        if role == "cs":
            bind_address = _address(bind) if bind else cs_address
            typer.echo(f"CS ativo em {bind_address[0]}:{bind_address[1]} (Ctrl+C para sair)")
            run_cs_node(bind_address, seed, config.timeout_s)
            return
        if role == "client" and scores:
            if len(scores) != 2 or shares:
                raise typer.BadParameter("Informe --scores duas vezes (Alice e Bob), sem --share.")
            merged = run_client_scores(scores, output or Path("scores.json"), evaluate_path)
            typer.secho(f"Predicoes combinadas em {merged['scores_path']}", fg=typer.colors.GREEN)
            if "metrics" in merged:
                typer.echo(f"Acuracia: {merged['metrics']['accuracy']:.4f}")
            return
        if role == "client":
            if len(shares) != 2:
                raise typer.BadParameter("Informe --share duas vezes (Alice e Bob).")
            result = run_client_node(shares, output or Path("model.json"), evaluate_path)
            typer.secho(f"Modelo combinado salvo em {result['model']}", fg=typer.colors.GREEN)
            if "metrics" in result:
                typer.echo(f"Acuracia: {result['metrics']['accuracy']:.4f}")
            return
        if data is None:
            raise typer.BadParameter("Informe --data com o CSV deste no.")
        cfg = TrainConfig(eta, batch_size, iterations, config.rho, config.l, seed)
        suffix = "share.json" if task == "train" else "scores.json"
        job = PartyJob(role, task, data, output or Path(f"{role}-{suffix}"), model)
        written = run_party_node(
            job,
            cfg.protocol_config(config),
            cfg,
            cs_address=cs_address,
            session_id=parse_session(session, seed),
            bind=_address(bind) if bind else None,
            peer=_address(peer) if peer else None,
            link_model=_link_model(latency_ms),
        )
    except RuntimeError as exc:
        raise _fail(exc) from exc
    typer.secho(f"{role}: resultado salvo em {written}", fg=typer.colors.GREEN)
