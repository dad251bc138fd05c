from __future__ import annotations

import csv
import json
from pathlib import Path

SCHEMA_VERSION = 1


def build_report(kind: str, results, config: dict | None = None, params: dict | None = None):
    return {
        "schema_version": SCHEMA_VERSION,
        "kind": kind,
        "params": params or {},
        "config": config or {},
        "results": results,
    }


def _flatten(row: dict, prefix: str = "") -> dict:
    flat: dict = {}
    for key, value in row.items():
        name = f"{prefix}{key}"
        if isinstance(value, dict):
            flat.update(_flatten(value, f"{name}."))
        elif isinstance(value, (list, tuple)):
            flat[name] = json.dumps(value)
        else:
            flat[name] = value
    return flat


def write_csv(path: Path, rows: list[dict]) -> Path:
    flat = [_flatten(row) for row in rows]
    fields: list[str] = []
    for row in flat:
        fields.extend(key for key in row if key not in fields)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = csv.DictWriter(handle, fieldnames=fields)
        writer.writeheader()
        writer.writerows(flat)
    return path


def write_report(path: Path, report: dict, csv_rows: list[dict] | None = None) -> list[Path]:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, ensure_ascii=False, indent=2), encoding="utf-8")
    written = [path]
    if csv_rows:
        written.append(write_csv(path.with_suffix(".csv"), csv_rows))
    return written


def _fmt(value: float) -> str:
    return f"{value:.3e}"


def _precision_lines(results: list[dict]) -> list[str]:
    lines = []
    for row in results:
        status = "dentro" if row["mre"] <= row["bound"] else "acima"
        lines.append(
            f"- {row['protocol']} delta=[-{row['delta_x']},{row['delta_x']}] n={row['n']}: "
            f"MRE {_fmt(row['mre'])}, ARE {_fmt(row['are'])} "
            f"({status} da referencia {_fmt(row['bound'])})"
        )
        if row.get("out_of_domain"):
            lines.append(f"  elementos fora do dominio exato: {row['out_of_domain']}")
        if row.get("resampled"):
            lines.append(f"  reamostragens por denominador degenerado: {row['resampled']}")
    return lines


def _security_lines(results: list[dict]) -> list[str]:
    return [
        f"- theta={row['theta']:g} ({row['model']}): estimado {row['estimate']:.5f}, "
        f"esperado {row['expected']:.5f} "
        f"({'ok' if row['within_3sigma'] else 'fora de 3 sigma'})"
        for row in results
    ]


def _digit_lines(results: list[dict]) -> list[str]:
    return [
        f"- Pr({row['n']},{row['d']}): analitico {row['analytic']:.4f}, "
        f"empirico {row['empirical']:.4f} (razao {row['ratio']:.2f})"
        for row in results
    ]


def _verify_lines(results: list[dict]) -> list[str]:
    lines = []
    for row in results:
        verdict = {True: "ok", False: "acima do limite", None: "controle"}[row["within_bound"]]
        lines.append(
            f"- l={row['l']}: taxa de falha nao detectada {row['miss_rate']:.5f} "
            f"(limite 4^-l = {row['bound']:.5f}, {verdict})"
        )
    return lines


def _proportion_lines(results: list[dict]) -> list[str]:
    return [
        f"- {row['protocol']} dim={row['dim']} l={row['l']}: verificacao {row['proportion']:.1%}"
        for row in results
    ]


def _bench_lines(results: dict) -> list[str]:
    secure, plain = results["secure"], results["plaintext"]
    lines = [
        f"- Conjunto: {results['dataset']} "
        f"({results['n_train']} treino / {results['n_test']} teste)",
        f"- Acuracia segura: {secure['accuracy']:.4f} | texto claro: {plain['accuracy']:.4f}",
        f"- Diferenca de acuracia: {results['accuracy_gap']:.4f}",
        f"- F1 seguro: {secure['f1']:.4f} | AUC segura: {secure['auc']:.4f}",
        f"- Rodadas: {results['rounds']} | bits de payload: {results['payload_bits']}",
        f"- Desvio relativo dos pesos: {_fmt(results['weight_drift'])}",
    ]
    loss = results.get("train_loss")
    if loss:
        lines.append(
            f"- Perda de treino segura: {loss['secure']:.6f} | texto claro: {loss['plaintext']:.6f}"
        )
    return lines


_SUMMARIES = {
    "precision": ("Precisao", _precision_lines),
    "security-theta": ("Seguranca pratica", _security_lines),
    "digit-loss": ("Perda de digitos", _digit_lines),
    "verify-fail": ("Falha de verificacao", _verify_lines),
    "verify-proportion": ("Proporcao de verificacao", _proportion_lines),
    "bench-lr": ("Regressao logistica", _bench_lines),
}


def format_summary(report: dict) -> str:
    title, render = _SUMMARIES.get(report["kind"], (report["kind"], None))
    lines = [f"{title}:"]
    if render is not None:
        lines.extend(render(report["results"]))
    return "\n".join(lines)
