from __future__ import annotations

import os
import re
import unicodedata
from datetime import datetime
from pathlib import Path
from uuid import uuid4

from fastapi import FastAPI, File, Form, UploadFile
from fastapi.responses import HTMLResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from . import __version__
from .experiments import (
    digit_loss_probability,
    precision_experiment,
    run_lr_benchmark,
    security_theta_probability,
    verification_failure_experiment,
)
from .logreg import TrainConfig
from .protocols import VECTOR_PROTOCOLS
from .reporting import build_report, format_summary, write_report
from .session import ProtocolConfig

OUTPUT_DIR = Path(os.getenv("S2PLOR_OUTPUT_DIR", str(Path.cwd() / "outputs")))
OUTPUT_DIR.mkdir(parents=True, exist_ok=True)

# keep request-sized experiments bounded
MAX_TRIALS = 200_000

app = FastAPI(title="s2plor")
app.mount("/outputs", StaticFiles(directory=str(OUTPUT_DIR)), name="outputs")


def _save_upload(upload: UploadFile, target: Path) -> None:
    with target.open("wb") as f:
        f.write(upload.file.read())


def _safe_stem(file_name: str) -> str:
    stem = Path(file_name).stem
    stem = unicodedata.normalize("NFKD", stem).encode("ascii", "ignore").decode("ascii")
    stem = re.sub(r"[^a-zA-Z0-9._-]+", "-", stem).strip("-")
    return stem or "arquivo"


def _output_url(path: Path) -> str:
    rel = path.resolve().relative_to(OUTPUT_DIR.resolve())
    return "/outputs/" + "/".join(rel.parts)


def _run_dir(kind: str) -> Path:
    stamp = datetime.now().strftime("%Y%m%d-%H%M%S")
    run_dir = OUTPUT_DIR / f"{kind}-{stamp}-{uuid4().hex[:8]}"
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _respond(report: dict, csv_rows: list[dict] | None = None) -> JSONResponse:
    run_dir = _run_dir(report["kind"])
    written = write_report(run_dir / "report.json", report, csv_rows)
    files = {"report_download_url": _output_url(written[0])}
    if len(written) > 1:
        files["csv_download_url"] = _output_url(written[1])
    return JSONResponse(
        content={
            "ok": True,
            "summary": format_summary(report),
            "report": report,
            "files": {"run_dir": str(run_dir), **files},
        }
    )


def _bad_request(message: str) -> JSONResponse:
    return JSONResponse(status_code=400, content={"error": message})


def _check_trials(trials: int) -> str | None:
    if not 1 <= trials <= MAX_TRIALS:
        return f"trials precisa estar entre 1 e {MAX_TRIALS}."
    return None


@app.get("/", response_class=HTMLResponse)
async def ui() -> HTMLResponse:
    html = """
<!doctype html>
<html lang="pt-BR">
  <head>
    <meta charset="utf-8" />
    <meta name="viewport" content="width=device-width, initial-scale=1" />
    <title>s2plor</title>
    <style>
      body {
        margin: 0;
        font-family: "Segoe UI", Tahoma, Geneva, Verdana, sans-serif;
        color: #1b2430;
        background: #f4f7fb;
      }
      .wrap { max-width: 860px; margin: 28px auto; padding: 0 16px 24px; }
      .card {
        background: #ffffff;
        border: 1px solid #e4e7ec;
        border-radius: 14px;
        padding: 18px;
        margin-bottom: 14px;
      }
      label { font-size: 13px; display: block; margin: 8px 0 4px; }
      input, select, button {
        width: 100%;
        border-radius: 10px;
        border: 1px solid #d0d5dd;
        padding: 10px 12px;
        font-size: 14px;
      }
      button { background: #0b63ce; color: white; border: none; margin-top: 12px; }
      pre {
        background: #0f172a;
        color: #e2e8f0;
        padding: 12px;
        border-radius: 10px;
        overflow: auto;
        font-size: 12px;
      }
    </style>
  </head>
  <body>
    <div class="wrap">
      <div class="card">
        <h1>Computacao segura de duas partes</h1>
        <p>Experimentos de precisao e benchmark de regressao logistica segura.</p>
      </div>
      <div class="card">
        <h2>Precisao</h2>
        <form id="precisionForm">
          <label for="protocol">Protocolo</label>
          <select id="protocol" name="protocol">
            <option value="s2php">s2php</option>
            <option value="s2patp">s2patp</option>
            <option value="s2pr">s2pr</option>
            <option value="s2ps">s2ps</option>
          </select>
          <label for="delta_x">Faixa de expoentes x</label>
          <input id="delta_x" name="delta_x" type="number" min="0" max="8" value="0" />
          <button type="submit">Medir</button>
        </form>
      </div>
      <div class="card">
        <h2>Regressao logistica</h2>
        <form id="benchForm">
          <label for="dataset">CSV (ultima coluna 'label')</label>
          <input id="dataset" name="dataset" type="file" accept=".csv,text/csv" required />
          <button type="submit">Treinar e comparar</button>
        </form>
      </div>
      <pre id="output">Aguardando...</pre>
    </div>
    <script>
      const output = document.getElementById("output");
      async function submit(form, url) {
        output.textContent = "Processando...";
        const response = await fetch(url, { method: "POST", body: new FormData(form) });
        const payload = await response.json();
        output.textContent = response.ok ? payload.summary : payload.error;
      }
      document.getElementById("precisionForm").addEventListener("submit", (event) => {
        event.preventDefault();
        submit(event.target, "/precision");
      });
      document.getElementById("benchForm").addEventListener("submit", (event) => {
        event.preventDefault();
        submit(event.target, "/bench-lr");
      });
    </script>
  </body>
</html>
"""
    return HTMLResponse(content=html)


@app.get("/health")
async def health() -> dict:
    return {"status": "ok", "version": __version__}


@app.post("/precision")
async def precision_endpoint(
    protocol: str = Form("s2php"),
    delta_x: int = Form(0),
    n: int = Form(100),
    trials: int = Form(5),
    seed: int = Form(0),
    rho: int | None = Form(None),
    theta: float | None = Form(None),
    l: int | None = Form(None),
) -> JSONResponse:
    if protocol.lower() not in VECTOR_PROTOCOLS:
        return _bad_request("protocolo invalido. Use s2php, s2patp, s2pr ou s2ps.")
    if error := _check_trials(trials * n):
        return _bad_request(error)
    try:
        config = ProtocolConfig.from_env(rho=rho, theta=theta, l=l)
        result = precision_experiment(protocol, delta_x, n, trials, seed, config)
        report = build_report(
            "precision",
            [result.to_dict()],
            config.to_dict(),
            {"n": n, "trials": trials, "seed": seed},
        )
        return _respond(report, report["results"])
    except RuntimeError as exc:
        return _bad_request(str(exc))
    except Exception as exc:
        return JSONResponse(status_code=500, content={"error": f"Falha interna: {exc}"})


@app.post("/security-theta")
async def security_theta_endpoint(
    theta: float = Form(...),
    trials: int = Form(100_000),
    seed: int = Form(0),
    model: str = Form("uniform-sum"),
) -> JSONResponse:
    if error := _check_trials(trials):
        return _bad_request(error)
    try:
        row = security_theta_probability(theta, trials, seed, model)
        report = build_report("security-theta", [row], params={"seed": seed})
        return _respond(report, report["results"])
    except RuntimeError as exc:
        return _bad_request(str(exc))
    except Exception as exc:
        return JSONResponse(status_code=500, content={"error": f"Falha interna: {exc}"})


@app.post("/digit-loss")
async def digit_loss_endpoint(
    n: int = Form(500),
    d: int = Form(3),
    trials: int = Form(10_000),
    seed: int = Form(0),
) -> JSONResponse:
    if error := _check_trials(trials):
        return _bad_request(error)
    try:
        row = digit_loss_probability(n, d, trials, seed)
        report = build_report("digit-loss", [row], params={"seed": seed})
        return _respond(report, report["results"])
    except RuntimeError as exc:
        return _bad_request(str(exc))
    except Exception as exc:
        return JSONResponse(status_code=500, content={"error": f"Falha interna: {exc}"})


@app.post("/verify-fail")
async def verify_fail_endpoint(
    l: int = Form(1),
    trials: int = Form(200),
    magnitude: float = Form(1.0),
    target: str = Form("vf_b"),
    seed: int = Form(0),
) -> JSONResponse:
    if error := _check_trials(trials):
        return _bad_request(error)
    try:
        config = ProtocolConfig.from_env()
        row = verification_failure_experiment(l, magnitude, trials, seed, target, config=config)
        report = build_report("verify-fail", [row], config.to_dict(), {"seed": seed})
        return _respond(report, report["results"])
    except RuntimeError as exc:
        return _bad_request(str(exc))
    except Exception as exc:
        return JSONResponse(status_code=500, content={"error": f"Falha interna: {exc}"})


@app.post("/bench-lr")
async def bench_lr_endpoint(
    dataset: UploadFile = File(...),
    split_point: int | None = Form(None),
    eta: float = Form(0.05),
    batch_size: int = Form(32),
    iterations: int = Form(5),
    train_size: float = Form(0.8),
    seed: int = Form(0),
    l: int | None = Form(None),
) -> JSONResponse:
    input_name = dataset.filename or "dataset.csv"
    if not input_name.lower().endswith(".csv"):
        return _bad_request("Envie um arquivo .csv valido.")

    run_dir = _run_dir("upload")
    csv_path = run_dir / f"{_safe_stem(input_name)}.csv"
    try:
        _save_upload(dataset, csv_path)
        config = ProtocolConfig.from_env(l=l)
        cfg = TrainConfig(eta, batch_size, iterations, config.rho, config.l, seed)
        result = run_lr_benchmark(
            csv_path, cfg, split_point=split_point, train_size=train_size, config=config
        ).to_dict()
        flat = {key: value for key, value in result.items() if key != "weights"}
        return _respond(build_report("bench-lr", result, config.to_dict()), [flat])
    except RuntimeError as exc:
        return _bad_request(str(exc))
    except Exception as exc:
        return JSONResponse(status_code=500, content={"error": f"Falha interna: {exc}"})
