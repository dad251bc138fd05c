import json
from pathlib import Path
from uuid import uuid4

import numpy as np
from typer.testing import CliRunner

from s2plor.cli import app
from s2plor.experiments import make_synthetic_dataset
from s2plor.logreg import load_dataset_csv, load_features_csv, load_model, save_dataset_csv
from s2plor.node import save_prediction_share

runner = CliRunner()


def make_run_dir() -> Path:
    run_dir = Path("tests_runtime") / f"cli-{uuid4().hex[:8]}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def make_dataset(run_dir: Path, rows: int = 40, cols: int = 3) -> Path:
    X, y = make_synthetic_dataset(rows, cols, seed=1)
    path = run_dir / "dados.csv"
    save_dataset_csv(path, X, y)
    return path


def test_digit_loss_command_writes_report():
    run_dir = make_run_dir()
    out = run_dir / "digitos.json"
    result = runner.invoke(
        app, ["digit-loss", "--n", "20", "--d", "2", "--trials", "500", "-o", str(out)]
    )
    assert result.exit_code == 0, result.output
    assert "Perda de digitos:" in result.output
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["kind"] == "digit-loss"
    assert report["results"][0]["n"] == 20
    assert out.with_suffix(".csv").exists()


def test_security_theta_command():
    run_dir = make_run_dir()
    result = runner.invoke(
        app,
        ["security-theta", "--theta", "3", "--trials", "10000", "-o", str(run_dir / "s.json")],
    )
    assert result.exit_code == 0, result.output
    assert "theta=3" in result.output


def test_security_theta_rejects_small_theta():
    run_dir = make_run_dir()
    result = runner.invoke(
        app,
        ["security-theta", "--theta", "0.5", "--trials", "10000", "-o", str(run_dir / "s.json")],
    )
    assert result.exit_code == 1
    assert "theta precisa ser >= 1" in result.output


def test_precision_command_and_invalid_protocol():
    run_dir = make_run_dir()
    out = run_dir / "precisao.json"
    args = ["precision", "--protocol", "s2php", "--range", "1", "--n", "20", "--trials", "2"]
    args += ["--theta", "1"]
    result = runner.invoke(app, [*args, "-o", str(out)])
    assert result.exit_code == 0, result.output
    assert "s2php delta=[-1,1]" in result.output
    assert json.loads(out.read_text(encoding="utf-8"))["results"][0]["mre"] <= 1e-12

    result = runner.invoke(app, ["precision", "--protocol", "s2pz"])
    assert result.exit_code != 0


def test_bench_lr_synthetic():
    run_dir = make_run_dir()
    out = run_dir / "bench.json"
    result = runner.invoke(
        app,
        [
            "bench-lr",
            "--synthetic",
            "60x4",
            "--iterations",
            "2",
            "--batch-size",
            "16",
            "--eta",
            "0.5",
            "-o",
            str(out),
        ],
    )
    assert result.exit_code == 0, result.output
    report = json.loads(out.read_text(encoding="utf-8"))
    assert report["results"]["accuracy_gap"] <= 0.01
    assert "Acuracia segura" in result.output


def test_bench_lr_requires_input():
    result = runner.invoke(app, ["bench-lr"])
    assert result.exit_code != 0


def test_split_train_predict_flow():
    run_dir = make_run_dir()
    dataset = make_dataset(run_dir)

    parts = run_dir / "partes"
    result = runner.invoke(
        app, ["split", str(dataset), "--split-point", "1", "--output-dir", str(parts)]
    )
    assert result.exit_code == 0, result.output
    X_alice, y_alice, _ = load_dataset_csv(parts / "alice.csv")
    X_bob, y_bob, _ = load_features_csv(parts / "bob.csv")
    assert y_bob is None
    assert (X_alice[:, 1:] == 0).all() and (X_bob[:, :1] == 0).all()

    model_path = run_dir / "model.json"
    result = runner.invoke(
        app,
        [
            "train",
            str(dataset),
            "--split-point",
            "1",
            "--iterations",
            "2",
            "--batch-size",
            "8",
            "--eta",
            "0.5",
            "-o",
            str(model_path),
        ],
    )
    assert result.exit_code == 0, result.output
    assert "Acuracia no treino" in result.output
    assert load_model(model_path).merged().shape == (4,)

    scores_path = run_dir / "scores.csv"
    result = runner.invoke(
        app,
        [
            "predict",
            str(model_path),
            str(dataset),
            "--batch-size",
            "16",
            "-o",
            str(scores_path),
        ],
    )
    assert result.exit_code == 0, result.output
    scores, labels, names = load_dataset_csv(scores_path)
    assert names == ["score"]
    assert scores.shape == (40, 1)
    assert ((scores >= 0) & (scores <= 1)).all()
    assert "AUC" in result.output


def test_node_rejects_unknown_role():
    result = runner.invoke(app, ["node", "--role", "carol"])
    assert result.exit_code != 0


def test_client_node_merges_prediction_shares():
    run_dir = make_run_dir()
    save_prediction_share(run_dir / "a.json", "alice", np.array([0.9, -0.3, 0.5]))
    save_prediction_share(run_dir / "b.json", "bob", np.array([-0.1, 0.4, -0.4]))
    save_dataset_csv(run_dir / "rotulos.csv", np.zeros((3, 1)), np.array([1.0, 0.0, 0.0]))
    out = run_dir / "scores.json"
    args = ["node", "--role", "client", "--scores", str(run_dir / "a.json")]
    args += ["--scores", str(run_dir / "b.json"), "--evaluate", str(run_dir / "rotulos.csv")]
    result = runner.invoke(app, [*args, "-o", str(out)])
    assert result.exit_code == 0, result.output
    assert "Acuracia: 1.0000" in result.output
    assert np.allclose(json.loads(out.read_text(encoding="utf-8"))["scores"], [0.8, 0.1, 0.1])

    result = runner.invoke(app, ["node", "--role", "client", "--scores", str(run_dir / "a.json")])
    assert result.exit_code != 0
