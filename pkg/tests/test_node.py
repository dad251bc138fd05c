import socket
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from uuid import uuid4

import numpy as np
import pytest

from s2plor.cs import serve_cs
from s2plor.errors import DatasetError, S2plorError
from s2plor.experiments import make_synthetic_dataset
from s2plor.logreg import (
    PartitionedDataset,
    TrainConfig,
    plain_predict,
    s2plort_run,
    save_dataset_csv,
    vertical_partition,
)
from s2plor.node import (
    PartyJob,
    merge_prediction_shares,
    parse_session,
    run_client_node,
    run_client_scores,
    run_party_node,
    save_prediction_share,
)
from s2plor.session import ProtocolConfig, connect_parties
from s2plor.utils import derive_session_id


def make_run_dir() -> Path:
    run_dir = Path("tests_runtime") / f"node-{uuid4().hex[:8]}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def free_port() -> int:
    with socket.socket(socket.AF_INET, socket.SOCK_STREAM) as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


def run_both(alice_job, bob_job, config, cfg, cs_address, session_id):
    port = free_port()
    with ThreadPoolExecutor(max_workers=2) as pool:
        alice = pool.submit(
            run_party_node,
            alice_job,
            config,
            cfg,
            cs_address=cs_address,
            session_id=session_id,
            bind=("127.0.0.1", port),
        )
        bob = pool.submit(
            run_party_node,
            bob_job,
            config,
            cfg,
            cs_address=cs_address,
            session_id=session_id,
            peer=("127.0.0.1", port),
        )
        return alice.result(timeout=60), bob.result(timeout=60)


def test_deployed_nodes_train_and_predict_like_in_process():
    run_dir = make_run_dir()
    X, y = make_synthetic_dataset(24, 3, seed=7)
    X_a, X_b = vertical_partition(X, 2)
    save_dataset_csv(run_dir / "alice.csv", X_a, y)
    save_dataset_csv(run_dir / "bob.csv", X_b)
    save_dataset_csv(run_dir / "avaliacao.csv", X, y)

    config = ProtocolConfig(timeout_s=20.0, theta=1.0)
    cfg = TrainConfig(eta=0.5, batch_size=8, iterations=2, seed=0)
    server = serve_cs(("127.0.0.1", 0), seed=1, timeout_s=20.0)
    try:
        shares = run_both(
            PartyJob("alice", "train", run_dir / "alice.csv", run_dir / "alice-share.json"),
            PartyJob("bob", "train", run_dir / "bob.csv", run_dir / "bob-share.json"),
            config,
            cfg,
            server.address,
            derive_session_id(cfg.seed),
        )
        result = run_client_node(list(shares), run_dir / "model.json", run_dir / "avaliacao.csv")

        scores = run_both(
            PartyJob(
                "alice", "predict", run_dir / "alice.csv", run_dir / "alice-scores.json", shares[0]
            ),
            PartyJob(
                "bob", "predict", run_dir / "bob.csv", run_dir / "bob-scores.json", shares[1]
            ),
            config,
            cfg,
            server.address,
            uuid4(),
        )
    finally:
        server.close()

    with connect_parties(config, seed=0) as pair:
        expected = s2plort_run(pair, PartitionedDataset(X_a, X_b, y), cfg)
    merged = np.asarray(result["weights"])
    assert np.allclose(merged, expected.merged(), atol=1e-10, rtol=0)
    assert 0.0 <= result["metrics"]["accuracy"] <= 1.0

    predicted = merge_prediction_shares(list(scores))
    assert np.allclose(predicted, plain_predict(X, merged), atol=1e-9, rtol=0)

    summary = run_client_scores(list(scores), run_dir / "scores.json", run_dir / "avaliacao.csv")
    assert np.allclose(summary["scores"], predicted, atol=0, rtol=0)
    assert summary["metrics"]["tp"] + summary["metrics"]["fn"] == int(y.sum())


def test_prediction_share_merge_checks_roles():
    run_dir = make_run_dir()
    save_prediction_share(run_dir / "a.json", "alice", np.array([0.2, 0.3]))
    save_prediction_share(run_dir / "b.json", "bob", np.array([0.1]))
    with pytest.raises(DatasetError):
        merge_prediction_shares([run_dir / "a.json", run_dir / "b.json"])
    with pytest.raises(DatasetError):
        merge_prediction_shares([run_dir / "a.json", run_dir / "a.json"])


def test_party_node_validates_job_before_connecting():
    run_dir = make_run_dir()
    save_dataset_csv(run_dir / "bob.csv", np.ones((2, 2)))
    job = PartyJob("bob", "avaliar", run_dir / "bob.csv", run_dir / "out.json")
    with pytest.raises(S2plorError):
        run_party_node(
            job,
            ProtocolConfig(),
            TrainConfig(),
            cs_address=("127.0.0.1", 1),
            session_id=derive_session_id(0),
        )


def test_parse_session():
    assert parse_session(None, 3) == derive_session_id(3)
    sid = uuid4()
    assert parse_session(str(sid), 0) == sid
    with pytest.raises(S2plorError):
        parse_session("nao-e-uuid", 0)


def test_client_scores_need_labels_to_evaluate():
    run_dir = make_run_dir()
    save_prediction_share(run_dir / "a.json", "alice", np.array([0.5, -0.2]))
    save_prediction_share(run_dir / "b.json", "bob", np.array([0.3, 0.4]))
    save_dataset_csv(run_dir / "sem-rotulos.csv", np.ones((2, 2)))
    paths = [run_dir / "a.json", run_dir / "b.json"]

    result = run_client_scores(paths, run_dir / "scores.json")
    assert np.allclose(result["scores"], [0.8, 0.2])
    assert "metrics" not in result
    assert (run_dir / "scores.json").exists()
    with pytest.raises(DatasetError):
        run_client_scores(paths, run_dir / "scores.json", run_dir / "sem-rotulos.csv")
