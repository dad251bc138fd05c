from pathlib import Path
from uuid import uuid4

import numpy as np
import pytest

from s2plor.analysis import communication_rounds
from s2plor.errors import DatasetError, ProtocolAbort, S2plorError, ShapeError
from s2plor.experiments import make_synthetic_dataset
from s2plor.logreg import (
    ModelShares,
    PartitionedDataset,
    TrainConfig,
    augment,
    batch_bounds,
    load_dataset_csv,
    load_features_csv,
    load_model,
    merge_model_shares,
    logistic_loss,
    min_max_scale,
    plain_lort,
    plain_predict,
    s2plorp_batched,
    s2plorp_run,
    s2plort_run,
    save_dataset_csv,
    save_model,
    save_share,
    train_test_split,
    vertical_partition,
)
from s2plor.session import Fault, ProtocolConfig, connect_parties

PRECISE = ProtocolConfig(theta=1.0)


def make_run_dir() -> Path:
    run_dir = Path("tests_runtime") / f"logreg-{uuid4().hex[:8]}"
    run_dir.mkdir(parents=True, exist_ok=False)
    return run_dir


def partitioned(n, d, split_point, seed):
    X, y = make_synthetic_dataset(n, d, seed=seed)
    X_a, X_b = vertical_partition(X, split_point)
    return X, y, PartitionedDataset(X_a, X_b, y)


def test_vertical_partition_zero_fills_the_other_side():
    X = np.arange(12, dtype=float).reshape(3, 4)
    X_a, X_b = vertical_partition(X, 1)
    assert np.array_equal(X_a + X_b, X)
    assert np.all(X_a[:, 1:] == 0) and np.all(X_b[:, :1] == 0)
    with pytest.raises(ShapeError):
        vertical_partition(X, 5)


def test_augment_gives_intercept_to_alice_only():
    X = np.ones((2, 3))
    assert np.all(augment(X, "alice")[:, 0] == 1.0)
    assert np.all(augment(X, "bob")[:, 0] == 0.0)


def test_batch_bounds_keep_the_short_tail():
    assert batch_bounds(9, 4) == [(0, 4), (4, 8), (8, 9)]
    assert batch_bounds(8, 8) == [(0, 8)]


def test_train_config_validation():
    with pytest.raises(S2plorError):
        TrainConfig(batch_size=0)
    with pytest.raises(S2plorError):
        TrainConfig(iterations=0)
    with pytest.raises(S2plorError):
        TrainConfig(rho=1)


def test_partitioned_dataset_rejects_bad_inputs():
    with pytest.raises(ShapeError):
        PartitionedDataset(np.ones((3, 2)), np.ones((3, 3)), np.zeros(3))
    with pytest.raises(DatasetError):
        PartitionedDataset(np.ones((2, 2)), np.ones((2, 2)), np.array([0.0, 2.0]))


@pytest.mark.parametrize("seed", range(20))
def test_secure_training_tracks_plaintext(seed):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 6))
    X, y, data = partitioned(24, d, int(rng.integers(0, d + 1)), seed)
    cfg = TrainConfig(eta=0.5, batch_size=8, iterations=10, seed=seed)

    trajectory: list[np.ndarray] = []
    with connect_parties(PRECISE, seed=seed) as pair:
        model = s2plort_run(pair, data, cfg, trajectory)
    plain: list[np.ndarray] = []
    plain_lort(X, y, cfg, lambda _, w: plain.append(w))

    assert len(trajectory) == len(plain) == cfg.iterations
    for secure, expected in zip(trajectory, plain):
        assert np.allclose(secure, expected, atol=1e-9, rtol=0)
    assert np.allclose(model.merged(), plain[-1], atol=1e-9, rtol=0)


def test_single_row_last_batch():
    X, y, data = partitioned(9, 3, 2, 1)
    cfg = TrainConfig(eta=0.3, batch_size=4, iterations=1)
    with connect_parties(PRECISE, seed=1) as pair:
        model = s2plort_run(pair, data, cfg)
    assert np.allclose(model.merged(), plain_lort(X, y, cfg), atol=1e-9, rtol=0)


@pytest.mark.parametrize("batching", [True, False])
def test_training_step_and_prediction_rounds(batching):
    X, y, data = partitioned(8, 3, 1, 2)
    cfg = TrainConfig(batch_size=8, iterations=1)
    with connect_parties(ProtocolConfig(batching=batching), seed=2) as pair:
        model = s2plort_run(pair, data, cfg)
        train_rounds, _ = pair.stats()
        pair.reset_counters()
        s2plorp_run(pair, data.X_a, data.X_b, model)
        predict_rounds, _ = pair.stats()
    assert train_rounds == communication_rounds("s2plort", batching)
    assert predict_rounds == communication_rounds("s2plorp", batching)


def test_secure_prediction_matches_plaintext():
    X, y, data = partitioned(30, 4, 2, 3)
    w = np.array([0.2, -1.0, 0.5, 1.5, -0.3])
    model = ModelShares(w_a=w - 0.7, w_b=np.full(5, 0.7))
    with connect_parties(PRECISE, seed=3) as pair:
        scores = s2plorp_run(pair, data.X_a, data.X_b, model).reconstruct()
    assert np.allclose(scores, plain_predict(X, w), atol=1e-9, rtol=0)

    batched = s2plorp_batched(
        lambda index: connect_parties(PRECISE, seed=100 + index),
        data.X_a,
        data.X_b,
        model,
        batch_size=7,
        workers=2,
    )
    assert np.allclose(batched.reconstruct(), plain_predict(X, w), atol=1e-9, rtol=0)


def test_prediction_rejects_wrong_model_width():
    _, _, data = partitioned(5, 3, 1, 4)
    model = ModelShares(np.zeros(3), np.zeros(3))
    pair = connect_parties(seed=4)
    with pytest.raises(ShapeError):
        s2plorp_run(pair, data.X_a, data.X_b, model)
    pair.close()


def test_tampered_training_aborts_with_location():
    _, _, data = partitioned(8, 3, 1, 5)
    pair = connect_parties(seed=5)
    pair.set_fault(Fault("vf_b", magnitude=1.0))
    with pytest.raises(ProtocolAbort) as info:
        s2plort_run(pair, data, TrainConfig(batch_size=8, iterations=2))
    assert info.value.iteration == 0
    assert info.value.batch == 0
    assert pair.broken
    pair.close()


def test_dataset_csv_roundtrip_and_errors():
    run_dir = make_run_dir()
    X = np.array([[0.5, 1.25], [-3.0, 2.0]])
    y = np.array([1.0, 0.0])
    path = run_dir / "data.csv"
    save_dataset_csv(path, X, y, ["idade", "renda"])
    loaded_X, loaded_y, names = load_dataset_csv(path)
    assert names == ["idade", "renda"]
    assert np.array_equal(loaded_X, X) and np.array_equal(loaded_y, y)

    features = run_dir / "features.csv"
    save_dataset_csv(features, X)
    only_X, no_y, names = load_features_csv(features)
    assert no_y is None and names == ["x0", "x1"]
    assert np.array_equal(only_X, X)
    with pytest.raises(DatasetError):
        load_dataset_csv(features)

    bad_labels = run_dir / "bad.csv"
    bad_labels.write_text("a,label\n1.0,3\n", encoding="utf-8")
    with pytest.raises(DatasetError):
        load_dataset_csv(bad_labels)
    broken = run_dir / "broken.csv"
    broken.write_text("a,b,label\n1.0,x,1\n", encoding="utf-8")
    with pytest.raises(DatasetError):
        load_dataset_csv(broken)
    with pytest.raises(DatasetError):
        load_dataset_csv(run_dir / "nao-existe.csv")


def test_model_files_and_share_merge():
    run_dir = make_run_dir()
    model = ModelShares(np.array([1.0, 2.0]), np.array([0.5, -1.0]))
    save_model(run_dir / "model.json", model, {"eta": 0.1})
    loaded = load_model(run_dir / "model.json")
    assert isinstance(loaded, ModelShares)
    assert np.array_equal(loaded.merged(), [1.5, 1.0])

    save_model(run_dir / "plain.json", np.array([3.0]))
    assert np.array_equal(load_model(run_dir / "plain.json"), [3.0])

    save_share(run_dir / "alice.json", "alice", model.w_a)
    save_share(run_dir / "bob.json", "bob", model.w_b)
    merged = merge_model_shares([run_dir / "alice.json", run_dir / "bob.json"])
    assert np.array_equal(merged.merged(), model.merged())
    with pytest.raises(DatasetError):
        merge_model_shares([run_dir / "alice.json", run_dir / "alice.json"])


def test_train_test_split_and_scaling():
    X = np.arange(20, dtype=float).reshape(10, 2)
    y = np.array([0.0, 1.0] * 5)
    X_train, X_test, y_train, y_test = train_test_split(X, y, 0.8, seed=1)
    assert X_train.shape == (8, 2) and X_test.shape == (2, 2)
    assert sorted(np.concatenate([X_train[:, 0], X_test[:, 0]])) == list(X[:, 0])
    with pytest.raises(DatasetError):
        train_test_split(X, y, 10)

    scaled_train, scaled_test = min_max_scale(X_train, X_test)
    assert scaled_train.min() == 0.0 and scaled_train.max() == 1.0
    constant = np.ones((3, 1))
    assert np.all(min_max_scale(constant, constant)[0] == 0.0)
    kept_order = train_test_split(X, y, 6, shuffle=False)
    assert np.array_equal(kept_order[0], X[:6]) and np.array_equal(kept_order[1], X[6:])


def test_secure_training_matches_plaintext_on_unscaled_features():
    rng = np.random.default_rng(21)
    X = rng.uniform(0.0, 100.0, size=(16, 2))
    y = (X[:, 0] - X[:, 1] + rng.normal(0.0, 10.0, size=16) > 0).astype(float)
    X_a, X_b = vertical_partition(X, 1)
    cfg = TrainConfig(eta=0.01, batch_size=8, iterations=2, seed=21)
    with connect_parties(PRECISE, seed=21) as pair:
        model = s2plort_run(pair, PartitionedDataset(X_a, X_b, y), cfg)
        scores = s2plorp_run(pair, X_a, X_b, model).reconstruct()
    expected = plain_lort(X, y, cfg)
    merged = model.merged()
    assert np.allclose(merged, expected, rtol=1e-9, atol=1e-9 * np.max(np.abs(expected)))
    assert np.all((scores >= -1e-12) & (scores <= 1 + 1e-12))
    assert np.allclose(scores, plain_predict(X, merged), atol=1e-9, rtol=0)


def test_swapping_party_roles_keeps_the_model():
    X, y, data = partitioned(20, 4, 2, 22)
    cfg = TrainConfig(eta=0.5, batch_size=5, iterations=3, seed=22)
    with connect_parties(PRECISE, seed=22) as pair:
        model = s2plort_run(pair, data, cfg)
        scores = s2plorp_run(pair, data.X_a, data.X_b, model).reconstruct()
    swapped = PartitionedDataset(data.X_b, data.X_a, y)
    with connect_parties(PRECISE, seed=23) as pair:
        swapped_model = s2plort_run(pair, swapped, cfg)
        swapped_scores = s2plorp_run(
            pair, data.X_b, data.X_a, ModelShares(model.w_b, model.w_a)
        ).reconstruct()
    assert np.allclose(swapped_model.merged(), model.merged(), atol=1e-9, rtol=0)
    assert np.allclose(swapped_scores, scores, atol=1e-9, rtol=0)


def test_full_batch_loss_does_not_increase():
    rng = np.random.default_rng(24)
    X = rng.uniform(-1.0, 1.0, size=(24, 3))
    y = (X @ np.array([2.0, -1.0, 0.5]) > 0).astype(float)
    X_a, X_b = vertical_partition(X, 2)
    cfg = TrainConfig(eta=0.5, batch_size=24, iterations=12, seed=24)
    trajectory: list[np.ndarray] = []
    with connect_parties(PRECISE, seed=24) as pair:
        s2plort_run(pair, PartitionedDataset(X_a, X_b, y), cfg, trajectory)
    losses = [logistic_loss(X, y, np.zeros(4))] + [logistic_loss(X, y, w) for w in trajectory]
    assert np.all(np.diff(losses) <= 1e-12)
    assert losses[-1] < losses[0]
