import time

import numpy as np
import pytest

from s2plor.analysis import communication_bits, communication_rounds, precision_bound
from s2plor.errors import DegenerateDenominator
from s2plor.experiments import delta_range_values
from s2plor.protocols import (
    VECTOR_PROTOCOLS,
    s2patp_run,
    s2php_run,
    s2pr_run,
    s2ps_run,
    sigmoid,
)
from s2plor.session import ProtocolConfig, connect_parties
from s2plor.transport import LinkModel
from s2plor.utils import relative_errors

PRECISE = ProtocolConfig(theta=1.0)


def same_sign_operands(n, seed, x=0):
    rng = np.random.default_rng(seed)
    a = delta_range_values(x, n, rng)
    b = np.sign(a) * np.abs(delta_range_values(x, n, rng))
    return a, b


def sweep_operands(x, n, seed):
    rng = np.random.default_rng(seed)
    return delta_range_values(x, n, rng), delta_range_values(x, n, rng)


@pytest.mark.parametrize("x", [0, 2, 4, 6, 8])
def test_s2php_meets_dot_product_bound_on_every_range(x):
    a, b = sweep_operands(x, 200, 100 + x)
    with connect_parties(PRECISE, seed=x) as pair:
        shares = s2php_run(pair, a, b)
    assert np.max(relative_errors(shares.reconstruct(), a * b)) <= precision_bound("s2php", 2)


def test_s2php_worked_example():
    with connect_parties(PRECISE, seed=0) as pair:
        shares = s2php_run(pair, [2.0, -3.0], [4.0, 5.0])
    assert np.max(relative_errors(shares.reconstruct(), np.array([8.0, -15.0]))) <= 1.11e-15


def test_s2php_rho_three():
    a, b = sweep_operands(3, 60, 3)
    with connect_parties(ProtocolConfig(rho=3, theta=1.0), seed=3) as pair:
        shares = s2php_run(pair, a, b)
    assert np.max(relative_errors(shares.reconstruct(), a * b)) <= precision_bound("s2php", 3)


def test_s2php_range_expanded_splits():
    rng = np.random.default_rng(10)
    a = rng.uniform(-1, 1, size=30)
    b = rng.uniform(-1, 1, size=30)
    config = ProtocolConfig(split_mode="range", theta=2.0)
    with connect_parties(config, seed=10) as pair:
        shares = s2php_run(pair, a, b)
    assert np.allclose(shares.reconstruct(), a * b, atol=1e-12, rtol=0)


@pytest.mark.parametrize("x", [0, 4])
def test_s2patp_multiplicative_shares(x):
    a, b = same_sign_operands(50, 1, x)
    with connect_parties(PRECISE, seed=1) as pair:
        shares = s2patp_run(pair, a, b)
    assert np.max(relative_errors(shares.reconstruct(), a + b)) <= 1.11e-12
    lo, hi = pair.config.atp_range
    assert np.all((np.abs(shares.v_a) >= lo) & (np.abs(shares.v_a) <= hi))


@pytest.mark.parametrize("x", [0, 4])
def test_s2pr_reciprocal(x):
    a, b = same_sign_operands(50, 2, x)
    with connect_parties(PRECISE, seed=2) as pair:
        shares = s2pr_run(pair, a, b)
    assert np.max(relative_errors(shares.reconstruct(), 1.0 / (a + b))) <= 1.11e-12


@pytest.mark.parametrize("x", [0, 2, 4, 6, 8])
def test_s2ps_exact_and_inside_unit_interval_on_every_range(x):
    a, b = sweep_operands(x, 300, 200 + x)
    with connect_parties(PRECISE, seed=x) as pair:
        value = s2ps_run(pair, a, b).reconstruct()
    assert np.all((value >= -1e-12) & (value <= 1 + 1e-12))
    assert np.max(relative_errors(value, sigmoid(a + b))) <= 1.11e-12


def test_s2ps_large_shares_with_small_sum():
    a = np.array([125.877108942215, -400.0, 500.0, 699.5, -700.0])
    b = np.array([-121.123230766645, 350.0, -450.0, -700.0, 699.0])
    with connect_parties(PRECISE, seed=12) as pair:
        value = s2ps_run(pair, a, b).reconstruct()
    expected = sigmoid(a + b)
    assert value[0] == pytest.approx(0.99146, abs=1e-5)
    assert np.max(np.abs(value - expected)) <= 1e-12
    assert np.max(relative_errors(value, expected)) <= 1.11e-12


def test_s2ps_holds_across_the_per_share_domain():
    rng = np.random.default_rng(13)
    a = rng.uniform(-700, 700, size=400)
    b = rng.uniform(-700, 700, size=400)
    b[:100] = -a[:100] + rng.uniform(-40, 40, size=100)
    with connect_parties(PRECISE, seed=13) as pair:
        value = s2ps_run(pair, a, b).reconstruct()
    assert np.max(np.abs(value - sigmoid(a + b))) <= 1e-12


@pytest.mark.parametrize("sign", [1.0, -1.0])
def test_s2ps_saturates_cleanly(sign):
    rng = np.random.default_rng(4)
    a = sign * rng.uniform(50, 60, size=20)
    b = sign * rng.uniform(50, 60, size=20)
    with connect_parties(PRECISE, seed=4) as pair:
        value = s2ps_run(pair, a, b).reconstruct()
    target = 1.0 if sign > 0 else 0.0
    assert np.all(np.abs(value - target) <= 1e-12)


def test_default_masking_keeps_working_precision():
    a = np.array([0.3, -1.2, 2.0, 40.0, -250.0])
    b = np.array([0.2, 0.4, -0.5, -38.0, 260.0])
    with connect_parties(seed=14) as pair:
        assert pair.config.theta == 1e4
        value = s2ps_run(pair, a, b).reconstruct()
        product = s2php_run(pair, a, b).reconstruct()
    assert np.max(np.abs(value - sigmoid(a + b))) <= 1e-5
    assert np.max(relative_errors(product, a * b)) <= 1e-5


def test_s2pr_guard_aborts_both_parties():
    a = np.array([1.0, 2.0, -3.0])
    b = np.array([-1.0, 0.5, 1.0])
    pair = connect_parties(ProtocolConfig(eps_den=1e-6), seed=5)
    with pytest.raises(DegenerateDenominator):
        s2pr_run(pair, a, b)
    assert pair.broken
    pair.close()


@pytest.mark.parametrize("name", sorted(VECTOR_PROTOCOLS))
@pytest.mark.parametrize("batching", [True, False])
def test_round_and_bit_accounting(name, batching):
    n = 20
    a, b = same_sign_operands(n, 6)
    with connect_parties(ProtocolConfig(batching=batching), seed=6) as pair:
        VECTOR_PROTOCOLS[name].run(pair, a, b)
        rounds, bits = pair.stats()
    assert rounds == communication_rounds(name, batching)
    assert bits == communication_bits(name, n, rho=2)


@pytest.mark.parametrize("name", sorted(VECTOR_PROTOCOLS))
def test_payload_bits_at_five_hundred(name):
    n = 500
    a, b = same_sign_operands(n, 15)
    with connect_parties(seed=15) as pair:
        VECTOR_PROTOCOLS[name].run(pair, a, b)
        _, bits = pair.stats()
    php = 4 * n * 4 + 7 * n * n
    expected = {"s2php": php, "s2patp": php + n, "s2pr": 2 * php + n, "s2ps": 3 * php + n}
    assert bits == expected[name] * 64


@pytest.mark.parametrize("name", sorted(VECTOR_PROTOCOLS))
@pytest.mark.parametrize("batching", [True, False])
def test_tcp_loopback_matches_in_process(name, batching):
    a, b = same_sign_operands(8, 8)
    config = ProtocolConfig(batching=batching)
    results = {}
    for transport in ("mem", "tcp"):
        with connect_parties(config, seed=8, transport=transport) as pair:
            shares = VECTOR_PROTOCOLS[name].run(pair, a, b)
            results[transport] = (shares.reconstruct(), pair.stats())
    assert np.array_equal(results["mem"][0], results["tcp"][0])
    assert results["mem"][1] == results["tcp"][1]
    assert results["tcp"][1][0] == communication_rounds(name, batching)


def test_injected_latency_bounds_wall_time():
    a, b = same_sign_operands(6, 16)
    latency = 0.01
    with connect_parties(seed=16, link_model=LinkModel(latency_s=latency)) as pair:
        started = time.perf_counter()
        s2ps_run(pair, a, b)
        elapsed = time.perf_counter() - started
        rounds, _ = pair.stats()
    assert rounds == 15
    assert elapsed >= rounds * latency


def test_same_seed_gives_identical_transcripts():
    a, b = same_sign_operands(10, 9)
    fingerprints = []
    for _ in range(2):
        with connect_parties(seed=9) as pair:
            s2ps_run(pair, a, b)
            alice, bob = pair.alice.transcript, pair.bob.transcript
            fingerprints.append((alice.fingerprint(), bob.fingerprint()))
    assert fingerprints[0] == fingerprints[1]


def test_sigmoid_is_stable():
    values = sigmoid(np.array([-1000.0, 0.0, 1000.0]))
    assert values.tolist() == [0.0, 0.5, 1.0]


def test_sigmoid_range_and_monotonicity_on_a_grid():
    grid = np.linspace(-50.0, 50.0, 1000)
    values = sigmoid(grid)
    assert np.all((values >= 0.0) & (values <= 1.0))
    assert np.all(np.diff(values) >= 0.0)
    assert np.allclose(values + sigmoid(-grid), 1.0, atol=1e-15, rtol=0)
