import math

import numpy as np
import pytest

from trendgat import energy_graph as eg
from trendgat.errors import ConfigError, NumericError


def brute_force_adjacency(features, k, tau):
    """Independent evaluation: scalar loops, no vectorization shortcuts."""
    n = features.shape[0]
    energies = []
    for i in range(n):
        e = 0.0
        for x in features[i]:
            e += float(x) * float(x)
        energies.append(e)
    adj = np.zeros((n, n))
    for i in range(n):
        denom = 0.0
        for o in range(n):
            denom += math.exp(-abs(energies[i] - energies[o]) / (k * tau))
        for j in range(n):
            adj[i, j] = math.exp(-abs(energies[i] - energies[j]) / (k * tau)) / denom
    return adj


# ---------------------------------------------------------------------------
# stock_energy
# ---------------------------------------------------------------------------

def test_energy_of_zero_vector_is_zero():
    assert eg.stock_energy(np.zeros(12)) == 0.0


def test_energy_hand_case():
    assert eg.stock_energy(np.array([1.0, 2.0, 2.0])) == 9.0


def test_energy_quadratic_homogeneity():
    rng = np.random.default_rng(0)
    row = rng.standard_normal(9)
    assert eg.stock_energy(3.0 * row) == pytest.approx(9.0 * eg.stock_energy(row), rel=1e-12)


def test_energy_rejects_non_finite():
    with pytest.raises(NumericError):
        eg.stock_energy(np.array([1.0, np.nan]))


# ---------------------------------------------------------------------------
# boltzmann_adjacency
# ---------------------------------------------------------------------------

def test_equal_energies_give_uniform_rows():
    feats = np.tile(np.array([1.0, -2.0, 0.5]), (3, 1))
    adj = eg.boltzmann_adjacency(feats, k=0.7, tau=5)
    np.testing.assert_allclose(adj, 1.0 / 3.0, atol=1e-15)


def test_two_stock_log2_gap_hand_case():
    # |E_0 - E_1| = k*tau*ln2 makes the off-diagonal kernel exactly 1/2
    k, tau = 0.5, 10
    e1 = k * tau * math.log(2.0)
    feats = np.array([[0.0, 0.0], [math.sqrt(e1), 0.0]])
    adj = eg.boltzmann_adjacency(feats, k=k, tau=tau)
    np.testing.assert_allclose(adj[0], [2.0 / 3.0, 1.0 / 3.0], atol=1e-12)


def test_matches_brute_force_oracle():
    rng = np.random.default_rng(1)
    feats = rng.standard_normal((6, 8))
    adj = eg.boltzmann_adjacency(feats, k=0.5, tau=10)
    oracle = brute_force_adjacency(feats, k=0.5, tau=10)
    np.testing.assert_allclose(adj, oracle, atol=1e-12)


def test_invalid_scaling_or_temperature_rejected():
    feats = np.ones((2, 3))
    with pytest.raises(ConfigError):
        eg.boltzmann_adjacency(feats, k=0.0, tau=5)
    with pytest.raises(ConfigError):
        eg.boltzmann_adjacency(feats, k=0.5, tau=0)
    with pytest.raises(ConfigError):
        eg.boltzmann_adjacency(np.ones((1, 3)), k=0.5, tau=5)


def test_rows_sum_to_one_on_random_instances():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = int(rng.integers(2, 12))
        feats = rng.standard_normal((n, int(rng.integers(1, 10)))) * rng.uniform(0.1, 5.0)
        adj = eg.boltzmann_adjacency(feats, k=float(rng.uniform(0.02, 2.0)), tau=int(rng.integers(1, 30)))
        np.testing.assert_allclose(adj.sum(axis=1), 1.0, atol=1e-9)
        assert (adj >= 0).all()


def test_prenormalization_kernel_is_symmetric():
    rng = np.random.default_rng(3)
    feats = rng.standard_normal((7, 5))
    k, tau = 0.3, 9
    energies = (feats ** 2).sum(axis=1)
    kernel = np.exp(-np.abs(energies[:, None] - energies[None, :]) / (k * tau))
    np.testing.assert_allclose(kernel, kernel.T, atol=1e-15)


def test_diagonal_is_row_maximum_before_sparsify():
    rng = np.random.default_rng(4)
    feats = rng.standard_normal((8, 6))
    adj = eg.boltzmann_adjacency(feats, k=0.4, tau=7)
    assert (np.diag(adj) >= adj.max(axis=1) - 1e-15).all()


def test_uniform_temperature_limit():
    rng = np.random.default_rng(5)
    feats = rng.standard_normal((5, 4))
    energies = (feats ** 2).sum(axis=1)
    max_gap = np.abs(energies[:, None] - energies[None, :]).max()
    k = 1e6 * max_gap  # k*tau >= 1e6 * max|dE| with tau = 1
    adj = eg.boltzmann_adjacency(feats, k=k, tau=1)
    assert np.abs(adj - 0.2).max() < 1e-6


def test_sharp_temperature_limit_concentrates_on_diagonal():
    feats = np.diag([1.0, 2.0, 3.0, 4.0])  # distinct energies 1,4,9,16
    energies = (feats ** 2).sum(axis=1)
    gaps = np.abs(energies[:, None] - energies[None, :])
    min_gap = gaps[gaps > 0].min()
    adj = eg.boltzmann_adjacency(feats, k=1e-6 * min_gap, tau=1)
    assert (np.diag(adj) >= 1.0 - 1e-6).all()


def test_permutation_equivariance():
    rng = np.random.default_rng(6)
    feats = rng.standard_normal((6, 5))
    perm = rng.permutation(6)
    p = np.eye(6)[perm]
    a = eg.boltzmann_adjacency(feats, k=0.5, tau=10)
    a_perm = eg.boltzmann_adjacency(p @ feats, k=0.5, tau=10)
    np.testing.assert_allclose(a_perm, p @ a @ p.T, atol=1e-13)


def test_larger_gap_never_gets_larger_entry():
    rng = np.random.default_rng(7)
    feats = rng.standard_normal((9, 4))
    adj = eg.boltzmann_adjacency(feats, k=0.8, tau=3)
    energies = (feats ** 2).sum(axis=1)
    gaps = np.abs(energies[:, None] - energies[None, :])
    for i in range(9):
        order = np.argsort(gaps[i])
        entries = adj[i][order]
        assert (np.diff(entries) <= 1e-15).all()


# ---------------------------------------------------------------------------
# sparsify
# ---------------------------------------------------------------------------

def test_zero_threshold_leaves_matrix_unchanged():
    rng = np.random.default_rng(8)
    adj = rng.random((4, 4))
    with pytest.warns(eg.ThresholdRangeWarning):
        out = eg.sparsify(adj, 0.0)
    np.testing.assert_array_equal(out, adj)


def test_entrywise_threshold_hand_case():
    adj = np.array([[0.6, 0.4], [0.3, 0.7]])
    out = eg.sparsify(adj, 0.5)
    np.testing.assert_array_equal(out, [[0.6, 0.0], [0.0, 0.7]])


def test_saturating_threshold_zeroes_everything():
    adj = np.full((3, 3), 1.0 / 3.0)
    with pytest.warns(eg.ThresholdRangeWarning):
        out = eg.sparsify(adj, 0.9)
    assert (out == 0.0).all()


def test_surviving_entries_are_zero_or_at_least_s():
    rng = np.random.default_rng(9)
    adj = eg.boltzmann_adjacency(rng.standard_normal((7, 5)), k=0.5, tau=10)
    out = eg.sparsify(adj, 0.3)
    assert ((out == 0.0) | (out >= 0.3)).all()


# ---------------------------------------------------------------------------
# sector_adjacency
# ---------------------------------------------------------------------------

def test_single_sector_is_uniform():
    tickers = ["A", "B", "C", "D"]
    adj = eg.sector_adjacency({t: "tech" for t in tickers}, tickers)
    np.testing.assert_allclose(adj, 0.25)


def test_singleton_sectors_give_identity():
    tickers = ["A", "B", "C"]
    adj = eg.sector_adjacency({t: t for t in tickers}, tickers)
    np.testing.assert_array_equal(adj, np.eye(3))


def test_two_sector_block_structure():
    tickers = ["A", "B", "C", "D", "E"]
    memb = {"A": "x", "B": "x", "C": "y", "D": "y", "E": "y"}
    adj = eg.sector_adjacency(memb, tickers)
    expected = np.zeros((5, 5))
    expected[:2, :2] = 0.5
    expected[2:, 2:] = 1.0 / 3.0
    np.testing.assert_allclose(adj, expected)


def test_missing_sector_is_config_error():
    with pytest.raises(ConfigError, match="B"):
        eg.sector_adjacency({"A": "x"}, ["A", "B"])


# ---------------------------------------------------------------------------
# export_edges
# ---------------------------------------------------------------------------

def test_export_zero_matrix(tmp_path):
    out = tmp_path / "edges.tsv"
    n = eg.export_edges(np.zeros((3, 3)), ["A", "B", "C"], out)
    assert n == 0
    assert out.read_text() == "src\tdst\tweight\n"


def test_export_identity_self_loops(tmp_path):
    out = tmp_path / "edges.tsv"
    n = eg.export_edges(np.eye(3), ["A", "B", "C"], out)
    assert n == 3
    lines = out.read_text().strip().split("\n")
    assert lines[1:] == ["A\tA\t1", "B\tB\t1", "C\tC\t1"]


def test_export_count_matches_independent_nonzero_count(tmp_path):
    rng = np.random.default_rng(10)
    adj = eg.sparsify(eg.boltzmann_adjacency(rng.standard_normal((5, 4)), 0.5, 10), 0.3)
    expected = sum(1 for i in range(5) for j in range(5) if adj[i, j] != 0.0)
    n = eg.export_edges(adj, list("ABCDE"), tmp_path / "e.tsv")
    assert n == expected
    assert len((tmp_path / "e.tsv").read_text().strip().split("\n")) == expected + 1


def test_dense_dump_round_trips(tmp_path):
    rng = np.random.default_rng(11)
    adj = eg.boltzmann_adjacency(rng.standard_normal((4, 3)), 0.5, 10)
    out = tmp_path / "adj.csv"
    eg.export_dense(adj, list("ABCD"), out)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == ",A,B,C,D"
    parsed = np.array([[float(x) for x in line.split(",")[1:]] for line in lines[1:]])
    np.testing.assert_array_equal(parsed, adj)
