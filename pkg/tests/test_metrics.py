"""Metric tests: Pearson/assignment/regression scores against exhaustive
oracles, the MCC <= R_con <= R <= 1 ordering, and alignment-aware SHD."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mechsparse.errors import ValidationError
from mechsparse.graph_algebra import BinaryGraph, Permutation, combined_mask
from mechsparse.metrics import (
    MetricReport,
    mcc,
    metric_report,
    pearson_matrix,
    r_con_score,
    r_score,
    shd,
)

from ._oracles import (
    assignment_by_exhaustion,
    mcc_by_exhaustion,
    multiple_correlation,
    pearson,
)


def _random_graph(rng, d_z, d_a):
    return BinaryGraph(
        gz=rng.integers(0, 2, (d_z, d_z)).astype(np.uint8),
        ga=rng.integers(0, 2, (d_z, d_a)).astype(np.uint8),
    )


def _correlated_pair(rng, n, d):
    z = rng.standard_normal((n, d))
    A = rng.standard_normal((d, d)) + 2.0 * np.eye(d)
    zhat = z @ A.T + 0.3 * rng.standard_normal((n, d))
    return z, zhat


# ---------------------------------------------------------------------------
# correlation matrix and assignment vs oracles
# ---------------------------------------------------------------------------


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), d=st.integers(1, 5))
def test_pearson_matrix_matches_scalar_oracle(seed, d):
    rng = np.random.default_rng(seed)
    z, zhat = _correlated_pair(rng, 40, d)
    K = pearson_matrix(z, zhat)
    for i in range(d):
        for j in range(d):
            assert K[i, j] == pytest.approx(pearson(z[:, i], zhat[:, j]), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(seed=st.integers(0, 10**6), d=st.integers(2, 6))
def test_mcc_matches_exhaustive_oracle(seed, d):
    rng = np.random.default_rng(seed)
    z, zhat = _correlated_pair(rng, 60, d)
    score, p_hat, K = mcc(z, zhat)
    want_score, _, want_K = mcc_by_exhaustion(z, zhat)
    assert score == pytest.approx(want_score, abs=1e-10)
    np.testing.assert_allclose(K, want_K, atol=1e-10)
    # the returned permutation must itself achieve the optimal score
    achieved = np.abs(K)[np.arange(d), p_hat.sigma].sum() / d
    assert achieved == pytest.approx(want_score, abs=1e-10)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), d=st.integers(2, 8))
def test_lap_assignment_equals_exhaustive(seed, d):
    rng = np.random.default_rng(seed)
    z, zhat = _correlated_pair(rng, 50, d)
    s_ex, _, _ = mcc(z, zhat, method="exhaustive")
    s_lap, _, _ = mcc(z, zhat, method="lap")
    assert s_lap == pytest.approx(s_ex, abs=1e-10)


def test_assignment_oracle_agreement_on_raw_weights():
    rng = np.random.default_rng(0)
    for _ in range(20):
        W = rng.random((5, 5))
        z = rng.standard_normal((30, 5))  # only to exercise the public path
        _, want_score = assignment_by_exhaustion(W)
        from mechsparse.metrics import _assign

        got_sigma, got_score = _assign(W, method="lap")
        assert got_score == pytest.approx(want_score, abs=1e-12)
        assert W[np.arange(5), got_sigma].sum() == pytest.approx(
            want_score, abs=1e-12
        )


# ---------------------------------------------------------------------------
# regression scores
# ---------------------------------------------------------------------------


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10**6), d=st.integers(1, 5))
def test_r_score_matches_regression_oracle(seed, d):
    rng = np.random.default_rng(seed)
    z, zhat = _correlated_pair(rng, 80, d)
    want = np.mean(
        [max(0.0, multiple_correlation(z[:, i], zhat)) for i in range(d)]
    )
    assert r_score(z, zhat) == pytest.approx(want, abs=1e-8)


def test_r_con_restricts_regressors_by_combined_mask():
    rng = np.random.default_rng(3)
    d = 4
    G = BinaryGraph(
        gz=np.eye(d, dtype=np.uint8), ga=np.zeros((d, 2), dtype=np.uint8)
    )
    # identity gz (empty action family) gives a diagonal combined mask
    np.testing.assert_array_equal(combined_mask(G), np.eye(d, dtype=np.uint8))
    z = rng.standard_normal((500, d))
    mix = np.eye(d) + 0.5 * (np.ones((d, d)) - np.eye(d))
    zhat = z @ mix.T
    p_id = Permutation.identity(d)
    con = r_con_score(z, zhat, G, p_id)
    want = np.mean(
        [max(0.0, multiple_correlation(z[:, i], zhat[:, [i]])) for i in range(d)]
    )
    assert con == pytest.approx(want, abs=1e-8)
    assert con < r_score(z, zhat) - 0.01


def test_r_con_uses_alignment_permutation():
    rng = np.random.default_rng(4)
    d = 3
    G = BinaryGraph(
        gz=np.eye(d, dtype=np.uint8), ga=np.zeros((d, 1), dtype=np.uint8)
    )
    z = rng.standard_normal((400, d))
    sigma = np.array([2, 0, 1])
    zhat = z[:, sigma] + 0.01 * rng.standard_normal((400, d))
    # aligned zhat[:, sigma_hat] must put column matching z_i at position i
    _, p_hat, _ = mcc(z, zhat)
    con = r_con_score(z, zhat, G, p_hat)
    assert con > 0.99


# ---------------------------------------------------------------------------
# ordering and degenerate cases
# ---------------------------------------------------------------------------


@settings(max_examples=60, deadline=None)
@given(
    seed=st.integers(0, 10**6),
    d_z=st.integers(2, 6),
    d_a=st.integers(1, 3),
)
def test_metric_ordering_holds(seed, d_z, d_a):
    rng = np.random.default_rng(seed)
    z, zhat = _correlated_pair(rng, 50, d_z)
    G = _random_graph(rng, d_z, d_a)
    rep = metric_report(z, zhat, G)
    slack = 1e-9
    assert -slack <= rep.mcc <= rep.r_con + slack
    assert rep.r_con <= rep.r + slack
    assert rep.r <= 1.0 + slack


def test_perfect_recovery_scores_one():
    rng = np.random.default_rng(9)
    d = 5
    z = rng.standard_normal((300, d))
    sigma = np.array([3, 0, 4, 1, 2])
    scales = np.array([2.0, -1.0, 0.5, 3.0, -0.25])
    zhat = z[:, sigma] * scales
    G = _random_graph(rng, d, 2)
    # learned node j carries true factor sigma[j], so the learned graph is
    # the true one re-indexed by sigma
    Ghat = BinaryGraph(gz=G.gz[np.ix_(sigma, sigma)], ga=G.ga[sigma])
    rep = metric_report(z, zhat, G, Ghat)
    assert rep.mcc == pytest.approx(1.0, abs=1e-9)
    assert rep.r == pytest.approx(1.0, abs=1e-9)
    assert rep.r_con == pytest.approx(1.0, abs=1e-9)
    assert rep.shd == 0


def test_anticorrelation_counts_fully():
    rng = np.random.default_rng(10)
    z = rng.standard_normal((200, 3))
    score, _, _ = mcc(z, -z)
    assert score == pytest.approx(1.0, abs=1e-12)


def test_collapsed_columns_score_zero():
    rng = np.random.default_rng(11)
    z = rng.standard_normal((100, 3))
    zhat = z.copy()
    zhat[:, 1] = 7.0  # constant learned factor
    K = pearson_matrix(z, zhat)
    assert np.all(K[:, 1] == 0.0)
    zconst = z.copy()
    zconst[:, 2] = -1.0  # constant true factor scores zero everywhere
    K2 = pearson_matrix(zconst, zhat)
    assert np.all(K2[2, :] == 0.0)
    with pytest.warns(RuntimeWarning):  # constant regressor is rank-deficient
        assert np.isfinite(r_score(zconst, zhat))


def test_rank_deficient_design_warns_and_stays_bounded():
    rng = np.random.default_rng(12)
    z = rng.standard_normal((60, 3))
    zhat = z.copy()
    zhat[:, 2] = zhat[:, 1]  # exactly duplicated regressor
    with pytest.warns(RuntimeWarning):
        val = r_score(z, zhat)
    assert 0.0 <= val <= 1.0 + 1e-9


# ---------------------------------------------------------------------------
# SHD
# ---------------------------------------------------------------------------


def test_shd_counts_disagreements_identity_alignment():
    G = BinaryGraph(
        gz=np.array([[1, 0], [0, 1]], dtype=np.uint8),
        ga=np.array([[1], [0]], dtype=np.uint8),
    )
    Ghat = BinaryGraph(
        gz=np.array([[1, 1], [0, 0]], dtype=np.uint8),
        ga=np.array([[0], [0]], dtype=np.uint8),
    )
    assert shd(G, Ghat, Permutation.identity(2)) == 3


def test_shd_zero_under_correct_alignment():
    rng = np.random.default_rng(13)
    G = _random_graph(rng, 5, 2)
    p = Permutation(rng.permutation(5))
    inv = p.inverse().sigma
    Ghat = BinaryGraph(gz=G.gz[np.ix_(inv, inv)], ga=G.ga[inv])
    assert shd(G, Ghat, p) == 0
    assert shd(G, Ghat, Permutation.identity(5)) > 0 or np.array_equal(
        p.sigma, np.arange(5)
    )


# ---------------------------------------------------------------------------
# validation and report plumbing
# ---------------------------------------------------------------------------


def test_validation_errors():
    z = np.random.default_rng(0).standard_normal((20, 3))
    with pytest.raises(ValidationError):
        pearson_matrix(z[:, 0], z)
    with pytest.raises(ValidationError):
        pearson_matrix(z, z[:10])
    with pytest.raises(ValidationError):
        mcc(z, z[:, :2])
    with pytest.raises(ValidationError):
        mcc(z[:2], z[:2])
    with pytest.raises(ValidationError):
        r_score(z, z[:, :2])
    G = BinaryGraph(
        gz=np.eye(3, dtype=np.uint8), ga=np.zeros((3, 1), dtype=np.uint8)
    )
    with pytest.raises(ValidationError):
        r_con_score(z, z, "nope", Permutation.identity(3))
    with pytest.raises(ValidationError):
        r_con_score(z, z, G, Permutation.identity(4))
    with pytest.raises(ValidationError):
        shd(G, "nope", Permutation.identity(3))
    G2 = BinaryGraph(
        gz=np.eye(4, dtype=np.uint8), ga=np.zeros((4, 1), dtype=np.uint8)
    )
    with pytest.raises(ValidationError):
        shd(G, G2, Permutation.identity(3))
    with pytest.raises(ValidationError):
        shd(G, G, Permutation.identity(4))


def test_metric_report_json_and_optional_shd():
    rng = np.random.default_rng(14)
    z, zhat = _correlated_pair(rng, 50, 3)
    G = _random_graph(rng, 3, 1)
    rep = metric_report(z, zhat, G)
    assert isinstance(rep, MetricReport)
    assert rep.shd is None
    blob = rep.to_json()
    assert set(blob) == {"mcc", "r", "r_con", "shd", "sigma", "correlation"}
    assert len(blob["sigma"]) == 3
    assert np.asarray(blob["correlation"]).shape == (3, 3)
