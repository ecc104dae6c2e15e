"""Graph construction, Markov normalization, eigensolver, and extension,
each checked against dense brute-force oracles."""

import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from dvad.diffusion import (AffinityGraph, MarkovMatrix, build_knn_graph,
                            eigendecompose, embed, extend_coords,
                            extend_many, fit_diffusion_map, normalize_markov,
                            nystrom_extend, softmax_coords)
from dvad.errors import EmbeddingError


# --- oracle helpers (independent of the library path) ----------------------

def _dense_markov(weights: np.ndarray) -> np.ndarray:
    d1 = weights.sum(axis=1)
    w_tilde = weights / d1[:, None] / d1[None, :]
    return w_tilde / w_tilde.sum(axis=1)[:, None]


def _dense_eigs(p_dense: np.ndarray, d2: np.ndarray, num: int):
    """Full dense eigendecomposition of the symmetric conjugate."""
    s = np.sqrt(d2)
    a = (s[:, None] * p_dense) / s[None, :]
    a = (a + a.T) / 2.0
    values, vectors = np.linalg.eigh(a)
    order = np.argsort(-np.abs(values))[:num]
    values, vectors = values[order], vectors[:, order]
    psi = vectors / s[:, None]
    psi /= np.linalg.norm(psi, axis=0)
    mags = np.abs(psi)
    idx = np.argmax(mags >= (mags.max(axis=0) * (1 - 1e-9))[None, :], axis=0)
    psi *= np.sign(psi[idx, np.arange(psi.shape[1])])
    return values, psi


def _uniform_graph(n: int) -> AffinityGraph:
    return AffinityGraph(weights=sp.csr_matrix(np.ones((n, n))),
                         local_scales=np.ones(n), k=n - 1)


class TestKnnGraph:
    def test_coincident_points_weight_one(self):
        rng = np.random.default_rng(0)
        pts = rng.standard_normal((30, 5))
        pts[7] = pts[3]
        graph = build_knn_graph(pts, k=4)
        assert graph.weights[3, 7] == 1.0

    def test_full_connectivity_with_max_k(self):
        rng = np.random.default_rng(1)
        pts = rng.standard_normal((12, 4))
        graph = build_knn_graph(pts, k=11)
        dense = graph.weights.toarray()
        assert np.all(dense > 0)

    def test_scales_match_brute_force_sort(self):
        rng = np.random.default_rng(2)
        pts = rng.standard_normal((100, 72))
        graph = build_knn_graph(pts, k=10)
        for i in range(0, 100, 7):
            dists = sorted(np.linalg.norm(pts[i] - pts[j])
                           for j in range(100) if j != i)
            assert graph.local_scales[i] == pytest.approx(dists[9], rel=1e-12)

    def test_graph_invariants(self):
        rng = np.random.default_rng(3)
        pts = rng.standard_normal((60, 8))
        graph = build_knn_graph(pts, k=10)
        dense = graph.weights.toarray()
        assert np.array_equal(dense, dense.T)
        vals = dense[dense > 0]
        assert np.all((vals > 0) & (vals <= 1.0))
        assert np.all(np.diag(dense) == 1.0)
        neighbor_counts = (dense > 0).sum(axis=1) - 1
        assert np.all(neighbor_counts >= 10)

    def test_duplicate_scale_fallback(self):
        rng = np.random.default_rng(4)
        pts = rng.standard_normal((20, 3))
        pts[5:9] = pts[5]  # four coincident points, k=3 -> zero kth distance
        graph = build_knn_graph(pts, k=3)
        assert np.all(graph.local_scales > 0)

    def test_all_identical_rejected(self):
        pts = np.ones((15, 4))
        with pytest.raises(EmbeddingError, match="degenerate geometry"):
            build_knn_graph(pts, k=3)

    def test_needs_more_points_than_k(self):
        with pytest.raises(EmbeddingError):
            build_knn_graph(np.eye(5), k=5)


class TestMarkov:
    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(5)
        graph = build_knn_graph(rng.standard_normal((80, 6)), k=8)
        markov = normalize_markov(graph)
        sums = np.asarray(markov.transitions.sum(axis=1)).ravel()
        assert np.max(np.abs(sums - 1.0)) < 1e-9

    def test_uniform_graph_gives_uniform_chain(self):
        markov = normalize_markov(_uniform_graph(9))
        assert np.allclose(markov.transitions.toarray(), 1.0 / 9, atol=1e-12)

    def test_matches_dense_oracle(self):
        rng = np.random.default_rng(6)
        graph = build_knn_graph(rng.standard_normal((50, 5)), k=6)
        markov = normalize_markov(graph)
        oracle = _dense_markov(graph.weights.toarray())
        assert np.max(np.abs(markov.transitions.toarray() - oracle)) < 1e-12

    def test_disconnected_rejected(self):
        block = np.ones((4, 4))
        weights = sp.block_diag([block, block]).tocsr()
        graph = AffinityGraph(weights=weights, local_scales=np.ones(8), k=3)
        with pytest.raises(EmbeddingError, match="increase k"):
            normalize_markov(graph)


def _two_state_markov(p: float) -> MarkovMatrix:
    w = p / (1.0 - p)
    weights = sp.csr_matrix(np.array([[1.0, w], [w, 1.0]]))
    return normalize_markov(AffinityGraph(weights=weights,
                                          local_scales=np.ones(2), k=1))


class TestEigendecompose:
    def test_leading_pair_is_trivial(self):
        rng = np.random.default_rng(7)
        markov = normalize_markov(build_knn_graph(
            rng.standard_normal((60, 5)), k=8))
        values, psi = eigendecompose(markov, d=3, seed=0)
        assert values[0] == pytest.approx(1.0, abs=1e-9)
        spread = np.max(psi[:, 0]) - np.min(psi[:, 0])
        assert spread < 1e-6 * np.max(np.abs(psi[:, 0]))

    def test_two_state_chain_by_hand(self):
        markov = _two_state_markov(0.25)
        values, psi = eigendecompose(markov, d=1, seed=0)
        assert values[0] == pytest.approx(1.0, abs=1e-12)
        assert values[1] == pytest.approx(1.0 - 2 * 0.25, abs=1e-12)
        assert psi[:, 1] == pytest.approx([np.sqrt(0.5), -np.sqrt(0.5)],
                                          abs=1e-12)

    @pytest.mark.parametrize("seed", [0, 1, 2])
    def test_matches_dense_oracle_n300(self, seed):
        rng = np.random.default_rng(100 + seed)
        pts = rng.standard_normal((300, 10))
        markov = normalize_markov(build_knn_graph(pts, k=10))
        values, psi = eigendecompose(markov, d=3, seed=seed)
        oracle_vals, oracle_psi = _dense_eigs(
            markov.transitions.toarray(), markov.degrees_stage2, 4)
        assert np.max(np.abs(values - oracle_vals)) < 1e-6
        assert np.max(np.abs(psi - oracle_psi)) < 1e-6

    def test_conjugate_orthonormality(self):
        rng = np.random.default_rng(8)
        markov = normalize_markov(build_knn_graph(
            rng.standard_normal((120, 6)), k=10))
        values, psi = eigendecompose(markov, d=3, seed=3)
        u = psi * np.sqrt(markov.degrees_stage2)[:, None]
        u /= np.linalg.norm(u, axis=0)
        gram = u.T @ u
        assert np.max(np.abs(gram - np.eye(4))) < 1e-8


def _cluster_points(size=7, clusters=4, dim=6, seed=9):
    """Coincident-point clusters of equal size.

    With k = 2*size - 1 every node's neighbor list is its cluster mates plus
    the nearest cluster in full (no tie-dependent partial selection), so the
    weight matrix is exactly block-constant with rank <= #clusters.
    """
    rng = np.random.default_rng(seed)
    centers = 4.0 * rng.standard_normal((clusters, dim))
    return np.concatenate([np.tile(c, (size, 1)) for c in centers])


class TestEmbed:
    def test_linear_in_eigenvectors(self):
        rng = np.random.default_rng(10)
        values = np.array([1.0, 0.9, 0.5, 0.2])
        psi = rng.standard_normal((40, 4))
        base = embed(values, psi, d=3)
        doubled = psi.copy()
        doubled[:, 2] *= 2.0
        out = embed(values, doubled, d=3)
        assert np.array_equal(out[:, 1], 2.0 * base[:, 1])
        assert np.array_equal(out[:, [0, 2]], base[:, [0, 2]])

    def test_output_width(self):
        rng = np.random.default_rng(11)
        markov = normalize_markov(build_knn_graph(
            rng.standard_normal((40, 5)), k=6))
        values, psi = eigendecompose(markov, d=3, seed=0)
        assert embed(values, psi, d=3).shape == (40, 3)

    def test_distances_approximate_diffusion_distance(self):
        # Rank-4 chain: three nontrivial pairs carry the whole spectrum, so
        # truncated embedding distances equal true one-step diffusion
        # distances (computed brute-force from the dense transition rows).
        pts = _cluster_points(size=7, clusters=4)
        markov = normalize_markov(build_knn_graph(pts, k=13))
        values, psi = eigendecompose(markov, d=3, seed=1)
        p_dense = markov.transitions.toarray()
        phi0 = markov.degrees_stage2 / markov.degrees_stage2.sum()

        n = pts.shape[0]
        oracle = np.zeros((n, n))
        for i in range(n):
            for j in range(n):
                oracle[i, j] = np.sqrt(np.sum(
                    (p_dense[i] - p_dense[j]) ** 2 / phi0))

        scale = 1.0 / np.sqrt(np.sum(phi0[:, None] * psi ** 2, axis=0))
        coords = embed(values, psi, d=3) * scale[1:][None, :]
        pairs = [(i, j) for i in range(n) for j in range(i + 1, n)
                 if oracle[i, j] > 1e-9]
        pairs.sort(key=lambda ij: oracle[ij])
        for i, j in pairs[:5]:
            d_emb = np.linalg.norm(coords[i] - coords[j])
            assert abs(d_emb - oracle[i, j]) / oracle[i, j] < 0.10


class TestSoftmax:
    def test_symmetry(self):
        assert softmax_coords(np.zeros(3)) == pytest.approx([1 / 3] * 3)

    def test_shift_invariance(self):
        m = np.array([0.2, -1.4, 0.7])
        np.testing.assert_allclose(softmax_coords(m + 17.5),
                                   softmax_coords(m), atol=1e-12)

    def test_direct_evaluation(self):
        out = softmax_coords(np.array([1.0, 0.0, 0.0]))
        e = np.e
        np.testing.assert_allclose(out, [e / (e + 2), 1 / (e + 2), 1 / (e + 2)],
                                   atol=1e-12)
        assert out[0] == pytest.approx(0.57611688, abs=1e-8)

    @given(st.lists(st.floats(-50, 50), min_size=3, max_size=3))
    @settings(max_examples=200, deadline=None)
    def test_simplex_property(self, vals):
        out = softmax_coords(np.array(vals))
        assert np.all((out >= 0.0) & (out <= 1.0))
        assert abs(np.sum(out) - 1.0) < 1e-9


class TestNystrom:
    def _embedding(self, n=150, dim=8, seed=12):
        rng = np.random.default_rng(seed)
        pts = rng.standard_normal((n, dim))
        embedding, _ = fit_diffusion_map(pts, k=10, d=3, seed=0)
        return embedding, pts

    def test_training_point_self_consistency(self):
        embedding, pts = self._embedding()
        for i in (0, 17, 77, 149):
            out = nystrom_extend(embedding, pts[i])
            np.testing.assert_allclose(out, embedding.softmax_coords[i],
                                       atol=1e-6)

    def test_mirror_symmetric_midpoint(self):
        # Two clusters mirrored through the origin; the antisymmetric
        # eigenvector's extension cancels exactly at the midpoint.
        rng = np.random.default_rng(13)
        half = rng.standard_normal((40, 4)) * 0.3 + np.array([3.0, 0, 0, 0])
        pts = np.concatenate([half, -half])
        embedding, _ = fit_diffusion_map(pts, k=10, d=3, seed=0)
        coords = extend_coords(embedding, np.zeros((1, 4)))[0]
        antisym = [j for j in range(3)
                   if abs(np.dot(embedding.basis[:, j + 1],
                                 np.ones(80))) < 1e-6]
        assert antisym, "no antisymmetric eigenvector found"
        assert abs(coords[antisym[0]]) < 1e-6

    def test_continuity(self):
        embedding, pts = self._embedding()
        x = pts[33] + 0.05
        delta = np.full(x.size, 1e-6 / np.sqrt(x.size))
        a = nystrom_extend(embedding, x)
        b = nystrom_extend(embedding, x + delta)
        assert np.max(np.abs(a - b)) < 1e-4

    def test_ill_conditioned_eigenvalue_rejected(self):
        embedding, pts = self._embedding()
        tiny = embedding.eigenvalues.copy()
        tiny[3] = 1e-9
        import dataclasses
        broken = dataclasses.replace(embedding, eigenvalues=tiny)
        with pytest.raises(EmbeddingError, match="ill-conditioned"):
            nystrom_extend(broken, pts[0])


class TestFitDiffusionMap:
    def test_permutation_equivariance(self):
        rng = np.random.default_rng(14)
        pts = rng.standard_normal((70, 6))
        perm = rng.permutation(70)
        _, sm_a = fit_diffusion_map(pts, k=8, d=3, seed=5)
        _, sm_b = fit_diffusion_map(pts[perm], k=8, d=3, seed=5)
        np.testing.assert_allclose(sm_b, sm_a[perm], atol=1e-6)

    def test_subsampling_extends_the_rest(self):
        rng = np.random.default_rng(15)
        pts = rng.standard_normal((120, 5))
        embedding, sm = fit_diffusion_map(pts, k=8, d=3, seed=1, max_points=90)
        assert embedding.reference.points.shape[0] == 90
        assert sm.shape == (120, 3)
        assert np.all(np.abs(sm.sum(axis=1) - 1.0) < 1e-9)

    def test_simplex_rows(self):
        rng = np.random.default_rng(16)
        embedding, sm = fit_diffusion_map(rng.standard_normal((50, 5)),
                                          k=6, d=3, seed=2)
        assert np.all((sm >= 0) & (sm <= 1))
        assert np.max(np.abs(sm.sum(axis=1) - 1.0)) < 1e-9
