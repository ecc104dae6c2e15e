"""Diffusion-map embedding: locally scaled kNN graph, two-stage Markov
normalization, sparse eigendecomposition, and out-of-sample extension.

The affinity kernel is an RBF with a per-edge scale equal to the geometric
mean of the two endpoints' distances to their k-th nearest neighbor. The
kernel is normalized twice (degree on both sides, then row-stochastic) so
the embedding approximates the Laplace-Beltrami operator and is insensitive
to sampling density. Eigenpairs come from Lanczos iteration with full
reorthogonalization on the symmetric conjugate of the transition matrix.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal
from scipy.sparse.csgraph import connected_components

from .errors import EmbeddingError

DEFAULT_KNN = 10
DEFAULT_DIM = 3
MAX_EMBED_POINTS = 6000
_ZERO_DIST = 1e-12
_MIN_EIGENVALUE = 1e-8


@dataclass(frozen=True)
class AffinityGraph:
    weights: sp.csr_matrix
    local_scales: np.ndarray
    k: int

    @property
    def n_nodes(self) -> int:
        return self.weights.shape[0]


@dataclass(frozen=True)
class MarkovMatrix:
    transitions: sp.csr_matrix
    degrees_stage1: np.ndarray
    degrees_stage2: np.ndarray


@dataclass(frozen=True)
class NystromReference:
    """Everything needed to extend the embedding to unseen points."""

    points: np.ndarray
    local_scales: np.ndarray
    degrees_stage1: np.ndarray
    k: int


@dataclass(frozen=True)
class DiffusionEmbedding:
    eigenvalues: np.ndarray      # (d+1,), leading entry ~ 1
    basis: np.ndarray            # (N, d+1) unit-norm right eigenvectors
    coords: np.ndarray           # (N, d) eigenvalue-scaled coordinates
    softmax_coords: np.ndarray   # (N, d) rows on the probability simplex
    reference: NystromReference

    @property
    def dim(self) -> int:
        return self.coords.shape[1]


def _pairwise_sq_dists(a: np.ndarray, b: np.ndarray,
                       block: int = 512) -> np.ndarray:
    """Blocked squared Euclidean distances.

    Near-zero entries are recomputed by direct differencing: the fast
    inner-product form cancels catastrophically there, and coincident
    points must come out exactly zero.
    """
    out = np.empty((a.shape[0], b.shape[0]))
    b_sq = np.sum(b * b, axis=1)
    for lo in range(0, a.shape[0], block):
        hi = min(lo + block, a.shape[0])
        chunk = a[lo:hi]
        d = (np.sum(chunk * chunk, axis=1)[:, None] + b_sq[None, :]
             - 2.0 * chunk @ b.T)
        d = np.clip(d, 0.0, None)
        rows, cols = np.nonzero(d < 1e-9)
        if rows.size:
            diff = chunk[rows] - b[cols]
            d[rows, cols] = np.sum(diff * diff, axis=1)
        out[lo:hi] = d
    return out


def build_knn_graph(points: np.ndarray, k: int = DEFAULT_KNN) -> AffinityGraph:
    """Locally scaled RBF affinities restricted to the union of kNN relations.

    sigma_i is the distance to the k-th nearest neighbor (the smallest
    nonzero neighbor distance if duplicates make it zero). An edge (i, j)
    survives iff j is among i's k nearest or vice versa; self-weights are 1.
    """
    x = np.asarray(points, dtype=np.float64)
    if x.ndim != 2:
        raise EmbeddingError("expected an N x D point matrix")
    n = x.shape[0]
    if n <= k:
        raise EmbeddingError(f"need more than k={k} points, got {n}")

    d2 = _pairwise_sq_dists(x, x)
    np.fill_diagonal(d2, np.inf)
    dist = np.sqrt(d2)
    dist[dist < _ZERO_DIST] = 0.0  # coincident points, modulo cancellation

    order = np.argpartition(dist, k - 1, axis=1)[:, :k]
    kth = np.partition(dist, k - 1, axis=1)[:, k - 1]

    scales = kth.copy()
    if np.any(scales == 0.0):
        finite = np.where(np.isfinite(dist), dist, np.inf)
        nonzero = np.where(finite > 0.0, finite, np.inf)
        smallest_nonzero = np.min(nonzero, axis=1)
        zero_rows = scales == 0.0
        if np.any(~np.isfinite(smallest_nonzero[zero_rows])):
            raise EmbeddingError("degenerate geometry: all points coincide")
        scales[zero_rows] = smallest_nonzero[zero_rows]

    rows = np.repeat(np.arange(n), k)
    cols = order.reshape(-1)
    w = np.exp(-dist[rows, cols] ** 2 / (scales[rows] * scales[cols]))
    directed = sp.csr_matrix((w, (rows, cols)), shape=(n, n))
    symmetric = directed.maximum(directed.T)
    symmetric = symmetric.tolil()
    symmetric.setdiag(1.0)
    return AffinityGraph(weights=symmetric.tocsr(), local_scales=scales, k=k)


def normalize_markov(graph: AffinityGraph) -> MarkovMatrix:
    """Two-stage normalization to a row-stochastic transition matrix."""
    w = graph.weights
    n_comp, _ = connected_components(w, directed=False)
    if n_comp != 1:
        raise EmbeddingError(
            f"graph has {n_comp} components: increase k or data too fragmented")
    d1 = np.asarray(w.sum(axis=1)).ravel()
    inv_d1 = sp.diags(1.0 / d1)
    w_tilde = inv_d1 @ w @ inv_d1
    d2 = np.asarray(w_tilde.sum(axis=1)).ravel()
    p = sp.diags(1.0 / d2) @ w_tilde
    return MarkovMatrix(transitions=p.tocsr(), degrees_stage1=d1,
                        degrees_stage2=d2)


def _lanczos(matvec, n: int, num_eigs: int, seed: int,
             max_iter: int, tol: float = 1e-10):
    """Lanczos with full reorthogonalization; returns the top ``num_eigs``
    eigenpairs by magnitude of a symmetric operator."""
    rng = np.random.default_rng(seed)
    q = rng.standard_normal(n)
    q /= np.linalg.norm(q)
    basis = np.zeros((n, min(max_iter, n)))
    alphas, betas = [], []
    basis[:, 0] = q
    beta = 0.0
    q_prev = np.zeros(n)
    for j in range(min(max_iter, n)):
        u = matvec(basis[:, j])
        alpha = float(basis[:, j] @ u)
        alphas.append(alpha)
        r = u - alpha * basis[:, j] - beta * q_prev
        # Full reorthogonalization, applied twice for stability.
        r -= basis[:, :j + 1] @ (basis[:, :j + 1].T @ r)
        r -= basis[:, :j + 1] @ (basis[:, :j + 1].T @ r)
        beta = float(np.linalg.norm(r))
        m = j + 1
        if m >= num_eigs:
            theta, y = eigh_tridiagonal(np.array(alphas),
                                        np.array(betas[:m - 1]))
            top = np.argsort(-np.abs(theta))[:num_eigs]
            residuals = np.abs(beta * y[-1, top])
            if np.all(residuals < tol) or m == n:
                vecs = basis[:, :m] @ y[:, top]
                return theta[top], vecs
        if beta < 1e-14:
            # Invariant subspace: restart with a fresh orthogonal direction.
            r = rng.standard_normal(n)
            r -= basis[:, :j + 1] @ (basis[:, :j + 1].T @ r)
            beta = float(np.linalg.norm(r))
            if beta < 1e-14:
                raise EmbeddingError("eigensolver failed: basis exhausted")
            betas.append(0.0)
        else:
            betas.append(beta)
        q_prev = basis[:, j]
        if j + 1 < basis.shape[1]:
            basis[:, j + 1] = r / beta
    raise EmbeddingError("eigensolver failed: no convergence at iteration cap")


def _fix_signs(vectors: np.ndarray) -> np.ndarray:
    """Make the largest-magnitude entry of each column positive.

    Near-ties resolve to the first qualifying index so the convention is
    stable against last-ulp noise on symmetric eigenvectors.
    """
    mags = np.abs(vectors)
    threshold = mags.max(axis=0) * (1.0 - 1e-9)
    idx = np.argmax(mags >= threshold[None, :], axis=0)
    signs = np.sign(vectors[idx, np.arange(vectors.shape[1])])
    signs[signs == 0] = 1.0
    return vectors * signs


def eigendecompose(markov: MarkovMatrix, d: int = DEFAULT_DIM,
                   seed: int = 0, max_iter: int = 400,
                   tol: float = 1e-10):
    """Top d+1 eigenpairs of the transition matrix by eigenvalue magnitude.

    Works on the symmetric conjugate, then maps back to right eigenvectors,
    each normalized to unit Euclidean norm with its largest-magnitude entry
    positive.
    """
    p = markov.transitions
    n = p.shape[0]
    if d + 1 > n:
        raise EmbeddingError("d + 1 exceeds the number of points")
    sqrt_d2 = np.sqrt(markov.degrees_stage2)
    conjugate = sp.diags(sqrt_d2) @ p @ sp.diags(1.0 / sqrt_d2)
    conjugate = (conjugate + conjugate.T) * 0.5
    conjugate = conjugate.tocsr()

    values, vectors = _lanczos(lambda v: conjugate @ v, n, d + 1,
                               seed=seed, max_iter=min(max_iter, n), tol=tol)
    psi = vectors / sqrt_d2[:, None]
    psi /= np.linalg.norm(psi, axis=0)
    psi = _fix_signs(psi)

    order = np.argsort(-np.abs(values))
    values, psi = values[order], psi[:, order]
    if np.max(np.abs(values)) > 1.0 + 1e-6:
        raise EmbeddingError("eigenvalue magnitude exceeds 1: invalid transition matrix")
    if np.any(values <= 0.0):
        warnings.warn("retained nonpositive eigenvalue(s) in diffusion spectrum",
                      RuntimeWarning, stacklevel=2)
    return values, psi


def embed(eigenvalues: np.ndarray, eigenvectors: np.ndarray,
          d: int = DEFAULT_DIM) -> np.ndarray:
    """Eigenvalue-scaled coordinates; the trivial leading pair is dropped."""
    return eigenvectors[:, 1:d + 1] * eigenvalues[1:d + 1][None, :]


def softmax_coords(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max-subtraction; rows land on the simplex."""
    m = np.asarray(m, dtype=np.float64)
    shifted = m - np.max(m, axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / np.sum(e, axis=-1, keepdims=True)


def fit_diffusion_map(points: np.ndarray, k: int = DEFAULT_KNN,
                      d: int = DEFAULT_DIM, seed: int = 0,
                      max_points: int = MAX_EMBED_POINTS):
    """Build the embedding, subsampling the graph when the set is large.

    Returns ``(embedding, softmax_all)`` where ``softmax_all`` holds simplex
    coordinates for every input row (graph rows exactly, the remainder by
    out-of-sample extension).
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if n > max_points:
        rng = np.random.default_rng(seed)
        ref_idx = np.sort(rng.choice(n, size=max_points, replace=False))
    else:
        ref_idx = np.arange(n)
    refs = x[ref_idx]

    graph = build_knn_graph(refs, k=k)
    markov = normalize_markov(graph)
    values, psi = eigendecompose(markov, d=d, seed=seed)
    coords = embed(values, psi, d=d)
    embedding = DiffusionEmbedding(
        eigenvalues=values,
        basis=psi,
        coords=coords,
        softmax_coords=softmax_coords(coords),
        reference=NystromReference(points=refs,
                                   local_scales=graph.local_scales,
                                   degrees_stage1=markov.degrees_stage1,
                                   k=k),
    )
    softmax_all = np.empty((n, d))
    softmax_all[ref_idx] = embedding.softmax_coords
    rest = np.setdiff1d(np.arange(n), ref_idx, assume_unique=True)
    if rest.size:
        softmax_all[rest] = extend_many(embedding, x[rest])
    return embedding, softmax_all


def extend_coords(embedding: DiffusionEmbedding, x: np.ndarray) -> np.ndarray:
    """Out-of-sample eigenvalue-scaled coordinates for each row of ``x``.

    Reconstructs the training kernel row for each query: RBF weights with a
    query-side scale from the k-th nearest nonzero reference distance, kept
    where the reference is among the query's k nearest or the query falls
    inside the reference's own scale (mirroring the union symmetrization),
    then the same two-stage normalization restricted to the row.
    """
    ref = embedding.reference
    q = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if np.any(np.abs(embedding.eigenvalues[1:]) < _MIN_EIGENVALUE):
        raise EmbeddingError("extension ill-conditioned: eigenvalue below 1e-8")
    dist = np.sqrt(_pairwise_sq_dists(q, ref.points))
    dist[dist < _ZERO_DIST] = 0.0
    k = ref.k

    nonzero = np.where(dist > _ZERO_DIST, dist, np.inf)
    sorted_nz = np.sort(nonzero, axis=1)
    sigma_q = sorted_nz[:, k - 1]
    # Queries with fewer than k distinct references fall back to the
    # nearest nonzero distance; fully duplicated queries never use sigma.
    fallback = sorted_nz[:, 0]
    bad = ~np.isfinite(sigma_q)
    sigma_q[bad] = np.where(np.isfinite(fallback[bad]), fallback[bad], 1.0)

    keep = dist <= _ZERO_DIST
    kth_col = np.argpartition(nonzero, k - 1, axis=1)[:, :k]
    keep[np.repeat(np.arange(q.shape[0]), k), kth_col.reshape(-1)] = True
    keep |= dist <= ref.local_scales[None, :]

    w = np.exp(-dist ** 2 / (sigma_q[:, None] * ref.local_scales[None, :]))
    w = np.where(keep, w, 0.0)
    w_tilde = w / ref.degrees_stage1[None, :]
    p = w_tilde / np.sum(w_tilde, axis=1, keepdims=True)
    return p @ embedding.basis[:, 1:]


def extend_many(embedding: DiffusionEmbedding, x: np.ndarray) -> np.ndarray:
    """Out-of-sample softmax coordinates for each row of ``x``."""
    return softmax_coords(extend_coords(embedding, x))


def nystrom_extend(embedding: DiffusionEmbedding, x: np.ndarray) -> np.ndarray:
    """Softmax coordinates of a single out-of-sample point."""
    return extend_many(embedding, np.asarray(x)[None, :])[0]


def write_embedding_csv(embedding: DiffusionEmbedding, path) -> None:
    coords, sm = embedding.coords, embedding.softmax_coords
    with open(path, "w") as fh:
        fh.write("index,m1,m2,m3,sm1,sm2,sm3\n")
        for i in range(coords.shape[0]):
            vals = list(coords[i]) + list(sm[i])
            fh.write(str(i) + "," + ",".join(repr(v) for v in vals) + "\n")
