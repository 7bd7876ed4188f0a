"""Gaussian set kernels over vertex-embedding sets.

Two sets X, Y of points in R^m are compared by the double sum of Gaussian
evaluations over all cross pairs, which is the inner product of their
(unnormalized) mean maps. Several bandwidths are combined with
non-negative weights.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from numba import njit

SIGMA_MIN = 1e-4

# max entries of a vertex-pair block held in memory at once
_BLOCK_ENTRIES = 4_000_000
# keep per-block backward factors between passes below this many entries
_CACHE_ENTRIES = 12_000_000


@dataclass
class ScaleParams:
    """Bandwidths and non-negative weights of the combined kernel.

    Feasibility (``sigma >= SIGMA_MIN``, ``beta >= 0``) is checked where the
    kernel is evaluated, not on construction, so an optimizer may hold an
    infeasible point until it is projected back.
    """

    sigmas: np.ndarray
    betas: np.ndarray

    def __post_init__(self) -> None:
        self.sigmas = np.atleast_1d(np.asarray(self.sigmas, dtype=np.float64))
        self.betas = np.atleast_1d(np.asarray(self.betas, dtype=np.float64))
        if self.sigmas.shape != self.betas.shape or self.sigmas.ndim != 1 or not len(self.sigmas):
            raise ValueError("sigmas and betas must be equal-length non-empty vectors")

    def validate(self) -> None:
        if not np.all(self.sigmas >= SIGMA_MIN):
            raise ValueError(f"sigma below minimum {SIGMA_MIN}")
        if np.any(self.betas < 0):
            raise ValueError("betas must be non-negative")

    def __len__(self) -> int:
        return len(self.sigmas)

    @classmethod
    def initial(cls, s: int) -> "ScaleParams":
        """Unit weights; bandwidths 1, 1/2, 1/4, ... so that scales start distinct."""
        if s < 1:
            raise ValueError("need at least one scale")
        return cls(2.0 ** -np.arange(s), np.ones(s))


def _check_sigma(sigma: float) -> None:
    if not sigma >= SIGMA_MIN:
        raise ValueError(f"sigma={sigma} below minimum {SIGMA_MIN}")


def _as_set(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValueError("embedding set must be a non-empty (k, m) array")
    return X


def gaussian(u, v, sigma: float) -> float:
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if u.shape != v.shape:
        raise ValueError(f"dimension mismatch: {u.shape} vs {v.shape}")
    _check_sigma(sigma)
    d = u - v
    return float(np.exp(-np.dot(d, d) / (2.0 * sigma * sigma)))


def set_kernel(X, Y, sigma: float) -> float:
    X, Y = _as_set(X), _as_set(Y)
    if X.shape[1] != Y.shape[1]:
        raise ValueError("embedding sets differ in dimension")
    _check_sigma(sigma)
    diff = X[:, None, :] - Y[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return float(np.exp(-sq / (2.0 * sigma * sigma)).sum())


def multiscale_kernel(X, Y, scales: ScaleParams) -> float:
    scales.validate()
    return float(sum(b * set_kernel(X, Y, s) for s, b in zip(scales.sigmas, scales.betas)))


def mean_map_grid(X, sigma: float, grid) -> np.ndarray:
    """Evaluate the mean map of ``X`` (sum of Gaussian bumps) at each grid point."""
    X = _as_set(X)
    grid = np.asarray(grid, dtype=np.float64)
    if grid.ndim == 1:
        grid = grid[None, :]
    if grid.shape[1] != X.shape[1]:
        raise ValueError("grid points and embedding set differ in dimension")
    _check_sigma(sigma)
    diff = grid[:, None, :] - X[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    return np.exp(-sq / (2.0 * sigma * sigma)).sum(axis=1)


@njit(cache=True)
def _finish_sqdist(G, na, nb):
    for a in range(G.shape[0]):
        for b in range(G.shape[1]):
            d = na[a] + nb[b] - 2.0 * G[a, b]
            G[a, b] = d if d > 0.0 else 0.0


def _sqdist(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    G = A @ B.T
    _finish_sqdist(G, (A * A).sum(1), (B * B).sum(1))
    return G


def _row_blocks(offsets: np.ndarray, n_cols: int) -> list[tuple[int, int]]:
    """Split graphs into consecutive row blocks of bounded vertex-pair count."""
    n = len(offsets) - 1
    blocks = []
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and (offsets[stop + 1] - offsets[start]) * n_cols <= _BLOCK_ENTRIES:
            stop += 1
        blocks.append((start, stop))
        start = stop
    return blocks


@njit(cache=True)
def _accumulate(D, E, row_graph, col_off, col_first, upper, q_coef, K, F, Q):
    """Sum vertex-pair kernel values into graph-pair cells.

    D: (r, c) squared distances; E: (s, r, c) per-scale exponentials.
    Row ``a`` belongs to graph ``row_graph[a]``; column graph ``j`` spans
    ``col_off[j]:col_off[j+1]`` and has global index ``col_first + j``.
    With ``upper`` set, column graphs before the row graph are skipped.
    K[l, i, j] += sum E; F[l, i, j] += sum E * D; Q = sum_l q_coef[l] * E[l]
    (only when Q has rows).
    """
    s = E.shape[0]
    want_q = Q.shape[0] > 0
    for a in range(D.shape[0]):
        gi = row_graph[a]
        for j in range(col_off.shape[0] - 1):
            gj = col_first + j
            if upper and gj < gi:
                continue
            for l in range(s):
                k = 0.0
                f = 0.0
                for b in range(col_off[j], col_off[j + 1]):
                    e = E[l, a, b]
                    k += e
                    f += e * D[a, b]
                K[l, gi, gj] += k
                F[l, gi, gj] += f
            if want_q:
                for b in range(col_off[j], col_off[j + 1]):
                    q = 0.0
                    for l in range(s):
                        q += q_coef[l] * E[l, a, b]
                    Q[a, b] = q


@njit(cache=True)
def _weight_pairs(Q, W, row_graph, col_off, col_first, dD, row_sum, col_sum):
    """dD[a, b] = W[g(a), g(b)] * Q[a, b], with row and column sums."""
    for a in range(Q.shape[0]):
        gi = row_graph[a]
        acc = 0.0
        for j in range(col_off.shape[0] - 1):
            w = W[gi, col_first + j]
            for b in range(col_off[j], col_off[j + 1]):
                v = w * Q[a, b]
                dD[a, b] = v
                acc += v
                col_sum[b] += v
        row_sum[a] = acc


def _fold_upper(dK: np.ndarray) -> np.ndarray:
    # K[i,j] and K[j,i] are one computed value: move both partials onto i <= j
    return np.triu(dK + dK.T, 1) + np.diag(np.diag(dK))


class BlockedGram:
    """Gram matrix over every vertex pair, in row blocks of bounded size.

    ``Z`` stacks every vertex embedding; ``offsets[i]:offsets[i+1]`` are the
    rows of set ``i``. Only pairs of sets with ``i <= j`` are evaluated and
    the result is mirrored, so ``K`` is exactly symmetric.
    """

    def __init__(self, Z: np.ndarray, offsets: np.ndarray, scales: ScaleParams):
        scales.validate()
        self.Z = Z
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.scales = scales
        n = len(self.offsets) - 1
        s = len(scales)
        N = Z.shape[0]
        self.graph_of = np.repeat(np.arange(n), np.diff(self.offsets))
        self._coefs = -0.5 / scales.sigmas**2
        q_coef = scales.betas * self._coefs

        K = np.zeros((s, n, n))
        F = np.zeros((s, n, n))
        self._blocks = _row_blocks(self.offsets, N)
        self._cache: list[np.ndarray] | None = []
        cached = 0
        for ga, gb in self._blocks:
            D = self._distances(ga, gb)
            E = np.empty((s,) + D.shape)
            for l in range(s):
                np.multiply(D, self._coefs[l], out=E[l])
                np.exp(E[l], out=E[l])
            Q = np.empty_like(D)
            r0 = self.offsets[ga]
            _accumulate(D, E, self.graph_of[r0:self.offsets[gb]], self.offsets[ga:] - r0, ga, True, q_coef, K, F, Q)
            if self._cache is not None:
                cached += Q.size
                if cached <= _CACHE_ENTRIES:
                    self._cache.append(Q)
                else:
                    self._cache = None
        for l in range(s):
            K[l] += np.triu(K[l], 1).T
        self.per_scale = K
        # sum over vertex pairs of E * D, upper triangle only
        self._dist_weighted = F
        self.K = np.tensordot(scales.betas, K, axes=1)

    def _distances(self, ga: int, gb: int) -> np.ndarray:
        r0, r1 = self.offsets[ga], self.offsets[gb]
        return _sqdist(self.Z[r0:r1], self.Z[r0:])

    def _q_block(self, bi: int) -> np.ndarray:
        if self._cache is not None:
            return self._cache[bi]
        ga, gb = self._blocks[bi]
        D = self._distances(ga, gb)
        s = len(self.scales)
        E = np.empty((s,) + D.shape)
        for l in range(s):
            np.exp(D * self._coefs[l], out=E[l])
        Q = np.empty_like(D)
        r0 = self.offsets[ga]
        n = len(self.offsets) - 1
        junk = np.zeros((s, n, n))
        _accumulate(D, E, self.graph_of[r0:self.offsets[gb]], self.offsets[ga:] - r0, ga, True,
                    self.scales.betas * self._coefs, junk, junk.copy(), Q)
        return Q

    def backward(self, dK: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (dZ, dsigmas, dbetas) given dObjective/dK."""
        W = _fold_upper(dK)
        sig, beta = self.scales.sigmas, self.scales.betas
        dbeta = np.array([np.sum(dK * Kl) for Kl in self.per_scale])
        dsig = beta / sig**3 * np.array([np.sum(W * F) for F in self._dist_weighted])
        dZ = np.zeros_like(self.Z)
        for bi, (ga, gb) in enumerate(self._blocks):
            Q = self._q_block(bi)
            r0, r1 = self.offsets[ga], self.offsets[gb]
            dD = np.empty_like(Q)
            rs = np.empty(Q.shape[0])
            cs = np.zeros(Q.shape[1])
            _weight_pairs(Q, W, self.graph_of[r0:r1], self.offsets[ga:] - r0, ga, dD, rs, cs)
            R, C = self.Z[r0:r1], self.Z[r0:]
            dZ[r0:r1] += 2.0 * (rs[:, None] * R - dD @ C)
            dZ[r0:] += 2.0 * (cs[:, None] * C - dD.T @ R)
        return dZ, dsig, dbeta


class CountedGram:
    """Gram matrix over distinct points with per-set multiplicities.

    ``counts[i, u]`` is how often point ``points[u]`` occurs in set ``i``, so
    set ``i`` vs set ``j`` is ``counts[i] @ E @ counts[j]`` with ``E`` the
    point-level Gaussian matrix. ``rep[u]`` is the row of the full embedding
    matrix that ``points[u]`` was taken from; gradients are routed there.
    """

    def __init__(self, Z: np.ndarray, rep: np.ndarray, counts: np.ndarray, scales: ScaleParams):
        scales.validate()
        self.Z = Z
        self.rep = np.asarray(rep, dtype=np.int64)
        self.counts = counts
        self.scales = scales
        self.points = Z[self.rep]
        self._coefs = -0.5 / scales.sigmas**2
        D = _sqdist(self.points, self.points)
        self.D = np.triu(D) + np.triu(D, 1).T
        self.E = [np.exp(self.D * c) for c in self._coefs]
        K = np.empty((len(scales), counts.shape[0], counts.shape[0]))
        for l, E in enumerate(self.E):
            Kl = counts @ E @ counts.T
            K[l] = np.triu(Kl) + np.triu(Kl, 1).T
        self.per_scale = K
        self.K = np.tensordot(scales.betas, K, axes=1)

    def backward(self, dK: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Return (dZ, dsigmas, dbetas) given dObjective/dK."""
        W = _fold_upper(dK)
        sig, beta = self.scales.sigmas, self.scales.betas
        M = self.counts.T @ W @ self.counts
        dbeta = np.array([np.sum(dK * Kl) for Kl in self.per_scale])
        dsig = np.empty(len(sig))
        dD = np.zeros_like(self.D)
        for l, E in enumerate(self.E):
            T = beta[l] * M * E
            dsig[l] = np.sum(T * self.D) / sig[l] ** 3
            dD += self._coefs[l] * T
        S = dD + dD.T
        P = self.points
        dZ = np.zeros_like(self.Z)
        dZ[self.rep] = 2.0 * (S.sum(1)[:, None] * P - S @ P)
        return dZ, dsig, dbeta


# distinct-point count above which the dense counted form is abandoned
_DENSE_POINTS = 5000


def batch_gram(Z: np.ndarray, offsets: np.ndarray, scales: ScaleParams, classes: np.ndarray | None = None):
    """Differentiable Gram matrix of the sets stacked in ``Z``.

    ``classes[a]`` labels vertex rows that are guaranteed equal for every
    parameter value (e.g. by structural refinement); rows sharing a class
    are evaluated once. Without classes, every row is its own point.
    """
    offsets = np.asarray(offsets, dtype=np.int64)
    if classes is not None:
        classes = np.asarray(classes)
        _, rep, inverse = np.unique(classes, return_index=True, return_inverse=True)
        if len(rep) <= _DENSE_POINTS:
            graph_of = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
            counts = np.zeros((len(offsets) - 1, len(rep)))
            np.add.at(counts, (graph_of, inverse.ravel()), 1.0)
            return CountedGram(Z, rep, counts, scales)
    return BlockedGram(Z, offsets, scales)


def _dedup(Z: np.ndarray, offsets: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct rows of ``Z`` and the per-set multiplicity matrix."""
    points, inverse = np.unique(Z, axis=0, return_inverse=True)
    graph_of = np.repeat(np.arange(len(offsets) - 1), np.diff(offsets))
    counts = np.zeros((len(offsets) - 1, len(points)))
    np.add.at(counts, (graph_of, inverse.ravel()), 1.0)
    return points, counts


def _stack_sets(sets: Sequence) -> tuple[np.ndarray, np.ndarray]:
    arrs = [_as_set(X) for X in sets]
    if not arrs:
        raise ValueError("no embedding sets")
    m = arrs[0].shape[1]
    if any(a.shape[1] != m for a in arrs):
        raise ValueError("embedding sets differ in dimension")
    offsets = np.concatenate([[0], np.cumsum([len(a) for a in arrs])])
    return np.vstack(arrs), offsets


def gram(sets: Sequence, scales: ScaleParams) -> np.ndarray:
    Z, offsets = _stack_sets(sets)
    points, counts = _dedup(Z, offsets)
    if len(points) <= _DENSE_POINTS:
        return CountedGram(points, np.arange(len(points)), counts, scales).K
    return BlockedGram(Z, offsets, scales).K


def cross_gram(sets_a: Sequence, sets_b: Sequence, scales: ScaleParams) -> np.ndarray:
    """Kernel values between every set of ``sets_a`` (rows) and ``sets_b`` (columns)."""
    Za, off_a = _stack_sets(sets_a)
    Zb, off_b = _stack_sets(sets_b)
    if Za.shape[1] != Zb.shape[1]:
        raise ValueError("embedding sets differ in dimension")
    scales.validate()
    s = len(scales)
    coefs = -0.5 / scales.sigmas**2
    Pa, Ca = _dedup(Za, off_a)
    Pb, Cb = _dedup(Zb, off_b)
    if len(Pa) * len(Pb) <= _DENSE_POINTS**2:
        D = _sqdist(Pa, Pb)
        return sum(beta * (Ca @ np.exp(D * c) @ Cb.T) for beta, c in zip(scales.betas, coefs))
    row_graph = np.repeat(np.arange(len(off_a) - 1), np.diff(off_a))
    K = np.zeros((s, len(off_a) - 1, len(off_b) - 1))
    F = np.zeros_like(K)
    no_q = np.empty((0, 0))
    for ga, gb in _row_blocks(off_a, Zb.shape[0]):
        r0, r1 = off_a[ga], off_a[gb]
        D = _sqdist(Za[r0:r1], Zb)
        E = np.empty((s,) + D.shape)
        for l in range(s):
            np.exp(D * coefs[l], out=E[l])
        _accumulate(D, E, row_graph[r0:r1], off_b, 0, False, coefs, K, F, no_q)
    return np.tensordot(scales.betas, K, axes=1)
