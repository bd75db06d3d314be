"""Replay buffer of demonstrated (normalised) states with exact spatial queries.

Points are rows of a float array. When the buffer stores state-action pairs the
first ``state_dim`` columns are the state; queries may use either the full
vector or the state part only.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import DimensionMismatch, EmptyBuffer, FormatError, InvalidK

BACKENDS = ("kdtree", "brute")
BUFFER_FORMAT = "cdrb-buffer"
BUFFER_VERSION = 1

# Uniform candidates tried per query per rejection round.
REJECTION_TRIES = 16
# Balls with fewer members than this are enumerated through the k-d tree.
ENUM_LIMIT = 64
# Cells per axis of the grid over the first two coordinates used to draw candidates.
GRID_CELLS = 32


class _PositionGrid:
    """Points bucketed by a uniform grid over their first two coordinates.

    ``candidates`` draws uniformly from the points whose cell lies in the cell
    rectangle covering a query's ball, which contains every ball member.
    """

    def __init__(self, P: np.ndarray, cells: int = GRID_CELLS):
        self.cells = cells
        self.lo = P[:, :2].min(axis=0)
        self.h = np.maximum((P[:, :2].max(axis=0) - self.lo) / cells, 1e-12)
        key = self._cell(P[:, :2]) @ np.array([cells, 1])
        self.perm = np.argsort(key, kind="stable")
        self.offsets = np.concatenate([[0], np.cumsum(np.bincount(key, minlength=cells * cells))])

    def _cell(self, X: np.ndarray) -> np.ndarray:
        return np.clip(np.floor((X - self.lo) / self.h), 0, self.cells - 1).astype(np.int64)

    def candidates(self, C: np.ndarray, eps: np.ndarray, rng: np.random.Generator, tries: int) -> np.ndarray:
        pad = (eps * (1 + 1e-9) + 1e-12)[:, None]
        a = self._cell(C[:, :2] - pad)
        b = self._cell(C[:, :2] + pad)
        n_rows = b[:, 0] - a[:, 0] + 1
        R = int(n_rows.max())
        rows = np.minimum(a[:, :1] + np.arange(R), self.cells - 1)
        start = self.offsets[rows * self.cells + a[:, 1:]]
        end = self.offsets[rows * self.cells + b[:, 1:] + 1]
        length = np.where(np.arange(R) < n_rows[:, None], end - start, 0)
        cum = np.cumsum(length, axis=1)
        r = np.floor(rng.random((len(C), tries)) * cum[:, -1:]).astype(np.int64)
        seg = np.minimum((r[:, :, None] >= cum[:, None, :]).sum(axis=2), R - 1)
        before = np.take_along_axis(cum - length, seg, axis=1)
        pos = np.take_along_axis(start, seg, axis=1) + r - before
        # a query whose rectangle is empty gets arbitrary candidates; none can be in its ball
        return self.perm[np.clip(pos, 0, len(self.perm) - 1)]


class ReplayBuffer:
    def __init__(
        self,
        points: np.ndarray,
        state_dim: int | None = None,
        d_max: float | None = None,
        backend: str = "kdtree",
        source_index: np.ndarray | None = None,
    ):
        pts = np.asarray(points, dtype=float)
        if pts.ndim != 2 or len(pts) == 0:
            raise EmptyBuffer("buffer needs a non-empty (n, d) point array")
        if backend not in BACKENDS:
            raise ValueError(f"unknown backend {backend!r}; choose from {BACKENDS}")
        self.points = pts
        self.points.setflags(write=False)
        self.dim = pts.shape[1]
        self.state_dim = self.dim if state_dim is None else int(state_dim)
        if d_max is None:
            span = pts.max(axis=0) - pts.min(axis=0)
            d_max = 0.5 * float(np.sqrt(np.sum(span**2)))
        # a single point (or all duplicates) has zero extent
        self.d_max = float(d_max) if d_max > 0 else 1.0
        self.backend = backend
        self.source_index = np.arange(len(pts)) if source_index is None else np.asarray(source_index)
        self._trees: dict[int, cKDTree] = {}
        self._grid: _PositionGrid | None = None

    # -- basics ---------------------------------------------------------------

    def __len__(self) -> int:
        return len(self.points)

    @property
    def has_actions(self) -> bool:
        return self.dim > self.state_dim

    def _cols(self, qdim: int) -> np.ndarray:
        if qdim == self.dim:
            return self.points
        if qdim == self.state_dim:
            return self.points[:, : self.state_dim]
        raise DimensionMismatch(f"query dim {qdim} matches neither {self.dim} nor {self.state_dim}")

    def _tree(self, qdim: int) -> cKDTree:
        if qdim not in self._trees:
            self._trees[qdim] = cKDTree(self._cols(qdim))
        return self._trees[qdim]

    def _position_grid(self) -> _PositionGrid | None:
        if self._grid is None and self.dim >= 2:
            self._grid = _PositionGrid(self.points)
        return self._grid

    def contains(self, X: np.ndarray) -> np.ndarray:
        """Exact membership test for rows of ``X`` (full point vectors)."""
        X = np.asarray(X, dtype=float)
        flat = X.reshape(-1, X.shape[-1])
        d, idx = self._tree(flat.shape[1]).query(flat, k=1)
        ok = (d == 0) & np.all(self._cols(flat.shape[1])[idx] == flat, axis=1)
        return ok.reshape(X.shape[:-1])

    # -- nearest --------------------------------------------------------------

    def nearest_index(self, queries: np.ndarray) -> np.ndarray:
        """Index of the nearest point for each query row; ties go to the lowest index."""
        Q = np.atleast_2d(np.asarray(queries, dtype=float))
        P = self._cols(Q.shape[1])
        if self.backend == "brute" or len(P) < 3:
            return _brute_nearest(P, Q)
        tree = self._tree(Q.shape[1])
        d, idx = tree.query(Q, k=2)
        out = idx[:, 0].copy()
        tied = np.flatnonzero(d[:, 1] - d[:, 0] <= 1e-12 * (1.0 + d[:, 0]))
        for q in tied:
            cand = np.asarray(tree.query_ball_point(Q[q], d[q, 1] * (1 + 1e-9) + 1e-300), dtype=int)
            cand.sort()
            d2 = np.sum((P[cand] - Q[q]) ** 2, axis=1)
            out[q] = cand[np.argmin(d2)]
        return out

    def nearest(self, query) -> np.ndarray:
        q = np.asarray(query, dtype=float)
        return self.points[self.nearest_index(q[None, :])[0]]

    # -- radius queries -------------------------------------------------------

    def ball_indices(self, center, eps: float) -> np.ndarray:
        """Sorted indices of all points within ``eps`` (closed ball) of ``center``."""
        c = np.asarray(center, dtype=float)
        P = self._cols(len(c))
        if self.backend == "brute":
            return np.flatnonzero(np.sum((P - c) ** 2, axis=1) <= eps * eps)
        return np.sort(np.asarray(self._tree(len(c)).query_ball_point(c, eps), dtype=int))

    def ball_sample_indices(self, centers: np.ndarray, eps, rng: np.random.Generator) -> np.ndarray:
        """For each centre draw an index uniformly from its ``eps``-ball.

        Empty balls fall back to the nearest point. The k-d tree backend is exact
        but layered for speed: rejection from the whole buffer (cheap for large
        balls), then from the grid cells around each ball, then enumeration of
        balls with fewer than ``ENUM_LIMIT`` members. Accepting the first uniform
        candidate that lands inside the ball is an exactly uniform draw, so every
        layer preserves the distribution.
        """
        C = np.atleast_2d(np.asarray(centers, dtype=float))
        n_q = len(C)
        eps = np.broadcast_to(np.asarray(eps, dtype=float), (n_q,))
        if np.any(eps < 0):
            raise ValueError("eps must be non-negative")
        P = self._cols(C.shape[1])
        out = np.full(n_q, -1, dtype=np.int64)
        if self.backend == "brute":
            u = rng.random(n_q)
            step = _rows_per_chunk(len(P))
            for lo in range(0, n_q, step):
                hi = min(lo + step, n_q)
                d2 = _sqdist(C[lo:hi], P)
                inside = d2 <= (eps[lo:hi, None] ** 2)
                counts = inside.sum(axis=1)
                csum = np.cumsum(inside, axis=1)
                rank = np.floor(u[lo:hi] * counts).astype(np.int64)
                for r in np.flatnonzero(counts):
                    out[lo + r] = np.searchsorted(csum[r], rank[r] + 1)
            empty = out < 0
            if empty.any():
                out[empty] = self.nearest_index(C[empty])
            return out

        def uniform(Q, e, m):
            return rng.integers(len(P), size=(len(Q), m))

        grid = self._position_grid()
        draw = uniform if grid is None else (lambda Q, e, m: grid.candidates(Q, e, rng, m))
        rest = _reject(C, eps, np.arange(n_q), P, out, uniform)
        rest = _reject(C, eps, rest, P, out, draw, rounds=2)
        if not len(rest):
            return out
        k = min(ENUM_LIMIT, len(P))
        dist = np.empty((len(rest), k))
        nbr = np.empty((len(rest), k), dtype=np.int64)
        er = eps[rest]
        tree = self._tree(C.shape[1])
        for e in np.unique(er):
            sel = er == e
            # padding the bound keeps boundary points; membership is re-checked exactly below
            d, j = tree.query(C[rest[sel]], k=k, distance_upper_bound=float(e) * (1 + 1e-9) + 1e-300)
            dist[sel], nbr[sel] = d.reshape(-1, k), j.reshape(-1, k)
        full = np.isfinite(dist[:, -1]) if k < len(P) else np.zeros(len(rest), dtype=bool)
        valid = nbr < len(P)
        safe = np.where(valid, nbr, 0)
        d2 = np.sum((P[safe] - C[rest, None, :]) ** 2, axis=2)
        inside = valid & (d2 <= eps[rest, None] ** 2) & ~full[:, None]
        # complete balls are enumerated in index order so draws do not depend on tie order
        keyed = np.where(inside, safe, len(P))
        keyed.sort(axis=1)
        counts = inside.sum(axis=1)
        pick = np.floor(rng.random(len(rest)) * counts).astype(np.int64)
        has = counts > 0
        out[rest[has]] = keyed[has, pick[has]]
        big = rest[full]
        while len(big):
            big = _reject(C, eps, big, P, out, draw)
        empty = out < 0
        if empty.any():
            out[empty] = self.nearest_index(C[empty])
        return out

    def ball_sample(self, center, eps: float, rng: np.random.Generator) -> np.ndarray:
        c = np.asarray(center, dtype=float)
        return self.points[self.ball_sample_indices(c[None, :], eps, rng)[0]]

    def ranked_pair_indices(
        self, centers: np.ndarray, eps_hi, eps_lo, u: np.ndarray
    ) -> tuple[np.ndarray, np.ndarray]:
        """Quantile-coupled draws from two nested balls around each centre.

        Ball members are ordered by (distance, index); the same uniform ``u``
        picks rank ``floor(u * n)`` in the ``eps_hi`` ball and in its
        ``eps_lo`` prefix. Empty balls fall back to the nearest point.
        """
        C = np.atleast_2d(np.asarray(centers, dtype=float))
        P = self._cols(C.shape[1])
        n_q = len(C)
        hi = np.broadcast_to(np.asarray(eps_hi, dtype=float), (n_q,))
        lo = np.broadcast_to(np.asarray(eps_lo, dtype=float), (n_q,))
        nearest = self.nearest_index(C)
        a = nearest.copy()
        b = nearest.copy()
        for q in range(n_q):
            if self.backend == "brute":
                members = np.flatnonzero(np.sum((P - C[q]) ** 2, axis=1) <= hi[q] ** 2)
            else:
                members = np.asarray(self._tree(C.shape[1]).query_ball_point(C[q], hi[q]), dtype=np.int64)
            if len(members) == 0:
                continue
            d2 = np.sum((P[members] - C[q]) ** 2, axis=1)
            order = np.lexsort((members, d2))
            members, d2 = members[order], d2[order]
            a[q] = members[int(u[q] * len(members))]
            n_lo = int(np.searchsorted(d2, lo[q] ** 2, side="right"))
            if n_lo:
                b[q] = members[int(u[q] * n_lo)]
        return a, b

    # -- serialisation --------------------------------------------------------

    def save(self, path: str | Path, normalization: dict | None = None) -> None:
        header = {
            "format": BUFFER_FORMAT,
            "version": BUFFER_VERSION,
            "record": "header",
            "count": len(self),
            "dim": self.dim,
            "state_dim": self.state_dim,
            "d_max": self.d_max,
            "backend": self.backend,
        }
        if normalization:
            header["normalization"] = normalization
        lines = [json.dumps(header)]
        for i, p in zip(self.source_index, self.points):
            rec = {"record": "point", "source": int(i), "state": [float(v) for v in p[: self.state_dim]]}
            if self.has_actions:
                rec["action"] = [float(v) for v in p[self.state_dim :]]
            lines.append(json.dumps(rec))
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def load(cls, path: str | Path, backend: str | None = None) -> "ReplayBuffer":
        try:
            lines = Path(path).read_text().splitlines()
            header = json.loads(lines[0])
            if header.get("format") != BUFFER_FORMAT:
                raise FormatError(f"{path} is not a buffer file")
            if header.get("version") != BUFFER_VERSION:
                raise FormatError(f"buffer version {header.get('version')} unsupported")
            pts, src = [], []
            for line in lines[1:]:
                rec = json.loads(line)
                pts.append(rec["state"] + rec.get("action", []))
                src.append(rec["source"])
            return cls(
                np.array(pts, dtype=float),
                state_dim=header["state_dim"],
                d_max=header["d_max"],
                backend=backend or header.get("backend", "kdtree"),
                source_index=np.array(src),
            )
        except OSError as exc:
            raise FormatError(f"cannot read buffer {path}: {exc}") from exc
        except (IndexError, KeyError, ValueError, TypeError) as exc:
            raise FormatError(f"corrupt buffer {path}: {exc}") from exc


def build(
    states: np.ndarray,
    actions: np.ndarray | None = None,
    d_max: float | None = None,
    backend: str = "kdtree",
) -> ReplayBuffer:
    """Buffer over ``states`` (optionally concatenated with ``actions``)."""
    S = np.asarray(states, dtype=float)
    if S.size == 0:
        raise EmptyBuffer("cannot build an empty buffer")
    if S.ndim != 2:
        raise DimensionMismatch("states must be a 2-d array of uniform dimension")
    if actions is None:
        return ReplayBuffer(S, d_max=d_max, backend=backend)
    A = np.asarray(actions, dtype=float).reshape(len(S), -1) if len(actions) == len(S) else None
    if A is None:
        raise DimensionMismatch("need exactly one action per state")
    return ReplayBuffer(np.concatenate([S, A], axis=1), state_dim=S.shape[1], d_max=d_max, backend=backend)


def _reject(C, eps, rest, P, out, draw, rounds: int = 1, tries: int = REJECTION_TRIES) -> np.ndarray:
    """Rejection rounds for queries ``rest``; fills ``out`` and returns the unresolved ones."""
    for _ in range(rounds):
        if not len(rest):
            break
        cand = draw(C[rest], eps[rest], tries)
        d2 = np.sum((P[cand] - C[rest, None, :]) ** 2, axis=2)
        ok = d2 <= (eps[rest, None] ** 2)
        hit = ok.any(axis=1)
        out[rest[hit]] = cand[hit, ok[hit].argmax(axis=1)]
        rest = rest[~hit]
    return rest


def _rows_per_chunk(n_points: int) -> int:
    return max(1, (1 << 21) // max(n_points, 1))


def _sqdist(Q: np.ndarray, P: np.ndarray) -> np.ndarray:
    return np.sum((Q[:, None, :] - P[None, :, :]) ** 2, axis=2)


def _brute_nearest(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    out = np.empty(len(Q), dtype=np.int64)
    step = _rows_per_chunk(len(P))
    for lo in range(0, len(Q), step):
        out[lo : lo + step] = np.argmin(_sqdist(Q[lo : lo + step], P), axis=1)
    return out


# ---------------------------------------------------------------------------
# k-means compression


def kmeans_plusplus(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Indices of ``k`` seeds (fewer if ``X`` has fewer distinct rows)."""
    n = len(X)
    first = int(rng.integers(n))
    seeds = [first]
    d2 = np.sum((X - X[first]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            break
        nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
        nxt = min(nxt, n - 1)
        seeds.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return np.array(seeds)


def lloyd(X: np.ndarray, centroids: np.ndarray, iters: int) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations until ``iters`` or an assignment fixpoint; empty clusters keep their centroid."""
    C = centroids.copy()
    assign = None
    for _ in range(iters):
        new = cKDTree(C).query(X, k=1)[1]
        if assign is not None and np.array_equal(new, assign):
            break
        assign = new
        counts = np.bincount(assign, minlength=len(C))
        sums = np.zeros_like(C)
        np.add.at(sums, assign, X)
        nz = counts > 0
        C[nz] = sums[nz] / counts[nz, None]
    if assign is None:
        assign = cKDTree(C).query(X, k=1)[1]
    return C, assign


def kmeans_compress(buf: ReplayBuffer, k: int, iters: int, rng: np.random.Generator) -> ReplayBuffer:
    """Cluster the buffer and snap each centroid to its nearest original point.

    The result keeps the parent's ``d_max`` so distance schedules stay comparable.
    """
    if not 1 <= k <= len(buf):
        raise InvalidK(f"k={k} must lie in [1, {len(buf)}]")
    X = buf.points
    if k == len(buf):
        # nothing to compress; keep the buffer, and its order, as is
        return ReplayBuffer(X, state_dim=buf.state_dim, d_max=buf.d_max, backend=buf.backend, source_index=buf.source_index)
    seeds = kmeans_plusplus(X, k, rng)
    C, _ = lloyd(X, X[seeds].copy(), iters)
    idx = np.unique(buf.nearest_index(C))
    return ReplayBuffer(
        X[idx],
        state_dim=buf.state_dim,
        d_max=buf.d_max,
        backend=buf.backend,
        source_index=buf.source_index[idx],
    )
