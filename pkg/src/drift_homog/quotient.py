"""Finite-sample approximation of the flow quotient space.

Sample points are pushed along the flow of ``b`` for ``|t| <= T``; edges of
the chain graph carry the smallest gap between two sampled trajectories and
shortest paths give an upper approximation of the quotient distance.
Gaps are found with a periodic KD-tree and a bounded neighbour search, so
every stored edge weight is the length of an actual jump between sampled
trajectory points (an upper bound on the exact minimal gap).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.sparse.csgraph import connected_components, csgraph_from_dense, shortest_path
from scipy.spatial import cKDTree
from scipy.stats import qmc

from .operators import TrigVectorField
from .spectral import (GridField, ModeLattice, SpectralField, evaluate_points,
                       field_from_grid, grid_points, norm)

TWO_PI = 2 * np.pi


class MemoryBudgetError(RuntimeError):
    pass


def wrap(x: np.ndarray) -> np.ndarray:
    y = np.mod(x, TWO_PI)
    y[y >= TWO_PI] = 0.0
    return y


def torus_distance(x, y) -> np.ndarray:
    d = np.abs(np.asarray(x, dtype=float) - np.asarray(y, dtype=float))
    d = np.mod(d, TWO_PI)
    d = np.minimum(d, TWO_PI - d)
    return np.sqrt(np.sum(d * d, axis=-1))


@dataclass(frozen=True, eq=False)
class Trajectory:
    x0: np.ndarray
    h: float
    T: float
    times: np.ndarray = field(repr=False)
    points: np.ndarray = field(repr=False)


def _rk4(b, x, h):
    k1 = b(x)
    k2 = b(x + 0.5 * h * k1)
    k3 = b(x + 0.5 * h * k2)
    k4 = b(x + h * k3)
    return x + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)


def flow_points(b: TrigVectorField, x0: np.ndarray, T: float, h: float,
                stride: int = 1, exact: bool = True):
    """Points ``Phi_t(x0)`` at ``t = j h stride`` for ``|t| <= T``.

    ``x0`` has shape ``(n, d)``; returns ``(times, points)`` with points of
    shape ``(n, len(times), d)``, wrapped to ``[0, 2pi)``.
    """
    if T <= 0 or h <= 0:
        raise ValueError("horizon and step must be positive")
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    J = int(np.floor(T / (h * stride) + 1e-9))
    times = h * stride * np.arange(-J, J + 1)
    n, d = x0.shape
    if exact and b.flow_map is not None:
        pts = b.flow_map(x0[:, None, :], times[None, :])
        return times, wrap(np.broadcast_to(pts, (n, times.size, d)).copy())
    out = np.empty((n, times.size, d))
    out[:, J] = x0
    for sign in (1.0, -1.0):
        x = x0.copy()
        for j in range(1, J + 1):
            for _ in range(stride):
                x = _rk4(b, x, sign * h)
            out[:, J + int(sign) * j] = x
    return times, wrap(out)


def integrate_flow(b: TrigVectorField, x0, T: float, h: float,
                   exact: bool = True) -> Trajectory:
    """Classical RK4 (or the registered closed-form flow) for ``|t| <= T``."""
    x0 = np.asarray(x0, dtype=float)
    times, pts = flow_points(b, x0[None, :], T, h, exact=exact)
    return Trajectory(x0, h, T, times, pts[0])


def sample_points(d: int, n: int) -> np.ndarray:
    """First ``n`` nonzero points of the unscrambled Halton sequence, scaled
    to the torus. Prefixes are nested, so doubling ``n`` only adds nodes."""
    return TWO_PI * qmc.Halton(d=d, scramble=False).random(n + 1)[1:]


def _dedupe(points: np.ndarray, cell: float, times: np.ndarray | None = None) -> np.ndarray:
    """Keep one point of a trajectory per occupied cell.

    The representative is the point with the smallest ``|t|``, so a longer
    horizon only adds cells and never swaps an existing representative.
    """
    if cell <= 0:
        return points
    if times is not None:
        points = points[np.lexsort((times, np.abs(times)))]
    keys = np.floor(points / cell).astype(np.int64)
    _, first = np.unique(keys, axis=0, return_index=True)
    return points[np.sort(first)]


def _min_gaps(a: np.ndarray, labels_a: np.ndarray, tree: cKDTree, labels_b: np.ndarray,
              radius: float, out: np.ndarray, chunk: int = 100_000):
    """``out[la, lb] = min(out[la, lb], |p - q|)`` over all cloud pairs within
    ``radius``; exact, with memory bounded by the chunk size."""
    flat = out.reshape(-1)
    ncol = out.shape[1]
    for s in range(0, a.shape[0], chunk):
        part = cKDTree(a[s:s + chunk], boxsize=TWO_PI)
        m = part.sparse_distance_matrix(tree, radius, output_type="ndarray")
        if m.size == 0:
            continue
        src, dst = labels_a[s + m["i"]], labels_b[m["j"]]
        np.minimum.at(flat, src * ncol + dst, m["v"])


@dataclass(eq=False)
class ChainGraph:
    """Sampled trajectories with minimal-gap edge weights and all-pairs
    shortest paths (``distances``)."""

    b: TrigVectorField
    samples: np.ndarray
    T: float
    h: float
    stride: int
    times: np.ndarray = field(repr=False)
    raw: np.ndarray = field(repr=False)          # (N, S, d) time-uniform points
    cloud: np.ndarray = field(repr=False)        # deduplicated points
    labels: np.ndarray = field(repr=False)       # trajectory id per cloud point
    weights: np.ndarray = field(repr=False)      # (N, N) edge weights
    distances: np.ndarray = field(repr=False)    # (N, N) shortest paths
    cutoff: float = 0.05
    dedupe_cell: float = 0.01
    tree: cKDTree = field(default=None, repr=False)

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    def _trajectory_cloud(self, x: np.ndarray):
        times, pts = flow_points(self.b, x, self.T, self.h, self.stride)
        return pts, [_dedupe(p, self.dedupe_cell, times) for p in pts]

    def attach(self, x) -> np.ndarray:
        """Edge weights from new points (own trajectories) to every sample.

        Gaps are exact minima over trajectory point pairs within ``cutoff``;
        pairs without such a gap keep the seed-to-seed torus distance.

        Returns an array of shape ``(m, N + m)``: columns ``0..N-1`` are the
        samples, the remaining columns the attached points themselves.
        """
        x = np.atleast_2d(np.asarray(x, dtype=float))
        m = x.shape[0]
        _, clouds = self._trajectory_cloud(x)
        W = np.full((m, self.n + m), np.inf)
        to_samples = np.ascontiguousarray(
            torus_distance(x[:, None, :], self.samples[None, :, :]))
        own = np.concatenate([np.full(len(c), i) for i, c in enumerate(clouds)])
        _min_gaps(np.concatenate(clouds), own, self.tree, self.labels, self.cutoff,
                  to_samples)
        W[:, :self.n] = to_samples
        for i in range(m):
            W[i, self.n + i] = 0.0
            for j in range(i + 1, m):
                w = min(float(torus_distance(x[i], x[j])),
                        float(np.min(_cloud_gap(clouds[i], clouds[j]))))
                W[i, self.n + j] = w
        return W


def _cloud_gap(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    tree = cKDTree(b, boxsize=TWO_PI)
    d, _ = tree.query(a, k=1)
    return d


def build_chain_graph(b: TrigVectorField, n_samples: int, T: float, h: float,
                      stride: int = 2, points=None, cutoff: float = 0.05,
                      dedupe_cell: float = 0.01,
                      budget: int = 12_000_000) -> ChainGraph:
    """Chain graph on ``n_samples`` Halton points (or explicit ``points``).

    ``stride`` keeps every ``stride``-th integration step as a trajectory
    sample. Edge weights are the smallest gap between two trajectories,
    searched exactly within ``cutoff``, or the seed-to-seed torus distance if
    that is smaller. Each weight depends only on its own two trajectories, so
    more samples or a longer horizon never increase a distance. ``budget``
    caps the number of stored trajectory points.
    """
    samples = sample_points(b.d, n_samples) if points is None else \
        wrap(np.atleast_2d(np.asarray(points, dtype=float)))
    N = samples.shape[0]
    if N < 2:
        raise ValueError("need at least two samples")
    S = 2 * int(np.floor(T / (h * stride) + 1e-9)) + 1
    if N * S > budget:
        raise MemoryBudgetError(
            f"{N} trajectories x {S} points exceeds the budget of {budget} points")
    times, raw = flow_points(b, samples, T, h, stride)
    clouds = [_dedupe(p, dedupe_cell, times) for p in raw]
    labels = np.concatenate([np.full(len(c), i) for i, c in enumerate(clouds)])
    cloud = np.ascontiguousarray(np.concatenate(clouds))
    tree = cKDTree(cloud, boxsize=TWO_PI)

    W = torus_distance(samples[:, None, :], samples[None, :, :])
    _min_gaps(cloud, labels, tree, labels, cutoff, W)
    W = np.minimum(W, W.T)
    np.fill_diagonal(W, 0.0)
    graph = csgraph_from_dense(W, null_value=np.inf)
    D = shortest_path(graph, method="D", directed=False)
    # the two directions can differ in the last ulp (summation order)
    D = np.minimum(D, D.T)
    return ChainGraph(b, samples, T, h, stride, times, raw, cloud, labels, W, D,
                      cutoff, dedupe_cell, tree)


def quotient_distance(graph: ChainGraph, x, y) -> float:
    """Shortest chain cost between two points attached with their own
    trajectories."""
    W = graph.attach(np.stack([np.asarray(x, float), np.asarray(y, float)]))
    a, b_ = W[0, :graph.n], W[1, :graph.n]
    direct = W[0, graph.n + 1]
    via = np.min(graph.distances + b_[None, :], axis=1)
    return float(min(direct, np.min(a + via)))


@dataclass(eq=False)
class QuotientAtlas:
    """Partition of the samples into empirical equivalence classes."""

    graph: ChainGraph
    delta: float
    labels: np.ndarray
    representatives: np.ndarray
    weights: np.ndarray

    @property
    def n_classes(self) -> int:
        return len(self.representatives)

    def to_json(self) -> dict:
        classes = [np.flatnonzero(self.labels == c).tolist() for c in range(self.n_classes)]
        return {"delta": self.delta, "n_classes": self.n_classes, "classes": classes,
                "representatives": self.graph.samples[self.representatives].tolist(),
                "weights": self.weights.tolist()}

    def sample_means(self, f: SpectralField) -> np.ndarray:
        """Time average of ``f`` along every sampled trajectory."""
        vals = evaluate_points(f, self.graph.raw)
        return vals.mean(axis=1)

    def class_values(self, f: SpectralField) -> np.ndarray:
        m = self.sample_means(f)
        counts = np.bincount(self.labels, minlength=self.n_classes)
        if np.any(counts == 0):
            raise ValueError("empty class in atlas")
        return np.bincount(self.labels, weights=m, minlength=self.n_classes) / counts

    def class_spread(self, f: SpectralField) -> np.ndarray:
        """Within-class standard deviation of ``f`` over trajectory points."""
        vals = evaluate_points(f, self.graph.raw)
        out = np.zeros(self.n_classes)
        for c in range(self.n_classes):
            out[c] = float(np.std(vals[self.labels == c]))
        return out

    def grid_classes(self, res) -> np.ndarray:
        """Class of every grid point: class of the nearest trajectory point."""
        pts = grid_points(res).reshape(-1, self.graph.b.d)
        _, idx = self.graph.tree.query(pts, k=1)
        return self.labels[self.graph.labels[idx]].reshape(res)


def equivalence_classes(graph: ChainGraph, delta: float) -> QuotientAtlas:
    """Union of samples whose chain distance is at most ``delta``."""
    if not delta > 0:
        raise ValueError("delta must be positive")
    adj = (graph.distances <= delta).astype(np.int8)
    n, labels = connected_components(adj, directed=False)
    reps = np.array([int(np.flatnonzero(labels == c)[0]) for c in range(n)])
    # relabel in order of first appearance so output is stable
    order = np.argsort(reps, kind="stable")
    remap = np.empty(n, dtype=int)
    remap[order] = np.arange(n)
    labels = remap[labels]
    reps = reps[order]
    weights = np.bincount(labels, minlength=n) / graph.n
    return QuotientAtlas(graph, float(delta), labels, reps, weights)


def _default_res(lattice: ModeLattice) -> tuple:
    n = {1: 256, 2: 64, 3: 24}[lattice.d]
    return (max(n, lattice.side),) * lattice.d


def project_invariant(f: SpectralField, atlas: QuotientAtlas, res=None) -> SpectralField:
    """Class-wise conditional expectation of ``f``, returned on ``f``'s lattice."""
    res = _default_res(f.lattice) if res is None else tuple(res)
    vals = atlas.class_values(f)[atlas.grid_classes(res)]
    return field_from_grid(GridField(vals), f.lattice)


def consistency_defect(f: SpectralField, atlas: QuotientAtlas, P_E, res=None) -> float:
    """``||P_I f - P_E f||`` with ``P_E`` a callable kernel projection."""
    return norm(project_invariant(f, atlas, res) - P_E(f))


def isometry_and_algebra_check(f: SpectralField, h: SpectralField, atlas: QuotientAtlas,
                               res=None, spread_tol: float = 0.05) -> dict:
    from .spectral import inner, multiply

    res = _default_res(f.lattice) if res is None else tuple(res)
    vf, vh = atlas.class_values(f), atlas.class_values(h)
    vfh = atlas.class_values(multiply(f, h))
    w = atlas.weights
    iso = float(np.sum(w * vf ** 2))
    # class-constant lift of the class values, compared on the grid
    pts = grid_points(res)
    lift = vf[atlas.grid_classes(res)]
    fgrid = evaluate_points(f, pts)
    spread = max(float(np.max(atlas.class_spread(f))), float(np.max(atlas.class_spread(h))))
    return {
        "isometry_value": iso,
        "norm_sq": inner(f, f),
        "isometry_defect": abs(iso - inner(f, f)),
        "product_defect": float(np.max(np.abs(vfh - vf * vh))),
        "lift_defect": float(np.sqrt(np.mean((lift - fgrid) ** 2))),
        "max_class_spread": spread,
        "invariant": spread <= spread_tol,
    }


def levelset_violation(graph: ChainGraph, phi: SpectralField, lipschitz: float,
                       tol: float = 1e-6) -> float:
    """Largest ``|phi(z_u) - phi(z_v)| - Lip * d_X(z_u, z_v)`` over sample pairs
    (nonpositive up to ``tol`` for a Lipschitz invariant ``phi``)."""
    v = evaluate_points(phi, graph.samples)
    gap = np.abs(v[:, None] - v[None, :]) - lipschitz * graph.distances
    return float(np.max(gap) - tol)
