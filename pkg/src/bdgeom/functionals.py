"""Local subset functionals and the neighborhood regions paired with them.

A local functional assigns a bounded value ``f(S, r)`` to every set ``S`` of
exactly ``k`` points, at interaction scale ``r``.  All built-ins satisfy:

* scale and translation invariance: ``f(a*S + x, a*r) == f(S, r)``;
* locality: ``f(S, r) == 0`` whenever ``diam(S) > r_max * r``;
* boundedness: ``|f| <= xi_sup``.

``validate_functional`` spot-checks these properties on random inputs, which
is how user-supplied functionals should be vetted before simulation.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from .geometry import (
    GEOM_TOL,
    Circumball,
    DegenerateGeometryError,
    Metric,
    circumball,
)


class ConfigError(ValueError):
    """Invalid configuration or selector string."""


@dataclass(frozen=True)
class LocalFunctional:
    """Bounded, local, scale-invariant function of ``k``-point subsets.

    ``evaluate`` receives the subset as a ``(k, d)`` array plus the scale
    ``r`` and the metric.  ``evaluate_dists``, when present, computes the
    same value from the pairwise distance matrix alone; trackers use it to
    share one distance computation across many candidate subsets.
    """

    name: str
    k: int
    r_max: float
    xi_sup: float
    evaluate: Callable[[NDArray, float, Metric], float]
    evaluate_dists: Optional[Callable[[NDArray, float], float]] = None
    evaluate_batch: Optional[Callable[[NDArray, float, Metric], NDArray]] = None
    meta: dict = field(default_factory=dict)

    def __call__(self, points: NDArray, r: float, metric: Metric) -> float:
        return self.evaluate(points, r, metric)

    def batch(self, points: NDArray, r: float, metric: Metric) -> NDArray:
        """Values over a batch of subsets, shape ``(B, k, d) -> (B,)``."""
        if self.evaluate_batch is not None:
            return self.evaluate_batch(points, r, metric)
        return np.array([self.evaluate(p, r, metric) for p in points])


# ---------------------------------------------------------------------------
# built-in functionals


def make_clique(k: int) -> LocalFunctional:
    """Indicator that all ``k`` points are pairwise within distance ``r``."""
    if k < 1:
        raise ConfigError("clique size must be >= 1")

    def from_dists(dmat: NDArray, r: float) -> float:
        iu = np.triu_indices(len(dmat), 1)
        return 1.0 if np.all(dmat[iu] <= r) else 0.0

    def evaluate(points: NDArray, r: float, metric: Metric) -> float:
        if k == 1:
            return 1.0
        return from_dists(metric.pairwise(points), r)

    def evaluate_batch(points: NDArray, r: float, metric: Metric) -> NDArray:
        if k == 1:
            return np.ones(len(points))
        dmat = metric.pairwise_batch(points)
        iu = np.triu_indices(k, 1)
        return np.all(dmat[:, iu[0], iu[1]] <= r, axis=1).astype(float)

    return LocalFunctional(
        name=f"clique:{k}",
        k=k,
        r_max=1.0,
        xi_sup=1.0,
        evaluate=evaluate,
        evaluate_dists=from_dists,
        evaluate_batch=evaluate_batch,
    )


def _connected(k: int, edges: Sequence[tuple[int, int]]) -> bool:
    seen = {0}
    frontier = [0]
    adj: dict[int, list[int]] = {i: [] for i in range(k)}
    for a, b in edges:
        adj[a].append(b)
        adj[b].append(a)
    while frontier:
        node = frontier.pop()
        for nxt in adj[node]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return len(seen) == k


def make_subgraph(k: int, edges: Sequence[tuple[int, int]]) -> LocalFunctional:
    """Indicator that the distance graph on ``S`` at scale ``r`` is isomorphic
    to the given connected graph on nodes ``0..k-1`` (induced isomorphism:
    non-edges must be absent as well)."""
    edge_set = {tuple(sorted(e)) for e in edges}
    for a, b in edge_set:
        if not (0 <= a < k and 0 <= b < k) or a == b:
            raise ConfigError(f"edge ({a},{b}) out of range for {k} nodes")
    if k < 2 or not edge_set:
        raise ConfigError("subgraph needs k >= 2 and at least one edge")
    if not _connected(k, list(edge_set)):
        raise ConfigError("subgraph pattern must be connected")

    target = np.zeros((k, k), dtype=bool)
    for a, b in edge_set:
        target[a, b] = target[b, a] = True
    target_degrees = np.sort(target.sum(axis=0))
    perms = list(itertools.permutations(range(k)))

    def from_dists(dmat: NDArray, r: float) -> float:
        adj = dmat <= r
        np.fill_diagonal(adj, False)
        if not np.array_equal(np.sort(adj.sum(axis=0)), target_degrees):
            return 0.0
        for perm in perms:
            p = np.asarray(perm)
            if np.array_equal(adj[np.ix_(p, p)], target):
                return 1.0
        return 0.0

    def evaluate(points: NDArray, r: float, metric: Metric) -> float:
        return from_dists(metric.pairwise(points), r)

    def evaluate_batch(points: NDArray, r: float, metric: Metric) -> NDArray:
        dmat = metric.pairwise_batch(points)
        adj = dmat <= r
        idx = np.arange(k)
        adj[:, idx, idx] = False
        degrees = np.sort(adj.sum(axis=1), axis=1)
        out = np.zeros(len(points))
        candidates = np.nonzero(np.all(degrees == target_degrees, axis=1))[0]
        for i in candidates:
            for perm in perms:
                p = np.asarray(perm)
                if np.array_equal(adj[i][np.ix_(p, p)], target):
                    out[i] = 1.0
                    break
        return out

    label = ",".join(f"{a}-{b}" for a, b in sorted(edge_set))
    return LocalFunctional(
        name=f"subgraph:{k}:{label}",
        k=k,
        # connected on k nodes: graph diameter <= k-1 hops of length <= r
        r_max=float(k - 1),
        xi_sup=1.0,
        evaluate=evaluate,
        evaluate_dists=from_dists,
        evaluate_batch=evaluate_batch,
    )


def make_morse(index: int, radius_range: tuple[float, float] = (0.0, 1.0)) -> LocalFunctional:
    """Indicator that ``index + 1`` points span a critical pair of the
    distance function: the circumcenter lies strictly inside their open
    simplex and the circumradius falls in ``(lo*r, hi*r]``."""
    lo, hi = radius_range
    if index < 1:
        raise ConfigError("morse index must be >= 1")
    if not (0.0 <= lo < hi):
        raise ConfigError("radius range must satisfy 0 <= lo < hi")

    def evaluate(points: NDArray, r: float, metric: Metric) -> float:
        try:
            ball = circumball(metric.unwrap(points))
        except DegenerateGeometryError:
            return 0.0
        if not ball.center_in_simplex:
            return 0.0
        return 1.0 if lo * r < ball.radius <= hi * r else 0.0

    return LocalFunctional(
        name=f"morse:{index}",
        k=index + 1,
        # all points lie on a sphere of radius <= hi*r
        r_max=2.0 * hi,
        xi_sup=1.0,
        evaluate=evaluate,
        evaluate_dists=None,
        meta={"radius_range": (lo, hi)},
    )


def from_selector(selector: str) -> LocalFunctional:
    """Build a functional from a compact selector string.

    Formats: ``clique:k``, ``subgraph:k:a-b,c-d,...``, ``morse:k``.
    """
    parts = selector.split(":")
    kind = parts[0]
    try:
        if kind == "clique" and len(parts) == 2:
            return make_clique(int(parts[1]))
        if kind == "subgraph" and len(parts) == 3:
            k = int(parts[1])
            edges = []
            for token in parts[2].split(","):
                a, b = token.split("-")
                edges.append((int(a), int(b)))
            return make_subgraph(k, edges)
        if kind == "morse" and len(parts) == 2:
            return make_morse(int(parts[1]))
    except (ValueError, ConfigError) as exc:
        raise ConfigError(f"bad functional selector {selector!r}: {exc}") from exc
    raise ConfigError(f"bad functional selector {selector!r}")


# ---------------------------------------------------------------------------
# neighborhood regions (for the exclusive statistic)


class BallUnionRegion:
    """Union of closed balls of radius ``r`` around each point of the subset."""

    __slots__ = ("points", "r", "metric", "anchor", "query_radius")

    def __init__(self, points: NDArray, r: float, metric: Metric):
        self.points = np.asarray(points, dtype=float)
        self.r = float(r)
        self.metric = metric
        self.anchor = self.points[0]
        spread = metric.distance_many(self.anchor, self.points)
        self.query_radius = float(np.max(spread)) + self.r

    def contains(self, y: NDArray) -> bool:
        return bool(np.min(self.metric.distance_many(y, self.points)) <= self.r)

    def contains_many(self, ys: NDArray) -> NDArray:
        ys = np.asarray(ys, dtype=float)
        out = np.zeros(len(ys), dtype=bool)
        for p in self.points:
            out |= self.metric.distance_many(p, ys) <= self.r
        return out

    def bounding_box(self) -> tuple[NDArray, NDArray]:
        pts = self.metric.unwrap(self.points)
        return pts.min(axis=0) - self.r, pts.max(axis=0) + self.r


class BallRegion:
    """Single open ball (used for circumball neighborhoods)."""

    __slots__ = ("center", "radius", "metric", "anchor", "query_radius")

    def __init__(self, center: NDArray, radius: float, metric: Metric):
        self.center = metric.wrap(np.asarray(center, dtype=float))
        self.radius = float(radius)
        self.metric = metric
        self.anchor = self.center
        self.query_radius = self.radius

    def contains(self, y: NDArray) -> bool:
        return self.metric.distance(y, self.center) < self.radius

    def contains_many(self, ys: NDArray) -> NDArray:
        return self.metric.distance_many(self.center, np.asarray(ys, dtype=float)) < self.radius

    def bounding_box(self) -> tuple[NDArray, NDArray]:
        return self.center - self.radius, self.center + self.radius


@dataclass(frozen=True)
class NeighborhoodMap:
    """Builder of the exclusion region attached to each counted subset."""

    kind: str  # "balls" | "circumball"

    def build(self, points: NDArray, r: float, metric: Metric):
        if self.kind == "balls":
            return BallUnionRegion(points, r, metric)
        try:
            ball = circumball(metric.unwrap(points))
        except DegenerateGeometryError:
            return None
        # unwrap anchors the chart at points[0], so the center is in-chart
        return BallRegion(ball.center, ball.radius, metric)

    def max_reach(self, functional: LocalFunctional, r: float) -> float:
        """Upper bound on ``query_radius`` over subsets with ``f > 0``."""
        if self.kind == "balls":
            return r * (functional.r_max + 1.0)
        rng = functional.meta.get("radius_range")
        if rng is None:
            raise ConfigError(
                "circumball neighborhoods need a functional with a radius_range"
            )
        return r * rng[1]

    def reach_scale1(self, functional: LocalFunctional) -> float:
        """Max distance from the subset anchor to any region point, at r=1,
        over subsets with ``f > 0``."""
        if self.kind == "balls":
            return functional.r_max + 1.0
        rng = functional.meta.get("radius_range")
        if rng is None:
            raise ConfigError(
                "circumball neighborhoods need a functional with a radius_range"
            )
        return 2.0 * rng[1]


def neighborhood_from_selector(selector: str) -> Optional[NeighborhoodMap]:
    if selector == "none":
        return None
    if selector in ("balls", "circumball"):
        return NeighborhoodMap(kind=selector)
    raise ConfigError(f"bad neighborhood selector {selector!r}")


def pair_volumes(
    region_a, region_b, samples: int, rng: np.random.Generator
) -> tuple[float, float, float]:
    """Hit-or-miss volumes (vol A, vol B, vol A intersect B) from one shared
    uniform sample over a box covering both regions."""
    lo_a, hi_a = region_a.bounding_box()
    lo_b, hi_b = region_b.bounding_box()
    lo = np.minimum(lo_a, lo_b)
    hi = np.maximum(hi_a, hi_b)
    box_vol = float(np.prod(hi - lo))
    pts = lo + (hi - lo) * rng.random((samples, len(lo)))
    in_a = region_a.contains_many(pts)
    in_b = region_b.contains_many(pts)
    scale = box_vol / samples
    return (
        float(np.count_nonzero(in_a)) * scale,
        float(np.count_nonzero(in_b)) * scale,
        float(np.count_nonzero(in_a & in_b)) * scale,
    )


# ---------------------------------------------------------------------------
# invariance validation


@dataclass
class InvarianceReport:
    trials: int
    scale_violations: int
    locality_violations: int
    bound_violations: int
    max_deviation: float
    feasible_fraction: float

    @property
    def ok(self) -> bool:
        return (
            self.scale_violations == 0
            and self.locality_violations == 0
            and self.bound_violations == 0
        )


def validate_functional(
    functional: LocalFunctional,
    dim: int,
    trials: int = 1000,
    seed: int = 0,
) -> InvarianceReport:
    """Spot-check scale/translation invariance, locality and boundedness on
    random euclidean subsets; also reports how often ``f > 0`` occurred
    (zero feasible hits usually means a degenerate definition)."""
    rng = np.random.default_rng(seed)
    metric = Metric("euclidean", dim)
    k = functional.k
    scale_bad = 0
    local_bad = 0
    bound_bad = 0
    feasible = 0
    max_dev = 0.0
    for _ in range(trials):
        r = 0.5 + rng.random()
        spread = r * functional.r_max
        points = rng.uniform(-spread, spread, size=(k, dim))
        value = functional(points, r, metric)
        if abs(value) > functional.xi_sup + GEOM_TOL:
            bound_bad += 1
        if value > 0.0:
            feasible += 1
        alpha = 0.5 + 1.5 * rng.random()
        shift = rng.uniform(-5.0, 5.0, size=dim)
        moved = functional(alpha * points + shift, alpha * r, metric)
        dev = abs(moved - value)
        max_dev = max(max_dev, dev)
        if dev > GEOM_TOL:
            scale_bad += 1
        # force a diameter violation and require a zero value
        if k > 1:
            far = points.copy()
            far[-1] = points[0] + _unit_vector(rng, dim) * (
                functional.r_max * r * (1.1 + rng.random())
            )
            if functional(far, r, metric) != 0.0:
                local_bad += 1
    return InvarianceReport(
        trials=trials,
        scale_violations=scale_bad,
        locality_violations=local_bad,
        bound_violations=bound_bad,
        max_deviation=max_dev,
        feasible_fraction=feasible / trials,
    )


def _unit_vector(rng: np.random.Generator, dim: int) -> NDArray:
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v)
