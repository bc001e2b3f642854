"""Subset statistics over configurations, maintained through event streams.

The tracked value is ``sum_S f(S, r)`` over all ``k``-point subsets ``S`` of
the alive configuration (only subsets of diameter ``<= r * r_max`` can
contribute, so the sum is maintained locally).  With a neighborhood map the
exclusive variant is tracked instead: each subset contributes only while its
neighborhood region contains no alive point outside the subset itself.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations
from typing import Optional, Sequence

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .functionals import ConfigError, LocalFunctional, NeighborhoodMap
from .geometry import GridIndex, Metric
from .process import Configuration, Event, EventStream, SimulationConfig, sample_stationary, simulate_events


class KahanSum:
    """Compensated float accumulator (exact for moderate integer sums)."""

    __slots__ = ("_total", "_comp")

    def __init__(self, start: float = 0.0):
        self._total = start
        self._comp = 0.0

    def add(self, x: float) -> None:
        y = x - self._comp
        t = self._total + y
        self._comp = (t - self._total) - y
        self._total = t

    @property
    def value(self) -> float:
        return self._total


@dataclass
class TimeSeries:
    times: NDArray
    values: NDArray
    rep: int = 0


@dataclass
class _RegistryEntry:
    xi: float
    region: object
    vacant: bool


class SubsetTracker:
    """Incremental tracker of one subset statistic over a configuration.

    The configuration must be kept in lockstep by the caller: for each
    event, call ``apply_event`` first (it reads the pre-event state), then
    ``config.apply_event``.  ``replay`` does this bookkeeping.
    """

    def __init__(
        self,
        config: Configuration,
        functional: LocalFunctional,
        r: float,
        neighborhood: Optional[NeighborhoodMap] = None,
    ):
        if r <= 0:
            raise ConfigError("interaction radius must be positive")
        self.config = config
        self.f = functional
        self.r = float(r)
        self.nbhd = neighborhood
        self.enum_radius = self.r * functional.r_max
        self.max_reach = neighborhood.max_reach(functional, r) if neighborhood else 0.0
        if config.metric.kind == "torus":
            if max(self.enum_radius, self.max_reach) >= 0.5:
                raise ConfigError(
                    "interaction scale too large for the unit torus: "
                    f"r * r_max = {self.enum_radius:.3g} (needs < 0.5)"
                )
        if not config.indexed:
            config.build_index(max(self.enum_radius, self.max_reach, 1e-6))
        self._sum = KahanSum()
        self._registry: dict[frozenset, _RegistryEntry] = {}
        self._member_keys: dict[int, set[frozenset]] = {}
        self._anchor_grid: Optional[GridIndex] = None
        if neighborhood is not None:
            self._anchor_grid = GridIndex(config.metric, max(self.max_reach, 1e-6))
        self._init_scan()

    @property
    def value(self) -> float:
        return self._sum.value

    @property
    def registry_size(self) -> int:
        return len(self._registry)

    # -- initial enumeration ------------------------------------------------

    def _init_scan(self) -> None:
        k = self.f.k
        if k == 1:
            for pid in sorted(self.config.ids()):
                self._admit((pid,), self.config.position(pid)[None, :])
            return
        for anchor in sorted(self.config.ids()):
            pos = self.config.position(anchor)
            cands = sorted(
                p for p in self.config.neighbors_within(pos, self.enum_radius)
                if p > anchor
            )
            if len(cands) < k - 1:
                continue
            pts = self.config.positions_array(cands)
            allpts = np.vstack([pos[None, :], pts])
            dmat = self.config.metric.pairwise(allpts)
            for combo in combinations(range(len(cands)), k - 1):
                idx = (0,) + tuple(i + 1 for i in combo)
                val = self._eval(allpts, dmat, idx)
                if val != 0.0:
                    pids = (anchor,) + tuple(cands[i] for i in combo)
                    self._admit(pids, allpts[list(idx)], val)

    def _eval(self, allpts: NDArray, dmat: NDArray, idx: tuple) -> float:
        if self.f.evaluate_dists is not None:
            sub = dmat[np.ix_(idx, idx)]
            return self.f.evaluate_dists(sub, self.r)
        return self.f.evaluate(allpts[list(idx)], self.r, self.config.metric)

    def _admit(self, pids: tuple, points: NDArray, val: Optional[float] = None) -> None:
        """Register a subset with nonzero value (computing it for k == 1)."""
        if val is None:
            val = self.f.evaluate(points, self.r, self.config.metric)
            if val == 0.0:
                return
        if self.nbhd is None:
            self._sum.add(val)
            return
        region = self.nbhd.build(points, self.r, self.config.metric)
        if region is None:
            return
        key = frozenset(pids)
        vacant = not self._occupied(region, key)
        self._registry[key] = _RegistryEntry(val, region, vacant)
        for pid in pids:
            self._member_keys.setdefault(pid, set()).add(key)
        self._anchor_grid.insert(key, region.anchor)
        if vacant:
            self._sum.add(val)

    def _occupied(self, region, exclude: frozenset, extra_exclude: int = -1) -> bool:
        ids = self.config.neighbors_within(region.anchor, region.query_radius)
        others = [p for p in ids if p not in exclude and p != extra_exclude]
        if not others:
            return False
        mask = region.contains_many(self.config.positions_array(others))
        return bool(np.any(mask))

    # -- event updates ------------------------------------------------------

    def apply_event(self, event: Event) -> None:
        """Update for one event; the configuration must not yet reflect it."""
        if event.kind == "birth":
            self._on_birth(event.point.pid, event.point.position)
        else:
            self._on_death(event.point.pid)

    def _on_birth(self, pid: int, raw_position: NDArray) -> None:
        x = self.config.metric.wrap(np.asarray(raw_position, dtype=float))
        # existing regions that the newcomer occupies
        if self.nbhd is not None:
            for key in self._anchor_grid.query(x, self.max_reach):
                entry = self._registry[key]
                if entry.vacant and entry.region.contains(x):
                    entry.vacant = False
                    self._sum.add(-entry.xi)
        k = self.f.k
        if k == 1:
            self._admit((pid,), x[None, :])
            return
        cands = sorted(self.config.neighbors_within(x, self.enum_radius))
        if len(cands) < k - 1:
            return
        pts = self.config.positions_array(cands)
        allpts = np.vstack([pts, x[None, :]])
        dmat = self.config.metric.pairwise(allpts)
        last = len(cands)
        for combo in combinations(range(len(cands)), k - 1):
            idx = combo + (last,)
            val = self._eval(allpts, dmat, idx)
            if val != 0.0:
                pids = tuple(cands[i] for i in combo) + (pid,)
                self._admit(pids, allpts[list(idx)], val)

    def _on_death(self, pid: int) -> None:
        y = self.config.position(pid)
        k = self.f.k
        if self.nbhd is None:
            if k == 1:
                self._sum.add(-self.f.evaluate(y[None, :], self.r, self.config.metric))
                return
            cands = sorted(
                p for p in self.config.neighbors_within(y, self.enum_radius) if p != pid
            )
            if len(cands) < k - 1:
                return
            pts = self.config.positions_array(cands)
            allpts = np.vstack([pts, y[None, :]])
            dmat = self.config.metric.pairwise(allpts)
            last = len(cands)
            for combo in combinations(range(len(cands)), k - 1):
                idx = combo + (last,)
                val = self._eval(allpts, dmat, idx)
                if val != 0.0:
                    self._sum.add(-val)
            return
        # exclusive mode: drop subsets containing the point ...
        for key in list(self._member_keys.get(pid, ())):
            entry = self._registry.pop(key)
            if entry.vacant:
                self._sum.add(-entry.xi)
            self._anchor_grid.remove(key)
            for member in key:
                keys = self._member_keys.get(member)
                if keys is not None:
                    keys.discard(key)
                    if not keys:
                        del self._member_keys[member]
        # ... then re-derive vacancy where the point may have been the occupant
        for key in self._anchor_grid.query(y, self.max_reach):
            entry = self._registry[key]
            if not entry.vacant and entry.region.contains(y):
                if not self._occupied(entry.region, key, extra_exclude=pid):
                    entry.vacant = True
                    self._sum.add(entry.xi)


def evaluate_statistic(
    config: Configuration,
    functional: LocalFunctional,
    r: float,
    neighborhood: Optional[NeighborhoodMap] = None,
) -> float:
    """From-scratch value of the statistic on a configuration.

    This is the reference evaluator; it shares no enumeration code with the
    incremental tracker (KD-tree subset scan here, grid-based scan there),
    and the two must agree exactly for indicator functionals after any
    event sequence.
    """
    metric = config.metric
    positions = config.positions_array()
    if neighborhood is None and functional.name == "clique:2":
        return count_pairs_within(positions, r, metric)
    k = functional.k
    if metric.kind == "torus":
        reach = neighborhood.max_reach(functional, r) if neighborhood else 0.0
        if max(r * functional.r_max, reach) >= 0.5:
            raise ConfigError("interaction scale too large for the unit torus")
    if len(positions) < k:
        return 0.0
    if k == 1:
        subsets = [(i,) for i in range(len(positions))]
    else:
        subsets = _diameter_subsets(positions, r * functional.r_max, k, metric)
        if not subsets:
            return 0.0
    stacked = positions[np.array(subsets)]
    vals = functional.batch(stacked, r, metric)
    live = np.nonzero(vals != 0.0)[0]
    if neighborhood is None:
        return float(math.fsum(vals[live]))
    tree = _metric_tree(positions, metric)
    total = []
    for i in live:
        members = subsets[i]
        region = neighborhood.build(positions[list(members)], r, metric)
        if region is None:
            continue
        anchor = metric.wrap(region.anchor) if metric.kind == "torus" else region.anchor
        near = tree.query_ball_point(anchor, region.query_radius * (1.0 + 1e-9) + 1e-12)
        others = [p for p in near if p not in members]
        if others and bool(np.any(region.contains_many(positions[others]))):
            continue
        total.append(float(vals[i]))
    return float(math.fsum(total))


def _metric_tree(positions: NDArray, metric: Metric) -> cKDTree:
    if metric.kind == "torus":
        return cKDTree(np.mod(positions, 1.0), boxsize=1.0)
    return cKDTree(positions)


def _diameter_subsets(
    positions: NDArray, enum_radius: float, k: int, metric: Metric
) -> list[tuple]:
    """Index k-subsets with all pairwise distances <= enum_radius.

    By the locality contract these are the only subsets the functional can
    score, so enumerating cliques of the enum_radius graph is exhaustive.
    """
    tree = _metric_tree(positions, metric)
    pairs = tree.query_pairs(enum_radius, output_type="ndarray")
    if k == 2:
        return [tuple(p) for p in pairs]
    adjacency: dict[int, set] = {}
    for a, b in pairs:
        adjacency.setdefault(int(a), set()).add(int(b))
        adjacency.setdefault(int(b), set()).add(int(a))
    out: list[tuple] = []

    def extend(chain: tuple, common: set) -> None:
        if len(chain) == k:
            out.append(chain)
            return
        for v in sorted(c for c in common if c > chain[-1]):
            extend(chain + (v,), common & adjacency[v])

    for a, b in pairs:
        a, b = int(a), int(b)
        extend((a, b), adjacency[a] & adjacency[b])
    return out


def count_pairs_within(positions: NDArray, r: float, metric: Metric) -> float:
    """Edge count via a KD-tree (fast path for the pair statistic)."""
    pts = np.asarray(positions, dtype=float)
    if len(pts) < 2:
        return 0.0
    if metric.kind == "torus":
        if r >= 0.5:
            raise ConfigError("pair radius must be < 0.5 on the torus")
        tree = cKDTree(np.mod(pts, 1.0), boxsize=1.0)
    else:
        tree = cKDTree(pts)
    return float(tree.query_pairs(r, output_type="ndarray").shape[0])


def replay(
    config: Configuration,
    stream: EventStream,
    trackers: Sequence[SubsetTracker],
    sample_times: Sequence[float],
) -> NDArray:
    """Drive trackers and configuration through a stream, sampling values.

    Returns an array of shape ``(len(trackers), len(sample_times))`` with
    the piecewise-constant statistic values at the requested times (each
    value reflects all events with ``time <= t``).  The configuration is
    mutated in place.
    """
    times = np.asarray(sample_times, dtype=float)
    out = np.zeros((len(trackers), len(times)))
    idx = 0
    for event in stream.events:
        while idx < len(times) and times[idx] < event.time:
            for row, tracker in enumerate(trackers):
                out[row, idx] = tracker.value
            idx += 1
        for tracker in trackers:
            tracker.apply_event(event)
        config.apply_event(event)
    for row, tracker in enumerate(trackers):
        out[row, idx:] = tracker.value
    return out


def sample_path(
    config: SimulationConfig,
    functional: LocalFunctional,
    sample_times: Sequence[float],
    r: Optional[float] = None,
    neighborhood: Optional[NeighborhoodMap] = None,
    rep: int = 0,
) -> TimeSeries:
    """Simulate one stationary path and sample the statistic on a time grid."""
    if r is None:
        r = config.interaction_radius
    rng = config.rng(rep)
    state = sample_stationary(config, rng)
    stream = simulate_events(config, state, rng)
    tracker = SubsetTracker(state, functional, r, neighborhood)
    values = replay(state, stream, [tracker], sample_times)[0]
    return TimeSeries(np.asarray(sample_times, dtype=float), values, rep)
