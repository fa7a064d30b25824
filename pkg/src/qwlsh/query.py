"""c-k-ANN search over the paged index with collision counting.

Each projection is scanned outward from the query's own key. A point becomes
a candidate once it has collided with the query in ``threshold`` projections;
its record is fetched through the data cache and its exact distance computed
right away. When a round finishes without enough good results the window is
widened by a factor ``c`` and the scans resume from where they stopped.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import chain

import numpy as np

from .btree import ScanCursor, range_scan
from .core import Neighbor, Point, euclidean
from .lsh import LshIndex
from .storage import BufferCache, IoCounters

MAX_RADIUS_EXPONENT = 30

__all__ = ["QueryResult", "QueryStats", "SearchState", "knn_query", "range_scan",
           "verify_candidates"]


class QueryError(ValueError):
    pass


@dataclass
class QueryStats:
    candidates_verified: int
    final_radius: float
    radii: list[float]
    io: IoCounters
    terminated_by: str


@dataclass
class QueryResult:
    neighbors: list[Neighbor]
    stats: QueryStats

    @property
    def ids(self) -> list[int]:
        return [nb.id for nb in self.neighbors]

    @property
    def distances(self) -> list[float]:
        return [nb.dist for nb in self.neighbors]


@dataclass
class SearchState:
    radius: float
    counts: np.ndarray
    cursors: list[ScanCursor]
    verified_ids: list[int] = field(default_factory=list)
    verified_dist: list[float] = field(default_factory=list)
    radii: list[float] = field(default_factory=list)

    @property
    def candidates(self) -> set[int]:
        return set(self.verified_ids)


def _check_cache(idx: LshIndex, cache: BufferCache) -> None:
    if idx.cache is not cache or idx.trees is None:
        raise QueryError("index is not attached to this cache; open it with the cache first")


def verify_candidates(idx: LshIndex, cache: BufferCache, q: Point | np.ndarray,
                      ids) -> list[Neighbor]:
    """Exact distances for ``ids``, reading each record through the data cache."""
    _check_cache(idx, cache)
    coords = q.coords if isinstance(q, Point) else np.asarray(q, dtype=np.float64)
    out = []
    for pid in sorted(int(i) for i in ids):
        if not 0 <= pid < idx.n:
            raise QueryError(f"invalid point id {pid}")
        out.append(Neighbor(pid, float(euclidean(idx.read_record(pid), coords)[0])))
    out.sort(key=lambda nb: (nb.dist, nb.id))
    return out


def knn_query(idx: LshIndex, cache: BufferCache, q: Point | np.ndarray, k: int) -> QueryResult:
    """Return up to ``k`` approximate nearest neighbours of ``q``.

    Stops once ``k`` verified points lie within ``c * R`` of the query at the
    end of a round, or as soon as ``k + v`` candidates have been verified.
    """
    _check_cache(idx, cache)
    params = idx.params
    if not 1 <= k <= params.k_max:
        raise QueryError(f"k must be in [1, {params.k_max}], got {k}")
    coords = q.coords if isinstance(q, Point) else np.asarray(q, dtype=np.float64)
    if coords.shape != (idx.d,):
        raise QueryError(f"query has shape {coords.shape}, index has d={idx.d}")

    before = cache.io_report()
    budget = params.candidate_budget(k)
    threshold = params.threshold
    c = params.c
    trees = idx.trees
    keys = idx.project_all(coords)
    state = SearchState(1.0, np.zeros(idx.n, dtype=np.int32),
                        [tree.seek(cache, keys[i]) for i, tree in enumerate(trees)])
    counts = state.counts
    vids, vdist = state.verified_ids, state.verified_dist
    read_record = idx.read_record

    def verify(pid: int) -> None:
        vids.append(pid)
        vdist.append(float(euclidean(read_record(pid), coords)[0]))

    reason = None
    while reason is None:
        radius = state.radius
        state.radii.append(radius)
        half = 0.5 * radius
        for i, tree in enumerate(trees):
            cursor = state.cursors[i]
            scans = chain(tree.scan_right(cache, cursor, keys[i] + half),
                          tree.scan_left(cache, cursor, keys[i] - half))
            for ids in scans:
                seen = counts[ids] + 1
                counts[ids] = seen
                for pid in ids[seen == threshold].tolist():
                    verify(pid)
                    if len(vids) >= budget:
                        reason = "budget"
                        break
                if reason:
                    break
            if reason:
                break
        if reason:
            break
        if sum(1 for dv in vdist if dv <= c * radius) >= k:
            reason = "radius"
        elif all(cur.exhausted for cur in state.cursors):
            reason = "exhausted"
        elif radius >= c ** MAX_RADIUS_EXPONENT:
            _fallback(state, budget, k, idx.n, verify)
            reason = "radius-cap"
        else:
            state.radius = radius * c

    order = sorted(range(len(vids)), key=lambda j: (vdist[j], vids[j]))[:k]
    neighbors = [Neighbor(vids[j], vdist[j]) for j in order]
    stats = QueryStats(len(vids), state.radius, state.radii, cache.io_report() - before, reason)
    return QueryResult(neighbors, stats)


def _fallback(state: SearchState, budget: int, k: int, n: int, verify) -> None:
    """Verify the highest-count unverified points, then fill by id if still short of k."""
    done = set(state.verified_ids)
    counts = state.counts
    pending = [i for i in np.lexsort((np.arange(n), -counts)).tolist() if i not in done]
    for pid in pending:
        if len(state.verified_ids) >= budget or counts[pid] == 0:
            break
        verify(pid)
        done.add(pid)
    for pid in range(n):
        if len(state.verified_ids) >= min(k, n):
            break
        if pid not in done:
            verify(pid)
            done.add(pid)
