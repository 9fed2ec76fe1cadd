"""Selecting catalog AIRs that match sampled target T60 vectors.

The selection is a rectangular assignment: each of the M target rows gets a
distinct catalog column so that the summed Euclidean distance is minimal.
:func:`solve_assignment` is a shortest-augmenting-path Kuhn-Munkres solver
(O(M^2 K)) with a deterministic tie-break; :func:`brute_force_assignment`
enumerates every injective map and serves as its test oracle.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
from collections import deque
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .acoustics import BAND_CENTERS, AirCatalog
from .scene import TargetSamples

__all__ = [
    "Assignment",
    "AssignmentError",
    "DistanceMatrix",
    "Selection",
    "brute_force_assignment",
    "distance_matrix",
    "histogram_table",
    "read_histogram_csv",
    "read_selection_manifest",
    "select_subset",
    "solve_assignment",
    "write_histogram_csv",
    "write_selection_manifest",
]

BRUTE_FORCE_LIMIT = 10**7
_DUMMY = -1


class AssignmentError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DistanceMatrix:
    """M x K non-negative distances between target rows and catalog columns."""

    values: np.ndarray
    row_ids: tuple = ()
    col_ids: tuple = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1:
            raise AssignmentError(f"distance matrix must be 2-D and non-empty, got {v.shape}")
        if v.shape[0] > v.shape[1]:
            raise AssignmentError(f"more targets than catalog entries (M={v.shape[0]} > K={v.shape[1]})")
        if not np.all(np.isfinite(v)) or np.any(v < 0):
            raise AssignmentError("distances must be finite and non-negative")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "row_ids", tuple(self.row_ids) or tuple(range(v.shape[0])))
        object.__setattr__(self, "col_ids", tuple(self.col_ids) or tuple(range(v.shape[1])))

    @property
    def shape(self):
        return self.values.shape


@dataclass(frozen=True, eq=False)
class Assignment:
    chosen: tuple
    total_cost: float

    def __eq__(self, other):
        if not isinstance(other, Assignment):
            return NotImplemented
        return self.chosen == other.chosen and self.total_cost == other.total_cost


def _make_assignment(D: np.ndarray, chosen) -> Assignment:
    chosen = tuple(int(k) for k in chosen)
    if len(set(chosen)) != len(chosen):
        raise AssertionError(f"assignment reuses a column: {chosen}")
    total = float(np.sum(D[np.arange(len(chosen)), list(chosen)]))
    return Assignment(chosen, total)


def _tolerance(C: np.ndarray) -> float:
    return 1e-9 * max(1.0, float(np.abs(C).max()))


def distance_matrix(targets, catalog, weights=None) -> DistanceMatrix:
    """Euclidean distances between target vectors and catalog labels.

    ``targets`` is a :class:`TargetSamples` or an M x 7 array; ``catalog``
    an :class:`AirCatalog` or a K x 7 array. Optional per-band ``weights``
    scale squared differences (default: all ones).
    """
    t = targets.vectors if isinstance(targets, TargetSamples) else np.asarray(targets, float)
    if isinstance(catalog, AirCatalog):
        s, col_ids = catalog.labels, tuple(catalog.ids)
    else:
        s, col_ids = np.asarray(catalog, float), ()
    if t.shape[0] > s.shape[0]:
        raise AssignmentError(f"cannot select M={t.shape[0]} distinct AIRs from K={s.shape[0]}")
    w = np.ones(t.shape[1]) if weights is None else np.asarray(weights, float)
    diff = t[:, None, :] - s[None, :, :]
    d = np.sqrt(np.einsum("mkb,b->mk", diff * diff, w))
    return DistanceMatrix(d, tuple(range(t.shape[0])), col_ids)


def _kuhn_munkres(C: np.ndarray):
    """Shortest augmenting path assignment for an n x m cost matrix, n <= m.

    Returns ``(chosen, u, v)`` with optimal row and column potentials. This
    is the zero-cost dummy-row reduction to a square problem without
    materializing the dummy rows: unmatched columns keep potential 0.
    """
    n, m = C.shape
    u = np.zeros(n + 1)
    v = np.zeros(m + 1)
    p = np.zeros(m + 1, dtype=np.int64)  # p[j]: 1-based row matched to column j
    way = np.zeros(m + 1, dtype=np.int64)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv = np.full(m + 1, np.inf)
        used = np.zeros(m + 1, dtype=bool)
        while True:
            used[j0] = True
            i0 = p[j0]
            cur = C[i0 - 1] - u[i0] - v[1:]
            free = ~used[1:]
            better = free & (cur < minv[1:])
            minv[1:][better] = cur[better]
            way[1:][better] = j0
            masked = np.where(free, minv[1:], np.inf)
            j1 = int(np.argmin(masked)) + 1
            delta = masked[j1 - 1]
            u[p[used]] += delta
            v[used] -= delta
            minv[~used] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while j0:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
    chosen = np.empty(n, dtype=np.int64)
    cols = np.flatnonzero(p[1:]) + 1
    chosen[p[cols] - 1] = cols - 1
    return chosen, u[1:], v[1:]


def _lexicographic_refine(C, chosen, u, v):
    """Move to the lexicographically smallest optimal assignment.

    With optimal potentials fixed, the optimal assignments are exactly the
    matchings that use only tight edges and leave only zero-potential
    columns unmatched. Rows are fixed in order; each tries its smallest
    tight column and keeps it if an alternating cycle through the
    non-fixed rows restores a valid matching. Unmatched columns belong to
    the interchangeable dummy rows, collapsed into a single node.
    """
    n, m = C.shape
    tol = _tolerance(C)
    tight = (C - u[:, None] - v[None, :]) <= tol
    dummy_ok = v >= -tol
    chosen = chosen.copy()
    owner = np.full(m, _DUMMY, dtype=np.int64)
    owner[chosen] = np.arange(n)

    def find_cycle(i, j):
        c = chosen[i]
        start = owner[j]
        parent = {start: None}
        queue = deque([start])
        while queue:
            a = queue.popleft()
            if a == _DUMMY:
                cols = np.flatnonzero(dummy_ok & (owner != _DUMMY))
            else:
                cols = np.flatnonzero(tight[a])
            for x in cols:
                x = int(x)
                if x == j:
                    continue
                if x == c:
                    return parent, a, x
                b = int(owner[x])
                if b == a or (b != _DUMMY and b <= i) or b in parent:
                    continue
                parent[b] = (a, x)
                queue.append(b)
        return None

    for i in range(n):
        for j in np.flatnonzero(tight[i, : chosen[i]]):
            j = int(j)
            if owner[j] != _DUMMY and owner[j] < i:
                continue
            found = find_cycle(i, j)
            if found is None:
                continue
            parent, a, x = found
            moves = [(a, x)]
            node = a
            while parent[node] is not None:
                prev, col = parent[node]
                moves.append((prev, col))
                node = prev
            owner[j] = i
            chosen[i] = j
            for row, col in moves:
                owner[col] = row
                if row != _DUMMY:
                    chosen[row] = col
            break
    return chosen


def solve_assignment(D) -> Assignment:
    """Minimum-total-distance assignment of distinct columns to rows.

    Among co-optimal solutions the lexicographically smallest ``chosen``
    vector is returned.
    """
    if not isinstance(D, DistanceMatrix):
        D = DistanceMatrix(D)
    C = D.values
    chosen, u, v = _kuhn_munkres(C)
    chosen = _lexicographic_refine(C, chosen, u, v)
    return _make_assignment(C, chosen)


def brute_force_assignment(D) -> Assignment:
    """Exhaustive optimum over all injective row-to-column maps.

    Ties within the solver tolerance go to the lexicographically smallest
    map. Refuses instances with more than ``BRUTE_FORCE_LIMIT`` maps.
    """
    if not isinstance(D, DistanceMatrix):
        D = DistanceMatrix(D)
    C = D.values
    M, K = C.shape
    if math.perm(K, M) > BRUTE_FORCE_LIMIT:
        raise AssignmentError(f"{K}P{M} = {math.perm(K, M)} maps exceeds {BRUTE_FORCE_LIMIT}")
    rows = np.arange(M)

    def batches():
        it = itertools.permutations(range(K), M)
        while True:
            chunk = list(itertools.islice(it, 65536))
            if not chunk:
                return
            yield np.array(chunk, dtype=np.int64).reshape(-1, M)

    best = min(float(C[rows, b].sum(axis=1).min()) for b in batches())
    tol = _tolerance(C)
    for b in batches():
        hit = np.flatnonzero(C[rows, b].sum(axis=1) <= best + tol)
        if hit.size:
            return _make_assignment(C, b[hit[0]])
    raise AssertionError("unreachable")


@dataclass(frozen=True, eq=False)
class Selection:
    """Outcome of matching targets against a catalog."""

    ids: tuple
    assignment: Assignment
    distances: np.ndarray
    targets: TargetSamples
    catalog: AirCatalog

    @property
    def selected(self) -> AirCatalog:
        return self.catalog.subset(self.ids)

    def manifest(self, targets_seed=None, epsilon=None) -> dict:
        return {
            "targets_seed": targets_seed,
            "epsilon": epsilon,
            "M": len(self.ids),
            "K": self.catalog.K,
            "total_cost": self.assignment.total_cost,
            "rows": [
                {"target_index": i, "air_id": air_id, "distance": float(d)}
                for i, (air_id, d) in enumerate(zip(self.ids, self.distances))
            ],
        }

    def histogram(self, bin_width: float = 0.05, cap: float = 1.0) -> list[dict]:
        return histogram_table(
            self.catalog.labels, self.targets.vectors, self.selected.labels, bin_width, cap
        )


def select_subset(catalog: AirCatalog, targets: TargetSamples, weights=None) -> Selection:
    """Pick ``targets.M`` distinct AIRs minimizing total label distance."""
    D = distance_matrix(targets, catalog, weights)
    a = solve_assignment(D)
    ids = tuple(catalog.ids[k] for k in a.chosen)
    dist = D.values[np.arange(len(a.chosen)), list(a.chosen)]
    return Selection(ids, a, dist, targets, catalog)


def histogram_table(full, targets, selected, bin_width: float = 0.05, cap: float = 1.0) -> list[dict]:
    """Per-band T60 histograms of the full set, targets and selection.

    Bins span ``[0, cap)`` in steps of ``bin_width``; values at or above
    ``cap`` are counted in the last bin.
    """
    if bin_width <= 0 or cap <= 0:
        raise ValueError("bin_width and cap must be positive")
    n_bins = max(1, int(round(cap / bin_width)))
    edges = np.arange(n_bins + 1) * bin_width

    def counts(x, b):
        idx = np.clip(np.floor(np.asarray(x)[:, b] / bin_width).astype(np.int64), 0, n_bins - 1)
        return np.bincount(idx, minlength=n_bins)

    table = []
    for b, fc in enumerate(BAND_CENTERS):
        cf, ct, cs = counts(full, b), counts(targets, b), counts(selected, b)
        for k in range(n_bins):
            table.append({
                "band": fc,
                "bin_low": round(float(edges[k]), 10),
                "bin_high": round(float(edges[k + 1]), 10),
                "count_full": int(cf[k]),
                "count_target": int(ct[k]),
                "count_selected": int(cs[k]),
            })
    return table


HIST_HEADER = ("band", "bin_low", "bin_high", "count_full", "count_target", "count_selected")


def write_histogram_csv(table, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(HIST_HEADER)
        for r in table:
            w.writerow([r["band"], f"{r['bin_low']:.4f}", f"{r['bin_high']:.4f}",
                        r["count_full"], r["count_target"], r["count_selected"]])


def read_histogram_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [
            {k: (float(v) if k.startswith("bin_") else int(v)) for k, v in row.items()}
            for row in csv.DictReader(fh)
        ]


def write_selection_manifest(manifest: dict, path) -> None:
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n")


def read_selection_manifest(path) -> dict:
    d = json.loads(Path(path).read_text())
    for key in ("M", "K", "rows"):
        if key not in d:
            raise ValueError(f"{path}: selection manifest lacks {key!r}")
    return d
