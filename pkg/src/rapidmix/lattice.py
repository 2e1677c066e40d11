"""Graphs, regions, boundaries, coarse-grained sets and covering schedules.

Vertex ordering is fixed per family: chains left to right, b-ary trees
breadth first from the root, grids row-major.  Regions are sorted tuples of
vertex indices.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np

from .errors import (ConfigError, NotColorableError, ResourceError,
                     ScheduleInfeasibleError)

Region = tuple[int, ...]
Edge = tuple[int, int]

MAX_SUBSET_M = 8


@dataclass(frozen=True)
class SpinGraph:
    n: int
    edges: tuple[Edge, ...]
    kind: str = "custom"
    params: tuple = ()
    d: int = 2

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("graph needs at least one vertex")
        if self.d < 1:
            raise ConfigError("local dimension must be positive")
        norm = []
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ConfigError(f"self-loop at {a}")
            if not (0 <= a < self.n and 0 <= b < self.n):
                raise ConfigError(f"edge ({a},{b}) out of range")
            norm.append((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", tuple(sorted(set(norm))))
        if not self._connected():
            raise ConfigError("graph is not connected")

    def _connected(self) -> bool:
        seen = {0}
        stack = [0]
        adj = self.adjacency
        while stack:
            v = stack.pop()
            for u in adj[v]:
                if u not in seen:
                    seen.add(u)
                    stack.append(u)
        return len(seen) == self.n

    @cached_property
    def adjacency(self) -> tuple[tuple[int, ...], ...]:
        nb: list[list[int]] = [[] for _ in range(self.n)]
        for a, b in self.edges:
            nb[a].append(b)
            nb[b].append(a)
        return tuple(tuple(sorted(x)) for x in nb)

    @cached_property
    def dist(self) -> np.ndarray:
        """All-pairs graph distances (BFS)."""
        out = np.full((self.n, self.n), -1, dtype=int)
        for s in range(self.n):
            out[s, s] = 0
            q = deque([s])
            while q:
                v = q.popleft()
                for u in self.adjacency[v]:
                    if out[s, u] < 0:
                        out[s, u] = out[s, v] + 1
                        q.append(u)
        return out

    def degree(self, v: int) -> int:
        return len(self.adjacency[v])

    @property
    def max_degree(self) -> int:
        return max((self.degree(v) for v in range(self.n)), default=0)

    @property
    def vertices(self) -> Region:
        return tuple(range(self.n))

    def param(self, key: str, default=None):
        return dict(self.params).get(key, default)

    # tree helpers
    @cached_property
    def depth(self) -> tuple[int, ...]:
        return tuple(int(x) for x in self.dist[0])

    def children(self, v: int) -> tuple[int, ...]:
        return tuple(u for u in self.adjacency[v] if self.depth[u] == self.depth[v] + 1)

    def subtree(self, x: int, height: int) -> Region:
        """B_{x,height}: descendants of ``x`` at most ``height`` levels below (rooted at 0)."""
        out, frontier = [x], [x]
        for _ in range(height):
            frontier = [c for v in frontier for c in self.children(v)]
            out.extend(frontier)
        return tuple(sorted(out))

    def coords(self, v: int) -> tuple[int, int]:
        w = self.param("w")
        return divmod(v, w)


def build_graph(kind: str, d: int = 2, **params) -> SpinGraph:
    """Build a chain (``n``), b-ary tree (``b``, ``height``), 2D grid (``w``, ``h``) or custom graph."""
    try:
        if kind == "chain":
            n = int(params["n"])
            if n < 1:
                raise ConfigError("chain needs n >= 1")
            return SpinGraph(n, tuple((i, i + 1) for i in range(n - 1)), "chain", (("n", n),), d)
        if kind == "bary_tree":
            b, h = int(params["b"]), int(params["height"])
            if b < 2 or h < 0:
                raise ConfigError("tree needs b >= 2 and height >= 0")
            n = (b ** (h + 1) - 1) // (b - 1)
            edges = tuple((v, b * v + k) for v in range(n) for k in range(1, b + 1) if b * v + k < n)
            return SpinGraph(n, edges, "bary_tree", (("b", b), ("height", h)), d)
        if kind == "grid2d":
            w, h = int(params["w"]), int(params["h"])
            if w < 1 or h < 1:
                raise ConfigError("grid needs w, h >= 1")
            edges = []
            for r in range(h):
                for c in range(w):
                    v = r * w + c
                    if c + 1 < w:
                        edges.append((v, v + 1))
                    if r + 1 < h:
                        edges.append((v, v + w))
            return SpinGraph(w * h, tuple(edges), "grid2d", (("w", w), ("h", h)), d)
        if kind == "custom":
            return SpinGraph(int(params["n"]), tuple(map(tuple, params["edges"])), "custom", (), d)
    except KeyError as exc:
        raise ConfigError(f"missing graph parameter {exc}") from None
    raise ConfigError(f"unknown graph kind {kind!r}")


# ---------------------------------------------------------------- regions


def region(g: SpinGraph, verts: Iterable[int]) -> Region:
    r = tuple(sorted(set(int(v) for v in verts)))
    if any(v < 0 or v >= g.n for v in r):
        raise ValueError(f"region {r} not inside graph with {g.n} vertices")
    return r


def distance(g: SpinGraph, A: Sequence[int], B: Sequence[int]) -> int:
    if len(A) == 0 or len(B) == 0:
        raise ValueError("distance of empty region")
    return int(g.dist[np.ix_(list(A), list(B))].min())


def boundary(g: SpinGraph, A: Sequence[int], r: int = 2) -> Region:
    """∂A = {x ∉ A : dist(x, A) < r}."""
    if r < 2:
        raise ValueError("interaction range r must be >= 2")
    A = list(A)
    if not A:
        return ()
    dm = g.dist[:, A].min(axis=1)
    sa = set(A)
    return tuple(int(x) for x in np.nonzero(dm < r)[0] if x not in sa)


def closure(g: SpinGraph, A: Sequence[int], r: int = 2) -> Region:
    """A∂ = A ∪ ∂A."""
    return tuple(sorted(set(A) | set(boundary(g, A, r))))


def boundary_in(g: SpinGraph, A: Sequence[int], B: Sequence[int]) -> Region:
    """∂_B A = (∂A) ∩ B."""
    return tuple(sorted(set(boundary(g, A)) & set(B)))


def shields(g: SpinGraph, A: Sequence[int], B: Sequence[int], C: Sequence[int]) -> bool:
    """True when no edge joins A and C directly (B separates them)."""
    sa, sc = set(A), set(C)
    return not any((a in sa and c in sc) or (a in sc and c in sa) for a, c in g.edges)


# ---------------------------------------------------------------- coloring


@dataclass(frozen=True)
class Coloring:
    labels: tuple[int, ...]

    def check(self, g: SpinGraph) -> None:
        if len(self.labels) != g.n:
            raise ValueError("coloring length does not match graph")
        for a, b in g.edges:
            if self.labels[a] == self.labels[b]:
                raise ValueError(f"edge ({a},{b}) joins equal labels")

    def part(self, label: int, within: Sequence[int] | None = None) -> Region:
        vs = range(len(self.labels)) if within is None else within
        return tuple(v for v in vs if self.labels[v] == label)


def two_coloring(g: SpinGraph) -> Coloring:
    lab = [-1] * g.n
    lab[0] = 0
    q = deque([0])
    while q:
        v = q.popleft()
        for u in g.adjacency[v]:
            if lab[u] < 0:
                lab[u] = 1 - lab[v]
                q.append(u)
            elif lab[u] == lab[v]:
                raise NotColorableError(f"odd cycle through edge ({v},{u})")
    return Coloring(tuple(lab))


# ---------------------------------------------------------------- growth constant


def connected_subset_count(g: SpinGraph, e: Edge, m: int) -> int:
    """Number of connected edge subsets of size ``m`` that contain ``e``."""
    if m < 1:
        raise ValueError("m must be >= 1")
    if m > MAX_SUBSET_M:
        raise ResourceError(f"subset enumeration capped at m={MAX_SUBSET_M}")
    e = (min(e), max(e))
    if e not in g.edges:
        raise ValueError(f"{e} is not an edge")
    touching: dict[int, list[Edge]] = {v: [] for v in range(g.n)}
    for a, b in g.edges:
        touching[a].append((a, b))
        touching[b].append((a, b))
    level = {frozenset([e])}
    for _ in range(m - 1):
        nxt = set()
        for s in level:
            verts = {v for ed in s for v in ed}
            for v in verts:
                for ed in touching[v]:
                    if ed not in s:
                        nxt.add(s | {ed})
        level = nxt
    return len(level)


def growth_constant(g: SpinGraph, m_max: int = 5) -> float:
    """Empirical ν = max over edges and m ≤ m_max of n_m^{1/m}."""
    best = 1.0
    for e in g.edges:
        for m in range(1, min(m_max, len(g.edges)) + 1):
            best = max(best, connected_subset_count(g, e, m) ** (1.0 / m))
    return best


def high_temperature_beta(J: float, nu: float) -> float:
    """Threshold 1/(10 e J ν) below which the high-temperature clustering regime applies."""
    return 1.0 / (10.0 * math.e * J * nu)


# ---------------------------------------------------------------- coarse-grained sets


@dataclass(frozen=True)
class CoarseGraining:
    sets: tuple[Region, ...]
    centers: tuple[int, ...]
    max_coverage: int

    @property
    def m(self) -> int:
        """Each vertex lies in at most 2m of the enlarged sets R_k∂."""
        return max(1, math.ceil(self.max_coverage / 2))


def coarse_grain_sets(g: SpinGraph, coloring: Coloring, l0: int, rooted: bool = False) -> CoarseGraining:
    """One set R_k per label-0 vertex, with ∂R_k free of label-0 vertices.

    Chains default to [x−l0, x+l0]; ``rooted=True`` uses the tree form [x, x+l0].
    """
    coloring.check(g)
    lab = coloring.labels
    centers = coloring.part(0)
    sets = []
    if g.kind in ("chain", "bary_tree"):
        if l0 < 2 or l0 % 2:
            raise ValueError("l0 must be even and >= 2 for chains and trees")
        for x in centers:
            if g.kind == "chain":
                lo = x if rooted else max(0, x - l0)
                sets.append(tuple(range(lo, min(g.n - 1, x + l0) + 1)))
            else:
                sets.append(g.subtree(x, l0))
    elif g.kind == "grid2d":
        if l0 < 1:
            raise ValueError("l0 must be >= 1 for grids")
        for x in centers:
            rx, cx = g.coords(x)
            r = []
            for v in range(g.n):
                rv, cv = g.coords(v)
                k = max(abs(rv - rx), abs(cv - cx))
                if k <= l0 - 1 or (k <= l0 and lab[v] == 0):
                    r.append(v)
            sets.append(tuple(r))
    else:
        raise ValueError(f"coarse graining not defined for graph kind {g.kind!r}")
    for s in sets:
        bad = [v for v in boundary(g, s) if lab[v] == 0]
        if bad:
            raise AssertionError(f"boundary of {s} meets label-0 vertices {bad}")
    cover = np.zeros(g.n, dtype=int)
    for s in sets:
        for v in closure(g, s):
            cover[v] += 1
    if (cover == 0).any():
        raise AssertionError("coarse-grained sets do not cover the graph")
    return CoarseGraining(tuple(sets), centers, int(cover.max()))


# ---------------------------------------------------------------- covering schedules


@dataclass(frozen=True)
class CoveringSchedule:
    target: Region
    pairs: tuple[tuple[Region, Region], ...]
    l: int
    case: str
    L: int
    aligned: tuple[bool, ...] = field(default=())

    def check(self, g: SpinGraph) -> None:
        tgt = set(self.target)
        overlaps = []
        for C, D in self.pairs:
            if set(C) | set(D) != tgt:
                raise AssertionError("C ∪ D differs from the target")
            cd, dc = sorted(set(C) - set(D)), sorted(set(D) - set(C))
            if distance(g, cd, dc) != self.l:
                raise AssertionError("overlap distance mismatch")
            overlaps.append(set(C) & set(D))
        for i in range(len(overlaps)):
            for j in range(i + 1, len(overlaps)):
                if overlaps[i] & overlaps[j]:
                    raise AssertionError("overlaps of distinct partitions intersect")


def _levels(g: SpinGraph, target: Sequence[int]) -> dict[int, int]:
    """Level coordinate used to slice ``target`` (interval offset, depth, or row)."""
    tgt = sorted(target)
    if g.kind == "chain":
        if tgt != list(range(tgt[0], tgt[-1] + 1)):
            raise ValueError("chain target must be an interval")
        return {v: v - tgt[0] for v in tgt}
    if g.kind == "bary_tree":
        root = tgt[0]
        height = max(g.depth[v] for v in tgt) - g.depth[root]
        if tuple(tgt) != g.subtree(root, height):
            raise ValueError("tree target must be a full subtree B_{x,L}")
        return {v: g.depth[v] - g.depth[root] for v in tgt}
    if g.kind == "grid2d":
        rows = [g.coords(v)[0] for v in tgt]
        cols = [g.coords(v)[1] for v in tgt]
        box = {r * g.param("w") + c for r in range(min(rows), max(rows) + 1)
               for c in range(min(cols), max(cols) + 1)}
        if box != set(tgt):
            raise ValueError("grid target must be a full box")
        return {v: g.coords(v)[0] - min(rows) for v in tgt}
    raise ValueError(f"covering schedules are not defined for graph kind {g.kind!r}")


def partition_pair(g: SpinGraph, target: Sequence[int], t: int, l: int) -> tuple[Region, Region]:
    """C = levels ≤ t, D = levels ≥ t−l+2, so that dist(C∖D, D∖C) = l."""
    lev = _levels(g, target)
    C = tuple(sorted(v for v, k in lev.items() if k <= t))
    D = tuple(sorted(v for v, k in lev.items() if k >= t - l + 2))
    return C, D


def covering_schedule(g: SpinGraph, target: Sequence[int], case: str = "case2", N: int = 2,
                      align: bool = False) -> CoveringSchedule:
    """Partitions {C_i, D_i} of ``target`` with pairwise disjoint overlaps.

    case1 uses overlap ⌊√L⌋, case2 uses L // N.  Cuts step by l, giving ⌊L/l⌋
    partitions.  With ``align=True`` only cuts whose C and D endpoints sit on
    label-0 levels are kept (fewer partitions, see the notes).
    """
    target = region(g, target)
    lev = _levels(g, target)
    L = max(lev.values())
    if case == "case1":
        l, minimal = int(math.isqrt(L)), 4
    elif case == "case2":
        if N < 2:
            raise ValueError("N must be >= 2")
        l, minimal = L // N, 2 * N
    else:
        raise ValueError(f"unknown case {case!r}")
    if l < 2 or L < minimal:
        raise ScheduleInfeasibleError(f"L={L} too small for {case}", minimal)
    lab = two_coloring(g).labels
    root_label = lab[target[0]]

    def level_label(k: int) -> int:
        return root_label if k % 2 == 0 else 1 - root_label

    pairs, flags = [], []
    t = l - 1
    last_overlap_end = -1
    while t <= L - 1:
        lo = t - l + 2
        ok = level_label(t) == 0 and level_label(lo) == 0 and level_label(0) == 0 and level_label(L) == 0
        if (not align or ok) and lo > last_overlap_end:
            pairs.append(partition_pair(g, target, t, l))
            flags.append(ok)
            last_overlap_end = t
            t += l
        else:
            t += 1
    if not pairs:
        raise ScheduleInfeasibleError(f"no admissible partition for L={L}", minimal)
    sched = CoveringSchedule(target, tuple(pairs), l, case, L, tuple(flags))
    sched.check(g)
    return sched
