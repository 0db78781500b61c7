"""Min-ratio cycle solvers.

A min-ratio cycle instance assigns each edge a gradient and a positive
length; the goal is the circulation minimizing <g, c> / ||L c||_1, which is
always attained at a simple oriented cycle. Three solvers live here:

  * brute_force_min_ratio_cycle: enumerates simple cycles (test oracle).
  * exact_min_ratio_cycle: parametric search with negative-cycle detection.
  * MonotoneMrcState: the incremental oracle used by the multiplicative
    weights loop. Lengths only ever increase and edges only arrive, which is
    what makes the incremental contract achievable; queries ask for any
    cycle of ratio at most -alpha/kappa.

The update-log replay utilities at the bottom verify the stability witness
conditions that justify running the oracle against adaptive update
sequences.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import OracleError
from .graph import IncrementalGraph
from .trees import SpanningForest

BRUTE_FORCE_VERTEX_LIMIT = 16
BRUTE_FORCE_EDGE_LIMIT = 24


class MrcInstance:
    """Static instance: a graph plus per-edge gradients and positive lengths."""

    def __init__(self, graph: IncrementalGraph, gradients: np.ndarray,
                 lengths: np.ndarray):
        gradients = np.asarray(gradients, dtype=float)
        lengths = np.asarray(lengths, dtype=float)
        if gradients.shape != (graph.m,) or lengths.shape != (graph.m,):
            raise ValueError("gradient/length arrays must match the edge count")
        if not np.all(np.isfinite(gradients)):
            raise ValueError("gradients must be finite")
        if not np.all(lengths > 0):
            raise ValueError("edge lengths must be strictly positive")
        self.graph = graph
        self.gradients = gradients
        self.lengths = lengths


@dataclass
class CycleSolution:
    """An oriented cycle with its gradient sum, length sum, and ratio.

    `edges` lists edge ids, `signs` is +1 where the cycle traverses the edge
    along its stored orientation. ratio = gradient / length.
    """

    edges: np.ndarray
    signs: np.ndarray
    gradient: float
    length: float
    ratio: float

    def circulation(self, m: int) -> np.ndarray:
        c = np.zeros(m)
        np.add.at(c, self.edges, self.signs.astype(float))
        return c


def _solution_from_cycle(edges: np.ndarray, signs: np.ndarray, g: np.ndarray,
                         lengths: np.ndarray) -> CycleSolution:
    gradient = float(signs.astype(float) @ g[edges])
    length = float(lengths[edges].sum())
    return CycleSolution(edges=edges, signs=signs, gradient=gradient,
                         length=length, ratio=gradient / length)


def brute_force_min_ratio_cycle(instance: MrcInstance) -> CycleSolution | None:
    """Minimum-ratio simple cycle by exhaustive enumeration.

    Each simple cycle is visited once, anchored at its smallest vertex with
    the smaller-id endpoint edge first; both orientations are scored. Returns
    None when the multigraph is acyclic. Only meant for small instances.
    """
    graph = instance.graph
    n, m = graph.n, graph.m
    if n > BRUTE_FORCE_VERTEX_LIMIT and m > BRUTE_FORCE_EDGE_LIMIT:
        raise ValueError(
            f"instance too large to enumerate (n={n}, m={m}; "
            f"need n <= {BRUTE_FORCE_VERTEX_LIMIT} or m <= {BRUTE_FORCE_EDGE_LIMIT})"
        )
    g, lengths = instance.gradients, instance.lengths
    adj: list[list[tuple[int, int, int]]] = [[] for _ in range(n)]
    for e in range(m):
        adj[graph.tails[e]].append((e, graph.heads[e], 1))
        adj[graph.heads[e]].append((e, graph.tails[e], -1))

    best: CycleSolution | None = None
    edges_stack: list[int] = []
    signs_stack: list[int] = []
    used = np.zeros(m, dtype=bool)
    visited = np.zeros(n, dtype=bool)

    def extend(at: int, anchor: int, grad: float, length: float) -> None:
        nonlocal best
        for e, to, sign in adj[at]:
            if used[e]:
                continue
            if to == anchor:
                if edges_stack and edges_stack[0] > e:
                    continue
                total_grad = grad + sign * g[e]
                total_len = length + lengths[e]
                ratio = -abs(total_grad) / total_len
                if best is None or ratio < best.ratio:
                    edges = np.asarray(edges_stack + [e], dtype=np.int64)
                    signs = np.asarray(signs_stack + [sign], dtype=np.int64)
                    if total_grad > 0:
                        signs = -signs
                    best = _solution_from_cycle(edges, signs, g, lengths)
            elif not visited[to] and to > anchor:
                used[e] = True
                visited[to] = True
                edges_stack.append(e)
                signs_stack.append(sign)
                extend(to, anchor, grad + sign * g[e], length + lengths[e])
                edges_stack.pop()
                signs_stack.pop()
                visited[to] = False
                used[e] = False

    for anchor in range(n):
        visited[anchor] = True
        extend(anchor, anchor, 0.0, 0.0)
        visited[anchor] = False
    return best


def _negative_cycle(n: int, tails: np.ndarray, heads: np.ndarray,
                    forward_cost: np.ndarray, backward_cost: np.ndarray
                    ) -> tuple[np.ndarray, np.ndarray] | None:
    """A strictly negative cycle in the bidirected arc graph, or None.

    Bellman-Ford from a virtual source (all distances start at zero) with
    simultaneous relaxation; any cycle in the resulting parent graph has
    strictly negative weight. Returns (edge ids, orientation signs).
    """
    m = tails.size
    if m == 0 or n == 0:
        return None
    arc_tail = np.concatenate((tails, heads))
    arc_head = np.concatenate((heads, tails))
    cost = np.concatenate((forward_cost, backward_cost))
    dist = np.zeros(n)
    parent = np.full(n, -1, dtype=np.int64)
    improved = np.empty(0, dtype=np.int64)
    for _ in range(n):
        cand = dist[arc_tail] + cost
        new = dist.copy()
        np.minimum.at(new, arc_head, cand)
        improved = np.flatnonzero(new < dist)
        if improved.size == 0:
            return None
        winners = np.flatnonzero((cand == new[arc_head]) &
                                 (new[arc_head] < dist[arc_head]))
        parent[arc_head[winners]] = winners
        dist = new

    # Walk n parent steps to guarantee we are inside a parent cycle, then
    # collect it. Parent cycles are vertex-simple, so no edge repeats.
    v = int(improved[0])
    for _ in range(n):
        v = int(arc_tail[parent[v]])
    seen: dict[int, int] = {}
    arcs: list[int] = []
    u = v
    while u not in seen:
        seen[u] = len(arcs)
        a = int(parent[u])
        arcs.append(a)
        u = int(arc_tail[a])
    cycle_arcs = np.asarray(arcs[seen[u]:], dtype=np.int64)
    edges = np.where(cycle_arcs < m, cycle_arcs, cycle_arcs - m)
    signs = np.where(cycle_arcs < m, 1, -1).astype(np.int64)
    return edges, signs


def _cancel_opposing(edges: np.ndarray, signs: np.ndarray
                     ) -> tuple[np.ndarray, np.ndarray]:
    """Drop edges traversed once in each direction (defensive; the extracted
    parent cycles are vertex-simple and should never contain such pairs)."""
    coef: dict[int, int] = {}
    for e, s in zip(edges.tolist(), signs.tolist()):
        coef[e] = coef.get(e, 0) + s
    kept = [(e, s) for e, s in coef.items() if s != 0]
    if len(kept) == len(edges):
        return edges, signs
    out_edges = np.asarray([e for e, _ in kept], dtype=np.int64)
    out_signs = np.asarray([s for _, s in kept], dtype=np.int64)
    return out_edges, out_signs


def exact_min_ratio_cycle(instance: MrcInstance, tol: float = 1e-9
                          ) -> CycleSolution | None:
    """Minimum-ratio cycle to additive tolerance via parametric search.

    Bisects the shift mu over [-(m * max|g| / min(l) + 1), 0]: a negative
    cycle under arc costs g - mu*l exists exactly when some cycle has ratio
    below mu. Returns None when the multigraph is acyclic; when no cycle has
    negative gradient at all, every cycle gradient is zero and any
    fundamental cycle attains the minimum ratio 0.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    graph, g, lengths = instance.graph, instance.gradients, instance.lengths
    n, m = graph.n, graph.m
    tails, heads = graph.edge_arrays()
    forest = SpanningForest(n, graph.tails, graph.heads, range(m))
    off_tree = np.flatnonzero(~forest.tree_edge_mask(m))
    if off_tree.size == 0:
        return None

    found = _negative_cycle(n, tails, heads, g, -g)
    if found is None:
        edges, signs = forest.fundamental_cycle(int(off_tree[0]), graph.tails,
                                                graph.heads)
        return _solution_from_cycle(edges, signs, g, lengths)

    lo = -(m * float(np.max(np.abs(g))) / float(np.min(lengths)) + 1.0)
    hi = 0.0
    best = found
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        probe = _negative_cycle(n, tails, heads, g - mid * lengths,
                                -g - mid * lengths)
        if probe is None:
            lo = mid
        else:
            hi = mid
            best = probe
    edges, signs = _cancel_opposing(*best)
    solution = _solution_from_cycle(edges, signs, g, lengths)
    if solution.ratio > 0:
        raise OracleError("parametric search extracted a non-negative cycle")
    return solution


@dataclass
class InsertEdge:
    """Insertion of a new edge with its gradient and initial length."""

    tail: int
    head: int
    gradient: float
    length: float


@dataclass
class IncreaseLength:
    """Monotone length update; `length` must not be below the current one."""

    edge: int
    length: float


class MonotoneMrcState:
    """Incremental min-ratio oracle under insertions and length increases.

    Queries return a CycleSolution with ratio <= -alpha/kappa whenever the
    backend can find one and None otherwise. The exact backend (kappa = 1)
    misses a qualifying cycle only when none exists; the tree-collection
    backend trades completeness for cheap queries and is configured with the
    empirical kappa it is trusted for.
    """

    def __init__(self, instance: MrcInstance, alpha: float, kappa: float = 1.0,
                 backend: str = "exact", seed: int | None = None,
                 capacity: int | None = None):
        if alpha <= 0:
            raise ValueError("target ratio alpha must be positive")
        if kappa < 1:
            raise ValueError("kappa must be at least 1")
        if backend not in ("exact", "trees"):
            raise ValueError(f"unknown backend {backend!r}")
        if backend == "exact" and kappa != 1.0:
            raise ValueError("the exact backend is exactly kappa = 1")
        n, m = instance.graph.n, instance.graph.m
        capacity = max(capacity or 0, 2 * m, 4)
        self.n = n
        self.m = m
        self.alpha = alpha
        self.kappa = kappa
        self.backend = backend
        self.queries = 0
        self._tails = np.zeros(capacity, dtype=np.int64)
        self._heads = np.zeros(capacity, dtype=np.int64)
        self._grads = np.zeros(capacity)
        self._lengths = np.zeros(capacity)
        self._tails[:m] = instance.graph.tails
        self._heads[:m] = instance.graph.heads
        self._grads[:m] = instance.gradients
        self._lengths[:m] = instance.lengths
        self._trees = (_TreeCollection(self, seed) if backend == "trees"
                       else None)

    @property
    def tails(self) -> np.ndarray:
        return self._tails[:self.m]

    @property
    def heads(self) -> np.ndarray:
        return self._heads[:self.m]

    @property
    def gradients(self) -> np.ndarray:
        return self._grads[:self.m]

    @property
    def lengths(self) -> np.ndarray:
        return self._lengths[:self.m]

    def _grow(self) -> None:
        capacity = 2 * self._tails.size
        for name in ("_tails", "_heads", "_grads", "_lengths"):
            old = getattr(self, name)
            fresh = np.zeros(capacity, dtype=old.dtype)
            fresh[:self.m] = old[:self.m]
            setattr(self, name, fresh)

    def insert(self, update: InsertEdge) -> int:
        u, v = update.tail, update.head
        if not (0 <= u < self.n and 0 <= v < self.n):
            raise ValueError(f"edge endpoints ({u}, {v}) out of range")
        if u == v:
            raise ValueError("self-loops are not allowed")
        if update.length <= 0:
            raise ValueError("edge length must be strictly positive")
        if not math.isfinite(update.gradient):
            raise ValueError("edge gradient must be finite")
        if self.m == self._tails.size:
            self._grow()
        e = self.m
        self._tails[e] = u
        self._heads[e] = v
        self._grads[e] = update.gradient
        self._lengths[e] = update.length
        self.m += 1
        if self._trees is not None:
            self._trees.note_insert(e)
        return e

    def increase_length(self, update: IncreaseLength) -> None:
        e = update.edge
        if not 0 <= e < self.m:
            raise ValueError(f"edge {e} does not exist")
        old = self._lengths[e]
        if update.length < old:
            raise ValueError(
                f"length of edge {e} may not decrease ({old} -> {update.length})"
            )
        self._lengths[e] = update.length
        if self._trees is not None:
            self._trees.note_increase(update.length - old)

    def query(self) -> CycleSolution | None:
        self.queries += 1
        if self.m < 2:
            return None
        if self._trees is not None:
            return self._trees.query()
        return self._exact_query()

    def _exact_query(self) -> CycleSolution | None:
        g = self.gradients
        lengths = self.lengths
        found = _negative_cycle(self.n, self.tails, self.heads,
                                g + self.alpha * lengths,
                                -g + self.alpha * lengths)
        if found is None:
            return None
        edges, signs = _cancel_opposing(*found)
        solution = _solution_from_cycle(edges, signs, g, lengths)
        if solution.ratio > -self.alpha:
            # Float-boundary extraction; treat as no qualifying cycle.
            return None
        return solution


class _TreeCollection:
    """Spanning-tree backend: fundamental-cycle candidates over a collection
    of randomized minimum-length trees, rebuilt when the total length doubles
    or an insertion connects components."""

    def __init__(self, state: MonotoneMrcState, seed: int | None):
        self.state = state
        self.rng = np.random.Generator(np.random.Philox(key=seed or 0))
        self.count = 4 * max(1, math.ceil(math.log2(max(state.n, 2))))
        self._union = list(range(state.n))
        for u, v in zip(state.tails.tolist(), state.heads.tolist()):
            self._link(u, v)
        self.forests: list[SpanningForest] = []
        self.total = float(state.lengths.sum())
        self.checkpoint = 0.0
        self.rebuild()

    def _find(self, x: int) -> int:
        union = self._union
        while union[x] != x:
            union[x] = union[union[x]]
            x = union[x]
        return x

    def _link(self, u: int, v: int) -> bool:
        ru, rv = self._find(u), self._find(v)
        if ru == rv:
            return False
        self._union[ru] = rv
        return True

    def rebuild(self) -> None:
        state = self.state
        m = state.m
        self.forests = []
        for _ in range(self.count):
            keys = state.lengths * self.rng.uniform(1.0, 4.0, m)
            order = np.argsort(keys, kind="stable")
            self.forests.append(
                SpanningForest(state.n, state.tails, state.heads, order))
        self.checkpoint = max(self.total, 1e-300)

    def note_insert(self, e: int) -> None:
        state = self.state
        self.total += float(state.lengths[e])
        connected = self._link(int(state.tails[e]), int(state.heads[e]))
        if connected or self.total >= 2.0 * self.checkpoint:
            self.rebuild()

    def note_increase(self, delta: float) -> None:
        self.total += delta
        if self.total >= 2.0 * self.checkpoint:
            self.rebuild()

    def query(self) -> CycleSolution | None:
        state = self.state
        m = state.m
        g, lengths = state.gradients, state.lengths
        tails, heads = state.tails, state.heads
        threshold = -state.alpha / state.kappa
        best_ratio = 0.0
        best: tuple[SpanningForest, int] | None = None
        for forest in self.forests:
            off = np.flatnonzero(~forest.tree_edge_mask(m))
            if off.size == 0:
                continue
            gsum = forest.prefix_sums(g, signed=True)
            lsum = forest.prefix_sums(lengths, signed=False)
            u, v = tails[off], heads[off]
            meet = forest.lca_many(u, v)
            grads = g[off] + gsum[u] - gsum[v]
            lens = lengths[off] + lsum[u] + lsum[v] - 2.0 * lsum[meet]
            ratios = -np.abs(grads) / lens
            pick = int(np.argmin(ratios))
            if ratios[pick] < best_ratio:
                best_ratio = float(ratios[pick])
                best = (forest, int(off[pick]))
        if best is None or best_ratio > threshold:
            return None
        forest, e = best
        edges, signs = forest.fundamental_cycle(e, state.tails, state.heads)
        solution = _solution_from_cycle(edges, signs, g, lengths)
        if solution.gradient > 0:
            solution = _solution_from_cycle(edges, -signs, g, lengths)
        if solution.ratio > threshold:
            return None
        return solution


def mrc_init(instance: MrcInstance, alpha: float, kappa: float = 1.0,
             backend: str = "exact", seed: int | None = None,
             capacity: int | None = None) -> MonotoneMrcState:
    """Initialize the incremental min-ratio oracle on the given instance."""
    return MonotoneMrcState(instance, alpha, kappa=kappa, backend=backend,
                            seed=seed, capacity=capacity)


def mrc_update(state: MonotoneMrcState,
               update: InsertEdge | IncreaseLength) -> None:
    """Apply one edge insertion or monotone length increase."""
    if isinstance(update, InsertEdge):
        state.insert(update)
    elif isinstance(update, IncreaseLength):
        state.increase_length(update)
    else:
        raise TypeError(f"unsupported update {update!r}")


def mrc_query(state: MonotoneMrcState) -> CycleSolution | None:
    """Ask for any cycle with ratio <= -alpha/kappa; None when unavailable."""
    return state.query()


@dataclass
class LogInsert:
    """Insertion of edge id `edge` with endpoints and attributes."""

    edge: int
    tail: int
    head: int
    gradient: float
    length: float


@dataclass
class LogDelete:
    edge: int


class UpdateLog:
    """Batches of edge insertions and deletions with stable edge ids.

    Stage t is the graph after batches[0..t]. A length increase is encoded
    as a deletion followed by a re-insertion of the same edge id within one
    batch, so untouched presence intervals are exactly the spans the width
    stability condition quantifies over.
    """

    def __init__(self, n: int):
        self.n = n
        self.batches: list[list[LogInsert | LogDelete]] = []

    def append_batch(self, ops: Iterable[LogInsert | LogDelete]) -> None:
        self.batches.append(list(ops))

    def replay(self):
        """Yields (present, touched) per stage; `present` maps edge id to its
        LogInsert and `touched` is the set of ids updated by the batch."""
        present: dict[int, LogInsert] = {}
        for index, batch in enumerate(self.batches):
            touched: set[int] = set()
            for op in batch:
                if isinstance(op, LogInsert):
                    if op.edge in present:
                        raise ValueError(
                            f"batch {index}: edge {op.edge} inserted twice")
                    if op.length <= 0:
                        raise ValueError(
                            f"batch {index}: nonpositive length on {op.edge}")
                    present[op.edge] = op
                elif isinstance(op, LogDelete):
                    if op.edge not in present:
                        raise ValueError(
                            f"batch {index}: edge {op.edge} deleted but absent")
                    del present[op.edge]
                else:
                    raise TypeError(f"unsupported log entry {op!r}")
                touched.add(op.edge)
            yield present, touched


def _support(c_star) -> dict[int, float]:
    if isinstance(c_star, Mapping):
        items = c_star.items()
    else:
        items = enumerate(np.asarray(c_star, dtype=float).tolist())
    return {int(e): float(c) for e, c in items if c != 0.0}


def check_stability_witness(log: UpdateLog, c_star,
                            widths: Sequence[Mapping[int, float]]) -> bool:
    """Verify the per-stage witness conditions for an update log.

    The hidden circulation at stage t is c_star when its whole support is
    present and zero otherwise. Checks, at every stage: (1) that hidden
    circulation balances at every vertex, (2) widths dominate |length *
    coefficient| on every present edge, (3) no width decays below half its
    minimum over the edge's untouched presence interval, and (4) the total
    width never decreases. Width mappings may omit edges, which count as
    width zero; a key for an absent edge is an indexing error.
    """
    if len(widths) != len(log.batches):
        raise ValueError(
            f"got {len(widths)} width stages for {len(log.batches)} batches")
    supp = _support(c_star)
    scale = max([abs(c) for c in supp.values()], default=0.0)
    running_min: dict[int, float] = {}
    prev_total = 0.0
    for t, (present, touched) in enumerate(log.replay()):
        stage = widths[t]
        for e in stage:
            if e not in present:
                raise ValueError(f"stage {t}: width given for absent edge {e}")
        supported = all(e in present for e in supp)
        if supported and supp:
            net = np.zeros(log.n)
            for e, coef in supp.items():
                op = present[e]
                net[op.tail] -= coef
                net[op.head] += coef
            if float(np.max(np.abs(net))) > 1e-8 * (1.0 + scale):
                return False
        total = 0.0
        for e, op in present.items():
            w = float(stage.get(e, 0.0))
            if w < 0:
                return False
            total += w
            coef = supp.get(e, 0.0) if supported else 0.0
            if abs(op.length * coef) > w * (1 + 1e-9) + 1e-12:
                return False
            if e in touched or e not in running_min:
                running_min[e] = w
            else:
                if w > 2.0 * running_min[e] * (1 + 1e-9) + 1e-12:
                    return False
                running_min[e] = min(running_min[e], w)
        running_min = {e: running_min[e] for e in present}
        if total < prev_total * (1 - 1e-9) - 1e-12:
            return False
        prev_total = total
    return True


def canonical_stability_widths(log: UpdateLog, c_star
                               ) -> list[dict[int, float]]:
    """The witness that always works for monotone updates: on the support of
    c_star, each width is |current length * coefficient|; zero elsewhere."""
    supp = _support(c_star)
    stages = []
    for present, _ in log.replay():
        stages.append({e: abs(op.length * supp[e])
                       for e, op in present.items() if e in supp})
    return stages
