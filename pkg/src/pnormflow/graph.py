"""Append-only multigraph and the smoothed l_p-norm objective.

The solver works on undirected multigraphs whose edges carry an orientation
purely for bookkeeping: an edge e = (u, v) with flow f_e moves f_e units from
u to v when f_e > 0.  Net demand follows the incidence convention that one
unit of flow on (u, v) contributes -1 at u and +1 at v.

Vertices are dense integers 0..n-1, edge ids are dense in insertion order,
self-loops are rejected and parallel edges are allowed.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import GraphError

# Per-component demand sums are "zero" within this fraction of ||d||_1.
DEMAND_SUM_RTOL = 1e-9
# A vector c is a circulation when ||net_demand(c)||_inf <= this * (1 + ||c||_inf).
CIRCULATION_RTOL = 1e-8


class IncrementalGraph:
    """Undirected multigraph supporting edge insertion only.

    Maintains a union-find over vertices so connectivity queries, and
    routability of an attached demand vector, are amortized near-constant
    per insertion.
    """

    def __init__(self, n: int):
        if n < 1:
            raise GraphError(f"vertex count must be positive, got {n}")
        self.n = n
        self.tails: list[int] = []
        self.heads: list[int] = []
        self._parent = list(range(n))
        self._rank = [0] * n
        self._components = n
        # Demand tracking (attach_demand): per-root component sums and the
        # count of components whose sum is not zero within tolerance.
        self._demand: np.ndarray | None = None
        self._comp_sum: np.ndarray | None = None
        self._bad_components = 0
        self._demand_tol = 0.0
        self._arrays_len = 0
        self._tails_arr = np.empty(0, dtype=np.int64)
        self._heads_arr = np.empty(0, dtype=np.int64)

    @property
    def m(self) -> int:
        return len(self.tails)

    def add_edge(self, u: int, v: int) -> int:
        """Insert an edge and return its dense id.

        Rejects self-loops and out-of-range endpoints; parallel edges are
        fine and get fresh ids.
        """
        if not (0 <= u < self.n and 0 <= v < self.n):
            raise GraphError(f"vertex out of range: ({u}, {v}) with n={self.n}")
        if u == v:
            raise GraphError(f"self-loop rejected at vertex {u}")
        self.tails.append(u)
        self.heads.append(v)
        self._union(u, v)
        return len(self.tails) - 1

    def find(self, v: int) -> int:
        """Union-find root of v with path halving."""
        parent = self._parent
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    def connected(self, u: int, v: int) -> bool:
        return self.find(u) == self.find(v)

    def _union(self, u: int, v: int) -> None:
        ru, rv = self.find(u), self.find(v)
        if ru == rv:
            return
        if self._rank[ru] < self._rank[rv]:
            ru, rv = rv, ru
        self._parent[rv] = ru
        if self._rank[ru] == self._rank[rv]:
            self._rank[ru] += 1
        self._components -= 1
        if self._comp_sum is not None:
            su, sv = float(self._comp_sum[ru]), float(self._comp_sum[rv])
            bad_before = int(abs(su) > self._demand_tol) + int(
                abs(sv) > self._demand_tol)
            merged = su + sv
            self._comp_sum[ru] = merged
            self._comp_sum[rv] = 0.0
            self._bad_components += int(abs(merged) > self._demand_tol) - bad_before

    def attach_demand(self, d: np.ndarray) -> None:
        """Register d for incremental routability tracking."""
        d = np.asarray(d, dtype=float)
        if d.shape != (self.n,):
            raise GraphError(f"demand length {d.shape} does not match n={self.n}")
        self._demand = d
        self._demand_tol = DEMAND_SUM_RTOL * float(np.abs(d).sum())
        sums = np.zeros(self.n)
        for v in range(self.n):
            sums[self.find(v)] += d[v]
        self._comp_sum = sums
        roots = [v for v in range(self.n) if self.find(v) == v]
        self._bad_components = sum(1 for r in roots if abs(sums[r]) > self._demand_tol)

    def edge_arrays(self) -> tuple[np.ndarray, np.ndarray]:
        """Tails and heads as int64 arrays, cached until the graph grows."""
        if self._arrays_len != self.m:
            self._tails_arr = np.asarray(self.tails, dtype=np.int64)
            self._heads_arr = np.asarray(self.heads, dtype=np.int64)
            self._arrays_len = self.m
        return self._tails_arr, self._heads_arr

    def copy(self) -> "IncrementalGraph":
        g = IncrementalGraph(self.n)
        for u, v in zip(self.tails, self.heads):
            g.add_edge(u, v)
        return g


def net_demand(graph: IncrementalGraph, flow: np.ndarray) -> np.ndarray:
    """Vertex imbalance of a flow: +f_e at the head of e, -f_e at the tail.

    Works on float arrays and on object arrays (e.g. Fractions), where the
    accumulation is exact.
    """
    flow = np.asarray(flow)
    if flow.shape != (graph.m,):
        raise GraphError(f"flow length {flow.shape} does not match m={graph.m}")
    if flow.dtype == object:
        out = np.array([0] * graph.n, dtype=object)
    else:
        out = np.zeros(graph.n, dtype=flow.dtype if flow.dtype.kind == "f" else float)
    tails, heads = graph.edge_arrays()
    np.add.at(out, heads, flow)
    np.subtract.at(out, tails, flow)
    return out


def demand_routable(graph: IncrementalGraph, d: np.ndarray) -> bool:
    """True iff every connected component's demand entries sum to zero.

    Uses the incrementally maintained per-component sums when d is the
    attached demand; otherwise recomputes in O(n).
    """
    if graph._demand is not None and d is graph._demand:
        return graph._bad_components == 0
    d = np.asarray(d, dtype=float)
    tol = DEMAND_SUM_RTOL * float(np.abs(d).sum())
    sums: dict[int, float] = {}
    for v in range(graph.n):
        r = graph.find(v)
        sums[r] = sums.get(r, 0.0) + d[v]
    return all(abs(s) <= tol for s in sums.values())


def is_circulation(graph: IncrementalGraph, c: np.ndarray) -> bool:
    """True iff c routes the zero demand, within scale-aware tolerance."""
    c = np.asarray(c, dtype=float)
    imbalance = net_demand(graph, c)
    scale = 1.0 + (float(np.max(np.abs(c))) if c.size else 0.0)
    return float(np.max(np.abs(imbalance))) <= CIRCULATION_RTOL * scale


def pnorm(values: np.ndarray, p: float) -> float:
    """||values||_p via a max-normalized power sum, safe near overflow."""
    values = np.abs(np.asarray(values, dtype=float))
    if values.size == 0:
        return 0.0
    peak = float(values.max())
    if peak == 0.0 or not math.isfinite(peak):
        return peak
    return peak * float(np.sum((values / peak) ** p)) ** (1.0 / p)


def pnorm_pow(values: np.ndarray, p: float) -> float:
    """Sum of |values|^p, max-normalized so only truly huge results overflow."""
    values = np.abs(np.asarray(values, dtype=float))
    if values.size == 0:
        return 0.0
    peak = float(values.max())
    if peak == 0.0 or not math.isfinite(peak):
        return peak
    return peak**p * float(np.sum((values / peak) ** p))


def smoothed_value(
    g: np.ndarray, r: np.ndarray, w: np.ndarray, p: float, x: np.ndarray
) -> float:
    """<g, x> + ||R x||_2^2 + ||W x||_p^p, the objective both the instance
    energy and the residual problem share."""
    x = np.asarray(x, dtype=float)
    return float(g @ x) + pnorm_pow(r * x, 2) + pnorm_pow(w * x, p)


def smoothed_gradient(
    g: np.ndarray, r: np.ndarray, w: np.ndarray, p: float, x: np.ndarray
) -> np.ndarray:
    """Gradient of smoothed_value at x.

    For p = 2 the factor |x|^(p-2) is taken as 1 everywhere, including at
    x = 0, so the gradient is exactly g + 2 r^2 x + 2 w^2 x.
    """
    x = np.asarray(x, dtype=float)
    return g + 2.0 * r * r * x + p * w**p * _signed_power(x, p)


def smoothed_hessian_diag(
    r: np.ndarray, w: np.ndarray, p: float, x: np.ndarray
) -> np.ndarray:
    """Diagonal Hessian of smoothed_value at x (the objective is separable)."""
    x = np.asarray(x, dtype=float)
    if p == 2:
        curve = np.ones_like(x)
    else:
        curve = np.abs(x) ** (p - 2)
    return 2.0 * r * r + p * (p - 1) * w**p * curve


def _signed_power(x: np.ndarray, p: float) -> np.ndarray:
    """|x|^(p-2) * x with the p = 2 convention |x|^0 = 1."""
    if p == 2:
        return x
    return np.abs(x) ** (p - 2) * x


class PNormInstance:
    """A smoothed l_p-norm flow problem over an incremental graph.

    Minimizes  E(f) = <g, f> + ||R f||_2^2 + ||W f||_p^p  over flows f with
    net_demand(f) = d.  Edge attributes grow in lockstep with the graph.

    Attributes:
        graph: the underlying multigraph.
        d: demand vector, fixed for the life of the instance.
        p: integer exponent >= 2.
        threshold: the certification threshold F.
        eps: absolute energy accuracy for flow outputs.
    """

    def __init__(
        self,
        graph: IncrementalGraph,
        d: np.ndarray,
        p: int,
        threshold: float = 0.0,
        eps: float = 1e-6,
    ):
        if p < 2 or int(p) != p:
            raise ValueError(f"exponent must be an integer >= 2, got {p}")
        d = np.asarray(d, dtype=float)
        if d.shape != (graph.n,):
            raise ValueError(f"demand length {d.shape} does not match n={graph.n}")
        if abs(float(d.sum())) > DEMAND_SUM_RTOL * (1.0 + float(np.abs(d).sum())):
            raise ValueError("demand entries must sum to zero")
        if eps <= 0:
            raise ValueError(f"accuracy must be positive, got {eps}")
        self.graph = graph
        self.d = d
        self.p = int(p)
        self.threshold = float(threshold)
        self.eps = float(eps)
        self.g = np.zeros(graph.m)
        self.r = np.zeros(graph.m)
        self.w = np.zeros(graph.m)
        graph.attach_demand(self.d)

    @property
    def m(self) -> int:
        return self.graph.m

    def set_edge_attrs(self, g: np.ndarray, r: np.ndarray, w: np.ndarray) -> None:
        """Set attributes for all current edges at once (initial build)."""
        g = np.asarray(g, dtype=float)
        r = np.asarray(r, dtype=float)
        w = np.asarray(w, dtype=float)
        if not (g.shape == r.shape == w.shape == (self.graph.m,)):
            raise ValueError("attribute arrays must match the edge count")
        self._check_attrs(g, r, w)
        self.g, self.r, self.w = g, r, w

    def add_edge(self, u: int, v: int, g: float, r: float, w: float) -> int:
        """Insert an edge with its gradient, resistance and weight."""
        self._check_attrs(np.array([g]), np.array([r]), np.array([w]))
        e = self.graph.add_edge(u, v)
        self.g = np.append(self.g, float(g))
        self.r = np.append(self.r, float(r))
        self.w = np.append(self.w, float(w))
        return e

    @staticmethod
    def _check_attrs(g: np.ndarray, r: np.ndarray, w: np.ndarray) -> None:
        if not np.all(np.isfinite(g)):
            raise ValueError("edge gradients must be finite")
        if not np.all(r > 0):
            raise ValueError("edge resistances must be strictly positive")
        if not np.all(w > 0):
            raise ValueError("edge weights must be strictly positive")

    def energy(self, f: np.ndarray) -> float:
        """E(f) for a flow on the current edge set."""
        f = np.asarray(f, dtype=float)
        if f.shape != (self.graph.m,):
            raise ValueError(f"flow length {f.shape} does not match m={self.graph.m}")
        if not np.all(np.isfinite(f)):
            raise ValueError("flow entries must be finite")
        return smoothed_value(self.g, self.r, self.w, self.p, f)

    def energy_gradient(self, f: np.ndarray) -> np.ndarray:
        return smoothed_gradient(self.g, self.r, self.w, self.p, f)

    def routable(self) -> bool:
        return demand_routable(self.graph, self.d)


def residual_value(residual, x: np.ndarray) -> float:
    """Value of a residual problem at a circulation x.

    Accepts anything with g, r, w, p attributes (a ResidualProblem or an
    instance); the functional form is the same smoothed objective.
    """
    return smoothed_value(residual.g, residual.r, residual.w, residual.p, x)
