"""P1 finite elements on metric graphs.

Each edge is cut into uniform cells; every graph vertex owns a single
degree of freedom shared by its incident edges, so nodal vectors are
continuous H^1 functions on the graph. The kinetic and mass integrals
of such a function are the quadratic forms ``u @ K @ u`` and ``u @ M @ u``.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from . import kernels
from .graph import GraphError, MetricGraph


@dataclass(frozen=True, eq=False)
class MeshedGraph:
    graph: MetricGraph
    h: float
    ncells: np.ndarray          # cells per edge
    n_dofs: int
    edge_nodes: tuple           # per edge: DOF indices from endpoint a to b
    cell_a: np.ndarray
    cell_b: np.ndarray
    cell_h: np.ndarray
    cell_edge: np.ndarray
    node_edge: np.ndarray       # -1 for vertex DOFs
    node_t: np.ndarray          # arc length from the edge's first endpoint
    node_xy: np.ndarray | None

    def hash(self) -> str:
        m = hashlib.sha1()
        m.update(np.asarray(self.ncells, dtype=np.int64).tobytes())
        m.update(np.array([e.length for e in self.graph.edges]).tobytes())
        m.update(np.array([[e.a, e.b] for e in self.graph.edges], dtype=np.int64).tobytes())
        return m.hexdigest()[:16]

    @property
    def max_h(self) -> float:
        return float(self.cell_h.max()) if len(self.cell_h) else 0.0


def mesh(graph: MetricGraph, h: float, ncells: dict | None = None) -> MeshedGraph:
    """Split each edge into ``ceil(length / h)`` uniform cells.

    An edge's own ``ncells`` (from a graph file) or an entry of ``ncells``
    keyed by edge index overrides the rule.
    """
    if not h > 0:
        raise ValueError("mesh spacing must be positive")
    nv = graph.n_vertices
    counts = np.empty(graph.n_edges, dtype=np.int64)
    for k, e in enumerate(graph.edges):
        if ncells is not None and k in ncells:
            counts[k] = int(ncells[k])
        elif e.ncells is not None:
            counts[k] = e.ncells
        else:
            counts[k] = max(1, math.ceil(e.length / h - 1e-12))
    n_int = int(np.sum(counts - 1))
    n_dofs = nv + n_int
    node_edge = np.full(n_dofs, -1, dtype=np.int64)
    node_t = np.zeros(n_dofs)
    coords = graph.coords()
    node_xy = np.zeros((n_dofs, 2)) if coords is not None else None
    if node_xy is not None:
        node_xy[:nv] = coords
    edge_nodes = []
    ca, cb, ch, ce = [], [], [], []
    nxt = nv
    for k, e in enumerate(graph.edges):
        c = int(counts[k])
        inner = np.arange(nxt, nxt + c - 1)
        nxt += c - 1
        nodes = np.concatenate(([e.a], inner, [e.b])).astype(np.int64)
        edge_nodes.append(nodes)
        t = np.linspace(0.0, e.length, c + 1)
        node_edge[inner] = k
        node_t[inner] = t[1:-1]
        if node_xy is not None:
            s = (t[1:-1] / e.length)[:, None]
            node_xy[inner] = (1 - s) * coords[e.a] + s * coords[e.b]
        ca.append(nodes[:-1])
        cb.append(nodes[1:])
        ch.append(np.full(c, e.length / c))
        ce.append(np.full(c, k, dtype=np.int64))
    cat = (lambda xs, dt: np.concatenate(xs).astype(dt) if xs else np.zeros(0, dt))
    return MeshedGraph(graph, float(h), counts, n_dofs, tuple(edge_nodes),
                       cat(ca, np.int64), cat(cb, np.int64), cat(ch, float), cat(ce, np.int64),
                       node_edge, node_t, node_xy)


@dataclass(frozen=True, eq=False)
class AssembledForms:
    """Stiffness and mass matrices restricted to the free DOFs."""

    mesh: MeshedGraph
    K: sp.csr_matrix
    M: sp.csr_matrix
    free: np.ndarray            # full DOF index of each free DOF
    full_to_free: np.ndarray    # -1 for eliminated (Dirichlet) DOFs
    truncation: str
    lumped: bool
    cache: dict = field(default_factory=dict, repr=False)

    @property
    def graph(self) -> MetricGraph:
        return self.mesh.graph

    @property
    def n(self) -> int:
        return len(self.free)

    def vertex_dof(self, vertex: int) -> int:
        """Free DOF of vertex index ``vertex`` or -1 when it is eliminated."""
        return int(self.full_to_free[vertex])

    def defect_dofs(self, defects=None) -> np.ndarray:
        """Free DOFs of the defect vertices (eliminated ones carry value 0)."""
        if defects is None:
            defects = self.graph.defects
        d = self.full_to_free[np.asarray(list(defects), dtype=np.int64)]
        return np.ascontiguousarray(d[d >= 0], dtype=np.int64)

    def expand(self, u) -> np.ndarray:
        full = np.zeros(self.mesh.n_dofs)
        full[self.free] = np.asarray(u, dtype=float)
        return full

    def restrict(self, full) -> np.ndarray:
        return np.asarray(full, dtype=float)[self.free].copy()

    def cells_free(self):
        """Cell endpoint DOFs in free numbering (-1 marks a Dirichlet node)."""
        if "cells" not in self.cache:
            a = self.full_to_free[self.mesh.cell_a]
            b = self.full_to_free[self.mesh.cell_b]
            self.cache["cells"] = (a, b)
        return self.cache["cells"]


def assemble(m: MeshedGraph, truncation: str = "dirichlet", lumped: bool = False) -> AssembledForms:
    """Assemble the P1 stiffness and mass matrices.

    ``truncation="dirichlet"`` eliminates the DOFs of boundary-flagged
    vertices (zero extension); ``"natural"`` keeps them free.
    """
    if truncation not in ("dirichlet", "natural"):
        raise ValueError("truncation must be 'dirichlet' or 'natural'")
    a, b, h = m.cell_a, m.cell_b, m.cell_h
    rows = np.concatenate([a, a, b, b])
    cols = np.concatenate([a, b, a, b])
    k = 1.0 / h
    kv = np.concatenate([k, -k, -k, k])
    if lumped:
        mv = np.concatenate([h / 2, 0 * h, 0 * h, h / 2])
    else:
        mv = np.concatenate([h / 3, h / 6, h / 6, h / 3])
    n = m.n_dofs
    K = sp.coo_matrix((kv, (rows, cols)), shape=(n, n)).tocsr()
    M = sp.coo_matrix((mv, (rows, cols)), shape=(n, n)).tocsr()
    full_to_free = np.arange(n, dtype=np.int64)
    free = full_to_free.copy()
    if truncation == "dirichlet":
        bnd = m.graph.boundary_indices()
        if len(bnd):
            mask = np.ones(n, dtype=bool)
            mask[bnd] = False
            free = np.nonzero(mask)[0].astype(np.int64)
            full_to_free = np.full(n, -1, dtype=np.int64)
            full_to_free[free] = np.arange(len(free))
            K = K[free][:, free]
            M = M[free][:, free]
    K = _clean(K)
    M = _clean(M)
    return AssembledForms(m, K, M, free, full_to_free, truncation, lumped)


def _clean(A):
    A = sp.csr_matrix(A)
    A.eliminate_zeros()
    A.sort_indices()
    A.indices = A.indices.astype(np.int32)
    A.indptr = A.indptr.astype(np.int32)
    return A


class GraphFunction:
    """Nodal values on the free DOFs of an ``AssembledForms``."""

    __slots__ = ("forms", "values")

    def __init__(self, forms: AssembledForms, values):
        values = np.asarray(values, dtype=float)
        if values.shape != (forms.n,):
            raise ValueError(f"expected {forms.n} coefficients, got {values.shape}")
        self.forms = forms
        self.values = values

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def full(self) -> np.ndarray:
        return self.forms.expand(self.values)

    def to_record(self) -> dict:
        return {"mesh_hash": self.forms.mesh.hash(), "truncation": self.forms.truncation,
                "values": self.values.tolist()}


@dataclass(frozen=True)
class NodeTable:
    """Per-DOF geometric data handed to ``interpolate`` callbacks."""

    edge: np.ndarray   # edge index (vertex DOFs: one incident edge)
    t: np.ndarray      # arc length along that edge
    xy: np.ndarray | None
    is_vertex: np.ndarray


def node_table(m: MeshedGraph) -> NodeTable:
    edge = m.node_edge.copy()
    t = m.node_t.copy()
    nv = m.graph.n_vertices
    for k, e in enumerate(m.graph.edges):
        if edge[e.a] < 0:
            edge[e.a], t[e.a] = k, 0.0
        if edge[e.b] < 0:
            edge[e.b], t[e.b] = k, e.length
    isv = np.zeros(m.n_dofs, dtype=bool)
    isv[:nv] = True
    return NodeTable(edge, t, m.node_xy, isv)


def interpolate(forms: AssembledForms, f) -> GraphFunction:
    """Nodal interpolant of ``f(nodes: NodeTable) -> values`` (vectorized)."""
    vals = np.asarray(f(node_table(forms.mesh)), dtype=float)
    if vals.shape != (forms.mesh.n_dofs,):
        raise ValueError("interpolation callback returned the wrong shape")
    return GraphFunction(forms, forms.restrict(vals))


def node_distances(m: MeshedGraph, vertex) -> np.ndarray:
    """Graph distance from a vertex index (or the nearest of several) to every mesh node."""
    from scipy.sparse.csgraph import dijkstra

    if np.ndim(vertex) == 0:
        d = dijkstra(m.graph.adjacency(), directed=False, indices=int(vertex))
    else:
        d = dijkstra(m.graph.adjacency(), directed=False, indices=[int(v) for v in vertex], min_only=True)
    out = np.empty(m.n_dofs)
    nv = m.graph.n_vertices
    out[:nv] = d
    k = m.node_edge[nv:]
    t = m.node_t[nv:]
    ea = np.array([e.a for e in m.graph.edges])
    eb = np.array([e.b for e in m.graph.edges])
    el = np.array([e.length for e in m.graph.edges])
    out[nv:] = np.minimum(d[ea[k]] + t, d[eb[k]] + el[k] - t)
    return out


def interpolate_radial(forms: AssembledForms, profile, vertex: int) -> GraphFunction:
    """Interpolant of ``profile(d(x, vertex))``."""
    d = node_distances(forms.mesh, vertex)
    return GraphFunction(forms, forms.restrict(np.asarray(profile(d), dtype=float)))


class Functionals:
    """Mass, kinetic energy, vertex values and L^p norms of a P1 function."""

    def __init__(self, forms: AssembledForms, u, V=None):
        self.forms = forms
        self.u = np.asarray(u, dtype=float)
        self.V = list(forms.graph.defects if V is None else V)
        self.mass = kernels.quad_form(forms.M, self.u, self.u)
        self.kinetic = kernels.quad_form(forms.K, self.u, self.u)
        full = forms.expand(self.u)
        self.vertex_values = {forms.graph.vertices[v].id: float(full[v]) for v in self.V}
        self.sup_norm = float(np.max(np.abs(self.u))) if self.u.size else 0.0
        self._full = full

    def vertex_sum_q(self, q: float) -> float:
        return float(sum(abs(x) ** q for x in self.vertex_values.values()))

    def lp_norm(self, p: float, edges=None) -> float:
        """(int |u|^p)^(1/p) by the two-point Gauss rule, optionally on a subset of edges."""
        return self.lp_integral(p, edges) ** (1.0 / p)

    def lp_integral(self, p: float, edges=None) -> float:
        m = self.forms.mesh
        if edges is None:
            a, b, h = m.cell_a, m.cell_b, m.cell_h
        else:
            sel = np.isin(m.cell_edge, np.asarray(list(edges)))
            a, b, h = m.cell_a[sel], m.cell_b[sel], m.cell_h[sel]
        return kernels.gauss_lp(np.ascontiguousarray(a), np.ascontiguousarray(b),
                                np.ascontiguousarray(h), self._full, p)

    def as_dict(self, q: float | None = None) -> dict:
        d = {"mass": self.mass, "kinetic": self.kinetic, "sup_norm": self.sup_norm,
             "vertex_values": {str(k): v for k, v in self.vertex_values.items()}}
        if q is not None:
            d["vertex_sum_q"] = self.vertex_sum_q(q)
        return d


def functionals(forms: AssembledForms, u, V=None) -> Functionals:
    return Functionals(forms, u, V)


UNDEFINED = "undefined"


def gn_ratios(forms: AssembledForms, u, p: float = 4.0, q: float = 3.0, V=None,
              subgraph_edges=None) -> dict:
    """Ratios of the Gagliardo-Nirenberg-type inequalities for ``u``.

    Ratios whose denominator vanishes are reported as ``"undefined"``.
    """
    f = Functionals(forms, u, V)
    if f.mass <= 0:
        raise ValueError("ratios need a nonzero function")
    l2 = math.sqrt(f.mass)
    d = math.sqrt(max(f.kinetic, 0.0))

    def ratio(num, den):
        return num / den if den > 1e-300 else UNDEFINED

    out = {
        "GN1d": ratio(f.lp_integral(p), l2 ** (p / 2 + 1) * d ** (p / 2 - 1)),
        "GNinf": ratio(f.sup_norm ** 2, l2 * d),
        "vertex": ratio(f.vertex_sum_q(q), f.lp_integral(q) + l2 ** (q / 2) * d ** (q / 2)),
    }
    if forms.graph.kind == "grid":
        out["GN2d"] = ratio(f.lp_integral(p), l2 ** 2 * d ** (p - 2))
    if subgraph_edges is not None:
        out["subgraph"] = ratio(f.lp_integral(q, subgraph_edges), l2 * d ** (q - 1))
    return out
