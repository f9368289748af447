"""Finite metric graphs: builders, validation, defect sets and grid geometry.

Infinite graphs (star with half-lines, Z-periodic chains, the square
grid) are represented by finite windows whose outer cut points are
flagged as boundary vertices.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Hashable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components, dijkstra

MIN_EDGE_LENGTH = 1e-9


class GraphError(ValueError):
    """Raised when a graph or defect specification is invalid."""


@dataclass(frozen=True)
class Vertex:
    id: Hashable
    x: float | None = None
    y: float | None = None
    boundary: bool = False


@dataclass(frozen=True)
class Edge:
    a: int
    b: int
    length: float
    ncells: int | None = None
    key: Hashable = None  # lattice label used by translations


@dataclass(frozen=True)
class MetricGraph:
    """Immutable finite metric graph.

    Vertices and edges are addressed by their position in ``vertices`` and
    ``edges``; ``defects`` holds vertex indices, ``truncation`` records how
    the window was produced.
    """

    vertices: tuple
    edges: tuple
    defects: tuple = ()
    truncation: dict = field(default_factory=dict, compare=False)
    min_length: float = MIN_EDGE_LENGTH

    def __post_init__(self):
        _validate(self)
        object.__setattr__(self, "_index", {v.id: i for i, v in enumerate(self.vertices)})

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_edges(self) -> int:
        return len(self.edges)

    @property
    def kind(self) -> str:
        return self.truncation.get("family", "file")

    def index(self, vid) -> int:
        try:
            return self._index[_norm_id(vid)]
        except KeyError:
            raise GraphError(f"unknown vertex id {vid!r}") from None

    def ids(self, indices) -> list:
        return [self.vertices[i].id for i in indices]

    def degree(self) -> np.ndarray:
        deg = np.zeros(self.n_vertices, dtype=int)
        for e in self.edges:
            deg[e.a] += 1
            deg[e.b] += 1
        return deg

    def boundary_indices(self) -> np.ndarray:
        return np.array([i for i, v in enumerate(self.vertices) if v.boundary], dtype=int)

    def total_length(self) -> float:
        return float(sum(e.length for e in self.edges))

    def coords(self) -> np.ndarray | None:
        if any(v.x is None or v.y is None for v in self.vertices):
            return None
        return np.array([[v.x, v.y] for v in self.vertices], dtype=float)

    def with_defects(self, defects) -> "MetricGraph":
        idx = tuple(sorted({self.index(d) if not isinstance(d, (int, np.integer)) else int(d)
                            for d in defects}))
        return MetricGraph(self.vertices, self.edges, idx, dict(self.truncation), self.min_length)

    def adjacency(self):
        """Sparse symmetric matrix of edge lengths (shortest parallel edge kept)."""
        n = self.n_vertices
        best: dict[tuple[int, int], float] = {}
        for e in self.edges:
            k = (min(e.a, e.b), max(e.a, e.b))
            if k[0] != k[1]:
                best[k] = min(best.get(k, np.inf), e.length)
        if not best:
            return coo_matrix((n, n)).tocsr()
        ij = np.array(list(best.keys()))
        w = np.array(list(best.values()))
        A = coo_matrix((np.r_[w, w], (np.r_[ij[:, 0], ij[:, 1]], np.r_[ij[:, 1], ij[:, 0]])), shape=(n, n))
        return A.tocsr()


def _norm_id(vid):
    if isinstance(vid, list):
        return tuple(vid)
    if isinstance(vid, np.integer):
        return int(vid)
    return vid


def _validate(g: MetricGraph):
    n = len(g.vertices)
    if n == 0:
        raise GraphError("graph has no vertices")
    ids = [v.id for v in g.vertices]
    if len(set(ids)) != n:
        raise GraphError("duplicate vertex ids")
    for e in g.edges:
        if not (0 <= e.a < n and 0 <= e.b < n):
            raise GraphError("edge endpoint out of range")
        if not np.isfinite(e.length) or e.length < g.min_length:
            raise GraphError(f"edge length {e.length} below the minimum {g.min_length}")
        if e.ncells is not None and e.ncells < 1:
            raise GraphError("ncells must be positive")
    for d in g.defects:
        if not 0 <= d < n:
            raise GraphError("defect index out of range")
    if n > 1:
        if not g.edges:
            raise GraphError("graph is disconnected")
        ncomp, _ = connected_components(g.adjacency(), directed=False)
        if ncomp != 1:
            raise GraphError("graph is disconnected")


def _ordered(vertices: list[Vertex], edges: list[tuple]) -> tuple[tuple, tuple]:
    """Sort vertices by coordinates then id, renumber edges accordingly."""

    def vkey(v):
        c = (v.x, v.y) if v.x is not None and v.y is not None else (np.inf, np.inf)
        return (c, repr(v.id))

    order = sorted(range(len(vertices)), key=lambda i: vkey(vertices[i]))
    new = {old: k for k, old in enumerate(order)}
    vs = tuple(vertices[i] for i in order)
    es = []
    for a, b, length, ncells, key in edges:
        a, b = new[a], new[b]
        es.append(Edge(a, b, float(length), ncells, key))
    es.sort(key=lambda e: (min(e.a, e.b), max(e.a, e.b), repr(e.key)))
    return vs, tuple(es)


# ---------------------------------------------------------------- builders

def gen_star(N: int, L: float, center_is_defect: bool = True) -> MetricGraph:
    """Star with ``N`` legs of length ``L``; leaves are truncation points."""
    if N < 1:
        raise GraphError("N must be >= 1")
    if L <= 0:
        raise GraphError("L must be positive")
    vs = [Vertex(0, 0.0, 0.0, False)]
    es = []
    for k in range(N):
        ang = 2 * np.pi * k / N
        vs.append(Vertex(k + 1, L * np.cos(ang), L * np.sin(ang), True))
        es.append((0, k + 1, L, None, k))
    # keep the center first regardless of coordinates
    vertices = tuple(vs)
    edges = tuple(Edge(a, b, float(l), nc, key) for a, b, l, nc, key in es)
    defects = (0,) if center_is_defect else ()
    return MetricGraph(vertices, edges, defects, {"family": "star", "N": N, "L": float(L)})


def gen_grid_window(n: int, center: Sequence[int] = (0, 0)) -> MetricGraph:
    """Square lattice window [cx-n, cx+n] x [cy-n, cy+n] with unit edges."""
    if n < 1:
        raise GraphError("window radius must be >= 1")
    cx, cy = int(center[0]), int(center[1])
    xs = np.arange(cx - n, cx + n + 1)
    ys = np.arange(cy - n, cy + n + 1)
    vs = []
    pos = {}
    for x in xs:
        for y in ys:
            b = abs(x - cx) == n or abs(y - cy) == n
            pos[(int(x), int(y))] = len(vs)
            vs.append(Vertex((int(x), int(y)), int(x), int(y), bool(b)))
    es = []
    for (x, y), i in pos.items():
        for dx, dy in ((1, 0), (0, 1)):
            j = pos.get((x + dx, y + dy))
            if j is not None:
                es.append((i, j, 1.0, None, ((x, y), (x + dx, y + dy))))
    vertices, edges = _ordered(vs, es)
    return MetricGraph(vertices, edges, (), {"family": "grid", "n": n, "center": [cx, cy]})


@dataclass(frozen=True)
class ZCellSpec:
    """Periodicity cell for a Z-periodic graph.

    ``vertices`` are local labels, ``edges`` are ``(a, b, length)`` triples in
    local labels, ``sigma`` maps each vertex of ``D`` to a vertex of ``R``;
    copy ``i``'s ``D``-vertex ``d`` is glued to copy ``i+1``'s ``sigma[d]``.
    ``shift`` (optional) places copy ``i`` at ``coords + i * shift``.
    """

    vertices: tuple
    edges: tuple
    D: tuple
    R: tuple
    sigma: dict
    coords: dict | None = None
    shift: tuple | None = None

    def __post_init__(self):
        vset = set(self.vertices)
        if not set(self.D) <= vset or not set(self.R) <= vset:
            raise GraphError("D and R must be vertices of the cell")
        if set(self.D) & set(self.R):
            raise GraphError("D and R must be disjoint")
        if set(self.sigma) != set(self.D) or sorted(self.sigma.values()) != sorted(self.R) \
                or len(set(self.sigma.values())) != len(self.R):
            raise GraphError("sigma must be a bijection D -> R")
        for a, b, length in self.edges:
            if a not in vset or b not in vset or length <= 0:
                raise GraphError("bad cell edge")

    def linking_edges(self) -> list[int]:
        """Indices of cell edges with exactly one endpoint in D."""
        D = set(self.D)
        return [k for k, (a, b, _) in enumerate(self.edges) if (a in D) != (b in D)]

    def derived(self) -> dict:
        """m = number of linking edges, l = their minimal length, |K~|."""
        link = self.linking_edges()
        if not link:
            raise GraphError("cell has no edge leaving D")
        lengths = [self.edges[k][2] for k in link]
        l = min(lengths)
        total = sum(e[2] for e in self.edges)
        return {"m": len(link), "l": float(l), "core_length": float(total - l * len(link))}


def ladder_cell(rail: float = 1.0, rung: float = 1.0) -> ZCellSpec:
    """Ladder cell: one rung between the R pair, rails running to the D pair."""
    return ZCellSpec(
        vertices=("rt", "rb", "dt", "db"),
        edges=(("rt", "rb", rung), ("rt", "dt", rail), ("rb", "db", rail)),
        D=("dt", "db"), R=("rt", "rb"), sigma={"dt": "rt", "db": "rb"},
        coords={"rt": (0.0, 1.0), "rb": (0.0, 0.0), "dt": (rail, 1.0), "db": (rail, 0.0)},
        shift=(rail, 0.0),
    )


def line_cell(length: float = 1.0) -> ZCellSpec:
    """Cell of the real line with integer vertices."""
    return ZCellSpec(vertices=("r", "d"), edges=(("r", "d", length),), D=("d",), R=("r",),
                     sigma={"d": "r"}, coords={"r": (0.0, 0.0), "d": (length, 0.0)},
                     shift=(length, 0.0))


def _zcanon(cell: ZCellSpec, k, i: int, n: int):
    if k in cell.sigma and i < n:
        return (cell.sigma[k], i + 1)
    return (k, i)


def gen_zperiodic_window(cell: ZCellSpec, n: int) -> MetricGraph:
    """Copies ``-n..n`` of ``cell`` glued along sigma.

    The unmatched R-vertices of copy ``-n`` and D-vertices of copy ``n`` are
    flagged as boundary. Vertex ids are ``(local label, copy index)``.
    """
    if n < 0:
        raise GraphError("n must be >= 0")
    vs, pos = [], {}
    D, R = set(cell.D), set(cell.R)
    for i in range(-n, n + 1):
        for k in cell.vertices:
            vid = _zcanon(cell, k, i, n)
            if vid in pos:
                continue
            kk, ii = vid
            b = (kk in R and ii == -n) or (kk in D and ii == n)
            x = y = None
            if cell.coords is not None:
                x, y = cell.coords[kk]
                if cell.shift is not None:
                    x, y = x + ii * cell.shift[0], y + ii * cell.shift[1]
            pos[vid] = len(vs)
            vs.append(Vertex(vid, x, y, bool(b)))
    es = []
    for i in range(-n, n + 1):
        for j, (a, b, length) in enumerate(cell.edges):
            ia = pos[_zcanon(cell, a, i, n)]
            ib = pos[_zcanon(cell, b, i, n)]
            es.append((ia, ib, length, None, (i, j)))
    edges = tuple(Edge(a, b, float(l), nc, key) for a, b, l, nc, key in es)
    trunc = {"family": "zperiodic", "n": n, "cell": _cell_record(cell), **cell.derived()}
    return MetricGraph(tuple(vs), edges, (), trunc)


def _cell_record(cell: ZCellSpec) -> dict:
    return {"vertices": list(cell.vertices), "edges": [list(e) for e in cell.edges],
            "D": list(cell.D), "R": list(cell.R), "sigma": dict(cell.sigma)}


# ------------------------------------------------------------- defect specs

@dataclass(frozen=True)
class ExplicitList:
    ids: tuple


@dataclass(frozen=True)
class ZPeriodic:
    v: tuple
    base: tuple
    P0: tuple = (0, 0)
    r: float = np.inf


@dataclass(frozen=True)
class Z2Periodic:
    v1: tuple
    v2: tuple
    base: tuple


@dataclass(frozen=True)
class GapSetRow:
    max_index: int
    row: int = 0
    base_vertex: Hashable = None  # for Z-periodic windows: the label repeated in each copy


@dataclass(frozen=True)
class GapSetColumns:
    max_index: int


def gap_indices(max_index: int) -> list[int]:
    """The excluded indices n(n+1) up to ``max_index``."""
    out, k = [], 0
    while k * (k + 1) <= max_index:
        out.append(k * (k + 1))
        k += 1
    return out


def gap_block(N: int) -> tuple[int, int, float]:
    """Defect-dense block strictly between consecutive gaps N(N+1), (N+1)(N+2).

    Returns the first and last index of the block (2N+1 indices) and its
    center.
    """
    lo, hi = N * (N + 1), (N + 1) * (N + 2)
    return lo + 1, hi - 1, 0.5 * (lo + hi)


def _lattice(v) -> tuple[int, int]:
    x, y = v
    if int(x) != x or int(y) != y:
        raise GraphError("periodicity vectors and base points must be lattice points")
    return int(x), int(y)


def resolve_defects(graph: MetricGraph, spec) -> list:
    """Vertex ids of the defect set described by ``spec`` inside the window."""
    if isinstance(spec, ExplicitList):
        idx = sorted({graph.index(v) for v in spec.ids})
        if not idx:
            raise GraphError("empty defect list")
        return graph.ids(idx)

    if isinstance(spec, GapSetRow) and graph.kind == "zperiodic":
        excl = set(gap_indices(spec.max_index))
        label = spec.base_vertex
        out = []
        for i, v in enumerate(graph.vertices):
            k, c = v.id
            if k == label and c not in excl:
                out.append(i)
        if not out:
            raise GraphError("gap-set row selects no vertex")
        return graph.ids(sorted(out))

    pts = _lattice_points(graph)
    if isinstance(spec, ZPeriodic):
        vx, vy = _lattice(spec.v)
        if vx == 0 and vy == 0:
            raise GraphError("periodicity vector must be nonzero")
        base = [_lattice(p) for p in spec.base]
        px, py = spec.P0
        for bx, by in base:
            if abs((bx - px) * (-vy) + (by - py) * vx) > spec.r + 1e-12:
                raise GraphError("base point outside the strip")
        sel = [i for i, (x, y) in pts if any(_on_line(x - bx, y - by, vx, vy) for bx, by in base)]
    elif isinstance(spec, Z2Periodic):
        a, b = _lattice(spec.v1), _lattice(spec.v2)
        det = a[0] * b[1] - a[1] * b[0]
        if det == 0:
            raise GraphError("periodicity vectors must be linearly independent")
        base = [_lattice(p) for p in spec.base]
        sel = [i for i, (x, y) in pts if any(_in_lattice(x - bx, y - by, a, b, det) for bx, by in base)]
    elif isinstance(spec, GapSetRow):
        excl = set(gap_indices(spec.max_index))
        sel = [i for i, (x, y) in pts if y == spec.row and x not in excl]
    elif isinstance(spec, GapSetColumns):
        excl = set(gap_indices(spec.max_index))
        sel = [i for i, (x, y) in pts if x not in excl]
    else:
        raise GraphError(f"unsupported defect spec {spec!r}")
    if not sel:
        raise GraphError("defect spec selects no vertex in the window")
    return graph.ids(sorted(sel))


def _lattice_points(graph):
    out = []
    for i, v in enumerate(graph.vertices):
        if v.x is None or v.y is None:
            raise GraphError("periodic defect sets need planar lattice coordinates")
        out.append((i, (int(round(v.x)), int(round(v.y)))))
    return out


def _on_line(dx, dy, vx, vy) -> bool:
    if dx * vy - dy * vx != 0:
        return False
    k = Fraction(dx, vx) if vx != 0 else Fraction(dy, vy)
    return k.denominator == 1


def _in_lattice(dx, dy, a, b, det) -> bool:
    k1 = Fraction(dx * b[1] - dy * b[0], det)
    k2 = Fraction(a[0] * dy - a[1] * dx, det)
    return k1.denominator == 1 and k2.denominator == 1


def with_defect_spec(graph: MetricGraph, spec) -> MetricGraph:
    ids = resolve_defects(graph, spec)
    return graph.with_defects([graph.index(i) for i in ids])


# ------------------------------------------------------------------ queries

def vertex_distances(graph: MetricGraph, v) -> np.ndarray:
    """Graph distance from vertex ``v`` (id or index) to every vertex."""
    return _distances_from(graph, graph.index(v))


def _distances_from(graph: MetricGraph, i: int) -> np.ndarray:
    return dijkstra(graph.adjacency(), directed=False, indices=int(i))


def graph_distance(graph: MetricGraph, x, v) -> float:
    """Distance from ``x`` to vertex ``v``.

    ``x`` is a vertex id or a point ``("edge", k, t)`` at arc length ``t``
    from the first endpoint of edge ``k``.
    """
    d = vertex_distances(graph, v)
    if isinstance(x, tuple) and len(x) == 3 and x[0] == "edge":
        _, k, t = x
        e = graph.edges[k]
        if not 0 <= t <= e.length:
            raise GraphError("point outside the edge")
        return float(min(d[e.a] + t, d[e.b] + e.length - t))
    return float(d[graph.index(x)])


def annulus_edges(graph: MetricGraph, center, n: int) -> list[tuple[int, bool]]:
    """Edges joining the grid spheres of radius ``n`` and ``n+1`` around ``center``.

    Returned as ``(edge index, reversed)`` where ``reversed`` is true when
    the edge's second endpoint is the one closer to the center.
    """
    if graph.kind != "grid":
        raise GraphError("annuli are defined on grid windows")
    if n < 0:
        raise GraphError("annulus index must be >= 0")
    c = graph.index(center)
    if n + 1 > _window_reach(graph, c):
        raise GraphError("annulus touches the window boundary")
    d = np.rint(_distances_from(graph, c)).astype(int)
    out = []
    for k, e in enumerate(graph.edges):
        da, db = d[e.a], d[e.b]
        if {da, db} == {n, n + 1}:
            out.append((k, bool(da == n + 1)))
    return out


def _window_reach(graph: MetricGraph, c: int) -> int:
    """Largest radius whose sphere lies inside the window without touching the boundary."""
    v = graph.vertices[c]
    n = graph.truncation["n"]
    cx, cy = graph.truncation["center"]
    return int(n - max(abs(v.x - cx), abs(v.y - cy)) - 1)


# ------------------------------------------------------------------- files

GRAPH_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "required": ["vertices", "edges", "defects"],
    "properties": {
        "vertices": {
            "type": "array", "minItems": 1,
            "items": {
                "type": "object", "additionalProperties": False, "required": ["id"],
                "properties": {
                    "id": {"type": ["string", "integer"]},
                    "x": {"type": "number"}, "y": {"type": "number"},
                    "boundary": {"type": "boolean"},
                },
            },
        },
        "edges": {
            "type": "array",
            "items": {
                "type": "object", "additionalProperties": False, "required": ["a", "b", "length"],
                "properties": {
                    "a": {"type": ["string", "integer"]}, "b": {"type": ["string", "integer"]},
                    "length": {"type": "number"},
                    "ncells": {"type": "integer", "minimum": 1},
                },
            },
        },
        "defects": {"$ref": "#/$defs/defects"},
    },
    "$defs": {
        "point": {"type": "array", "items": {"type": "number"}, "minItems": 2, "maxItems": 2},
        "defects": {
            "oneOf": [
                {"type": "object", "additionalProperties": False, "required": ["kind", "ids"],
                 "properties": {"kind": {"const": "explicit"},
                                "ids": {"type": "array", "items": {"type": ["string", "integer", "array"]}}}},
                {"type": "object", "additionalProperties": False, "required": ["kind", "v", "base"],
                 "properties": {"kind": {"const": "zperiodic"}, "v": {"$ref": "#/$defs/point"},
                                "base": {"type": "array", "items": {"$ref": "#/$defs/point"}},
                                "P0": {"$ref": "#/$defs/point"}, "r": {"type": "number"}}},
                {"type": "object", "additionalProperties": False, "required": ["kind", "v1", "v2", "base"],
                 "properties": {"kind": {"const": "z2periodic"}, "v1": {"$ref": "#/$defs/point"},
                                "v2": {"$ref": "#/$defs/point"},
                                "base": {"type": "array", "items": {"$ref": "#/$defs/point"}}}},
                {"type": "object", "additionalProperties": False, "required": ["kind", "max_index"],
                 "properties": {"kind": {"const": "gap_row"}, "max_index": {"type": "integer"},
                                "row": {"type": "integer"},
                                "base_vertex": {"type": ["string", "integer"]}}},
                {"type": "object", "additionalProperties": False, "required": ["kind", "max_index"],
                 "properties": {"kind": {"const": "gap_columns"}, "max_index": {"type": "integer"}}},
            ]
        },
    },
}


def defect_spec_from_dict(d: dict):
    kind = d["kind"]
    if kind == "explicit":
        return ExplicitList(tuple(_norm_id(i) for i in d["ids"]))
    if kind == "zperiodic":
        return ZPeriodic(tuple(d["v"]), tuple(tuple(p) for p in d["base"]),
                         tuple(d.get("P0", (0, 0))), float(d.get("r", np.inf)))
    if kind == "z2periodic":
        return Z2Periodic(tuple(d["v1"]), tuple(d["v2"]), tuple(tuple(p) for p in d["base"]))
    if kind == "gap_row":
        return GapSetRow(int(d["max_index"]), int(d.get("row", 0)), d.get("base_vertex"))
    if kind == "gap_columns":
        return GapSetColumns(int(d["max_index"]))
    raise GraphError(f"unknown defect kind {kind!r}")


def load_graph(doc: Any, require_defects: bool = True) -> MetricGraph:
    """Build a graph from a document (dict, JSON string or path)."""
    import jsonschema

    if isinstance(doc, str):
        doc = json.loads(doc) if doc.lstrip().startswith("{") else json.loads(open(doc).read())
    try:
        jsonschema.validate(doc, GRAPH_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise GraphError(f"schema violation: {exc.message}") from None
    vs = [Vertex(v["id"], v.get("x"), v.get("y"), bool(v.get("boundary", False))) for v in doc["vertices"]]
    pos = {v.id: i for i, v in enumerate(vs)}
    if len(pos) != len(vs):
        raise GraphError("duplicate vertex ids")
    es = []
    for e in doc["edges"]:
        if e["a"] not in pos or e["b"] not in pos:
            raise GraphError("edge references an unknown vertex")
        if e["length"] <= 0:
            raise GraphError("edge length must be positive")
        es.append((pos[e["a"]], pos[e["b"]], e["length"], e.get("ncells"), None))
    vertices, edges = _ordered(vs, es)
    g = MetricGraph(vertices, edges, (), {"family": "file"})
    spec = defect_spec_from_dict(doc["defects"])
    ids = resolve_defects(g, spec)
    if require_defects and not ids:
        raise GraphError("empty defect set")
    return g.with_defects([g.index(i) for i in ids])


def graph_to_document(graph: MetricGraph) -> dict:
    """Inverse of ``load_graph`` for graphs with scalar ids."""
    vs = []
    for v in graph.vertices:
        rec = {"id": v.id}
        if v.x is not None:
            rec["x"], rec["y"] = v.x, v.y
        if v.boundary:
            rec["boundary"] = True
        vs.append(rec)
    es = [{"a": graph.vertices[e.a].id, "b": graph.vertices[e.b].id, "length": e.length}
          for e in graph.edges]
    return {"vertices": vs, "edges": es,
            "defects": {"kind": "explicit", "ids": graph.ids(graph.defects)}}
