"""Spherical means around a grid vertex and radial-profile diagnostics.

Edges of annulus ``n`` join the l1-spheres of radius ``n`` and ``n + 1``;
each is parametrized from its endpoint closer to the center. The spherical
mean replaces every edge function of an annulus by the average over the
annulus at the same parameter.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fem import AssembledForms, GraphFunction
from .graph import GraphError, _window_reach, vertex_distances


@dataclass
class Annuli:
    center: int
    ncells: int
    edges: list                 # per annulus: array of edge indices
    nodes: list                 # per annulus: (n_edges, ncells + 1) full DOF indices, oriented outwards
    outside: np.ndarray         # full DOF indices not covered by any annulus


def annuli(forms: AssembledForms, center) -> Annuli:
    """Oriented node tables of every annulus that fits inside the window."""
    g = forms.graph
    if g.kind != "grid":
        raise GraphError("spherical means are defined on grid windows")
    c = g.index(center) if not isinstance(center, (int, np.integer)) else int(center)
    m = forms.mesh
    reach = _window_reach(g, c)
    d = np.rint(vertex_distances(g, g.vertices[c].id)).astype(int)
    groups = [[] for _ in range(reach)]
    for k, e in enumerate(g.edges):
        lo = min(d[e.a], d[e.b])
        if lo < reach and abs(d[e.a] - d[e.b]) == 1:
            groups[lo].append((k, d[e.a] > d[e.b]))
    counts = {int(m.ncells[k]) for grp in groups for k, _ in grp}
    if len(counts) > 1:
        raise GraphError("edges of the annuli must share one cell count")
    nc = counts.pop() if counts else 1
    covered = np.zeros(m.n_dofs, dtype=bool)
    e_out, n_out = [], []
    for grp in groups:
        idx = np.array([k for k, _ in grp], dtype=np.int64)
        tab = np.array([m.edge_nodes[k][::-1] if rev else m.edge_nodes[k] for k, rev in grp], dtype=np.int64)
        covered[tab.ravel()] = True
        e_out.append(idx)
        n_out.append(tab)
    return Annuli(c, nc, e_out, n_out, np.flatnonzero(~covered))


def _element_norms(samples, h):
    """P1 mass and kinetic of rows of nodal samples on a uniform edge mesh."""
    a, b = samples[..., :-1], samples[..., 1:]
    mass = np.sum(h * (a * a + a * b + b * b) / 3, axis=-1)
    kin = np.sum((b - a) ** 2 / h, axis=-1)
    return mass, kin


@dataclass
class RadialProfile:
    """Annulus-wise mean and variance of the edge restrictions at matched parameters."""

    center: int
    ncells: int
    t: np.ndarray               # common parameter grid on [0, 1]
    means: np.ndarray           # (annuli, ncells + 1)
    variances: np.ndarray
    sizes: np.ndarray           # edges per annulus

    @property
    def n_annuli(self) -> int:
        return self.means.shape[0]

    @property
    def r(self) -> np.ndarray:
        """Distance of each sample (annulus endpoints appear twice)."""
        return (np.arange(self.n_annuli)[:, None] + self.t[None, :]).ravel()

    @property
    def mean(self) -> np.ndarray:
        return self.means.ravel()

    def cv(self) -> np.ndarray:
        """Per-annulus RMS standard deviation over RMS mean."""
        sd = np.sqrt(np.mean(self.variances, axis=1))
        rm = np.sqrt(np.mean(self.means ** 2, axis=1))
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(rm > 0, sd / np.where(rm > 0, rm, 1.0), 0.0)

    def mass(self) -> float:
        """Sum over annuli of 4(2n+1) times the edge mass of the mean."""
        mass, _ = _element_norms(self.means, 1.0 / self.ncells)
        return float(np.sum(self.sizes * mass))

    def rows(self):
        for n in range(self.n_annuli):
            for j, t in enumerate(self.t):
                yield {"annulus": n, "parameter": float(t), "mean": float(self.means[n, j]),
                       "variance": float(self.variances[n, j])}


def _check_support(forms, ann, full, what="function"):
    if ann.outside.size and np.any(full[ann.outside] != 0):
        raise ValueError(f"{what} is not supported inside the annuli of the window")


def radial_profile(u, center=None, forms: AssembledForms | None = None,
                   require_support: bool = True) -> RadialProfile:
    forms = forms or u.forms
    if center is None:
        center = tuple(forms.graph.truncation["center"])
    ann = annuli(forms, center)
    full = forms.expand(np.asarray(u, dtype=float))
    if require_support:
        _check_support(forms, ann, full)
    means = np.array([full[tab].mean(axis=0) for tab in ann.nodes])
    var = np.array([full[tab].var(axis=0) for tab in ann.nodes])
    sizes = np.array([len(e) for e in ann.edges])
    return RadialProfile(ann.center, ann.ncells, np.linspace(0, 1, ann.ncells + 1), means, var, sizes)


@dataclass
class SphericalMean:
    """Spherical mean of a function.

    The annulus means are continuous along each edge, but at a sphere the
    inner and outer annuli generally disagree, because vertices on a sphere
    have different numbers of inner and outer edges. ``mass`` and
    ``kinetic`` are therefore edge-wise (broken) norms; ``function`` is set
    only when every jump vanishes.
    """

    profile: RadialProfile
    forms: AssembledForms = field(repr=False)
    mass: float
    kinetic: float
    center_value: float
    jumps: np.ndarray
    function: GraphFunction | None
    input_mass: float
    input_kinetic: float

    @property
    def continuous(self) -> bool:
        return self.function is not None

    def energy(self, q: float, weight: float = 1.0) -> float:
        return 0.5 * self.kinetic - weight / q * abs(self.center_value) ** q

    def edge_values(self) -> np.ndarray:
        """Nodal values per annulus, broadcast over its edges."""
        return self.profile.means


def _edge_table(u, forms, center):
    """(annuli, per-annulus samples (edges, ncells + 1), center value, input norms)."""
    if isinstance(u, SphericalMean):
        ann = annuli(u.forms, u.profile.center)
        tabs = [np.broadcast_to(u.profile.means[n], (len(ann.edges[n]), ann.ncells + 1))
                for n in range(len(ann.edges))]
        return ann, tabs, u.center_value, u.mass, u.kinetic, u.forms
    forms = forms or u.forms
    if center is None:
        center = tuple(forms.graph.truncation["center"])
    ann = annuli(forms, center)
    vals = np.asarray(u, dtype=float)
    full = forms.expand(vals)
    if np.any(full < 0):
        raise ValueError("spherical mean needs a nonnegative function")
    _check_support(forms, ann, full)
    tabs = [full[tab] for tab in ann.nodes]
    h = 1.0 / ann.ncells
    m_in = k_in = 0.0
    for t in tabs:
        mm, kk = _element_norms(t, h)
        m_in += float(np.sum(mm))
        k_in += float(np.sum(kk))
    return ann, tabs, float(full[ann.center]), m_in, k_in, forms


def spherical_mean(u, center=None, forms: AssembledForms | None = None, jump_tol: float = 1e-14) -> SphericalMean:
    """Average ``u`` over each sphere around ``center`` (the window center by default).

    ``u`` may be a ``GraphFunction``, a free-DOF vector with ``forms``, or a
    previous ``SphericalMean`` (the map is idempotent).
    """
    ann, tabs, cval, m_in, k_in, forms = _edge_table(u, forms, center)
    h = 1.0 / ann.ncells
    means = np.array([t.mean(axis=0) for t in tabs])
    var = np.array([t.var(axis=0) for t in tabs])
    sizes = np.array([t.shape[0] for t in tabs])
    mm, kk = _element_norms(means, h)
    mass = float(np.sum(sizes * mm))
    kin = float(np.sum(sizes * kk))
    jumps = means[:-1, -1] - means[1:, 0] if len(means) > 1 else np.zeros(0)
    if len(means):
        jumps = np.append(jumps, means[-1, -1])     # against the zero outside the last annulus
    prof = RadialProfile(ann.center, ann.ncells, np.linspace(0, 1, ann.ncells + 1), means, var, sizes)
    fn = None
    if jumps.size == 0 or np.max(np.abs(jumps)) <= jump_tol * max(1.0, float(np.max(np.abs(means)))):
        full = np.zeros(forms.mesh.n_dofs)
        for n, tab in enumerate(ann.nodes):
            full[tab] = means[n][None, :]
        full[ann.center] = cval
        fn = GraphFunction(forms, forms.restrict(full))
    return SphericalMean(prof, forms, mass, kin, cval, jumps, fn, m_in, k_in)


def monotone_check(profile: RadialProfile, tol: float = 0.0):
    """Whether the annulus means never increase outwards.

    Returns ``(flag, first violation)`` where the violation is
    ``(annulus, sample index, increase)`` or ``None``.
    """
    seq = profile.means.ravel()
    steps = np.diff(seq)
    bad = np.flatnonzero(steps > tol)
    if bad.size == 0:
        return True, None
    i = int(bad[0]) + 1
    return False, (i // (profile.ncells + 1), i % (profile.ncells + 1), float(steps[bad[0]]))


def radiality(u, center=None, forms: AssembledForms | None = None) -> dict:
    """Coefficient of variation per annulus and its maximum over annuli carrying mass."""
    forms = forms or u.forms
    prof = radial_profile(u, center, forms, require_support=False)
    full = forms.expand(np.asarray(u, dtype=float))
    ann = annuli(forms, prof.center)
    outside = float(np.max(np.abs(full[ann.outside]))) if ann.outside.size else 0.0
    cv = prof.cv()
    rm = np.sqrt(np.mean(prof.means ** 2, axis=1))
    live = rm > 1e-8 * max(float(np.max(rm)), 1e-300)
    # averaging equal values can leave ulp-sized steps
    ok, viol = monotone_check(prof, 1e-14 * float(np.max(np.abs(prof.means), initial=0.0)))
    return {"cv": cv.tolist(), "max_cv": float(np.max(cv[live])) if np.any(live) else 0.0,
            "monotone": ok, "violation": viol, "outside_sup": outside, "profile": prof}
