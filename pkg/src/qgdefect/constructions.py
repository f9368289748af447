"""Explicit test functions with closed-form mass and energy.

They serve as upper-bound certificates for the ground-state level (any
feasible function bounds the infimum from above), as initializers for the
solver and as quadrature checks of the assembly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .energy import DELTA_FLOOR
from .fem import AssembledForms, GraphFunction, functionals, interpolate, node_distances, node_table


@dataclass
class FamilyEval:
    """One member of a test-function family.

    ``energy_direction`` is ``"="`` when ``closed_form_energy`` is the exact
    energy of the member on the infinite graph and ``"<="`` when it is an
    upper bound.
    """

    family: str
    params: dict
    closed_form_mass: float | None
    closed_form_energy: float | None
    energy_direction: str = "="
    function: GraphFunction | None = None
    source: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def valid_certificate(self) -> bool:
        return bool(self.closed_form_mass and self.closed_form_mass > 0
                    and self.closed_form_energy is not None)

    def certifies_negative(self, delta: float = DELTA_FLOOR) -> bool:
        return self.valid_certificate and self.closed_form_energy < -delta

    def quadrature(self, q: float | None = None, V=None) -> dict:
        """Mass, kinetic and energy of the interpolant on its mesh."""
        if self.function is None:
            raise ValueError("no interpolant attached")
        f = functionals(self.function.forms, self.function.values, V)
        out = {"mass": f.mass, "kinetic": f.kinetic}
        if q is not None:
            out["energy"] = 0.5 * f.kinetic - f.vertex_sum_q(q) / q
        return out

    def to_record(self) -> dict:
        rec = {"family": self.family, **{k: v for k, v in self.params.items()},
               "closed_form_mass": self.closed_form_mass,
               "closed_form_energy": self.closed_form_energy,
               "energy_direction": self.energy_direction}
        rec.update({k: v for k, v in self.extras.items() if np.isscalar(v)})
        return rec


def _check_q(q):
    if not 2 < q < 4:
        raise ValueError("q must lie in (2, 4)")


# -------------------------------------------------------------- star graphs

def star_exp_family(eps: float, q: float, N: int = 1, core_length: float = 0.0, d: int = 1,
                    forms: AssembledForms | None = None, L: float | None = None) -> FamilyEval:
    """eps^2 exp(-eps^q x) on each half-line, eps^2 on a compact core.

    With ``L`` the truncated values and the tail remainders
    ``exp(-2 eps^q L)`` are reported; with ``forms`` (a star window) the
    interpolant is attached.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    _check_q(q)
    rate = eps ** q
    mass = (N / 2 + core_length * rate) * eps ** (4 - q)
    en = N / 4 * eps ** (q + 4) - d / q * eps ** (2 * q)
    extras = {"decay": rate, "amplitude": eps ** 2}
    if forms is not None and L is None:
        L = forms.graph.truncation.get("L")
    if L is not None:
        t = math.exp(-2 * rate * L)
        extras.update(tail_factor=t, tail_mass=N / 2 * eps ** (4 - q) * t,
                      tail_kinetic=N / 2 * eps ** (q + 4) * t,
                      truncated_mass=mass - N / 2 * eps ** (4 - q) * t,
                      truncated_kinetic=N / 2 * eps ** (q + 4) * (1 - t))
        extras["truncated_energy"] = 0.5 * extras["truncated_kinetic"] - d / q * eps ** (2 * q)
    fn = None
    if forms is not None:
        dist = node_distances(forms.mesh, 0)
        fn = GraphFunction(forms, forms.restrict(eps ** 2 * np.exp(-rate * dist)))
    return FamilyEval("star_exp", {"eps": eps, "q": q, "N": N, "core_length": core_length, "d": d},
                      mass, en, "=", fn, "half-line exponential family", extras)


def star_exponential(beta: float, q: float, mu: float, N: int = 1,
                     forms: AssembledForms | None = None) -> FamilyEval:
    """A exp(-beta x) on each of N half-lines, amplitude fixed by the mass."""
    _check_q(q)
    A = math.sqrt(2 * mu * beta / N)
    en = mu * beta ** 2 / 2 - A ** q / q
    fn = None
    if forms is not None:
        dist = node_distances(forms.mesh, 0)
        fn = GraphFunction(forms, forms.restrict(A * np.exp(-beta * dist)))
    return FamilyEval("star_exponential", {"beta": beta, "q": q, "mu": mu, "N": N}, mu, en, "=", fn,
                      "two-parameter exponential on a star", {"amplitude": A, "decay": beta})


def star_soliton(q: float, mu: float, N: int = 1, forms: AssembledForms | None = None) -> FamilyEval:
    """Exact ground state of a star of N half-lines with one defect at the center.

    The profile is A exp(-s x) with the flux condition N s = A^(q-2); the
    energy is mu s^2 (1/2 - 2/q).
    """
    _check_q(q)
    s = (2 * mu) ** ((q - 2) / (4 - q)) * N ** (-q / (4 - q))
    fe = star_exponential(s, q, mu, N, forms)
    fe.family = "star_soliton"
    fe.params = {"q": q, "mu": mu, "N": N}
    fe.closed_form_energy = mu * s * s * (0.5 - 2.0 / q)
    fe.source = "exact star ground state"
    fe.extras["lambda"] = s * s
    return fe


def tent_family(M: float, ell: float, N: int, q: float, forms: AssembledForms | None = None,
                vertex=None) -> FamilyEval:
    """M (ell - x) on the N edges at a vertex, zero elsewhere."""
    _check_q(q)
    mass = N * M * M * ell ** 3 / 3
    en = 0.5 * N * M * M * ell - (M * ell) ** q / q
    fn = None
    if forms is not None:
        g = forms.graph
        v = g.defects[0] if vertex is None else g.index(vertex)
        dist = node_distances(forms.mesh, v)
        fn = GraphFunction(forms, forms.restrict(M * np.maximum(ell - dist, 0.0)))
    fe = FamilyEval("tent", {"M": M, "ell": ell, "N": N, "q": q}, mass, en, "=", fn,
                    "tent at a defect vertex")
    if M == 0:
        fe.extras["note"] = "zero function"
    return fe


# ----------------------------------------------------------- Z-periodic

def zper_exp_family(eps: float, q: float, m: int, l: float, core_length: float,
                    forms: AssembledForms | None = None) -> FamilyEval:
    """Two-sided exponential along the copies of a Z-periodic graph.

    On the first ``l`` of each linking edge of copy ``i`` (measured from its
    D-endpoint) the value is eps^2 exp(-eps^q |(i+1) l - x|); the rest of copy
    ``i`` carries eps^2 exp(-eps^q |i| l), and edges joining two D-vertices
    carry eps^2 exp(-eps^q |(i+1) l|).
    """
    _check_q(q)
    rate = eps ** q
    e2 = math.exp(2 * l * rate)
    mass = m * eps ** (4 - q) + core_length * (e2 + 1) / (e2 - 1) * eps ** 4
    en = m / 2 * eps ** (q + 4) - eps ** (2 * q) / q
    extras = {"leading_mass": (m + core_length / l) * eps ** (4 - q)}
    fn = None
    if forms is not None:
        g = forms.graph
        if g.kind != "zperiodic":
            raise ValueError("Z-periodic family needs a Z-periodic window")
        fn, window = _zper_interpolant(forms, eps, q, l)
        extras.update(window)
        tail = abs(mass - window["window_mass"])
        extras["tail_mass"] = tail
        extras["tail_ok"] = bool(tail <= 1e-8 * mass)
    return FamilyEval("zper_exp", {"eps": eps, "q": q, "m": m, "l": l, "core_length": core_length},
                      mass, en, "=", fn, "exponential along copies", extras)


def _zper_interpolant(forms, eps, q, l):
    g = forms.graph
    cell = g.truncation["cell"]
    n = g.truncation["n"]
    D = set(cell["D"])
    cedges = cell["edges"]
    rate = eps ** q
    nt = node_table(forms.mesh)
    vals = np.empty(forms.mesh.n_dofs)
    for k in range(forms.mesh.n_dofs):
        e = g.edges[nt.edge[k]]
        i, j = e.key
        a, b, length = cedges[j]
        t = nt.t[k]
        vals[k] = _zper_value(a, b, length, i, t, D, l, rate)
    vals *= eps ** 2
    # exact truncated integrals over copies -n..n
    wm, wk = 0.0, 0.0
    e4 = eps ** 4
    for i in range(-n, n + 1):
        for a, b, length in cedges:
            ina, inb = a in D, b in D
            if ina != inb:
                c = (i + 1) * l
                wm += e4 * _int_exp2(c, 0.0, l, rate) + e4 * (length - l) * math.exp(-2 * rate * abs(i) * l)
                wk += e4 * rate ** 2 * _int_exp2(c, 0.0, l, rate)
            elif ina and inb:
                wm += e4 * length * math.exp(-2 * rate * abs(i + 1) * l)
            else:
                wm += e4 * length * math.exp(-2 * rate * abs(i) * l)
    return GraphFunction(forms, forms.restrict(vals)), {"window_mass": wm, "window_kinetic": wk}


def _zper_value(a, b, length, i, t, D, l, rate):
    ina, inb = a in D, b in D
    if ina != inb:
        x = t if ina else length - t
        if x <= l:
            return math.exp(-rate * abs((i + 1) * l - x))
        return math.exp(-rate * abs(i) * l)
    if ina and inb:
        return math.exp(-rate * abs((i + 1) * l))
    return math.exp(-rate * abs(i) * l)


def _int_exp2(c, x0, x1, rate):
    """Integral of exp(-2 rate |c - x|) over [x0, x1]."""
    def F(x):  # antiderivative of exp(-2 rate |c - x|)
        if x <= c:
            return math.exp(-2 * rate * (c - x)) / (2 * rate)
        return 1 / rate - math.exp(-2 * rate * (x - c)) / (2 * rate)
    return F(x1) - F(x0)


# -------------------------------------------------------------------- grid

def k_eps(eps: float, mu: float) -> float:
    """Amplitude giving mass mu to k exp(-eps(|x|+|y|)) on the grid."""
    return math.sqrt(eps * mu / 2 * (1 - math.exp(-2 * eps)) / (1 + math.exp(-2 * eps)))


def grid_exp_family(eps: float, mu: float, q: float, defects=None,
                    forms: AssembledForms | None = None, center=(0, 0)) -> FamilyEval:
    """k exp(-eps(|x-cx| + |y-cy|)) on the grid.

    ``defects`` is ``None`` (single defect at the center), a ``ZPeriodic`` or
    ``Z2Periodic`` spec; it selects the lower bound used for the defect sum,
    and the closed-form energy is then an upper bound.
    """
    from .graph import Z2Periodic, ZPeriodic

    _check_q(q)
    if not (eps > 0 and mu > 0):
        raise ValueError("eps and mu must be positive")
    k = k_eps(eps, mu)
    kin = mu * eps * eps
    if defects is None:
        lower, direction = k ** q, "="
    elif isinstance(defects, ZPeriodic):
        R = abs(defects.v[0]) + abs(defects.v[1])
        lower, direction = k ** q / (1 - math.exp(-eps * q * R)), "<="
    elif isinstance(defects, Z2Periodic):
        R1 = abs(defects.v1[0]) + abs(defects.v1[1])
        R2 = abs(defects.v2[0]) + abs(defects.v2[1])
        lower = k ** q / ((1 - math.exp(-eps * q * R1)) * (1 - math.exp(-eps * q * R2)))
        direction = "<="
    else:
        raise ValueError("unsupported defect spec for the grid family")
    en = 0.5 * kin - lower / q
    extras = {"k_eps": k, "kinetic": kin, "defect_sum_lower": lower}
    fn = None
    if forms is not None:
        g = forms.graph
        if g.kind != "grid":
            raise ValueError("grid family needs a grid window")
        cx, cy = center
        xy = forms.mesh.node_xy
        vals = k * np.exp(-eps * (np.abs(xy[:, 0] - cx) + np.abs(xy[:, 1] - cy)))
        fn = GraphFunction(forms, forms.restrict(vals))
        n = g.truncation["n"]
        off = max(abs(cx - g.truncation["center"][0]), abs(cy - g.truncation["center"][1]))
        extras["tail_bound"] = float(4 * math.exp(-2 * eps * (n - off)) * mu)
    return FamilyEval("grid_exp", {"eps": eps, "mu": mu, "q": q}, mu, en, direction, fn,
                      "grid exponential in the l1 distance", extras)


def _log_profile(n):
    L = math.log(n)

    def f(x):
        x = np.asarray(x, dtype=float)
        out = np.where(x <= 1, L, L - np.log(np.maximum(x, 1e-300)))
        return np.where(x >= n, 0.0, out)
    return f


def _log_radial_norms(n: int):
    """Exact annulus sums of the mass and kinetic energy of f_n on the grid."""
    L = math.log(n)
    k = np.arange(1, n, dtype=float)
    a0, a1 = L - np.log(k), L - np.log(k + 1)
    F0 = k * (a0 * a0 + 2 * a0 + 2)
    F1 = (k + 1) * (a1 * a1 + 2 * a1 + 2)
    w = 4 * (2 * k + 1)
    mass = 4 * L * L + float(np.sum(w * (F1 - F0)))
    kin = float(np.sum(w / (k * (k + 1))))
    return mass, kin


def _log_integral(n):
    L = math.log(n)
    return n * n / 4 - L * L / 2 - L / 2 - 0.25


def grid_log_family(n: int, q: float, forms: AssembledForms | None = None, center=None) -> FamilyEval:
    """n^-2 f_n(d(x, center)) with f_n = log n on [0,1], log(n/x) on [1,n], 0 beyond."""
    _check_q(q)
    if n < 2:
        raise ValueError("n must be >= 2")
    L = math.log(n)
    mass_u, kin_u = _log_radial_norms(n)
    s = n ** -2.0
    mass, kin = s * s * mass_u, s * s * kin_u
    c0 = s * L
    en = 0.5 * kin - c0 ** q / q
    I = _log_integral(n)
    qn = 2 + 1 / n
    factor = 1 - (2 * n / (12 * (2 * n + 1))) * L ** (1 + 1 / n) / n ** (2 / n)
    extras = {"center_value": c0, "kinetic": kin, "kinetic_bound": 12 * L / n ** 4,
              "mass_lower": 4 / n ** 4 * (L * L + I), "mass_upper": 4 / n ** 4 * (L * L + 3 * I),
              "certificate_factor": factor, "q_n": qn}
    fn = _attach_radial(forms, lambda d: s * _log_profile(n)(d), center, n)
    return FamilyEval("grid_log", {"n": n, "q": q}, mass, en, "=", fn, "logarithmic grid profile", extras)


def appendix_loglinear(n: int, alpha: float, forms: AssembledForms | None = None, center=None) -> FamilyEval:
    """Unscaled f_n(d(x, v)) as a trial function for the delta eigenvalue."""
    if n < 2:
        raise ValueError("n must be >= 2")
    L = math.log(n)
    mass, kin = _log_radial_norms(n)
    num_bound = 12 * L - alpha * L * L
    extras = {"kinetic": kin, "kinetic_bound": 12 * L, "center_value_sq": L * L,
              "numerator_bound": num_bound, "rayleigh_bound": num_bound / mass,
              "rayleigh_exact": (kin - alpha * L * L) / mass}
    fn = _attach_radial(forms, _log_profile(n), center, n)
    if fn is not None:
        f = functionals(fn.forms, fn.values)
        full = fn.full()
        c = _center_index(fn.forms, center)
        extras["rayleigh_interpolant"] = (f.kinetic - alpha * full[c] ** 2) / f.mass
    # closed_form_energy holds the Rayleigh-quotient bound for this family
    return FamilyEval("appendix_loglinear", {"n": n, "alpha": alpha}, mass,
                      extras["rayleigh_exact"], "=", fn, "log-linear trial function", extras)


def _center_index(forms, center):
    g = forms.graph
    if center is None:
        return g.index(tuple(g.truncation["center"]))
    return g.index(center)


def _attach_radial(forms, profile, center, radius):
    if forms is None:
        return None
    g = forms.graph
    if g.kind != "grid":
        raise ValueError("radial families live on grid windows")
    c = _center_index(forms, center)
    v = g.vertices[c]
    reach = g.truncation["n"] - max(abs(v.x - g.truncation["center"][0]), abs(v.y - g.truncation["center"][1]))
    if reach < radius:
        raise ValueError("window smaller than the family support")
    d = node_distances(forms.mesh, c)
    return GraphFunction(forms, forms.restrict(profile(d)))


def appendix_plateau(n: int, forms: AssembledForms) -> FamilyEval:
    """1 on a block of the window, linear to 0 across one layer of edges.

    On the grid the block is an (n+1) x (n+1) square of vertices; on a
    Z-periodic window it is the copies -n..n.
    """
    g = forms.graph
    if g.kind == "grid":
        cx, cy = g.truncation["center"]
        lo = -(n // 2)
        x0, y0 = cx + lo, cy + lo
        if max(abs(lo), n + lo) + 1 > g.truncation["n"]:
            raise ValueError("window too small for the plateau")
        inside = np.array([(x0 <= v.x <= x0 + n) and (y0 <= v.y <= y0 + n) for v in g.vertices], dtype=float)
        closed_kin = 4.0 * (n + 1)
        closed_mass = 2.0 * n * (n + 1) + 4.0 * (n + 1) / 3
    elif g.kind == "zperiodic":
        if g.truncation["n"] < n + 1:
            raise ValueError("window too small for the plateau")
        R = set(g.truncation["cell"]["R"])
        inside = np.array([(abs(i) <= n or (k in R and abs(i - 1) <= n)) for k, i in (v.id for v in g.vertices)],
                          dtype=float)
        closed_kin = closed_mass = None
    else:
        raise ValueError("plateau needs a grid or Z-periodic window")
    m = forms.mesh
    full = np.zeros(m.n_dofs)
    full[:g.n_vertices] = inside
    for k, e in enumerate(g.edges):
        nodes = m.edge_nodes[k]
        s = np.linspace(0, 1, len(nodes))
        full[nodes[1:-1]] = ((1 - s) * inside[e.a] + s * inside[e.b])[1:-1]
    fn = GraphFunction(forms, forms.restrict(full))
    f = functionals(forms, fn.values)
    extras = {"kinetic": f.kinetic, "quadrature_mass": f.mass, "rayleigh": f.kinetic / f.mass}
    if closed_kin is not None:
        extras["closed_kinetic"] = closed_kin
        extras["leading_mass"] = 2.0 * n * (n + 1)
    return FamilyEval("appendix_plateau", {"n": n}, closed_mass if closed_mass is not None else f.mass,
                      None, "=", fn, "plateau with one-layer ramp", extras)
