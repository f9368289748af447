"""Drivers for energy curves, mass thresholds, q scans and the translation demo.

A point is *certified negative* when either the Dirichlet-window minimizer
or an explicit family member has energy below ``-delta``; both are feasible
points of the problem on the whole graph, so either bounds the infimum from
above. Absence of a certificate is reported as such, never as a zero.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import constructions as C
from .energy import SolverOptions, _central_vertex, detection_margin, minimize, translation_probe
from .fem import assemble, mesh
from .graph import (GapSetRow, MetricGraph, Z2Periodic, ZPeriodic, gap_block, gen_grid_window,
                    resolve_defects, with_defect_spec)


@dataclass
class Setup:
    """A graph with resolved defects, a mesh size and a truncation rule."""

    graph: MetricGraph
    h: float
    truncation: str = "dirichlet"
    defect_spec: object = None
    label: str = ""
    _forms: object = field(default=None, repr=False, compare=False)

    def forms(self):
        if self._forms is None:
            self._forms = assemble(mesh(self.graph, self.h), self.truncation)
        return self._forms

    def provenance(self) -> dict:
        g = self.graph
        return {"label": self.label, "family": g.kind, "h": self.h, "truncation": self.truncation,
                "window": {k: v for k, v in g.truncation.items() if k != "cell"},
                "n_defects": len(g.defects), "mesh_hash": self.forms().mesh.hash()}

    def __getstate__(self):
        st = dict(self.__dict__)
        st["_forms"] = None
        return st


def grid_setup(n: int, h: float, defects=None, center=(0, 0), label: str = "") -> Setup:
    """Grid window with a single center defect (default) or a defect spec."""
    g = gen_grid_window(n, center)
    if defects is None:
        g = g.with_defects([g.index(tuple(center))])
    else:
        g = with_defect_spec(g, defects)
    return Setup(g, h, defect_spec=defects, label=label or f"grid n={n} h={h:g}")


# ------------------------------------------------------------ certificates

def _rescaled(kin, mass, defect_sum, q, mu):
    t2 = mu / mass
    return 0.5 * t2 * kin - t2 ** (q / 2) * defect_sum / q


def family_witnesses(setup: Setup, q: float, mu: float, eps_grid=None) -> list[dict]:
    """Closed-form upper bounds available for this graph at mass ``mu``."""
    g = setup.graph
    out = []
    if not g.defects:
        return out
    deg = g.degree()
    # an interior defect near the middle: boundary vertices are eliminated and
    # their window degree is not their degree in the whole graph
    inner = [d for d in g.defects if not g.vertices[d].boundary]
    if not inner:
        return out
    v = _central_vertex(g, inner)
    if g.kind == "star" and tuple(g.defects) == (0,):
        fe = C.star_soliton(q, mu, int(deg[v]))
        out.append({"source": "star_soliton", "energy": fe.closed_form_energy, "param": fe.extras["decay"]})
    # tent at a defect of minimal incident length
    lengths = [e.length for e in g.edges if v in (e.a, e.b)]
    ell = min(lengths)
    N = int(deg[v])
    M = math.sqrt(3 * mu / (N * ell ** 3))
    fe = C.tent_family(M, ell, N, q)
    out.append({"source": "tent", "energy": fe.closed_form_energy, "param": M})
    if g.kind == "grid":
        eps = np.logspace(-3, 1, 81) if eps_grid is None else np.asarray(eps_grid)
        spec = setup.defect_spec if isinstance(setup.defect_spec, (ZPeriodic, Z2Periodic)) else None
        best = min((C.grid_exp_family(float(e), mu, q, spec) for e in eps), key=lambda f: f.closed_form_energy)
        out.append({"source": "grid_exp" + ("" if spec is None else f"_{type(spec).__name__}"),
                    "energy": best.closed_form_energy, "param": best.params["eps"]})
        best_log = None
        for n in (2, 4, 8, 16, 32, 64, 128, 256, 512, 1024):
            fl = C.grid_log_family(n, q)
            e = _rescaled(fl.extras["kinetic"], fl.closed_form_mass, fl.extras["center_value"] ** q, q, mu)
            if best_log is None or e < best_log[0]:
                best_log = (e, n)
        out.append({"source": "grid_log", "energy": best_log[0], "param": best_log[1]})
    return out


def certify(setup: Setup, q: float, mu: float, opts: SolverOptions | None = None,
            families: bool = True, full: bool = False) -> dict:
    """Best available upper bound at (q, mu) and whether it is below ``-delta``.

    With ``full=False`` the window solve stops at the first energy below
    ``-delta``; the returned energy is then only an upper bound of the
    window minimum.
    """
    delta = detection_margin(setup.h)
    wit = family_witnesses(setup, q, mu) if families else []
    fam = min(wit, key=lambda w: w["energy"]) if wit else None
    opts = opts or SolverOptions()
    if not full:
        opts = replace(opts, stop_below=-delta)
    r = minimize(setup.forms(), q, mu, opts=opts)
    best_src, best_e = "window_minimizer", r.energy
    if fam is not None and fam["energy"] < best_e:
        best_src, best_e = fam["source"], fam["energy"]
    return {"mu": mu, "q": q, "certified": bool(best_e < -delta), "energy": float(best_e),
            "source": best_src, "window_energy": r.energy, "lambda": r.lam, "status": r.status,
            "residual": r.residual.get("max_defect_flux"), "family": fam, "delta": delta}


# ------------------------------------------------------------ energy curves

@dataclass
class EnergyCurve:
    label: str
    q: float
    points: list
    concave: bool
    ratio_monotone: bool
    notes: list = field(default_factory=list)

    def rows(self):
        for p in self.points:
            yield {k: p[k] for k in ("mu", "energy", "window_energy", "lambda", "source", "certified",
                                     "status", "residual")}


def _parallel_map(fn, items, threads: int = 1):
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


class _CurvePoint:
    def __init__(self, setup, q, opts, families):
        self.setup, self.q, self.opts, self.families = setup, q, opts, families

    def __call__(self, mu):
        return certify(self.setup, self.q, mu, self.opts, self.families, full=True)


def energy_curve(setup: Setup, q: float, mus, opts: SolverOptions | None = None, families: bool = True,
                 threads: int = 1, tol: float = 1e-6) -> EnergyCurve:
    mus = [float(m) for m in mus]
    if any(b <= a for a, b in zip(mus, mus[1:])):
        raise ValueError("mass grid must be increasing")
    pts = _parallel_map(_CurvePoint(setup, q, opts, families), mus, threads)
    for p in pts:
        if not p["certified"] and p["energy"] > -p["delta"]:
            p["verdict"] = "no negative certificate"
        else:
            p["verdict"] = "negative"
    E = np.array([min(p["energy"], 0.0) for p in pts])   # the infimum is never positive
    m = np.array(mus)
    slopes = np.diff(E) / np.diff(m)
    scale = max(1.0, float(np.max(np.abs(E))))
    concave = bool(np.all(np.diff(slopes) <= tol * scale)) if len(slopes) > 1 else True
    neg = [(mu, e) for mu, e in zip(m, E) if e < 0]
    ratios = [e / mu for mu, e in neg]
    mono = bool(all(b <= a + tol for a, b in zip(ratios, ratios[1:])))
    return EnergyCurve(setup.label, q, pts, concave, mono)


# --------------------------------------------------------------- thresholds

@dataclass
class ThresholdEstimate:
    q: float
    mu_lo: float | None
    mu_hi: float | None
    status: str                 # "bracketed", "zero" (certified down to mu_min), "above_range"
    delta: float
    provenance: dict
    evaluations: list
    notes: list = field(default_factory=list)
    validation: "ThresholdEstimate | None" = None

    @property
    def estimate(self) -> float | None:
        if self.status == "zero":
            return 0.0
        if self.status != "bracketed":
            return None
        return math.sqrt(self.mu_lo * self.mu_hi)

    def to_record(self) -> dict:
        rec = {"q": self.q, "mu_lo": self.mu_lo, "mu_hi": self.mu_hi, "estimate": self.estimate,
               "status": self.status, "delta": self.delta, "provenance": self.provenance,
               "notes": self.notes,
               "evaluations": [{k: e[k] for k in ("mu", "certified", "energy", "source")}
                               for e in self.evaluations]}
        if self.validation is not None:
            rec["validation"] = self.validation.to_record()
        return rec


def critical_mass(setup: Setup, q: float, bracket=(1.0, 100.0), rel_tol: float = 1e-2,
                  opts: SolverOptions | None = None, families: bool = True, mu_min: float = 1e-4,
                  mu_max: float = 1e5, validate: Setup | None = None) -> ThresholdEstimate:
    """Bisect (geometrically) the smallest mass with a negative certificate.

    The bracket is widened by factors of 4 until the predicate is false at
    the low end and true at the high end, within ``[mu_min, mu_max]``.
    """
    lo, hi = map(float, bracket)
    if not 0 < lo < hi:
        raise ValueError("invalid bracket")
    evals = []

    def pred(mu):
        r = certify(setup, q, mu, opts, families)
        evals.append(r)
        return r["certified"]

    delta = detection_margin(setup.h)
    notes = []
    while pred(lo):
        hi = lo
        lo /= 4
        if lo < mu_min:
            notes.append(f"certified negative down to mu={hi:g}")
            return ThresholdEstimate(q, None, hi, "zero", delta, setup.provenance(), evals, notes)
    while not pred(hi):
        lo = hi
        hi *= 4
        if hi > mu_max:
            notes.append(f"no negative certificate up to mu={lo:g}")
            return ThresholdEstimate(q, lo, None, "above_range", delta, setup.provenance(), evals, notes)
    while hi / lo - 1 > rel_tol:
        mid = math.sqrt(lo * hi)
        if pred(mid):
            hi = mid
        else:
            lo = mid
    est = ThresholdEstimate(q, lo, hi, "bracketed", delta, setup.provenance(), evals, notes)
    if validate is not None:
        est.validation = critical_mass(validate, q, (lo / 1.5, hi * 1.5), rel_tol, opts, families,
                                       mu_min, mu_max)
    return est


def check_bracket(est: ThresholdEstimate, setup: Setup | None = None, opts=None, families=True) -> bool:
    """Re-evaluate the predicate at the bracket ends (false at lo, true at hi)."""
    if est.status != "bracketed":
        return False
    s = setup
    if s is None:
        raise ValueError("need the setup to re-evaluate")
    return (not certify(s, est.q, est.mu_lo, opts, families)["certified"]) and \
        certify(s, est.q, est.mu_hi, opts, families)["certified"]


class _QPoint:
    def __init__(self, setup, bracket, rel_tol, opts, families, mu_min):
        self.setup, self.bracket, self.rel_tol = setup, bracket, rel_tol
        self.opts, self.families, self.mu_min = opts, families, mu_min

    def __call__(self, q):
        return critical_mass(self.setup, q, self.bracket, self.rel_tol, self.opts, self.families,
                             self.mu_min)


def qstar_scan(setup: Setup, qs, bracket=(0.1, 10.0), rel_tol: float = 5e-2, opts=None,
               families: bool = True, mu_min: float = 1e-3, threads: int = 1) -> dict:
    """Threshold per exponent; zeros should form an initial segment of the q grid."""
    qs = sorted(float(q) for q in qs)
    if any(not 2 < q < 4 for q in qs):
        raise ValueError("exponents must lie in (2, 4)")
    ests = _parallel_map(_QPoint(setup, bracket, rel_tol, opts, families, mu_min), qs, threads)
    zero = [e.status == "zero" for e in ests]
    downset = all(zero[i] or not any(zero[i + 1:]) for i in range(len(zero)))
    first_pos = next((q for q, z in zip(qs, zero) if not z), None)
    return {"label": setup.label, "q": qs, "estimates": ests, "zero": zero, "downset": downset,
            "transition_after": first_pos}


def small_q_limit(setups, ns=(2, 4, 8), bracket=(1.0, 100.0), rel_tol: float = 2e-2, opts=None,
                  families: bool = True) -> dict:
    """Thresholds at q = 2 + 1/n together with the log-family certificates.

    ``setups`` is one ``Setup`` or a mapping from ``n`` to a ``Setup``.
    """
    rows = []
    for n in ns:
        q = 2.0 + 1.0 / n
        s = setups[n] if isinstance(setups, dict) else setups
        est = critical_mass(s, q, bracket, rel_tol, opts, families, mu_min=1e-6)
        fl = C.grid_log_family(max(n, 2), q)
        rows.append({"n": n, "q": q, "estimate": est.estimate, "mu_lo": est.mu_lo, "mu_hi": est.mu_hi,
                     "status": est.status, "log_certificate_factor": fl.extras["certificate_factor"],
                     "threshold": est})
    vals = [r["estimate"] for r in rows]
    dec = all(a is not None and b is not None and b < a for a, b in zip(vals, vals[1:]))
    return {"rows": rows, "strictly_decreasing": dec}


# -------------------------------------------------------- nonexistence demo

def nonexistence_demo(q: float = 3.0, mu: float = 40.0, blocks=(1, 2, 3), n: int | None = None,
                      h: float = 0.5, cutoff: float = 1e-8, opts: SolverOptions | None = None) -> dict:
    """Near-minimizer on a gap-set row, moved to the centers of successive defect blocks.

    The window is centered between the first and last block so that every
    translate stays inside it. Energies are compared on the truncated
    function (values below ``cutoff`` times the maximum dropped).
    """
    first, last = gap_block(blocks[0]), gap_block(blocks[-1])
    cx = int(round(0.5 * (first[2] + last[2])))
    span = int(math.ceil(last[2] - first[2]))
    n = n or span + 12
    max_index = (blocks[-1] + 2) * (blocks[-1] + 3)
    spec = GapSetRow(max_index + n + abs(cx))
    g = gen_grid_window(n, (cx, 0))
    g = g.with_defects([g.index(i) for i in resolve_defects(g, spec)])
    forms = assemble(mesh(g, h))
    start = (int(first[2]), 0)
    d = _bump(forms, start)
    r = minimize(forms, q, mu, opts=opts, initializers=[(f"bump_at_{start[0]}", d)])
    u = r.u.values
    energies = [{"block": blocks[0], "shift": 0}]
    seq = []
    base = None
    for N in blocks:
        c = int(round(gap_block(N)[2]))
        shift = (c - start[0], 0)
        pr = translation_probe(forms, u, shift, q, cutoff=cutoff)
        base = pr["E_before"] if base is None else base
        seq.append({"block": N, "center": c, "shift": shift[0], "energy": pr["E_after"]})
    energies = [s["energy"] for s in seq]
    strict = [b < a for a, b in zip(energies, energies[1:])]
    return {"q": q, "mu": mu, "window": n, "window_center": cx, "h": h, "minimizer_energy": r.energy,
            "truncated_energy": base, "sequence": seq, "n_strict_decreases": int(sum(strict)),
            "strictly_decreasing": all(strict), "status": r.status}


def periodic_control(q: float = 3.0, mu: float = 40.0, period: int = 1, n: int = 20, h: float = 0.5,
                     shifts=(1, 2, 3), cutoff: float = 1e-8, opts: SolverOptions | None = None) -> dict:
    """Same probe on a Z-periodic defect row: energies must not depend on the shift."""
    spec = ZPeriodic((period, 0), ((0, 0),))
    g = gen_grid_window(n)
    g = g.with_defects([g.index(i) for i in resolve_defects(g, spec)])
    forms = assemble(mesh(g, h))
    r = minimize(forms, q, mu, opts=opts, initializers=[("bump_at_0", _bump(forms, (0, 0)))])
    out = []
    for s in shifts:
        pr = translation_probe(forms, r.u.values, (s * period, 0), q, cutoff=cutoff)
        out.append({"shift": s * period, "E_before": pr["E_before"], "E_after": pr["E_after"]})
    spread = max(abs(o["E_after"] - o["E_before"]) for o in out)
    scale = max(abs(o["E_before"]) for o in out)
    return {"q": q, "mu": mu, "period": period, "probes": out, "max_change": spread,
            "relative_change": spread / max(scale, 1e-300), "minimizer_energy": r.energy}


def _bump(forms, vid, width: float = 1.0):
    from .fem import node_distances

    d = node_distances(forms.mesh, forms.graph.index(vid))
    return forms.restrict(np.exp(-d / width))


def markdown_summary(title: str, rows: list[dict], keys=None) -> str:
    """Small Markdown table of experiment rows."""
    if not rows:
        return f"# {title}\n\n(no rows)\n"
    keys = keys or list(rows[0].keys())
    head = "| " + " | ".join(keys) + " |"
    sep = "|" + "---|" * len(keys)

    def fmt(x):
        if isinstance(x, float):
            return f"{x:.6g}"
        return str(x)

    body = ["| " + " | ".join(fmt(r.get(k)) for k in keys) + " |" for r in rows]
    return "\n".join([f"# {title}", "", head, sep, *body, ""])
