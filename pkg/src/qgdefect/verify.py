"""Cross-module invariant suite.

Every check is cheap (a second or two at most) and returns a ``Check``. The
``verify`` subcommand runs them all and exits nonzero on any failure; the
test-suite runs the same functions.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import constructions as C
from . import energy as En
from . import halfline as H
from . import rearrange as R
from . import spectral as S
from .experiments import certify, critical_mass, energy_curve, grid_setup, Setup
from .fem import assemble, functionals, gn_ratios, interpolate, mesh, node_distances
from .graph import (ZPeriodic, annulus_edges, gen_grid_window, gen_star, gen_zperiodic_window,
                    graph_distance, ladder_cell, resolve_defects, vertex_distances)


@dataclass
class Check:
    group: str
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.group}.{self.name} ({self.seconds:.2f}s)"

    def to_record(self) -> dict:
        return {"group": self.group, "name": self.name, "passed": self.passed,
                "detail": self.detail, "seconds": round(self.seconds, 3)}


_REGISTRY: list = []


def check(group):
    def deco(fn):
        _REGISTRY.append((group, fn.__name__.removeprefix("check_"), fn))
        return fn
    return deco


def _slope(hs, errs):
    return float(np.polyfit(np.log(hs), np.log(errs), 1)[0])


def _sample_graphs():
    return {"star": gen_star(3, 4.0), "grid": gen_grid_window(6),
            "ladder": gen_zperiodic_window(ladder_cell(), 3)}


# ----------------------------------------------------------------- graph

def _cut_vertices(small, big):
    """Vertices of ``small`` that gain edges in the larger window ``big`` (matched by position)."""
    ds, db = small.degree(), big.degree()
    at = {(v.x, v.y): i for i, v in enumerate(big.vertices)}
    return {v.id for i, v in enumerate(small.vertices) if db[at[(v.x, v.y)]] > ds[i]}


@check("graph")
def check_generated_graphs(rng):
    bad = []
    pairs = {"star": (gen_star(3, 4.0), None), "grid": (gen_grid_window(6), gen_grid_window(7)),
             "ladder": (gen_zperiodic_window(ladder_cell(), 3), gen_zperiodic_window(ladder_cell(), 4))}
    for name, (g, bigger) in pairs.items():
        d = vertex_distances(g, g.vertices[0].id)
        deg = g.degree()
        if not np.all(np.isfinite(d)):
            bad.append(f"{name}: disconnected")
        if min(e.length for e in g.edges) < g.min_length:
            bad.append(f"{name}: short edge")
        flagged = {g.vertices[i].id for i in g.boundary_indices()}
        if bigger is None:
            # leaves of a star are the truncation points
            if any(deg[i] != 1 for i in g.boundary_indices()):
                bad.append(f"{name}: boundary degree")
        elif flagged != _cut_vertices(g, bigger):
            bad.append(f"{name}: boundary flags differ from the cut vertices")
    return not bad, {"problems": bad}


@check("graph")
def check_annulus_counts(rng):
    g = gen_grid_window(40)
    counts = [len(annulus_edges(g, (0, 0), n)) for n in range(16)]
    return all(c == 4 * (2 * n + 1) for n, c in enumerate(counts)), {"counts": counts}


@check("graph")
def check_defects_idempotent_and_monotone(rng):
    spec = ZPeriodic((2, 1), ((0, 0),))
    small, big = gen_grid_window(5), gen_grid_window(8)
    a = resolve_defects(small, spec)
    again = resolve_defects(small.with_defects([small.index(v) for v in a]), spec)
    b = set(resolve_defects(big, spec))
    return a == again and set(a) <= b, {"small": len(a), "big": len(b)}


@check("graph")
def check_distance_metric(rng):
    g = gen_grid_window(6)
    n = g.n_vertices
    D = np.array([vertex_distances(g, v.id) for v in g.vertices])
    worst = 0.0
    for _ in range(300):
        i, j, k = rng.integers(0, n, 3)
        worst = max(worst, D[i, k] - D[i, j] - D[j, k])
    sym = float(np.max(np.abs(D - D.T)))
    pt = graph_distance(g, ("edge", 0, 0.3), g.vertices[0].id)
    return worst <= 1e-12 and sym == 0.0 and pt <= 0.3 + 1e-15, {"triangle_excess": worst, "asymmetry": sym}


# ----------------------------------------------------------------- fem

@check("fem")
def check_matrix_properties(rng):
    out = {}
    ok = True
    for name, g in _sample_graphs().items():
        f = assemble(mesh(g, 0.5), "dirichlet")
        K, M = f.K.toarray(), f.M.toarray()
        sym = max(np.max(np.abs(K - K.T)), np.max(np.abs(M - M.T)))
        mmin = float(np.linalg.eigvalsh(M)[0])
        kmin = float(np.linalg.eigvalsh(K)[0])
        out[name] = {"asym": float(sym), "M_min": mmin, "K_min": kmin}
        ok &= sym < 1e-14 and mmin > 0 and kmin > -1e-12 * max(1.0, np.abs(K).max())
    return ok, out


@check("fem")
def check_p1_exactness(rng):
    g = gen_star(1, 3.0, center_is_defect=False)
    f = assemble(mesh(g, 0.25), "natural")
    a, b = rng.normal(size=2)
    u = interpolate(f, lambda nd: a + b * nd.t)
    fn = functionals(f, u.values)
    L = 3.0
    exact_l2 = ((a + b * L) ** 3 - a ** 3) / (3 * b)
    exact_kin = b * b * L
    e1 = abs(fn.lp_integral(2) - exact_l2)
    e2 = abs(fn.kinetic - exact_kin)
    return e1 <= 1e-12 * max(1, abs(exact_l2)) and e2 <= 1e-12 * max(1, exact_kin), {"lp2_err": e1, "kin_err": e2}


@check("fem")
def check_refinement_order(rng):
    # f = exp(-t) on each arm of a 3-star of length 4, natural truncation
    L = 4.0
    exact_mass = 3 * (1 - math.exp(-2 * L)) / 2
    exact_l4 = 3 * (1 - math.exp(-4 * L)) / 4
    hs = [0.2, 0.1, 0.05, 0.025]
    em, ek, e4 = [], [], []
    for h in hs:
        f = assemble(mesh(gen_star(3, L), h), "natural")
        u = interpolate(f, lambda nd: np.exp(-nd.t))
        fn = functionals(f, u.values)
        em.append(abs(fn.mass - exact_mass))
        ek.append(abs(fn.kinetic - exact_mass))
        e4.append(abs(fn.lp_integral(4) - exact_l4))
    sl = {"mass": _slope(hs, em), "kinetic": _slope(hs, ek), "l4": _slope(hs, e4)}
    return all(1.8 <= s <= 2.2 for s in sl.values()), sl


def load_gn_corpus() -> dict:
    return json.loads(resources.files("qgdefect").joinpath("data/gn_corpus.json").read_text())


def gn_corpus_ratios(recipe: dict) -> dict:
    """Recompute the observed ratios from a corpus recipe."""
    sw = recipe["sweep"]
    f = assemble(mesh(gen_grid_window(sw["n"]), sw["h"]), "dirichlet")
    inf = []
    for eps in np.logspace(*sw["log10_eps"], sw["count"]):
        fe = C.grid_exp_family(float(eps), 1.0, 3.0, forms=f)
        inf.append(gn_ratios(f, fe.function.values, q=3.0)["GNinf"])
    rn = recipe["random"]
    f2 = assemble(mesh(gen_grid_window(rn["n"]), rn["h"]), "dirichlet")
    rng = np.random.default_rng(rn["seed"])
    gn2d = []
    for _ in range(rn["count"]):
        u = En.smoothed_random(f2, rng, rng.uniform(*rn["length"]))
        gn2d.append(gn_ratios(f2, u, p=4.0)["GN2d"])
    return {"GNinf_sweep": inf, "GN2d_random": gn2d}


def build_gn_corpus(seed: int = 20240601) -> dict:
    recipe = {"sweep": {"n": 20, "h": 0.25, "log10_eps": [-1.0, 0.5], "count": 16},
              "random": {"n": 20, "h": 0.5, "seed": seed, "count": 100, "length": [0.5, 4.0]}}
    r = gn_corpus_ratios(recipe)
    return {"recipe": recipe, "ratios": r,
            "constants": {"GNinf": max(r["GNinf_sweep"]), "GN2d": max(r["GN2d_random"])}}


@check("fem")
def check_gn_corpus(rng):
    corp = load_gn_corpus()
    r = gn_corpus_ratios(corp["recipe"])
    cst = corp["constants"]
    over = {"GNinf": max(r["GNinf_sweep"]) / cst["GNinf"] - 1, "GN2d": max(r["GN2d_random"]) / cst["GN2d"] - 1}
    drift = max(float(np.max(np.abs(np.array(r[k]) - np.array(corp["ratios"][k])))) for k in r)
    return all(v <= 1e-9 for v in over.values()), {"excess": over, "max_drift": drift}


# ----------------------------------------------------------------- energy

def _small_problem(q=3.0):
    f = assemble(mesh(gen_star(3, 6.0), 0.25), "dirichlet")
    dofs, w = En._defects(f, f.graph.defects)
    return f, dofs, w


@check("energy")
def check_descent_invariants(rng):
    f, dofs, w = _small_problem()
    mu = 2.0
    u0 = En.smoothed_random(f, rng)
    tr = En.descend(f.K, f.M, dofs, w, 3.0, mu, u0, En.SolverOptions(max_iter=300), record=True)
    mass_err = max(abs(m - mu) for m in tr.masses) / mu
    rises = np.diff(tr.energies)
    rise = float(np.max(rises)) if rises.size else 0.0
    tol = 8 * En._EPS * max(abs(e) for e in tr.energies)
    return mass_err <= 1e-10 and rise <= tol, {"mass_err": mass_err, "max_rise": rise, "iters": tr.iterations}


@check("energy")
def check_gradient(rng):
    worst = 0.0
    t = 1e-5
    for i in range(20):
        q = rng.uniform(2.2, 3.8)
        f, dofs, w = _small_problem(q)
        u = En.smoothed_random(f, rng) + 0.1
        d = rng.normal(size=f.n)
        g = En.energy_gradient(f, u, q).values
        fd = (En.energy(f, u + t * d, q) - En.energy(f, u - t * d, q)) / (2 * t)
        an = float(g @ d)
        worst = max(worst, abs(fd - an) / max(abs(an), 1e-12))
    return worst <= 1e-6, {"max_rel_err": worst}


@check("energy")
def check_scaling_concavity(rng):
    f, dofs, w = _small_problem()
    worst = -np.inf
    for _ in range(10):
        q = rng.uniform(2.1, 3.9)
        v = En.smoothed_random(f, rng)
        v /= math.sqrt(float(v @ (f.M @ v)))
        mus = np.linspace(0.1, 20.0, 41)
        e = np.array([En.energy(f, math.sqrt(m) * v, q) for m in mus])
        worst = max(worst, float(np.max(e[:-2] - 2 * e[1:-1] + e[2:])))
    return worst <= 1e-10, {"max_second_difference": worst}


@check("energy")
def check_curve_shape(rng):
    s = Setup(gen_star(3, 12.0), 0.1, label="star3")
    cur = energy_curve(s, 3.0, [0.25, 0.5, 1.0, 2.0], families=False)
    return cur.concave and cur.ratio_monotone, {"energies": [p["energy"] for p in cur.points]}


# ----------------------------------------------------------------- spectral

@check("spectral")
def check_rayleigh_consistency(rng):
    f = assemble(mesh(gen_grid_window(8), 0.5), "dirichlet")
    c = f.graph.index((0, 0))
    r = S.delta_eigen(f, 1.0, c)
    rq = S.rayleigh(f, r.vector.values, 1.0, c)
    b = S.bottom_eigen(f)
    rb = S.rayleigh(f, b.vector.values)
    rel = max(abs(rq - r.lam) / abs(r.lam), abs(rb - b.lam) / abs(b.lam))
    return rel <= 1e-10 and r.below_shift == 0, {"rel": rel, "lambda": r.lam}


@check("spectral")
def check_alpha_monotone(rng):
    f = assemble(mesh(gen_grid_window(8), 0.5), "dirichlet")
    lams = [S.delta_eigen(f, a).lam for a in (0.0, 0.25, 0.5, 1.0, 2.0, 4.0)]
    return bool(np.all(np.diff(lams) <= 1e-12)), {"lambdas": lams}


@check("spectral")
def check_window_monotone_eigen(rng):
    lams, lb = [], []
    for n in (4, 6, 8, 10):
        f = assemble(mesh(gen_grid_window(n), 0.5), "dirichlet")
        lams.append(S.delta_eigen(f, 1.0).lam)
        lb.append(S.bottom_eigen(f).lam)
    ok = bool(np.all(np.diff(lams) <= 1e-12) and np.all(np.diff(lb) <= 1e-12))
    return ok, {"delta": lams, "bottom": lb}


# ----------------------------------------------------------------- constructions

@check("constructions")
def check_family_quadrature(rng):
    errs = []
    hs = [0.04, 0.02, 0.01]
    for h in hs:
        f = assemble(mesh(gen_star(1, 40.0), h), "natural")
        fe = C.star_exp_family(0.5, 3.0, forms=f)
        qd = fe.quadrature(3.0)
        x = fe.extras
        errs.append(abs(qd["energy"] - x["truncated_energy"]) + abs(qd["mass"] - x["truncated_mass"]))
    order = _slope(hs, errs)
    f = assemble(mesh(gen_star(4, 2.0), 0.25), "dirichlet")
    te = C.tent_family(1.3, 1.5, 4, 3.0, forms=f)
    qt = te.quadrature(3.0)
    tent_err = abs(qt["mass"] - te.closed_form_mass) + abs(qt["energy"] - te.closed_form_energy)
    g = gen_grid_window(8)
    fp = assemble(mesh(g, 0.5), "dirichlet")
    pl = C.appendix_plateau(3, fp)
    qp = pl.quadrature()
    plat_err = abs(qp["mass"] - pl.closed_form_mass) + abs(qp["kinetic"] - pl.extras["closed_kinetic"])
    ok = 1.8 <= order <= 2.2 and tent_err <= 1e-12 and plat_err <= 1e-12
    return ok, {"star_order": order, "tent_err": tent_err, "plateau_err": plat_err}


@check("constructions")
def check_family_negativity(rng):
    delta = En.detection_margin(0.05)
    best = {
        "star_exp": min(C.star_exp_family(e, 3.0).closed_form_energy for e in np.linspace(0.05, 1.0, 20)),
        "tent": min(C.tent_family(math.sqrt(3.0 / (3 * ell ** 3)), ell, 3, 3.0).closed_form_energy
                    for ell in np.logspace(-1, 3, 41)),
        "grid_exp": min(C.grid_exp_family(e, 200.0, 3.0).closed_form_energy for e in np.logspace(-3, 1, 41)),
    }
    return all(v < -delta for v in best.values()), {"best": best, "delta": delta}


@check("constructions")
def check_upper_bound_soundness(rng):
    # family interpolants restricted to the window are feasible points of the window problem
    f = assemble(mesh(gen_star(3, 16.0), 0.1), "dirichlet")
    q, mu = 3.0, 4.0
    r = En.minimize(f, q, mu)
    fams = [C.star_soliton(q, mu, 3, forms=f), C.tent_family(math.sqrt(mu / 8.0), 2.0, 3, q, forms=f)]
    fams += [C.star_exponential(b, q, mu, 3, forms=f) for b in (0.1, 0.3, 1.0, 3.0)]
    fams += [C.star_exp_family(e, q, 3, forms=f) for e in (0.3, 0.6, 1.2)]
    vals = []
    for fe in fams:
        u = fe.function.values
        u = u * math.sqrt(mu / float(u @ (f.M @ u)))
        vals.append(En.energy(f, u, q))
    slack = r.energy - min(vals)
    return slack <= 1e-12 * max(1.0, abs(r.energy)), {"window": r.energy, "best_family": min(vals)}


# ----------------------------------------------------------------- halfline

@check("halfline")
def check_radial_domination(rng):
    rows = []
    for prof, sup in ((lambda x: np.clip(1 - x / 3.0, 0, None), 3.0),
                      (lambda x: (np.exp(-x) - math.exp(-6.0)) * (x <= 6), 6.0),
                      (lambda x: np.clip(1 - x / 0.8, 0, None), 0.8)):
        rows.append(H.radial_compare(prof, 3.0, 1.0, support=sup, L=8.0, h=0.05))
    ok = all(r["mass_ok"] and r["kinetic_ok"] for r in rows)
    return ok, {"mass_slack": [r["mass_slack"] for r in rows], "kinetic_slack": [r["kinetic_slack"] for r in rows]}


@check("halfline")
def check_mass_saturation(rng):
    r = H.reduced_minimize(3.0, 1.0, 60.0, L=50.0, h=0.05)
    rel = abs(r.mass - 60.0) / 60.0
    return r.energy < 0 and rel <= 1e-10, {"energy": r.energy, "rel_mass_err": rel}


@check("halfline")
def check_origin_scaling(rng):
    res = [H.reduced_minimize(3.0, 1.0, mu, L=50.0, h=0.025) for mu in (40.0, 60.0, 100.0, 150.0, 200.0)]
    fit = H.origin_exponent(res)
    # the first-interval estimate of the small-mass argument, in the form valid at every mass:
    # |int_0^1 v^2 - v(0)^2| <= 2 v(0) s + s^2 with s^2 = int_0^1 g v'^2
    excess = []
    for r in res:
        x, v = r.x, r.v
        sel = x <= 1 + 1e-12
        s2 = 4.0 * float(np.sum(np.diff(v[sel]) ** 2 / np.diff(x[sel])))
        gap = abs(H._int01_sq(r.forms, r.v) - r.v0 ** 2)
        excess.append(gap - (2 * abs(r.v0) * math.sqrt(s2) + s2))
    ok = abs(fit["slope"] - fit["expected"]) <= 0.1 and max(excess) <= 1e-12
    return ok, {"slope": fit["slope"], "expected": fit["expected"],
                "first_interval_ratio": fit["first_interval_ratio"], "bound_excess": excess}


# ----------------------------------------------------------------- rearrange

def _random_windowed(forms, rng, radius):
    u = En.smoothed_random(forms, rng, rng.uniform(0.3, 3.0))
    dn = node_distances(forms.mesh, forms.graph.index((0, 0)))
    cut = forms.restrict(np.clip(radius - dn, 0, None))
    return u * np.minimum(cut, 1.0)


@check("rearrange")
def check_rearrangement(rng):
    f = assemble(mesh(gen_grid_window(8), 0.25), "dirichlet")
    c = f.graph.index((0, 0))
    worst_m = worst_k = -np.inf
    centre_ok = idem_ok = energy_ok = strict_ok = True
    worst_idem = 0.0
    for _ in range(100):
        u = _random_windowed(f, rng, 6.5)
        sm = R.spherical_mean(u, forms=f)
        fn = functionals(f, u, [c])
        worst_m = max(worst_m, sm.mass - fn.mass)
        worst_k = max(worst_k, sm.kinetic - fn.kinetic)
        centre_ok &= sm.center_value == f.expand(u)[c]
        s2 = R.spherical_mean(sm)
        worst_idem = max(worst_idem, float(np.max(np.abs(s2.profile.means - sm.profile.means))))
        energy_ok &= sm.energy(3.0) <= 0.5 * fn.kinetic - fn.vertex_sum_q(3.0) / 3 + 1e-12
        if R.radiality(u, forms=f)["max_cv"] > 1e-8:
            strict_ok &= sm.kinetic < fn.kinetic
    idem_ok = worst_idem <= 1e-14
    ok = worst_m <= 1e-12 and worst_k <= 1e-12 and centre_ok and idem_ok and energy_ok and strict_ok
    return ok, {"max_mass_increase": worst_m, "max_kinetic_increase": worst_k,
                "idempotence": worst_idem, "center": centre_ok, "energy": energy_ok, "strict": strict_ok}


# ----------------------------------------------------------------- experiments

@check("experiments")
def check_certificate_monotone(rng):
    s = grid_setup(8, 0.5)
    flags = [certify(s, 3.0, mu, families=False)["certified"] for mu in (20.0, 30.0, 35.0, 45.0, 60.0)]
    first = flags.index(True) if True in flags else len(flags)
    return all(flags[first:]), {"flags": flags}


@check("experiments")
def check_threshold_reproducible(rng):
    runs = [critical_mass(grid_setup(8, 0.5), 3.0, (20.0, 80.0), rel_tol=0.05) for _ in range(2)]
    a, b = (json.dumps(r.to_record(), sort_keys=True) for r in runs)
    return a == b, {"estimate": runs[0].estimate}


@check("experiments")
def check_window_monotone_energy(rng):
    opts = En.SolverOptions()
    es = [En.minimize(grid_setup(n, 0.5).forms(), 3.0, 40.0, opts=opts).energy for n in (4, 6, 8)]
    return bool(np.all(np.diff(es) <= 1e-9)), {"energies": es}


def run(groups=None, seed: int = 0, progress=None) -> list[Check]:
    """Run the suite; ``groups`` restricts it to some module names."""
    out = []
    for group, name, fn in _REGISTRY:
        if groups and group not in groups:
            continue
        rng = np.random.default_rng([seed, len(out)])
        t0 = time.perf_counter()
        try:
            ok, detail = fn(rng)
        except Exception as exc:  # a crash is a failure of that check, not of the suite
            ok, detail = False, {"error": f"{type(exc).__name__}: {exc}"}
        c = Check(group, name, bool(ok), _plain(detail), time.perf_counter() - t0)
        out.append(c)
        if progress:
            progress(c)
    return out


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    return x


GROUPS = sorted({g for g, _, _ in _REGISTRY})
