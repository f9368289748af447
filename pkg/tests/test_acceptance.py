"""Acceptance gate: thirteen criteria, each reported as one PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v`` (lines appear in the
terminal summary) or ``python tests/test_acceptance.py`` (lines on stdout).
Tolerances and runtime limits are the stated ones; nothing is relaxed when a
criterion fails.
"""

from __future__ import annotations

import math
import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from oracles import penalty_multistart  # noqa: E402

from qgdefect.constructions import appendix_loglinear, grid_exp_family, star_exp_family, star_soliton  # noqa: E402
from qgdefect.energy import C_RES, DELTA_FLOOR, minimize  # noqa: E402
from qgdefect.experiments import (Setup, certify, critical_mass, grid_setup, nonexistence_demo,  # noqa: E402
                                  periodic_control, small_q_limit)
from qgdefect.fem import assemble, functionals, mesh, node_distances  # noqa: E402
from qgdefect.graph import Z2Periodic, ZPeriodic, annulus_edges, gen_grid_window, gen_star  # noqa: E402
from qgdefect.halfline import origin_exponent, reduced_minimize  # noqa: E402
from qgdefect.rearrange import radiality, spherical_mean  # noqa: E402
from qgdefect.spectral import bottom_eigen, delta_eigen  # noqa: E402

CRITERIA = {}


def criterion(k, title, limit):
    def deco(fn):
        CRITERIA[k] = (title, limit, fn)
        return fn
    return deco


def evaluate(k):
    """Run criterion ``k``; returns (passed, line)."""
    title, limit, fn = CRITERIA[k]
    t0 = time.perf_counter()
    ok, detail = fn()
    secs = time.perf_counter() - t0
    in_time = secs < limit
    if not in_time:
        detail += f"; runtime {secs:.0f}s over the {limit:.0f}s limit"
    passed = bool(ok and in_time)
    return passed, f"AC{k:<2d} {'PASS' if passed else 'FAIL'}  {title} ({secs:.1f}s): {detail}"


# ------------------------------------------------------------------ 1

@criterion(1, "half-line exponential closed forms", 1.0)
def ac1():
    fe = star_exp_family(0.5, 3.0, N=1)
    closed = abs(fe.closed_form_mass - 0.25) <= 1e-12 and abs(fe.closed_form_energy + 0.0032552083) <= 1e-10
    # natural truncation keeps the end value; the closed forms are compared over the same [0, 40]
    f = assemble(mesh(gen_star(1, 40.0), 0.005), "natural")
    fw = star_exp_family(0.5, 3.0, N=1, forms=f)
    qd = fw.quadrature(3.0)
    dm = abs(qd["mass"] - fw.extras["truncated_mass"])
    de = abs(qd["energy"] - fw.extras["truncated_energy"])
    ok = closed and dm <= 1e-5 and de <= 1e-5
    return ok, (f"mass {fe.closed_form_mass:.10g}, energy {fe.closed_form_energy:.10g}; "
                f"quadrature vs window integrals {dm:.1e} / {de:.1e}; "
                f"vs infinite line {abs(qd['mass'] - fe.closed_form_mass):.2e} (tail {fw.extras['tail_mass']:.2e})")


# ------------------------------------------------------------------ 2

@criterion(2, "grid exponential kinetic/mass identity", 10.0)
def ac2():
    eps, mu = 1.0, 2.0
    closed = [abs(grid_exp_family(e, mu, 3.0).extras["kinetic"] / mu - e * e) for e in (0.1, 0.5, 1.0, 2.0)]
    hs = (0.1, 0.05, 0.025)
    errs = []
    for h in hs:
        f = assemble(mesh(gen_grid_window(16), h), "natural")
        fn = functionals(f, grid_exp_family(eps, mu, 3.0, forms=f).function.values)
        errs.append(abs(fn.kinetic / fn.mass - eps * eps))
    order = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
    ok = max(closed) <= 1e-15 and abs(order - 2.0) <= 0.2
    return ok, f"closed-form error {max(closed):.1e}; quadrature errors {[f'{e:.2e}' for e in errs]}, order {order:.3f}"


# ------------------------------------------------------------------ 3

@criterion(3, "annulus edge counts", 1.0)
def ac3():
    g = gen_grid_window(40)
    bad = [n for n in range(16) if len(annulus_edges(g, (0, 0), n)) != 4 * (2 * n + 1)]
    return not bad, "all n <= 15 give 4(2n+1)" if not bad else f"mismatch at n={bad}"


# ------------------------------------------------------------------ 4

def _star_setup(N, q, mu):
    """Window of 12 decay lengths; mesh fine enough that C_RES h^2 is a tenth of |E|.

    When |E| is below the fixed floor of the detection margin no mesh can
    certify it, and the coarse mesh is kept.
    """
    fe = star_soliton(q, mu, N)
    s, E = fe.extras["decay"], fe.closed_form_energy
    L = 12.0 / s
    h = 0.25 / s
    if abs(E) > DELTA_FLOOR:
        h = min(h, math.sqrt(0.1 * abs(E) / C_RES))
    return Setup(gen_star(N, L), h), E


@criterion(4, "negativity on stars", 120.0)
def ac4():
    fails = []
    total = 0
    for N in (1, 2, 3):
        for q in (2.5, 3.0, 3.5):
            for mu in (0.1, 1.0, 10.0):
                total += 1
                s, exact = _star_setup(N, q, mu)
                r = certify(s, q, mu, families=False)
                if not r["certified"]:
                    fails.append(f"(N={N}, q={q}, mu={mu}): E={r['energy']:.2e}, exact {exact:.2e}, "
                                 f"delta {r['delta']:.1e}")
    return not fails, f"{total - len(fails)}/{total} certified" + ("; " + "; ".join(fails) if fails else "")


# ------------------------------------------------------------------ 5

@criterion(5, "grid critical mass bracket stability", 900.0)
def ac5():
    ests = {}
    for n in (30, 45):
        for h in (0.5, 0.25):
            e = critical_mass(grid_setup(n, h), 3.0, (20.0, 60.0), rel_tol=1e-2)
            ests[(n, h)] = e
    brackets = all(e.status == "bracketed" for e in ests.values())
    vals = [e.estimate for e in ests.values() if e.estimate is not None]
    spread = max(vals) / min(vals) - 1 if vals else math.inf
    ok = brackets and spread <= 0.10
    desc = ", ".join(f"n={n} h={h}: [{e.mu_lo:.2f}, {e.mu_hi:.2f}]" if e.status == "bracketed"
                     else f"n={n} h={h}: {e.status}" for (n, h), e in ests.items())
    return ok, f"{desc}; spread {spread:.1%}"


# ------------------------------------------------------------------ 6

@criterion(6, "thresholds decrease toward q = 2", 1800.0)
def ac6():
    out = small_q_limit(grid_setup(30, 0.5), ns=(2, 4, 8), bracket=(5.0, 80.0), rel_tol=2e-2)
    desc = ", ".join(f"q={r['q']:.4g}: {r['estimate']:.4g}" if r["estimate"] is not None
                     else f"q={r['q']:.4g}: {r['status']}" for r in out["rows"])
    return out["strictly_decreasing"], desc


# ------------------------------------------------------------------ 7

@criterion(7, "row versus lattice defects", 1200.0)
def ac7():
    mu = 8.0
    row = grid_setup(40, 0.5, defects=ZPeriodic((1, 0), ((0, 0),)))
    lat = grid_setup(40, 0.5, defects=Z2Periodic((1, 0), (0, 1), ((0, 0),)))
    res = {(name, q): certify(s, q, mu)["certified"]
           for name, s in (("row", row), ("lattice", lat)) for q in (2.5, 3.5)}
    ok = res[("row", 2.5)] and not res[("row", 3.5)] and res[("lattice", 2.5)] and res[("lattice", 3.5)]
    return ok, f"mu={mu}: " + ", ".join(f"{k[0]} q={k[1]} {'negative' if v else 'no certificate'}"
                                        for k, v in res.items())


# ------------------------------------------------------------------ 8

@criterion(8, "radial ground state", 300.0)
def ac8():
    s = grid_setup(30, 0.5)
    r = minimize(s.forms(), 3.0, 40.0)
    rad = radiality(r.u.values, forms=s.forms())
    ok = rad["max_cv"] <= 1e-3 and rad["monotone"]
    cv = rad["cv"]
    return ok, (f"E={r.energy:.4f}, max CV {rad['max_cv']:.3g} (annuli 1-3: "
                f"{', '.join(f'{c:.3g}' for c in cv[1:4])}), monotone {rad['monotone']}")


# ------------------------------------------------------------------ 9

@criterion(9, "spherical mean on random inputs", 60.0)
def ac9():
    f = assemble(mesh(gen_grid_window(8), 0.25), "dirichlet")
    c = f.graph.index((0, 0))
    d = node_distances(f.mesh, c)
    rng = np.random.default_rng(20240601)
    worst_m = worst_k = -math.inf
    center_ok, strict_ok, nonradial = True, True, 0
    for _ in range(100):
        radius = rng.uniform(1.0, 7.0)
        full = np.where(d < radius, rng.random(f.mesh.n_dofs), 0.0)
        sm = spherical_mean(f.restrict(full), forms=f)
        worst_m = max(worst_m, sm.mass - sm.input_mass)
        worst_k = max(worst_k, sm.kinetic - sm.input_kinetic)
        center_ok &= sm.center_value == full[c]
        if np.max(sm.profile.variances) > 0:
            nonradial += 1
            strict_ok &= sm.kinetic < sm.input_kinetic
    ok = worst_m <= 1e-12 and worst_k <= 1e-12 and center_ok and strict_ok
    return ok, (f"max mass change {worst_m:.2e}, max kinetic change {worst_k:.2e}, center exact {center_ok}, "
                f"strict on {nonradial} non-radial inputs {strict_ok}")


# ------------------------------------------------------------------ 10

@criterion(10, "reduced half-line problem", 600.0)
def ac10():
    q, alpha = 3.0, 1.0
    poh = []
    neg = True
    for h in (0.025, 0.0125):
        r = reduced_minimize(q, alpha, 100.0, L=50.0, h=h)
        neg &= r.certificate == "negative"
        poh.append(r.residuals["pohozaev"])
    sweep = [reduced_minimize(q, alpha, mu, L=50.0, h=0.025) for mu in (40.0, 60.0, 100.0, 150.0, 200.0)]
    all_neg = all(r.certificate == "negative" for r in sweep)
    fit = origin_exponent(sweep)
    ok = neg and poh[0] <= 1e-3 and poh[1] <= 1e-3 and poh[1] < poh[0] and all_neg \
        and abs(fit["slope"] - fit["expected"]) <= 0.1
    return ok, (f"identity residual {poh[0]:.2e} -> {poh[1]:.2e}; sweep negative {all_neg}, "
                f"slope {fit['slope']:.3f} vs {fit['expected']:.3f}")


# ------------------------------------------------------------------ 11

@criterion(11, "linear spectral baselines", 120.0)
def ac11():
    nat = grid_setup(40, 1.0)
    nat.truncation = "natural"
    b = bottom_eigen(nat.forms())
    x = b.vector.values
    const = float(np.max(np.abs(x - x.mean())) / abs(x.mean()))
    dir_ = grid_setup(40, 1.0)
    f = dir_.forms()
    lam = delta_eigen(f, 1.0).lam
    lam_nat = delta_eigen(nat.forms(), 1.0).lam
    rq = min(appendix_loglinear(n, 1.0, forms=f).extras["rayleigh_interpolant"] for n in range(2, 41))
    ok = abs(b.lam) <= 1e-10 and const <= 1e-8 and lam < 0 and lam <= rq
    return ok, (f"natural bottom {b.lam:.1e} (vector spread {const:.1e}); delta eigenvalue on the "
                f"zero-boundary window {lam:.3e}, smallest log-linear quotient {rq:.3e}; "
                f"natural-boundary window gives {lam_nat:.3e}")


# ------------------------------------------------------------------ 12

@criterion(12, "translation signature on the gap row", 600.0)
def ac12():
    demo = nonexistence_demo(q=3.0, mu=40.0, blocks=(1, 2, 3))
    ctrl = periodic_control(q=3.0, mu=40.0)
    es = [s["energy"] for s in demo["sequence"]]
    ok = demo["n_strict_decreases"] >= 2 and ctrl["relative_change"] <= 1e-10
    return ok, (f"energies {', '.join(f'{e:.6f}' for e in es)} ({demo['n_strict_decreases']} strict "
                f"decreases); periodic control relative change {ctrl['relative_change']:.1e}")


# ------------------------------------------------------------------ 13

@criterion(13, "agreement with a penalty multistart oracle", 120.0)
def ac13():
    f = assemble(mesh(gen_star(3, 3.0), 0.25), "dirichlet")
    q, mu = 3.0, 20.0
    pg = minimize(f, q, mu)
    orc = penalty_multistart(f.K, f.M, f.defect_dofs(), q, mu, seeds=200)
    gap = abs(pg.energy - orc["energy"])
    return gap <= 1e-6, (f"{f.n} DOF, projected gradient {pg.energy:.10f}, oracle {orc['energy']:.10f}, "
                         f"gap {gap:.1e}")


# ------------------------------------------------------------------ pytest

@pytest.mark.slow
@pytest.mark.parametrize("k", sorted(CRITERIA), ids=[f"AC{k}" for k in sorted(CRITERIA)])
def test_acceptance(k, acceptance_lines):
    passed, line = evaluate(k)
    acceptance_lines.append(line)
    print(line)
    assert passed, line


if __name__ == "__main__":
    which = [int(a) for a in sys.argv[1:]] or sorted(CRITERIA)
    results = []
    for k in which:
        passed, line = evaluate(k)
        print(line, flush=True)
        results.append(passed)
    sys.exit(0 if all(results) else 1)
