import math

import numpy as np
import pytest
from scipy.linalg import eigh

from qgdefect.energy import (C_RES, DELTA_FLOOR, SolverOptions, calibrate_c_res, descend, detection_margin,
                             el_residual, energy, energy_gradient, lagrange_multiplier, minimize, translate,
                             translation_probe)
from qgdefect.experiments import grid_setup, nonexistence_demo
from qgdefect.fem import assemble, functionals, interpolate, mesh, node_distances
from qgdefect.graph import gen_grid_window, gen_star


def _grid_tent(n=3, h=0.25):
    g = gen_grid_window(n)
    g = g.with_defects([g.index((0, 0))])
    f = assemble(mesh(g, h), "dirichlet")
    d = node_distances(f.mesh, g.index((0, 0)))
    return f, f.restrict(np.maximum(1 - d, 0))


def _star_tent(M=1.0, ell=1.0, N=3):
    f = assemble(mesh(gen_star(N, ell), 0.25), "dirichlet")
    return f, f.restrict(M * np.maximum(ell - node_distances(f.mesh, 0), 0))


def test_zero_energy_and_gradient():
    f = assemble(mesh(gen_star(3, 2.0), 0.5), "dirichlet")
    z = np.zeros(f.n)
    assert energy(f, z, 3.0) == 0.0
    assert not np.any(energy_gradient(f, z, 2.5).values)


def test_grid_tent_energy():
    f, u = _grid_tent()
    assert energy(f, u, 3.0) == pytest.approx(5 / 3, abs=1e-12)


def test_star_tent_energy():
    f, u = _star_tent()
    assert energy(f, u, 3.0) == pytest.approx(7 / 6, abs=1e-12)


def test_multiplier_examples():
    f, u = _grid_tent()
    mass = functionals(f, u).mass
    assert lagrange_multiplier(f, u, 3.0) == pytest.approx((1 - 4) / mass, abs=1e-12)
    # vanishing at the defect: only the kinetic part remains
    g = f.graph
    other = f.restrict(np.maximum(1 - node_distances(f.mesh, g.index((1, 1))), 0))
    fo = functionals(f, other)
    assert lagrange_multiplier(f, other, 3.0) == pytest.approx(-fo.kinetic / fo.mass)


def test_half_line_ground_state_below_family_bound():
    f = assemble(mesh(gen_star(1, 40.0), 0.05), "dirichlet")
    r = minimize(f, 3.0, 0.25)
    assert r.energy < 0 and r.energy <= -0.0032552
    assert r.energy == pytest.approx(-0.25 * 0.25 / 6, rel=2e-3)   # half-line ground state
    assert abs(r.mass - 0.25) <= 1e-10 * 0.25
    assert r.lam > 0
    assert r.certified_negative


def test_small_mass_on_grid_has_no_certificate():
    s = grid_setup(30, 0.5)
    r = minimize(s.forms(), 3.0, 0.05)
    assert r.energy >= -r.delta


def test_rescaling_inequality():
    f = assemble(mesh(gen_star(3, 12.0), 0.1), "dirichlet")
    e1 = minimize(f, 3.0, 4.0).energy
    e2 = minimize(f, 3.0, 8.0).energy
    assert e1 < 0
    assert e2 <= 2.0 * e1 + 1e-12


def test_residual_of_discrete_eigenpair():
    # odd eigenvector of the line: vanishes at the defect in the middle
    f = assemble(mesh(gen_star(2, 3.0), 0.25), "dirichlet")
    w, V = eigh(f.K.toarray(), f.M.toarray())
    c = f.vertex_dof(0)
    k = next(i for i in range(len(w)) if abs(V[c, i]) < 1e-12)
    r = el_residual(f, V[:, k], -w[k], 3.0)
    assert r["max_defect_flux"] <= 1e-10
    assert r["interior_residual"] <= 1e-10


def test_residuals_converge_under_refinement():
    res = []
    for h in (0.1, 0.05, 0.025):
        f = assemble(mesh(gen_star(1, 30.0), h), "dirichlet")
        r = minimize(f, 3.0, 0.25)
        res.append(r.residual)
        assert r.residual["max_defect_flux"] <= 1e-8
    for key in ("strong_defect_flux", "strong_interior"):
        rates = [math.log2(a[key] / b[key]) for a, b in zip(res, res[1:])]
        assert all(1.8 <= s <= 2.2 for s in rates), (key, rates)


def test_random_vector_has_large_residual():
    f = assemble(mesh(gen_star(3, 4.0), 0.25), "dirichlet")
    u = np.random.default_rng(1).random(f.n)
    r = el_residual(f, u, 0.0, 3.0)
    assert r["interior_residual"] > 1e-2


def test_descent_trace_invariants():
    f = assemble(mesh(gen_star(3, 6.0), 0.2), "dirichlet")
    dofs = f.defect_dofs()
    u0 = np.exp(-node_distances(f.mesh, 0))[f.free]
    tr = descend(f.K, f.M, dofs, np.ones(1), 3.0, 8.0, u0, SolverOptions(max_iter=4000), record=True)
    assert max(abs(m - 8.0) for m in tr.masses) <= 8e-10
    assert all(b <= a + 1e-13 * abs(a) for a, b in zip(tr.energies, tr.energies[1:]))
    assert tr.status == "converged"


def test_stop_below_exits_early():
    f = assemble(mesh(gen_star(3, 6.0), 0.2), "dirichlet")
    full = minimize(f, 3.0, 4.0)
    early = minimize(f, 3.0, 4.0, opts=SolverOptions(stop_below=0.5 * full.energy))
    assert early.status == "below_target"
    assert full.energy <= early.energy < 0.5 * full.energy


def test_solver_argument_checks():
    f = assemble(mesh(gen_star(3, 6.0), 0.5), "dirichlet")
    with pytest.raises(ValueError):
        minimize(f, 4.0, 1.0)
    with pytest.raises(ValueError):
        minimize(f, 3.0, 0.0)
    with pytest.raises(ValueError):
        SolverOptions(tol=0)
    with pytest.raises(ValueError):
        minimize(f, 3.0, 1.0, V=[])


def test_detection_margin():
    assert detection_margin(1e-6) == DELTA_FLOOR
    assert detection_margin(0.5) == pytest.approx(C_RES * 0.25)


def test_calibration_matches_constant():
    cal = calibrate_c_res()
    assert 1.9 <= cal["order"] <= 2.1
    assert cal["C_res"] <= C_RES


def test_zero_translation_is_identity():
    s = grid_setup(8, 0.5)
    f = s.forms()
    u = f.restrict(np.exp(-node_distances(f.mesh, f.graph.index((0, 0)))))
    pr = translation_probe(f, u, (0, 0), 3.0, cutoff=1e-3)
    assert pr["E_before"] == pr["E_after"]


def test_translation_out_of_window_rejected():
    s = grid_setup(4, 0.5)
    f = s.forms()
    u = f.restrict(np.exp(-node_distances(f.mesh, f.graph.index((0, 0)))))
    with pytest.raises(ValueError):
        translate(f, u, (2, 0))


def test_bump_moved_off_defects_gains_energy():
    from qgdefect.graph import ZPeriodic
    s = grid_setup(8, 0.5, defects=ZPeriodic((1, 0), ((0, 0),)))
    f = s.forms()
    d = node_distances(f.mesh, f.graph.index((0, 0)))
    u = f.restrict(np.maximum(1.5 - d, 0))
    pr = translation_probe(f, u, (0, 2), 3.0)
    assert pr["E_after"] > pr["E_before"]


def test_gap_row_translations_decrease_energy():
    demo = nonexistence_demo(q=3.0, mu=40.0, blocks=(1, 2))
    es = [row["energy"] for row in demo["sequence"]]
    assert all(b < a for a, b in zip(es, es[1:]))
