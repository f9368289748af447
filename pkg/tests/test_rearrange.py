import numpy as np
import pytest

from qgdefect.constructions import appendix_plateau, grid_exp_family
from qgdefect.fem import assemble, mesh, node_distances
from qgdefect.graph import GraphError, gen_grid_window, gen_star
from qgdefect.rearrange import monotone_check, radial_profile, radiality, spherical_mean


def _forms(n=6, h=0.25):
    return assemble(mesh(gen_grid_window(n), h), "dirichlet")


def test_l1_exponential_is_radial():
    f = _forms()
    fe = grid_exp_family(0.7, 1.0, 3.0, forms=f)
    rad = radiality(fe.function.values, forms=f)
    assert rad["max_cv"] < 1e-12
    assert rad["monotone"]
    d = node_distances(f.mesh, f.graph.index((0, 0)))
    sm = spherical_mean(f.restrict(np.maximum(3.0 - d, 0.0)), forms=f)
    assert np.max(sm.profile.variances) < 1e-28
    assert sm.continuous


def test_shifted_bump_is_not_radial():
    f = _forms()
    d = node_distances(f.mesh, f.graph.index((1, 0)))
    u = f.restrict(np.maximum(2.0 - d, 0.0))
    assert radiality(u, forms=f)["max_cv"] > 0.1


def test_mean_is_idempotent():
    f = _forms()
    d = node_distances(f.mesh, f.graph.index((1, 1)))
    u = f.restrict(np.maximum(2.5 - d, 0.0))
    once = spherical_mean(u, forms=f)
    twice = spherical_mean(once)
    assert twice.mass == pytest.approx(once.mass, rel=1e-14)
    assert twice.kinetic == pytest.approx(once.kinetic, rel=1e-14)
    assert np.allclose(twice.profile.means, once.profile.means, rtol=0, atol=1e-15)


def test_single_edge_bump():
    f = _forms(2, 0.5)
    g = f.graph
    c, e = g.index((0, 0)), g.index((1, 0))
    k = next(k for k, ed in enumerate(g.edges) if {ed.a, ed.b} == {c, e})
    full = np.zeros(f.mesh.n_dofs)
    full[f.mesh.edge_nodes[k][1]] = 1.0
    sm = spherical_mean(f.restrict(full), forms=f)
    assert sm.input_mass == pytest.approx(1 / 3)
    assert sm.mass == pytest.approx(1 / 12)
    assert sm.center_value == 0.0
    assert sm.continuous


def test_mean_does_not_increase_norms():
    f = _forms()
    rng = np.random.default_rng(3)
    full = np.zeros(f.mesh.n_dofs)
    near = node_distances(f.mesh, f.graph.index((0, 0))) < 4
    full[near] = rng.random(int(near.sum()))
    u = f.restrict(full)
    sm = spherical_mean(u, forms=f)
    assert sm.mass <= sm.input_mass
    assert sm.kinetic <= sm.input_kinetic
    assert sm.center_value == full[f.graph.index((0, 0))]


def test_monotone_profiles():
    f = _forms()
    prof = radial_profile(grid_exp_family(0.3, 1.0, 3.0, forms=f).function.values, forms=f,
                          require_support=False)
    assert monotone_check(prof)[0]
    plate = radial_profile(appendix_plateau(2, f).function.values, forms=f)
    assert monotone_check(plate)[0]
    d = node_distances(f.mesh, f.graph.index((0, 0)))
    ring = radial_profile(f.restrict(np.maximum(1 - abs(d - 2), 0)), forms=f)
    ok, viol = monotone_check(ring)
    assert not ok and viol[0] == 1


def test_rejections():
    f = _forms()
    with pytest.raises(ValueError):
        spherical_mean(-np.ones(f.n), forms=f)
    s = assemble(mesh(gen_star(3, 2.0), 0.5))
    with pytest.raises(GraphError):
        spherical_mean(np.ones(s.n), forms=s, center=0)
