import math

import numpy as np
import pytest

from qgdefect.fem import UNDEFINED, assemble, functionals, gn_ratios, interpolate, mesh
from qgdefect.graph import gen_grid_window, gen_star
from qgdefect.verify import load_gn_corpus


def test_cell_counts():
    g = gen_star(1, 1.0)
    assert mesh(g, 0.25).ncells.tolist() == [4]
    m = mesh(g, 0.3)
    assert m.ncells.tolist() == [4]
    assert np.allclose(m.cell_h, 0.25)
    with pytest.raises(ValueError):
        mesh(g, 0.0)


def test_textbook_element():
    f = assemble(mesh(gen_star(1, 1.0), 1.0), "natural")
    assert np.allclose(f.K.toarray(), [[1, -1], [-1, 1]])
    assert np.allclose(f.M.toarray(), [[1 / 3, 1 / 6], [1 / 6, 1 / 3]])


def test_constant_in_kernel_and_total_length():
    f = assemble(mesh(gen_star(3, 20.0), 0.5), "natural")
    one = np.ones(f.n)
    assert abs(one @ (f.K @ one)) < 1e-12
    assert one @ (f.M @ one) == pytest.approx(60.0, abs=1e-12)
    fn = functionals(f, 2.0 * one)
    assert fn.kinetic == pytest.approx(0.0, abs=1e-12)
    assert fn.mass == pytest.approx(4 * 60.0, abs=1e-10)


def test_dirichlet_eliminates_leaves():
    g = gen_star(3, 2.0)
    f = assemble(mesh(g, 0.5), "dirichlet")
    for b in g.boundary_indices():
        assert f.vertex_dof(int(b)) == -1
    assert f.n == mesh(g, 0.5).n_dofs - 3


def test_interpolation():
    f = assemble(mesh(gen_star(1, 1.0), 0.1), "natural")
    assert not np.any(interpolate(f, lambda nd: np.zeros(len(nd.t))).values)
    u = interpolate(f, lambda nd: nd.t)
    assert functionals(f, u.values).kinetic == pytest.approx(1.0, abs=1e-13)


def test_interpolation_error_order():
    errs = []
    for h in (0.1, 0.05):
        f = assemble(mesh(gen_star(1, 20.0), h), "natural")
        u = interpolate(f, lambda nd: np.exp(-nd.t))
        errs.append(abs(functionals(f, u.values).mass - (1 - math.exp(-40)) / 2))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)


def test_unit_tent_on_grid():
    g = gen_grid_window(3)
    g = g.with_defects([g.index((0, 0))])
    f = assemble(mesh(g, 0.25), "dirichlet")
    c = g.index((0, 0))
    u = interpolate(f, lambda nd: np.where(nd.is_vertex, 0.0, 0.0))
    full = f.expand(u.values)
    full[c] = 1.0
    m = f.mesh
    for k, e in enumerate(g.edges):
        if c in (e.a, e.b):
            nodes = m.edge_nodes[k]
            s = np.linspace(0, 1, len(nodes))
            full[nodes] = 1 - s if e.a == c else s
    fn = functionals(f, f.restrict(full))
    assert fn.kinetic == pytest.approx(4.0, abs=1e-12)
    assert fn.vertex_values[(0, 0)] == 1.0
    assert fn.mass == pytest.approx(4 / 3, abs=1e-12)


def test_zero_function():
    f = assemble(mesh(gen_star(2, 3.0), 0.5), "dirichlet")
    fn = functionals(f, np.zeros(f.n))
    assert fn.mass == 0 and fn.kinetic == 0 and fn.sup_norm == 0 and fn.lp_integral(4) == 0
    with pytest.raises(ValueError):
        gn_ratios(f, np.zeros(f.n))


def test_constant_ratios_undefined():
    f = assemble(mesh(gen_star(3, 2.0), 0.5), "natural")
    r = gn_ratios(f, np.ones(f.n))
    assert r["GN1d"] == UNDEFINED and r["GNinf"] == UNDEFINED


def test_gauss_rule_exact_for_quadratics():
    f = assemble(mesh(gen_star(1, 2.0), 0.5), "natural")
    u = interpolate(f, lambda nd: 1 + 3 * nd.t)
    assert functionals(f, u.values).lp_integral(2) == pytest.approx((7 ** 3 - 1) / 9, abs=1e-12)


def test_subgraph_ratio_present():
    f = assemble(mesh(gen_star(3, 2.0), 0.25), "dirichlet")
    u = interpolate(f, lambda nd: np.maximum(2 - nd.t, 0) * (1 + 0.1 * nd.edge))
    r = gn_ratios(f, u.values, subgraph_edges=[0])
    assert r["subgraph"] > 0 and "GN2d" not in r


def test_gn_corpus_file_is_consistent():
    corp = load_gn_corpus()
    assert len(corp["ratios"]["GN2d_random"]) == 100
    assert corp["constants"]["GN2d"] == max(corp["ratios"]["GN2d_random"])
    assert corp["constants"]["GNinf"] == max(corp["ratios"]["GNinf_sweep"])


def test_lumped_mass_same_total():
    g = gen_star(3, 2.0)
    a = assemble(mesh(g, 0.25), "natural")
    b = assemble(mesh(g, 0.25), "natural", lumped=True)
    one = np.ones(a.n)
    assert one @ (a.M @ one) == pytest.approx(one @ (b.M @ one))
    assert b.M.nnz == b.n
