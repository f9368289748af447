import math

import numpy as np
import pytest

from qgdefect.fem import assemble, mesh
from qgdefect.graph import gen_grid_window, gen_star
from qgdefect.spectral import bottom_eigen, delta_eigen, inertia_below, rayleigh


def _grid(n, truncation="dirichlet"):
    g = gen_grid_window(n)
    g = g.with_defects([g.index((0, 0))])
    return assemble(mesh(g, 1.0), truncation)


def test_natural_window_has_constant_ground_state():
    r = bottom_eigen(_grid(10, "natural"))
    assert abs(r.lam) < 1e-12
    assert np.ptp(r.vector.values) < 1e-12
    assert r.below_shift == 0


def test_dirichlet_delta_eigenvalue_decreases_with_window():
    lams = [delta_eigen(_grid(n), 1.0).lam for n in (10, 20, 40)]
    assert all(b < a for a, b in zip(lams, lams[1:]))
    # positive on these windows: the truncation cost still dominates at n = 40
    assert lams[-1] > 0


def test_dirichlet_interval():
    # an interval of length pi with zero ends has bottom eigenvalue 1
    f = assemble(mesh(gen_star(2, math.pi / 2), 0.01), "dirichlet")
    assert bottom_eigen(f).lam == pytest.approx(1.0, rel=1e-4)


def test_zero_strength_is_plain_laplacian():
    f = _grid(8)
    assert delta_eigen(f, 0.0).lam == pytest.approx(bottom_eigen(f).lam, rel=1e-10)


def test_natural_window_goes_negative_with_delta():
    f = _grid(20, "natural")
    r = delta_eigen(f, 1.0)
    assert r.lam < 0
    assert rayleigh(f, r.vector.values, 1.0) == pytest.approx(r.lam, rel=1e-8)
    assert inertia_below(f.K - 0 * f.M, f.M, r.lam - 1e-6) == 0


def test_stronger_delta_lowers_eigenvalue():
    f = _grid(12, "natural")
    lams = [delta_eigen(f, a).lam for a in (0.5, 1.0, 2.0)]
    assert lams[0] > lams[1] > lams[2]


def test_negative_strength_rejected():
    with pytest.raises(ValueError):
        delta_eigen(_grid(4), -1.0)


def test_eliminated_vertex_rejected():
    f = _grid(3)
    with pytest.raises(ValueError):
        delta_eigen(f, 1.0, v=(3, 0))
