import numpy as np
import pytest

from qgdefect.halfline import (assemble_weighted, pohozaev_residual, radial_compare, reduced_energy,
                               reduced_minimize, weight_g)


def test_weight():
    assert weight_g(0.5) == 4.0
    assert weight_g(3.0) == 20.0
    assert np.allclose(weight_g(np.array([0.0, 1.0, 2.0])), [4.0, 4.0, 12.0])
    with pytest.raises(ValueError):
        weight_g(-0.1)


def test_weighted_norms_of_linear_ramp():
    L = 3.0
    f = assemble_weighted(L, 0.5)
    v = (L - f.x)[:-1]
    assert v @ (f.K @ v) == pytest.approx(4 * L * L - 4 * L + 4)
    assert v @ (f.M @ v) == pytest.approx(76 / 3 + 64 / 3)
    assert f.x[f.one_index] == 1.0


def test_large_mass_is_negative():
    r = reduced_minimize(3.0, 1.0, 100.0, L=50.0, h=0.05)
    assert r.energy < -r.params["delta"]
    assert r.certificate == "negative"
    assert r.mass == pytest.approx(100.0, rel=1e-10)
    assert r.residuals["form_relative"] <= 1e-6
    assert r.residuals["pohozaev"] <= 1e-2


def test_vanishing_origin_has_nonnegative_energy():
    f = assemble_weighted(10.0, 0.25)
    v = np.sin(np.pi * f.x / 10.0)[:-1]
    assert v[0] == 0.0
    assert reduced_energy(f, v, 3.0, 5.0) >= 0.0


def test_pohozaev_needs_positive_multiplier():
    f = assemble_weighted(5.0, 0.5)
    with pytest.raises(ValueError):
        pohozaev_residual(f, np.ones(f.n), 0.0, 3.0, 1.0, 1.0)


def test_pohozaev_of_an_arbitrary_vector_is_order_one():
    f = assemble_weighted(5.0, 0.5)
    v = np.exp(-f.x[:-1])
    assert pohozaev_residual(f, v, 1.0, 3.0, 1.0, float(v @ (f.M @ v))) > 0.1


def test_radial_compare_ramp():
    c = radial_compare(lambda t: np.maximum(3.0 - t, 0.0), 3.0, 1.0)
    assert c["mass_ok"] and c["kinetic_ok"] and c["energy_ok"]
    assert c["grid_mass"] == pytest.approx(60.0)
    assert c["grid_kinetic"] == pytest.approx(36.0)
    assert c["reduced_kinetic"] == pytest.approx(28.0)


def test_radial_compare_rejects_bad_profiles():
    with pytest.raises(ValueError):
        radial_compare(lambda t: 0.0 * t, 3.0, 1.0)
    with pytest.raises(ValueError):
        radial_compare(lambda t: np.exp(-t), 3.0, 1.0, L=5.0)


def test_argument_checks():
    with pytest.raises(ValueError):
        reduced_minimize(4.5, 1.0, 1.0)
    with pytest.raises(ValueError):
        reduced_minimize(3.0, 0.0, 1.0)
    with pytest.raises(ValueError):
        assemble_weighted(1.0, 0.1)
