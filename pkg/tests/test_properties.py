import math

import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st

from qgdefect import kernels
from qgdefect.constructions import star_exp_family, tent_family
from qgdefect.energy import energy, energy_gradient
from qgdefect.fem import assemble, functionals, mesh, node_distances
from qgdefect.graph import ZPeriodic, gen_grid_window, gen_star, resolve_defects, with_defect_spec
from qgdefect.output import dumps, without_timestamp
from qgdefect.rearrange import spherical_mean

qs = st.floats(2.05, 3.95)
small = settings(max_examples=25, deadline=None)


@st.composite
def star_forms(draw):
    N = draw(st.integers(1, 4))
    L = draw(st.floats(0.5, 4.0))
    h = draw(st.sampled_from([0.1, 0.25, 0.5]))
    trunc = draw(st.sampled_from(["dirichlet", "natural"]))
    return assemble(mesh(gen_star(N, L), h), trunc)


@small
@given(star_forms(), st.integers(0, 2 ** 32 - 1))
def test_forms_symmetric_and_positive(f, seed):
    x = np.random.default_rng(seed).standard_normal(f.n)
    assert abs((f.K - f.K.T)).max() < 1e-12 and abs((f.M - f.M.T)).max() < 1e-12
    assert x @ (f.K @ x) >= -1e-10 * (x @ x)
    assert x @ (f.M @ x) > 0


@small
@given(star_forms(), qs, st.integers(0, 2 ** 32 - 1))
def test_gradient_matches_directional_difference(f, q, seed):
    rng = np.random.default_rng(seed)
    u, d = rng.standard_normal(f.n), rng.standard_normal(f.n)
    t = 1e-6
    fd = (energy(f, u + t * d, q) - energy(f, u - t * d, q)) / (2 * t)
    g = energy_gradient(f, u, q).values @ d
    assert abs(fd - g) <= 1e-5 * max(1.0, abs(g))


@small
@given(star_forms(), qs, st.floats(0.1, 10.0))
def test_energy_scaling(f, q, t):
    u = np.exp(-node_distances(f.mesh, 0))[f.free]
    fn = functionals(f, u)
    # 0.5 t^2 kinetic - t^q |u(center)|^q / q
    expected = 0.5 * t * t * fn.kinetic - t ** q * abs(f.expand(u)[0]) ** q / q
    assert math.isclose(energy(f, t * u, q), expected, rel_tol=1e-10, abs_tol=1e-12)


@small
@given(st.floats(0.1, 5.0), st.floats(0.25, 3.0), st.integers(1, 4), qs)
def test_tent_closed_form_matches_quadrature(M, ell, N, q):
    ell = round(ell * 4) / 4
    f = assemble(mesh(gen_star(N, ell), 0.25), "dirichlet")
    fe = tent_family(M, ell, N, q, forms=f)
    qd = fe.quadrature(q)
    assert math.isclose(qd["mass"], fe.closed_form_mass, rel_tol=1e-11)
    assert math.isclose(qd["energy"], fe.closed_form_energy, rel_tol=1e-9, abs_tol=1e-11)


@small
@given(st.floats(0.05, 2.0), st.floats(0.05, 2.0), qs, st.integers(1, 4))
def test_star_exp_mass_monotone(a, b, q, N):
    lo, hi = sorted((a, b))
    assert star_exp_family(lo, q, N).closed_form_mass <= star_exp_family(hi, q, N).closed_form_mass


@small
@given(st.integers(0, 2 ** 32 - 1), st.integers(1, 3))
def test_spherical_mean_contracts(seed, radius):
    f = assemble(mesh(gen_grid_window(4), 0.5), "dirichlet")
    d = node_distances(f.mesh, f.graph.index((0, 0)))
    full = np.where(d < radius, np.random.default_rng(seed).random(f.mesh.n_dofs), 0.0)
    sm = spherical_mean(f.restrict(full), forms=f)
    assert sm.mass <= sm.input_mass * (1 + 1e-12)
    assert sm.kinetic <= sm.input_kinetic * (1 + 1e-12)
    again = spherical_mean(sm)
    assert np.allclose(again.profile.means, sm.profile.means, atol=1e-15)


@small
@given(st.integers(1, 6), st.integers(-3, 3), st.integers(1, 3))
def test_periodic_defects_idempotent(n, y0, step):
    g = gen_grid_window(n)
    spec = ZPeriodic((step, 0), ((0, y0 % (n + 1)),))
    once = with_defect_spec(g, spec)
    twice = with_defect_spec(once, spec)
    assert once.defects == twice.defects
    assert all(x % step == 0 for x, _ in resolve_defects(g, spec))


@small
@given(st.integers(0, 2 ** 32 - 1), qs)
def test_backends_agree(seed, q):
    f = assemble(mesh(gen_grid_window(2), 0.5), "dirichlet")
    u = np.random.default_rng(seed).standard_normal(f.n)
    dofs = np.arange(min(3, f.n), dtype=np.int64)
    w = np.ones(len(dofs))
    prev = kernels.backend_name()
    try:
        vals = []
        for name in kernels.available_backends():
            kernels.use_backend(name)
            vals.append(kernels.energy_grad(f.K, u, dofs, w, q)[0])
    finally:
        kernels.use_backend(prev)
    assert all(math.isclose(v, vals[0], rel_tol=1e-12) for v in vals)


@small
@given(st.dictionaries(st.text(min_size=1, max_size=5), st.floats(allow_nan=False, allow_infinity=False)),
       st.text(max_size=8), st.text(max_size=8))
def test_dumps_ignores_key_order_and_timestamp(d, t1, t2):
    d.pop("timestamp", None)
    a = dumps({**d, "timestamp": t1})
    b = dumps({"timestamp": t2, **dict(reversed(list(d.items())))})
    assert without_timestamp(a) == without_timestamp(b)
