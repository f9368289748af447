import numpy as np
import pytest

from qgdefect import verify

CASES = list(verify._REGISTRY)


@pytest.mark.parametrize("fn", [fn for _, _, fn in CASES], ids=[f"{g}-{n}" for g, n, _ in CASES])
def test_registered_check(fn):
    ok, detail = fn(np.random.default_rng(0))
    assert ok, detail


def test_every_module_has_checks():
    assert set(verify.GROUPS) == {"graph", "fem", "energy", "spectral", "constructions", "halfline",
                                  "rearrange", "experiments"}


def test_crash_is_reported_as_failure(monkeypatch):
    def boom(rng):
        raise ArithmeticError("boom")
    monkeypatch.setattr(verify, "_REGISTRY", [("x", "boom", boom)])
    (res,) = verify.run()
    assert not res.passed and "boom" in res.detail["error"]
    assert res.line().startswith("FAIL")


def test_corpus_regenerates():
    built = verify.build_gn_corpus()
    shipped = verify.load_gn_corpus()
    assert np.allclose(built["ratios"]["GN2d_random"], shipped["ratios"]["GN2d_random"], rtol=1e-12)
