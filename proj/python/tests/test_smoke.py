import numpy as np
import pytest

pydkf = pytest.importorskip("pydkf")


def test_bundled_scenarios_load():
    sc = pydkf.bundled_scenario("example2")
    assert sc.n == 4 and sc.nodes == 2
    assert sc.delays == [1, 2]
    assert np.allclose(sc.probs[0].sum(), 1.0)


def test_table1_matches_reference_rows():
    rows = pydkf.table1()
    assert [r["a105"] for r in rows] == [False] * 4 + [True] * 5 + [False] * 2
    assert not any(r["b105"] for r in rows)
    assert abs(rows[5]["b105_lambda"] - 1.5887) < 1e-3


def test_steady_weights_sum_to_identity():
    w = pydkf.steady_weights(pydkf.bundled_scenario("example2"))
    assert np.allclose(w["weights"][0] + w["weights"][1], np.eye(4), atol=1e-10)
    assert w["P"].shape == (4, 4)


def test_stability_report():
    rep = pydkf.stability(pydkf.bundled_scenario("example2"))
    assert rep["stable"]
    assert all(n["exact_ms_radius"] < 1 for n in rep["nodes"])


def test_simulation_is_seeded():
    sc = pydkf.bundled_scenario("example2")
    a = pydkf.simulate(sc, seed=3, horizon=20)
    b = pydkf.simulate(sc, seed=3, horizon=20)
    assert a["x"].shape == (21, 4)
    assert np.array_equal(a["xhat"], b["xhat"])
    assert np.all(np.isfinite(a["trP"]))


def test_validation_errors_surface_as_value_errors():
    with pytest.raises(ValueError):
        pydkf.parse_scenario("A: [[1, 0], [0]]\n")
    with pytest.raises(ValueError):
        pydkf.bundled_scenario("nope")
