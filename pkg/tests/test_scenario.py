import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mixedav.errors import ConfigError
from mixedav.fundamental_diagram import FlowParams
from mixedav.scenario import (GridSpec, Profile, Riemann, ScenarioConfig, SquareWaveTrain, Uniform,
                              analytic_mass, benchmark, bottleneck, build, config_from_dict,
                              load_config, make_grid, save_config)


def test_uniform():
    state, av, grid, p = build(ScenarioConfig(grid=GridSpec(n_cells=100), initial=Uniform(0.5), n_obs=10))
    assert np.all(state.densities == 0.5) and len(state.densities) == 100
    assert av.v_cmd == p.v_max and av.y_dot == pytest.approx(0.5)


def test_riemann_halves():
    cfg = ScenarioConfig(grid=GridSpec(n_cells=100), initial=Riemann(0.1, 0.6, 0.5), n_obs=10)
    rho = build(cfg)[0].densities
    assert np.all(rho[:50] == 0.1) and np.all(rho[50:] == 0.6)


def test_square_wave_plateaus():
    cfg = ScenarioConfig(grid=GridSpec(n_cells=120), initial=SquareWaveTrain(0.15, 0.85, 3), n_obs=12)
    state, _, grid, _ = build(cfg)
    plateaus = state.densities.reshape(6, 20)
    for k in range(6):
        np.testing.assert_allclose(plateaus[k], 0.15 if k % 2 == 0 else 0.85, rtol=1e-14)
    assert state.mass(grid) == pytest.approx(0.5 * grid.length, rel=1e-14)


def test_benchmark_default_shape():
    cfg = benchmark()
    state, av, grid, p = build(cfg)
    assert grid.periodic and grid.n_cells == 400
    assert p == FlowParams(1.0, 1.0, 0.6)
    assert cfg.reward.as_tuple() == (0.2, 0.3, 0.5)
    assert state.mass(grid) == pytest.approx(0.5, rel=1e-14)


def test_bottleneck_preset():
    state, av, grid, _ = build(bottleneck())
    assert av.y == 0.3
    assert state.densities[0] == 0.2 and state.densities[-1] == 0.8


@settings(max_examples=60)
@given(st.floats(0, 1), st.floats(0, 1), st.integers(1, 7), st.sampled_from([97, 100, 128]))
def test_mass_matches_analytic(lo, hi, waves, n):
    ic = SquareWaveTrain(lo, hi, waves)
    cfg = ScenarioConfig(grid=GridSpec(length=2.5, n_cells=n), initial=ic, n_obs=1)
    state, _, grid, _ = build(cfg)
    assert state.mass(grid) == pytest.approx(analytic_mass(ic, grid), rel=1e-12, abs=1e-14)
    assert state.densities.min() >= min(lo, hi) - 1e-15 and state.densities.max() <= max(lo, hi) + 1e-15


@given(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1))
def test_riemann_split_off_grid_is_exact(rl, rr, frac):
    ic = Riemann(rl, rr, frac)
    grid = make_grid(GridSpec(n_cells=37))
    cfg = ScenarioConfig(grid=GridSpec(n_cells=37), initial=ic, n_obs=1)
    state = build(cfg)[0]
    assert state.mass(grid) == pytest.approx(analytic_mass(ic, grid), abs=1e-13)


def test_build_is_deterministic():
    a, b = build(benchmark()), build(benchmark())
    assert np.array_equal(a[0].densities, b[0].densities) and a[1] == b[1]


def test_validation_lists_every_problem():
    cfg = ScenarioConfig(grid=GridSpec(n_cells=2), initial=Uniform(1.5), y0=-1.0, horizon=0.0, cfl=2.0)
    with pytest.raises(ConfigError) as err:
        cfg.validate()
    problems = err.value.problems
    for field in ("grid.n_cells", "initial.rho0", "y0", "horizon", "cfl"):
        assert any(s.startswith(field) for s in problems), field


def test_profile_length_checked():
    with pytest.raises(ConfigError, match="initial.values"):
        ScenarioConfig(grid=GridSpec(n_cells=8), initial=Profile((0.1,) * 7), n_obs=1).validate()


def test_n_obs_must_divide():
    with pytest.raises(ConfigError, match="n_obs"):
        ScenarioConfig(n_obs=7).validate()


def test_json_round_trip(tmp_path):
    for cfg in (benchmark(), bottleneck(), ScenarioConfig(grid=GridSpec(n_cells=4), initial=Profile((0.1, 0.2, 0.3, 0.4)), n_obs=2),
                ScenarioConfig(grid=GridSpec(boundary="dirichlet", rho_in=0.1, rho_out=0.3), initial=Uniform(0.2))):
        save_config(cfg, tmp_path / "c.json")
        assert load_config(tmp_path / "c.json") == cfg


def test_json_unknown_keys_reported_together():
    data = benchmark().to_dict()
    data["bogus"] = 1
    data["grid"]["cells"] = 3
    data["initial"]["type"] = "square_wave_train"
    with pytest.raises(ConfigError) as err:
        config_from_dict(data)
    assert "bogus: unknown key" in err.value.problems
    assert "grid.cells: unknown key" in err.value.problems


def test_json_bad_type_and_values(tmp_path):
    with pytest.raises(ConfigError, match="initial.type"):
        config_from_dict({"initial": {"type": "sine"}})
    with pytest.raises(ConfigError) as err:
        config_from_dict({"y0": 5.0, "horizon": -1})
    assert len(err.value.problems) == 2
    (tmp_path / "bad.json").write_text("{not json")
    with pytest.raises(ConfigError, match="malformed"):
        load_config(tmp_path / "bad.json")
    with pytest.raises(ConfigError, match="cannot read"):
        load_config(tmp_path / "missing.json")
