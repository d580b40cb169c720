import numpy as np
import pytest

from volgibbs.calibration import SabrParamMatrix, calibrate_cube
from volgibbs.cube import CubeGrid
from volgibbs.hedging import (SimConfig, forwards_on_grid, hedge_paths, hedge_regression, initial_forwards,
                              price_and_delta, run_hedge, simulate_sabr_paths, target_params,
                              theoretical_cube_at, write_hedge_report, write_ledger)
from volgibbs.sabr import SabrParams, SwaptionSpec, sabr_delta, sabr_price
from volgibbs.synthgen import cube_from_params, reference_matrix

GRID = CubeGrid.desk()


def small_nu(matrix, scale=1e-3):
    return SabrParamMatrix(matrix.maturities, matrix.tenors, matrix.alpha, matrix.nu * scale, matrix.rho)


def test_config_validation():
    with pytest.raises(ValueError):
        SimConfig(tiers=("1m",), steps_per_day=24)
    with pytest.raises(ValueError):
        SimConfig(mask_rate=1.0)
    with pytest.raises(ValueError):
        SimConfig(horizon=0.0)
    c = SimConfig()
    assert c.n_steps == 8640 and c.tier_steps("1w") == 168 and c.tier_steps("1h") == 1


def test_price_and_delta_match_analytics():
    p = SabrParams(0.0086, 0.5, 1.0732, 0.6506)
    z = np.array([np.log(p.alpha), np.log(p.nu), np.arctanh(p.rho)])
    for F in (0.008, 0.01, 0.0125):
        spec = SwaptionSpec.quarterly(F, 0.01, 0.25, 1.0, 1.0, 1e5, 0, 0.01)
        v, d = price_and_delta(z, 0.5, 0.04, F, 0.01, 0.75, 1e5 * spec.pvbp)
        assert v == pytest.approx(sabr_price(p, spec), rel=1e-13)
        assert d == pytest.approx(sabr_delta(p, spec), rel=1e-13)


def test_zero_vol_world():
    M = SabrParamMatrix(GRID.maturities, GRID.tenors, np.zeros((8, 6)), np.zeros((8, 6)), np.zeros((8, 6)))
    cfg = SimConfig(n_paths=3, tiers=("1d", "1h"))
    rep, led = run_hedge(["theoretical"], M, GRID, cfg, ledger_paths=3)
    for tier in ("1d", "1h"):
        assert rep["results"]["theoretical"][tier]["rmse_pct"] == 0.0
        assert np.all(led[("theoretical", tier)].predicted == 0)
        assert np.all(led[("theoretical", tier)].actual == 0)


def test_shared_paths_independent_of_chunking():
    M = reference_matrix(GRID.maturities, GRID.tenors)
    cfg = SimConfig(n_paths=5, horizon=10 / 360)
    F0 = initial_forwards(M, cfg)
    a = simulate_sabr_paths(M, F0, cfg)
    b = simulate_sabr_paths(M, F0, cfg, path_ids=[3])
    assert np.array_equal(a.target[3], b.target[0]) and np.array_equal(a.daily[3], b.daily[0])
    assert np.array_equal(a.daily[:, 0], np.broadcast_to(F0, a.daily[:, 0].shape))
    # the target path is the (1y, 1y) contract
    j = GRID.tenors.index(1.0)
    i = GRID.maturities.index(1.0)
    assert np.array_equal(a.daily[:, :, i, j], a.target[:, ::24])


def test_martingale():
    M = small_nu(reference_matrix(GRID.maturities, GRID.tenors), 0.5)
    cfg = SimConfig(n_paths=400, horizon=30 / 360)
    paths = simulate_sabr_paths(M, initial_forwards(M, cfg), cfg)
    end = paths.target[:, -1]
    assert abs(end.mean() - 0.01) < 4 * end.std() / np.sqrt(end.size)


def test_contracts_freeze_at_expiry():
    M = reference_matrix(GRID.maturities, GRID.tenors)
    cfg = SimConfig(n_paths=2, horizon=120 / 360)
    paths = simulate_sabr_paths(M, initial_forwards(M, cfg), cfg)
    first = GRID.maturities.index(0.25)  # three-month contract expires on day 90
    assert np.all(paths.daily[:, 90:, first] == paths.daily[:, 90:91, first])
    assert np.all(paths.daily[:, 89, first] != paths.daily[:, 88, first])


def test_t0_cube_and_recalibration():
    M = reference_matrix(GRID.maturities, GRID.tenors)
    cfg = SimConfig(n_paths=1, horizon=20 / 360)
    F0 = initial_forwards(M, cfg)
    paths = simulate_sabr_paths(M, F0, cfg)
    assert theoretical_cube_at(0.0, paths.daily[0, 0], M, GRID) == cube_from_params(M, F0, GRID)
    t = 20 / 360
    cube = theoretical_cube_at(t, paths.daily[0, 20], M, GRID)
    Fg = forwards_on_grid(t, paths.daily[0, 20], M.maturities, GRID.maturities)
    fit, _ = calibrate_cube(cube, Fg)
    assert np.allclose(fit.alpha, M.alpha, rtol=1e-3)
    assert np.allclose(fit.nu, M.nu, atol=5e-2) and np.allclose(fit.rho, M.rho, atol=5e-2)


def test_forwards_on_grid_interpolation():
    C = np.arange(8 * 6, dtype=float).reshape(8, 6)
    exp = GRID.maturities
    out = forwards_on_grid(0.0, C, exp, exp)
    assert np.array_equal(out, C)
    half = 0.5 * (exp[2] - exp[1])
    mid = forwards_on_grid(half, C, exp, exp[1:2])
    assert np.allclose(mid[0], 0.5 * (C[1] + C[2]))
    assert np.array_equal(forwards_on_grid(100.0, C, exp, exp)[0], C[-1])


def test_delta_neutral_positions():
    M = reference_matrix(GRID.maturities, GRID.tenors)
    cfg = SimConfig(n_paths=4, horizon=5 / 360, tiers=("1h",))
    paths = simulate_sabr_paths(M, initial_forwards(M, cfg), cfg)
    z = target_params(M, cfg, cfg.n_steps)
    res = hedge_paths(lambda steps: z[steps][None], paths, M, cfg, "1h")
    assert res.predicted.shape == (4, cfg.n_steps)
    # horizon shorter than expiry: the last value is the payoff formula at t=horizon
    assert np.all(np.isfinite(res.errors))


def test_rmse_decreases_with_frequency_low_volvol():
    M = small_nu(reference_matrix(GRID.maturities, GRID.tenors))
    cfg = SimConfig(n_paths=60, tiers=("1w", "1d", "1h"))
    rep, _ = run_hedge(["theoretical"], M, GRID, cfg)
    r = [rep["results"]["theoretical"][t]["rmse_pct"] for t in cfg.tiers]
    assert r[0] > r[1] > r[2]
    assert rep["results"]["theoretical"]["1d"]["r2"] > 0.99


def test_hedge_regression():
    x = np.random.default_rng(0).normal(size=50)
    assert hedge_regression(x, x) == pytest.approx(1.0)
    assert np.isnan(hedge_regression(x, np.zeros(50)))
    with pytest.raises(ValueError):
        hedge_regression([1.0], [1.0])


def test_run_hedge_errors_and_outputs(tmp_path):
    M = reference_matrix(GRID.maturities, GRID.tenors)
    cfg = SimConfig(n_paths=2, horizon=10 / 360, tiers=("1d",))
    with pytest.raises(ValueError):
        run_hedge(["imputation"], M, GRID, cfg)
    with pytest.raises(ValueError):
        run_hedge(["magic"], M, GRID, cfg)
    rep, led = run_hedge(["theoretical", "interpolation"], M, GRID, cfg, ledger_paths=1)
    rep2, _ = run_hedge(["theoretical", "interpolation"], M, GRID, cfg)
    assert rep == rep2
    assert rep["calibration_failures"] == {"interpolation": 0}
    write_hedge_report(rep, tmp_path / "r.json")
    write_ledger(led, tmp_path / "l.csv")
    rows = (tmp_path / "l.csv").read_text().splitlines()
    assert rows[0] == "strategy,tier,path,k,t,predicted,actual" and len(rows) == 1 + 2 * 10
