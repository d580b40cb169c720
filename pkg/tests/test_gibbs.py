import numpy as np
import pytest

from helpers import ar1_chain, gaussian_conditional_mean, linear_gaussian_vae, tiny_vae
from volgibbs.cube import CubeGrid, VolCube
from volgibbs.gibbs import (GibbsConfig, ImputationError, gibbs_step, impute, impute_many, latent_trace,
                            obm_report, obm_standard_error, pca_fit, run_chains, write_chain_csv,
                            write_latent_trace, write_obm_report)

GRID = CubeGrid((1.0, 2.0), (1.0, 2.0, 5.0), (-0.01, 0.0, 0.01, 0.02))  # 24 points


def fa_setup(seed=0, noise=0.3):
    model, b, W = linear_gaussian_vae(GRID.size, 3, noise, seed, offset=30.0)
    cov = W @ W.T + noise * np.eye(GRID.size)
    rng = np.random.default_rng(seed + 50)
    x = rng.multivariate_normal(b, cov)
    return model, b, cov, x


def test_factor_analysis_oracle():
    model, b, cov, x = fa_setup()
    mask = np.ones(GRID.size, bool)
    mask[np.random.default_rng(1).choice(GRID.size, 12, replace=False)] = False
    cube = VolCube(GRID, np.where(mask, x, np.nan), mask)
    cfg = GibbsConfig(length=20000, burn_in=500, seed=3)
    filled, chain = impute(model, cube, cfg)
    exact = gaussian_conditional_mean(b, cov, x, mask)
    z = np.abs(chain.mean - exact) / chain.obm_se
    assert np.mean(z <= 3) >= 0.95
    assert np.array_equal(filled.values[mask], x[mask])


def test_obm_constant_chain_is_zero():
    assert np.all(obm_standard_error(np.full(400, 2.5)) == 0.0)
    assert np.all(obm_standard_error(np.full((400, 3), -1.0)) == 0.0)


def test_obm_ar1_matches_asymptotic():
    phi, n = 0.5, 200_000
    x = ar1_chain(n, phi, seed=2)
    se = obm_standard_error(x)[()]
    exact = np.sqrt(1.0 / (1 - phi) ** 2 / n)  # long-run variance sd^2 / (1 - phi)^2
    assert abs(se / exact - 1) < 0.3


def test_obm_rate():
    x = ar1_chain(2 ** 17, 0.5, seed=4)
    ns = 2 ** np.arange(10, 18)
    se = [obm_standard_error(x[:n]) for n in ns]
    slope = np.polyfit(np.log(ns), np.log(se), 1)[0]
    assert -0.6 <= slope <= -0.4


def test_obm_short_chain():
    with pytest.raises(ValueError):
        obm_standard_error(np.arange(3.0), b=2)


def test_step_keeps_observed():
    model = tiny_vae(0, data_dim=GRID.size, latent_dim=2)
    rng = np.random.default_rng(0)
    u = rng.standard_normal((4, GRID.size))
    miss = rng.random((4, GRID.size)) < 0.5
    z, u2 = gibbs_step(model, u, miss, rng)
    assert z.shape == (4, 2)
    assert np.array_equal(u2[~miss], u[~miss])


def test_passthrough_and_errors():
    model, b, cov, x = fa_setup()
    full = VolCube(GRID, x)
    out, chain = impute(model, full, GibbsConfig(length=10, burn_in=2))
    assert out is full and chain.missing_index.size == 0
    with pytest.raises(ImputationError):
        impute(model, VolCube(GRID, np.full(GRID.size, np.nan), np.zeros(GRID.size, bool)))
    with pytest.raises(ImputationError):
        impute(model, VolCube(CubeGrid((1.0,), (1.0,), (0.0,)), [1.0]))
    with pytest.raises(ValueError):
        GibbsConfig(length=10, burn_in=10)


def test_determinism_and_batch_consistency():
    model, b, cov, x = fa_setup(seed=1)
    mask = np.random.default_rng(2).random(GRID.size) > 0.6
    cube = VolCube(GRID, np.where(mask, x, np.nan), mask)
    cfg = GibbsConfig(length=300, burn_in=50, seed=9)
    a, ca = impute(model, cube, cfg)
    b2, cb = impute(model, cube, cfg)
    assert a == b2 and np.array_equal(ca.samples, cb.samples)
    many = impute_many(model, [cube], cfg)
    assert np.array_equal(many[0].values, a.values)
    # the average runs over steps burn_in+1..T
    assert np.allclose(ca.mean, ca.samples[50:].mean(axis=0), rtol=1e-12)
    assert ca.n_kept == 250


def test_run_chains_observed_and_store():
    model, b, cov, x = fa_setup()
    obs = np.arange(GRID.size) % 3 != 0
    mean, samples, latent = run_chains(model, np.where(obs, x, np.nan), obs,
                                       GibbsConfig(length=40, burn_in=10), record_latent=True)
    assert np.array_equal(mean[0, obs], x[obs])
    assert samples.shape == (40, 1, GRID.size) and latent.shape == (40, 1, 3)
    assert np.all(samples[:, 0, obs] == x[obs])


def test_store_cap_drops_samples():
    model, b, cov, x = fa_setup()
    mask = np.arange(GRID.size) % 2 == 0
    cube = VolCube(GRID, np.where(mask, x, np.nan), mask)
    _, chain = impute(model, cube, GibbsConfig(length=100, burn_in=10, store_cap=50))
    assert chain.samples is None and chain.obm_se is None and chain.mean.size == 12


def test_reports(tmp_path):
    model, b, cov, x = fa_setup()
    mask = np.arange(GRID.size) % 4 != 0
    cube = VolCube(GRID, np.where(mask, x, np.nan), mask)
    cfg = GibbsConfig(length=200, burn_in=20)
    filled, chain = impute(model, cube, cfg, record_latent=True)
    rep = obm_report(chain, cfg)
    assert rep["n_missing"] == 6 and len(rep["obm_se_bp"]) == 6
    write_obm_report(chain, cfg, tmp_path / "obm.json")
    assert write_chain_csv(chain, tmp_path / "chain.csv", cap=100) == 100
    ref = np.random.default_rng(0).multivariate_normal(b, cov, size=30)
    tr = latent_trace(model, chain, cube, ref, truth=VolCube(GRID, x))
    assert tr.path.shape == (200, 2) and tr.reference.shape == (30, 2) and tr.target.shape == (2,)
    write_latent_trace(tr, tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert lines[0] == "kind,index,pc1,pc2" and len(lines) == 1 + 30 + 200 + 1


def test_pca_rank_deficient_warns():
    pts = np.outer(np.arange(5.0), [1.0, 2.0, 0.0])
    with pytest.warns(UserWarning):
        comps, center, var = pca_fit(pts, 2)
    assert np.all(comps[1] == 0)
