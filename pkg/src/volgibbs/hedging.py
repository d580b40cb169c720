"""Monte-Carlo delta-hedging study on a simulated SABR cube.

Every (maturity, tenor) node of the grid is a forward-starting swap contract
with absolute expiry T0 and its own SABR parameters. All nodes of a path
share the same two Brownian drivers. At time t the cube node with residual
maturity m is priced off the forward interpolated (linearly in absolute
expiry) between the simulated contracts, using the node's fixed parameters.

The hedged instrument is the payer swaption on the (1y, 1y) contract struck
at its initial forward; its "actual" value along a path uses the parameters
of the node that generated it. Strategies differ only in the SABR parameters
fed to the delta:

    theoretical    the generating node's parameters
    imputation     masked cube -> Gibbs imputation -> calibration -> interpolation
    interpolation  masked cube -> linear interpolation -> calibration -> interpolation

Imputed/interpolated parameters are refreshed once per day (at most) and
reused by faster rebalancing tiers within that day.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import kernels
from .baseline import interpolate_cube
from .calibration import SabrParamMatrix, _bracket, fit_full_slices
from .cube import BP, CubeGrid, VolCube, random_mask
from .gibbs import GibbsConfig, run_chains
from .sabr import DiscountCurve, SwaptionSpec, norm_cdf, norm_pdf, normal_vol_array

log = logging.getLogger(__name__)

MINUTES_PER_DAY = 1440
TIER_MINUTES = {"1w": 7 * 1440, "1d": 1440, "1h": 60, "1m": 1}
STRATEGIES = ("theoretical", "imputation", "interpolation")


@dataclass(frozen=True)
class SimConfig:
    horizon: float = 1.0
    days_per_year: int = 360
    steps_per_day: int = 24
    tiers: tuple = ("1w", "1d", "1h")
    n_paths: int = 10000
    notional: float = 100000.0
    mask_rate: float = 0.7
    rate: float = 0.01
    seed: int = 0
    target_maturity: float = 1.0
    target_tenor: float = 1.0
    base_forward: float = 0.01
    floor_eps: float = 1e-6
    gibbs_length: int = 100
    gibbs_burn_in: int = 20
    restart_mae_bp: float = 5.0
    path_chunk: int = 500

    def __post_init__(self):
        if self.steps_per_day <= 0 or self.days_per_year <= 0 or self.horizon <= 0:
            raise ValueError("step size must be positive")
        if not 0.0 < self.mask_rate < 1.0:
            raise ValueError("mask_rate must lie in (0, 1)")
        step_min = MINUTES_PER_DAY / self.steps_per_day
        for tier in self.tiers:
            if tier not in TIER_MINUTES:
                raise ValueError(f"unknown rebalancing tier {tier!r}")
            if TIER_MINUTES[tier] % step_min:
                raise ValueError(f"tier {tier} is not a multiple of the simulation step")
        if abs(self.n_days - self.horizon * self.days_per_year) > 1e-9:
            raise ValueError("horizon must be a whole number of days")

    @property
    def dt(self):
        return 1.0 / (self.days_per_year * self.steps_per_day)

    @property
    def n_days(self):
        return int(round(self.horizon * self.days_per_year))

    @property
    def n_steps(self):
        return self.n_days * self.steps_per_day

    def tier_steps(self, tier):
        return int(TIER_MINUTES[tier] * self.steps_per_day // MINUTES_PER_DAY)


@dataclass
class HedgePaths:
    """Simulated contract forwards for a block of paths.

    ``daily`` is (paths, n_days + 1, m, t): every contract at each day start.
    ``target`` is (paths, n_steps + 1): the hedged contract at every step.
    """

    daily: np.ndarray
    target: np.ndarray
    contract_expiries: tuple
    tenors: tuple
    dt: float
    steps_per_day: int
    path_ids: np.ndarray


def path_normals(seed, path_id, n_steps):
    g = np.random.default_rng([int(seed), 17, int(path_id)])
    z = g.standard_normal((2, n_steps))
    return z[0], z[1]


def simulate_sabr_paths(matrix: SabrParamMatrix, forwards0, config: SimConfig, path_ids=None) -> HedgePaths:
    """Euler paths of (F, sigma) for every grid contract, driven by shared normals."""
    if config.dt <= 0:
        raise ValueError("step size must be positive")
    m, t = matrix.shape
    F0 = np.asarray(forwards0, dtype=float).reshape(m, t)
    path_ids = np.arange(config.n_paths) if path_ids is None else np.asarray(path_ids)
    n_steps = config.n_steps
    z1 = np.empty((path_ids.size, n_steps))
    z2 = np.empty((path_ids.size, n_steps))
    for r, p in enumerate(path_ids):
        z1[r], z2[r] = path_normals(config.seed, p, n_steps)
    expiries = np.asarray(matrix.maturities, dtype=float)
    active = np.repeat(np.minimum(np.rint(expiries / config.dt), n_steps).astype(np.int64), t)
    record = np.arange(0, n_steps + 1, config.steps_per_day, dtype=np.int64)
    i_t = list(matrix.maturities).index(config.target_maturity)
    j_t = list(matrix.tenors).index(config.target_tenor)
    rec, track = kernels.sabr_paths(
        np.ascontiguousarray(F0.reshape(-1)), np.ascontiguousarray(matrix.alpha.reshape(-1), dtype=float),
        np.ascontiguousarray(matrix.nu.reshape(-1), dtype=float),
        np.ascontiguousarray(matrix.rho.reshape(-1), dtype=float),
        float(matrix.beta), float(matrix.shift), float(config.floor_eps), float(config.dt),
        active, z1, z2, record, int(i_t * t + j_t))
    return HedgePaths(rec.reshape(path_ids.size, record.size, m, t), track, tuple(matrix.maturities),
                      tuple(matrix.tenors), config.dt, config.steps_per_day, path_ids)


def forwards_on_grid(t, contract_forwards, expiries, maturities):
    """Forwards at residual maturities ``maturities`` at time ``t``.

    Linear in absolute expiry t + m between simulated contracts, clamped at
    the first/last contract. ``contract_forwards`` is (..., n_expiries, tenors).
    """
    C = np.asarray(contract_forwards, dtype=float)
    out = np.empty(C.shape[:-2] + (len(maturities), C.shape[-1]))
    for i, mres in enumerate(maturities):
        lo, hi, w = _bracket(expiries, t + mres)
        out[..., i, :] = (1.0 - w) * C[..., lo, :] + w * C[..., hi, :]
    return out


def theoretical_vols(t, contract_forwards, matrix: SabrParamMatrix, grid: CubeGrid):
    """Cube values (bp), shape (..., grid.size), at time ``t`` from true node params."""
    F = forwards_on_grid(t, contract_forwards, matrix.maturities, grid.maturities)[..., None]
    off = np.asarray(grid.strike_offsets)
    T = np.asarray(grid.maturities)[:, None, None]
    v = normal_vol_array(matrix.alpha[..., None], matrix.beta, matrix.nu[..., None],
                         matrix.rho[..., None], matrix.shift, F, F + off, T)
    return v.reshape(v.shape[:-3] + (-1,)) / BP


def theoretical_cube_at(t, contract_forwards, matrix: SabrParamMatrix, grid: CubeGrid) -> VolCube:
    """Fully observed theoretical cube for one path at time ``t``."""
    return VolCube(grid, theoretical_vols(t, contract_forwards, matrix, grid))


# -------------------------------------------------------------- pricing

def _target_spec(config: SimConfig, strike):
    return SwaptionSpec.quarterly(strike, strike, 0.0, config.target_maturity, config.target_tenor,
                                  config.notional, 0, config.rate)


def _pvbp(spec: SwaptionSpec, t):
    P = spec.discount.discount(np.asarray(t, dtype=float)[..., None], np.asarray(spec.payment_dates))
    return (P * np.asarray(spec.daycount_fractions)).sum(axis=-1)


def price_and_delta(z, beta, shift, F, K, tau, annuity):
    """Payer price and SABR delta for transformed params ``z`` (..., 3), vectorised."""
    a, n, r = np.exp(z[..., 0]), np.exp(z[..., 1]), np.tanh(z[..., 2])
    dead = a <= 0.0  # zero-vol world: intrinsic value, step delta
    sig, dsig = normal_vol_array(np.where(dead, 1.0, a), beta, n, r, shift, F, K, tau, deriv=True)
    sig, dsig = np.where(dead, 0.0, sig), np.where(dead, 0.0, dsig)
    sd = sig * np.sqrt(tau)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = (F - K) / sd
        price = annuity * sd * (d * norm_cdf(d) + norm_pdf(d))
        delta = annuity * (norm_cdf(d) + np.sqrt(tau) * norm_pdf(d) * dsig)
    if np.any(sd == 0):
        step = np.where(F > K, 1.0, np.where(F < K, 0.0, 0.5))
        price = np.where(sd == 0, annuity * np.maximum(F - K, 0.0), price)
        delta = np.where(sd == 0, annuity * step, delta)
    return price, delta


def target_params(matrix: SabrParamMatrix, config: SimConfig, n_times):
    """Transformed params of the node generating the target path, tiled to (n_times, 3)."""
    i = list(matrix.maturities).index(config.target_maturity)
    j = list(matrix.tenors).index(config.target_tenor)
    return np.tile(matrix.transformed()[:, i, j], (n_times, 1))


def true_params_series(matrix: SabrParamMatrix, times, target_maturity, tenor):
    """Transformed true params interpolated at residual maturity T0 - t, shape (len(times), 3).

    This is what a perfect calibration of the theoretical cube followed by
    interpolation to the residual maturity would return.
    """
    z = matrix.transformed()
    j0, j1, wj = _bracket(matrix.tenors, tenor)
    out = np.empty((len(times), 3))
    cache = {}
    for k, t in enumerate(times):
        q = target_maturity - t
        if q not in cache:
            i0, i1, wi = _bracket(matrix.maturities, q)
            cache[q] = ((1 - wi) * (1 - wj) * z[:, i0, j0] + wi * (1 - wj) * z[:, i1, j0]
                        + (1 - wi) * wj * z[:, i0, j1] + wi * wj * z[:, i1, j1])
        out[k] = cache[q]
    return out


# --------------------------------------------------- imputed/interpolated params

def _day_mask(grid, config, day):
    return random_mask(grid, config.mask_rate, np.random.default_rng([config.seed, 101, day]))


def estimated_params_series(strategy, paths: HedgePaths, matrix: SabrParamMatrix, grid: CubeGrid,
                            config: SimConfig, model=None, events=None):
    """Daily transformed params at the target's residual maturity, (paths, n_days, 3).

    Each day: theoretical cube -> 70% mask -> fill (Gibbs or linear) ->
    calibrate the two maturity slices bracketing the residual maturity at the
    target tenor -> interpolate. A failed fit carries the previous day's
    parameters for that path and is counted in ``events``.
    """
    if strategy == "imputation" and model is None:
        raise ValueError("imputation strategy needs a trained model")
    P = paths.daily.shape[0]
    n_days = config.n_days
    days = np.arange(n_days)
    out = np.empty((P, n_days, 3))
    j = list(grid.tenors).index(config.target_tenor)
    offsets = np.asarray(grid.strike_offsets)
    m, t, s = grid.shape
    gcfg = GibbsConfig(config.gibbs_length, config.gibbs_burn_in, config.seed)
    rng = np.random.default_rng([config.seed, 211, int(paths.path_ids[0]), P])
    prev_fill = None
    warm = {}
    events = events if events is not None else {}
    for d in days:
        t_d = d / config.days_per_year
        truth = theoretical_vols(t_d, paths.daily[:, d], matrix, grid)
        Fg = forwards_on_grid(t_d, paths.daily[:, d], matrix.maturities, grid.maturities)
        mask = _day_mask(grid, config, int(d))
        if strategy == "imputation":
            values = np.where(mask, truth, np.nan)
            filled, _, _ = run_chains(model, values, mask, gcfg, start=prev_fill, store=False, rng=rng)
            prev_fill = filled
        else:
            filled = np.stack([interpolate_cube(VolCube(grid, row).with_mask(mask)).values for row in truth])
        filled = np.maximum(filled, 1e-3).reshape(P, m, t, s)
        q = config.target_maturity - t_d
        i0, i1, w = _bracket(grid.maturities, q)
        zs = {}
        for i in {i0, i1}:
            vols = filled[:, i, j, :] * BP
            z, obj, _, conv = fit_full_slices(Fg[:, i, j], offsets, vols, 1.0,
                                              np.full(P, grid.maturities[i]), matrix.beta, matrix.shift,
                                              p0=warm.get(i), restart_mae_bp=config.restart_mae_bp)
            bad = ~conv | ~np.all(np.isfinite(z), axis=1)
            if bad.any():
                events[strategy] = events.get(strategy, 0) + int(bad.sum())
                log.info("day %d slice %d: %d calibration failures", d, i, int(bad.sum()))
            zs[i] = (z, bad)
            warm[i] = np.where(bad[:, None], warm.get(i, z), z)
        (z0, b0), (z1, b1) = zs[i0], zs[i1]
        zq = (1.0 - w) * z0 + w * z1
        bad = b0 | b1
        if d > 0:
            zq[bad] = out[bad, d - 1]
        out[:, d] = zq
    return out


# ------------------------------------------------------------ hedging

@dataclass
class TierResult:
    errors: np.ndarray  # (paths,) final hedge error V0 + sum(pred) - payoff
    predicted: np.ndarray  # (paths, n_rebalances)
    actual: np.ndarray  # (paths, n_rebalances)
    times: np.ndarray  # rebalance times


def hedge_paths(param_at, paths: HedgePaths, matrix: SabrParamMatrix, config: SimConfig, tier: str,
                true_z=None) -> TierResult:
    """Run one rebalancing tier. ``param_at(steps)`` gives hedge params (paths|1, len, 3)."""
    n_steps = config.n_steps
    step = config.tier_steps(tier)
    rb = np.arange(0, n_steps, step)
    nodes = np.append(rb, n_steps)
    times = nodes * config.dt
    F = paths.target[:, nodes]
    K = paths.target[0, 0]
    spec = _target_spec(config, K)
    ann = config.notional * _pvbp(spec, times)
    tau = config.target_maturity - times[:-1]
    z_true = target_params(matrix, config, rb.size) if true_z is None else true_z[rb]
    v_true, _ = price_and_delta(z_true[None], matrix.beta, matrix.shift, F[:, :-1], K, tau, ann[None, :-1])
    payoff = ann[-1] * np.maximum(F[:, -1] - K, 0.0)
    values = np.concatenate([v_true, payoff[:, None]], axis=1)
    _, delta = price_and_delta(param_at(rb), matrix.beta, matrix.shift, F[:, :-1], K, tau, ann[None, :-1])
    m_pos = delta / ann[None, :-1]
    swap = ann[None, :] * (F - K)
    predicted = m_pos * np.diff(swap, axis=1)
    actual = np.diff(values, axis=1)
    errors = values[:, 0] + predicted.sum(axis=1) - payoff
    return TierResult(errors, predicted, actual, times)


def hedge_regression(predicted, actual):
    """R^2 of an OLS fit of predicted on actual changes (squared correlation)."""
    x = np.asarray(actual, dtype=float).reshape(-1)
    y = np.asarray(predicted, dtype=float).reshape(-1)
    if x.size < 2:
        raise ValueError("need at least 2 rebalance records")
    sxx = np.sum((x - x.mean()) ** 2)
    syy = np.sum((y - y.mean()) ** 2)
    if sxx == 0.0:
        return float("nan")
    if syy == 0.0:
        return 0.0
    sxy = np.sum((x - x.mean()) * (y - y.mean()))
    return float(sxy * sxy / (sxx * syy))


class _Moments:
    """Pooled sums for RMSE and R^2 across path blocks (fixed reduction order)."""

    def __init__(self):
        self.s = np.zeros(6)  # n, sx, sy, sxx, syy, sxy
        self.sq_err = 0.0
        self.sum_err = 0.0
        self.n_paths = 0

    def add(self, res: TierResult):
        x, y = res.actual.reshape(-1), res.predicted.reshape(-1)
        self.s += [x.size, x.sum(), y.sum(), x @ x, y @ y, x @ y]
        self.sq_err += float(res.errors @ res.errors)
        self.sum_err += float(res.errors.sum())
        self.n_paths += res.errors.size

    def r2(self):
        n, sx, sy, sxx, syy, sxy = self.s
        vx, vy, cxy = sxx - sx * sx / n, syy - sy * sy / n, sxy - sx * sy / n
        if vx <= 0:
            return float("nan")
        return float(cxy * cxy / (vx * vy)) if vy > 0 else 0.0


def initial_forwards(matrix: SabrParamMatrix, config: SimConfig):
    return np.full(matrix.shape, config.base_forward)


def run_hedge(strategies, matrix: SabrParamMatrix, grid: CubeGrid, config: SimConfig, model=None,
              ledger_paths=0):
    """Hedging study for each strategy and tier; returns ``(report, ledgers)``.

    ``ledgers`` maps (strategy, tier) to the TierResult of the first
    ``ledger_paths`` paths (for CSV output).
    """
    for s in strategies:
        if s not in STRATEGIES:
            raise ValueError(f"unknown strategy {s!r}")
    if matrix.shape != grid.shape[:2]:
        raise ValueError("parameter matrix does not match the grid")
    F0 = initial_forwards(matrix, config)
    moments = {(s, tr): _Moments() for s in strategies for tr in config.tiers}
    ledgers = {}
    events = {}
    true_z = target_params(matrix, config, config.n_steps)
    for start in range(0, config.n_paths, config.path_chunk):
        ids = np.arange(start, min(start + config.path_chunk, config.n_paths))
        paths = simulate_sabr_paths(matrix, F0, config, ids)
        for s in strategies:
            if s == "theoretical":
                param_at = lambda steps: true_z[steps][None]
            else:
                est = estimated_params_series(s, paths, matrix, grid, config, model, events)
                param_at = lambda steps, est=est: est[:, steps // config.steps_per_day]
            for tr in config.tiers:
                res = hedge_paths(param_at, paths, matrix, config, tr, true_z)
                moments[(s, tr)].add(res)
                if start == 0 and ledger_paths:
                    k = min(ledger_paths, ids.size)
                    ledgers[(s, tr)] = TierResult(res.errors[:k], res.predicted[:k], res.actual[:k],
                                                  res.times)
    results = {}
    for (s, tr), mo in moments.items():
        results.setdefault(s, {})[tr] = {
            "rmse_pct": 100.0 * math.sqrt(mo.sq_err / mo.n_paths) / config.notional,
            "mean_error": mo.sum_err / mo.n_paths,
            "r2": mo.r2(),
            "n_paths": mo.n_paths,
        }
    report = {"config": asdict(config), "seed": config.seed, "results": results,
              "calibration_failures": {s: events.get(s, 0) for s in strategies if s != "theoretical"}}
    return report, ledgers


def write_hedge_report(report, path):
    with open(path, "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_ledger(ledgers, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["strategy", "tier", "path", "k", "t", "predicted", "actual"])
        for (s, tr), res in sorted(ledgers.items()):
            for p in range(res.predicted.shape[0]):
                for k in range(res.predicted.shape[1]):
                    w.writerow([s, tr, p, k, repr(float(res.times[k])), repr(float(res.predicted[p, k])),
                                repr(float(res.actual[p, k]))])
