"""Per-slice shifted-SABR calibration with fixed beta, and parameter matrices.

The optimiser is a batched Levenberg-Marquardt in the transformed
coordinates (log alpha, log nu, artanh rho) with a projection onto a box,
so many smiles can be fitted in one vectorised pass.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import minimize_scalar

from . import kernels
from .cube import BP, CubeGrid, VolCube
from .sabr import ATM_EPS, DEFAULT_SHIFT, SabrParams

LOWER = np.array([math.log(1e-4), math.log(1e-3), -3.0])
UPPER = np.array([0.0, math.log(5.0), 3.0])
DEFAULT_NU = 0.5
DEFAULT_RHO = 0.0
MAX_ITER = 500
REL_TOL = 1e-10
ABS_TOL = 1e-14  # bp^2; stalls on flat valleys (nu at its bound) end here


class CalibrationError(RuntimeError):
    """Optimiser gave up; ``best`` holds the best parameters seen."""

    def __init__(self, msg, best=None, label=None):
        super().__init__(msg if label is None else f"{label}: {msg}")
        self.best = best
        self.label = label


@dataclass
class SmileSlice:
    maturity: float
    tenor: float
    forward: float
    offsets: np.ndarray
    vols: np.ndarray
    weights: np.ndarray = None

    def __post_init__(self):
        self.offsets = np.asarray(self.offsets, dtype=float)
        self.vols = np.asarray(self.vols, dtype=float)
        if self.weights is None:
            self.weights = np.ones_like(self.offsets)
        self.weights = np.asarray(self.weights, dtype=float)
        if np.any(np.diff(self.offsets) <= 0):
            raise ValueError("strikes must be strictly increasing")
        if not (self.offsets.shape == self.vols.shape == self.weights.shape):
            raise ValueError("offsets, vols and weights must align")
        if np.any(self.weights < 0):
            raise ValueError("weights must be non-negative")

    @property
    def strikes(self) -> np.ndarray:
        return self.forward + self.offsets

    @property
    def observed(self) -> np.ndarray:
        return np.isfinite(self.vols)

    @property
    def atm_index(self) -> int:
        hits = np.flatnonzero(self.offsets == 0.0)
        if hits.size == 0:
            raise ValueError("slice has no ATM strike")
        return int(hits[0])

    @property
    def atm_vol(self) -> float:
        return float(self.vols[self.atm_index])


@dataclass
class FitReport:
    params: SabrParams
    status: str
    residuals_bp: np.ndarray
    mae_bp: float
    n_obs: int
    iterations: int = 0

    def to_dict(self) -> dict:
        return {"status": self.status, "mae_bp": self.mae_bp, "n_obs": self.n_obs,
                "iterations": self.iterations,
                "alpha": self.params.alpha, "nu": self.params.nu, "rho": self.params.rho}


@dataclass
class SabrParamMatrix:
    maturities: tuple
    tenors: tuple
    alpha: np.ndarray
    nu: np.ndarray
    rho: np.ndarray
    beta: float = 0.5
    shift: float = DEFAULT_SHIFT
    flags: dict = field(default_factory=dict)

    def __post_init__(self):
        self.maturities = tuple(float(x) for x in self.maturities)
        self.tenors = tuple(float(x) for x in self.tenors)
        shape = (len(self.maturities), len(self.tenors))
        for name in ("alpha", "nu", "rho"):
            arr = np.array(getattr(self, name), dtype=float).reshape(shape)
            setattr(self, name, arr)
        # alpha == 0 is accepted so that degenerate zero-vol worlds can be simulated
        if not (np.all(self.alpha >= 0) and np.all(self.nu >= 0) and np.all(np.abs(self.rho) < 1)):
            raise ValueError("parameter matrix violates alpha >= 0, nu >= 0, |rho| < 1")
        if not 0 <= self.beta <= 1:
            raise ValueError("beta must lie in [0, 1]")

    @property
    def shape(self):
        return self.alpha.shape

    def params_at(self, i: int, j: int) -> SabrParams:
        return SabrParams(float(self.alpha[i, j]), self.beta, float(self.nu[i, j]),
                          float(self.rho[i, j]), self.shift)

    def transformed(self) -> np.ndarray:
        """(3, n_mat, n_ten) stack of log alpha, log nu, artanh rho."""
        with np.errstate(divide="ignore"):
            return np.stack([np.log(self.alpha), np.log(self.nu), np.arctanh(self.rho)])

    @classmethod
    def from_transformed(cls, maturities, tenors, z, beta=0.5, shift=DEFAULT_SHIFT):
        return cls(maturities, tenors, np.exp(z[0]), np.exp(z[1]), np.tanh(z[2]), beta, shift)


PARAM_HEADER = ["maturity", "tenor", "alpha", "nu", "rho"]


def write_param_matrix(m: SabrParamMatrix, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PARAM_HEADER)
        for i, T in enumerate(m.maturities):
            for j, tau in enumerate(m.tenors):
                w.writerow([repr(T), repr(tau), repr(float(m.alpha[i, j])),
                            repr(float(m.nu[i, j])), repr(float(m.rho[i, j]))])


def read_param_matrix(path, beta=0.5, shift=DEFAULT_SHIFT) -> SabrParamMatrix:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != PARAM_HEADER:
        raise ValueError(f"{path}: header must be {','.join(PARAM_HEADER)}")
    recs = []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        try:
            recs.append(tuple(float(x) for x in row))
        except ValueError:
            raise ValueError(f"{path}: row {lineno}: non-numeric field") from None
        if len(row) != 5:
            raise ValueError(f"{path}: row {lineno}: expected 5 fields")
    mats = sorted({r[0] for r in recs})
    tens = sorted({r[1] for r in recs})
    if len(recs) != len(mats) * len(tens):
        raise ValueError(f"{path}: rows do not form a full maturity x tenor matrix")
    a = np.empty((len(mats), len(tens)))
    n, r = np.empty_like(a), np.empty_like(a)
    for T, tau, al, nu, rho in recs:
        i, j = mats.index(T), tens.index(tau)
        a[i, j], n[i, j], r[i, j] = al, nu, rho
    return SabrParamMatrix(mats, tens, a, n, r, beta, shift)


# ------------------------------------------------------------------ model vols

def _model_vols(p, beta, shift, F, K, T):
    """Vols for transformed params ``p`` (..., 3) against strikes (..., k); NaN off-domain."""
    a = np.exp(p[..., 0:1])
    n = np.exp(p[..., 1:2])
    r = np.tanh(p[..., 2:3])
    arrs = np.broadcast_arrays(a, beta, n, r, shift, F, K, T)
    shape = arrs[0].shape
    flat = [np.ascontiguousarray(np.asarray(x, dtype=float).reshape(-1)) for x in arrs]
    sig, _, status = kernels.normal_vol(*flat, ATM_EPS, False)
    sig[status != 0] = np.nan
    return sig.reshape(shape)


def _objective(res):
    out = np.sum(res * res, axis=-1)
    return np.where(np.isfinite(out), out, np.inf)


def levenberg_marquardt(p0, F, offsets, vols, weights, T, beta, shift,
                        max_iter=MAX_ITER, rel_tol=REL_TOL, history=None):
    """Batched box-projected LM on weighted vol residuals (in bp).

    ``p0`` is (n, 3) transformed starting points, ``F`` and ``T`` have length
    n, ``offsets`` is (k,) or (n, k), ``vols`` (n, k) in decimals with NaN
    where missing (those strikes get zero weight). Returns
    ``(p, objective, iterations, converged)``. Accepted steps never increase
    the objective; ``history``, if a list, receives the objective after
    every iteration.
    """
    p = np.clip(np.array(p0, dtype=float).reshape(-1, 3), LOWER, UPPER)
    n = p.shape[0]
    F = np.asarray(F, dtype=float).reshape(n, 1)
    T = np.asarray(T, dtype=float).reshape(n, 1)
    vols = np.asarray(vols, dtype=float).reshape(n, -1)
    K = F + np.broadcast_to(np.asarray(offsets, dtype=float), vols.shape)
    obs = np.isfinite(vols)
    sw = np.sqrt(np.where(obs, np.broadcast_to(weights, vols.shape), 0.0))
    target = np.where(obs, vols, 0.0)

    def residuals(pp, rows):
        s = _model_vols(pp, beta, shift, F[rows], K[rows], T[rows])
        return sw[rows] * (s - target[rows]) / BP

    every = np.arange(n)
    res = residuals(p, every)
    obj = _objective(res)
    lam = np.full(n, 1e-3)
    done = np.zeros(n, dtype=bool)
    converged = np.zeros(n, dtype=bool)
    iters = np.zeros(n, dtype=int)
    h = 1e-6
    eye = np.eye(3)
    for _ in range(max_iter):
        act = np.flatnonzero(~done)
        if act.size == 0:
            break
        pa, ra = p[act], res[act]
        J = np.empty(ra.shape + (3,))
        for c in range(3):
            dp = np.zeros(3)
            dp[c] = h
            J[..., c] = (residuals(pa + dp, act) - residuals(pa - dp, act)) / (2 * h)
        J = np.where(np.isfinite(J), J, 0.0)
        JtJ = np.einsum("nki,nkj->nij", J, J)
        g = np.einsum("nki,nk->ni", J, ra)
        diag = np.einsum("nii->ni", JtJ)
        A = JtJ + lam[act, None, None] * (diag[:, :, None] * eye + 1e-12 * eye)
        step = -np.linalg.solve(A, g[..., None])[..., 0]
        cand = np.clip(pa + step, LOWER, UPPER)
        r_c = residuals(cand, act)
        o_c = _objective(r_c)
        o_a = obj[act]
        accept = o_c < o_a
        iters[act] += 1
        rel = np.zeros(act.size)
        pos = accept & (o_a > 0)
        rel[pos] = (o_a[pos] - o_c[pos]) / o_a[pos]
        ai = act[accept]
        p[ai], res[ai], obj[ai] = cand[accept], r_c[accept], o_c[accept]
        lam[ai] = np.maximum(lam[ai] / 3.0, 1e-12)
        lam[act[~accept]] *= 4.0
        moved = np.abs(cand - pa).max(axis=1)
        stop = ((accept & ((rel < rel_tol) | (o_a - o_c < ABS_TOL))) | (obj[act] < 1e-26)
                | (~accept & (lam[act] > 1e12)) | (moved < 1e-15))
        done[act[stop]] = True
        converged[act[stop]] = True
        if history is not None:
            history.append(obj.copy())
    return p, obj, iters, converged


# --------------------------------------------------------------- initial guess

def _guess_arrays(F, offsets, vols, T, beta, shift):
    """Vectorised starting point for many slices; returns (alpha, nu, rho).

    Alpha inverts the leading ATM term. Nu and rho come from a quadratic
    through the ATM quote and the nearest available quote on each side,
    matched to the small-moneyness expansion sigma(K)/sigma_ATM ~ 1 +
    (rho c/2) y + (2 - 3 rho^2) c^2 y^2 / 12 with y = K - F and
    c = nu / (alpha (F + b)^beta). This is a heuristic stand-in for the
    closed-form guesses of the literature; without wing quotes it falls back
    to nu = 0.5, rho = 0.
    """
    F = np.asarray(F, dtype=float)
    vols = np.asarray(vols, dtype=float).reshape(F.size, -1)
    offsets = np.broadcast_to(np.asarray(offsets, dtype=float), vols.shape)
    atm = np.argmin(np.abs(offsets), axis=1)
    rows = np.arange(F.size)
    s0 = vols[rows, atm]
    fb = F + shift
    alpha = s0 / fb ** beta
    nu = np.full(F.size, DEFAULT_NU)
    rho = np.full(F.size, DEFAULT_RHO)
    obs = np.isfinite(vols)
    for n in range(F.size):
        if not np.isfinite(s0[n]):
            continue
        left = np.flatnonzero(obs[n] & (offsets[n] < 0))
        right = np.flatnonzero(obs[n] & (offsets[n] > 0))
        pts = []
        if left.size:
            pts.append(left[-1])
        if right.size:
            pts.append(right[0])
        if not pts:
            continue
        ys = offsets[n, pts]
        rel = vols[n, pts] / s0[n] - 1.0
        if len(pts) == 2:
            # rel = a1 y + a2 y^2 through both wing points
            y1, y2 = ys
            a2 = (rel[1] / y2 - rel[0] / y1) / (y2 - y1)
            a1 = rel[0] / y1 - a2 * y1
        else:
            a1, a2 = rel[0] / ys[0], None
        skew = 2.0 * a1  # rho * c
        c_default = DEFAULT_NU / (alpha[n] * fb[n] ** beta)
        c2 = None if a2 is None else (12.0 * a2 + 3.0 * skew * skew) / 2.0
        if c2 is not None and c2 > 0:
            c = math.sqrt(c2)
            nu[n] = c * alpha[n] * fb[n] ** beta
        else:
            c = c_default
        rho[n] = skew / c
    alpha = np.clip(np.nan_to_num(alpha, nan=0.01), 1.01e-4, 0.99)
    nu = np.clip(nu, 0.01, 4.0)
    rho = np.clip(rho, -0.95, 0.95)
    return alpha, nu, rho


def initial_guess(slc: SmileSlice, beta: float, shift: float = DEFAULT_SHIFT) -> SabrParams:
    a, n, r = _guess_arrays(np.array([slc.forward]), slc.offsets[None, :],
                            slc.vols[None, :], np.array([slc.maturity]), beta, shift)
    return SabrParams(float(a[0]), beta, float(n[0]), float(r[0]), shift)


# ----------------------------------------------------------------- slice fits

_RESTARTS = [(0.3, -0.5), (0.3, 0.5), (1.0, 0.0), (1.5, 0.6), (1.5, -0.6), (0.1, 0.0)]


def _to_z(alpha, nu, rho):
    return np.stack([np.log(alpha), np.log(nu), np.arctanh(rho)], axis=-1)


def fit_full_slices(F, offsets, vols, weights, T, beta, shift, p0=None, restart_mae_bp=0.25):
    """Least-squares fits of (alpha, nu, rho) for n slices with >= 3 quotes each.

    ``p0`` optionally supplies transformed warm starts. Slices whose fit MAE
    exceeds ``restart_mae_bp`` are refitted from a small set of alternative
    starts and the best result is kept. Returns ``(z, obj, iters, converged)``.
    """
    F = np.asarray(F, dtype=float)
    vols = np.asarray(vols, dtype=float).reshape(F.size, -1)
    weights = np.broadcast_to(np.asarray(weights, dtype=float), vols.shape)
    if p0 is None:
        p0 = _to_z(*_guess_arrays(F, offsets, vols, T, beta, shift))
    z, obj, iters, conv = levenberg_marquardt(p0, F, offsets, vols, weights, T, beta, shift)
    mae = _mae_bp(z, F, offsets, vols, T, beta, shift)
    redo = np.flatnonzero(mae > restart_mae_bp)
    if redo.size:
        Tv = np.broadcast_to(np.asarray(T, dtype=float), F.shape)
        off = np.broadcast_to(np.asarray(offsets, dtype=float), vols.shape)
        for nu0, rho0 in _RESTARTS:
            start = z[redo].copy()
            start[:, 1] = math.log(nu0)
            start[:, 2] = math.atanh(rho0)
            z2, o2, i2, c2 = levenberg_marquardt(start, F[redo], off[redo], vols[redo],
                                                 weights[redo], Tv[redo], beta, shift)
            better = o2 < obj[redo]
            idx = redo[better]
            z[idx], obj[idx], conv[idx] = z2[better], o2[better], c2[better]
            iters[redo] += i2
    return z, obj, iters, conv


def _mae_bp(z, F, offsets, vols, T, beta, shift):
    F = np.asarray(F, dtype=float).reshape(-1, 1)
    K = F + np.broadcast_to(np.asarray(offsets, dtype=float), vols.shape)
    s = _model_vols(z, beta, shift, F, K, np.asarray(T, dtype=float).reshape(-1, 1))
    obs = np.isfinite(vols)
    err = np.where(obs, np.abs(s - np.where(obs, vols, 0.0)) / BP, 0.0)
    err = np.where(np.isfinite(err), err, np.inf)
    return err.sum(axis=1) / np.maximum(obs.sum(axis=1), 1)


def fit_alpha_only(slc: SmileSlice, beta, shift, nu, rho) -> SabrParams:
    """Solve alpha alone from the available quotes with nu and rho held fixed."""
    obs = slc.observed
    K = slc.strikes[obs]
    w = slc.weights[obs]
    target = slc.vols[obs]
    T = slc.maturity

    def obj(log_a):
        s = _model_vols(np.array([log_a, math.log(max(nu, 1e-300)), math.atanh(rho)]),
                        beta, shift, slc.forward, K, T)
        return float(np.sum(w * ((s - target) / BP) ** 2)) if np.all(np.isfinite(s)) else np.inf

    res = minimize_scalar(obj, bounds=(LOWER[0], UPPER[0]), method="bounded",
                          options={"xatol": 1e-12, "maxiter": MAX_ITER})
    return SabrParams(float(math.exp(res.x)), beta, float(nu), float(rho), shift)


def _report(slc, params, status, iters):
    res = np.full(slc.vols.shape, np.nan)
    obs = slc.observed
    model = _model_vols(np.array([math.log(params.alpha), math.log(max(params.nu, 1e-300)),
                                  math.atanh(params.rho)]), params.beta, params.shift_b,
                        slc.forward, slc.strikes, slc.maturity)
    res[obs] = (model[obs] - slc.vols[obs]) / BP
    return FitReport(params, status, res, float(np.mean(np.abs(res[obs]))), int(obs.sum()), int(iters))


def calibrate_slice(slc: SmileSlice, beta: float = 0.5, shift: float = DEFAULT_SHIFT,
                    fallback=(DEFAULT_NU, DEFAULT_RHO)) -> tuple[SabrParams, FitReport]:
    """Fit one smile. Needs the ATM quote; with fewer than 3 quotes only alpha is fitted."""
    obs = slc.observed
    if not np.isfinite(slc.atm_vol):
        raise CalibrationError("ATM quote missing", label=(slc.maturity, slc.tenor))
    if obs.sum() < 3:
        p = fit_alpha_only(slc, beta, shift, *fallback)
        return p, _report(slc, p, "alpha_only", 0)
    z, obj, iters, conv = fit_full_slices([slc.forward], slc.offsets, slc.vols[None, :],
                                          slc.weights[None, :], [slc.maturity], beta, shift)
    a, n, r = np.exp(z[0, 0]), np.exp(z[0, 1]), np.tanh(z[0, 2])
    best = SabrParams(float(a), beta, float(n), float(r), shift)
    if not conv[0]:
        raise CalibrationError(f"no convergence after {MAX_ITER} iterations", best=best,
                               label=(slc.maturity, slc.tenor))
    return best, _report(slc, best, "full", iters[0])


def cube_slices(cube: VolCube, forwards, weights=None):
    """SmileSlice per (maturity, tenor) node; vols converted from bp to decimals."""
    grid = cube.grid
    forwards = np.asarray(forwards, dtype=float).reshape(grid.shape[:2])
    arr = cube.as_array() * BP
    for i, T in enumerate(grid.maturities):
        for j, tau in enumerate(grid.tenors):
            yield i, j, SmileSlice(T, tau, float(forwards[i, j]), np.array(grid.strike_offsets),
                                   arr[i, j], weights)


def calibrate_cube(cube: VolCube, forwards, beta: float = 0.5, shift: float = DEFAULT_SHIFT,
                   atm_weight: float = 1.0):
    """Fit every (maturity, tenor) slice of ``cube``.

    Slices with at least 3 quotes get a full fit; slices with 1-2 quotes are
    flagged ``alpha_only`` and borrow nu, rho from fully fitted neighbours
    (or defaults). Returns ``(SabrParamMatrix, report)`` where the report
    maps ``(maturity, tenor)`` to a FitReport.
    """
    grid = cube.grid
    m, t, _ = grid.shape
    offsets = np.array(grid.strike_offsets)
    weights = np.ones_like(offsets)
    weights[offsets == 0.0] = atm_weight
    forwards = np.asarray(forwards, dtype=float).reshape(m, t)
    slices = {(i, j): s for i, j, s in cube_slices(cube, forwards, weights)}
    full, partial = [], []
    for (i, j), s in slices.items():
        n_obs = int(s.observed.sum())
        if n_obs == 0:
            raise CalibrationError("slice has no observed quotes", label=(s.maturity, s.tenor))
        if not np.isfinite(s.atm_vol):
            raise CalibrationError("ATM quote missing", label=(s.maturity, s.tenor))
        (full if n_obs >= 3 else partial).append((i, j))
    alpha = np.full((m, t), np.nan)
    nu = np.full((m, t), np.nan)
    rho = np.full((m, t), np.nan)
    report = {}
    if full:
        idx = np.array(full)
        F = forwards[idx[:, 0], idx[:, 1]]
        vols = np.stack([slices[k].vols for k in full])
        T = np.array([grid.maturities[i] for i, _ in full])
        z, obj, iters, conv = fit_full_slices(F, offsets, vols, weights, T, beta, shift)
        for n, (i, j) in enumerate(full):
            alpha[i, j], nu[i, j], rho[i, j] = np.exp(z[n, 0]), np.exp(z[n, 1]), np.tanh(z[n, 2])
            p = SabrParams(float(alpha[i, j]), beta, float(nu[i, j]), float(rho[i, j]), shift)
            report[(grid.maturities[i], grid.tenors[j])] = _report(slices[(i, j)], p, "full", iters[n])
            if not conv[n]:
                raise CalibrationError(f"no convergence after {MAX_ITER} iterations", best=p,
                                       label=(grid.maturities[i], grid.tenors[j]))
    for i, j in partial:
        nb = [(i + di, j + dj) for di, dj in ((-1, 0), (1, 0), (0, -1), (0, 1))
              if (i + di, j + dj) in slices and np.isfinite(nu[i + di, j + dj])]
        if nb:
            nu0 = float(np.exp(np.mean([np.log(nu[k]) for k in nb])))
            rho0 = float(np.tanh(np.mean([np.arctanh(rho[k]) for k in nb])))
        else:
            nu0, rho0 = DEFAULT_NU, DEFAULT_RHO
        p = fit_alpha_only(slices[(i, j)], beta, shift, nu0, rho0)
        alpha[i, j], nu[i, j], rho[i, j] = p.alpha, p.nu, p.rho
        report[(grid.maturities[i], grid.tenors[j])] = _report(slices[(i, j)], p, "alpha_only", 0)
    flags = {k: r.status for k, r in report.items() if r.status != "full"}
    matrix = SabrParamMatrix(grid.maturities, grid.tenors, alpha, nu, rho, beta, shift, flags)
    return matrix, report


def fit_report_json(report: dict) -> dict:
    slices = [dict(maturity=k[0], tenor=k[1], **r.to_dict()) for k, r in sorted(report.items())]
    maes = [s["mae_bp"] for s in slices]
    return {"slices": slices, "mean_mae_bp": float(np.mean(maes)) if maes else None,
            "max_mae_bp": float(np.max(maes)) if maes else None}


# ------------------------------------------------------------- interpolation

def _bracket(axis, x):
    """Index pair and weight for linear interpolation with clamping."""
    axis = np.asarray(axis)
    if x <= axis[0]:
        return 0, 0, 0.0
    if x >= axis[-1]:
        n = len(axis) - 1
        return n, n, 0.0
    hi = int(np.searchsorted(axis, x, side="right"))
    lo = hi - 1
    if axis[lo] == x:
        return lo, lo, 0.0
    return lo, hi, float((x - axis[lo]) / (axis[hi] - axis[lo]))


def interpolate_params(matrix: SabrParamMatrix, T_query: float, tenor_query: float) -> SabrParams:
    """Bilinear interpolation in (log alpha, log nu, artanh rho); clamps outside the grid."""
    i0, i1, wi = _bracket(matrix.maturities, T_query)
    j0, j1, wj = _bracket(matrix.tenors, tenor_query)
    if wi == 0.0 and wj == 0.0:
        return matrix.params_at(i0, j0)
    z = matrix.transformed()
    v = ((1 - wi) * (1 - wj) * z[:, i0, j0] + wi * (1 - wj) * z[:, i1, j0]
         + (1 - wi) * wj * z[:, i0, j1] + wi * wj * z[:, i1, j1])
    return SabrParams(float(np.exp(v[0])), matrix.beta, float(np.exp(v[1])),
                      float(np.tanh(v[2])), matrix.shift)
