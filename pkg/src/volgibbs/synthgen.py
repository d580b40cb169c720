"""Synthetic SABR parameter matrices and volatility cubes for VAE training.

Each parameter (alpha, nu, rho) is handled in its transformed space (log,
log, artanh). Boundary rows/columns of a matrix are built from sampled
adjacent increments; interior entries follow a sampled ratio

    r = (a[i, j] - a[i-1, j]) / (a[i-1, j] - a[i, j-1])

so ``a[i, j] = a[i-1, j] + r * (a[i-1, j] - a[i, j-1])``, filled row-major.

No real market corpus ships with the package, so ``bootstrap_history``
produces a stand-in "source" history from a smooth reference surface with
AR(1) day factors. Everything downstream of it is synthetic-of-synthetic.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .calibration import LOWER, UPPER, SabrParamMatrix
from .cube import CubeGrid, VolCube, read_cube, write_cube
from .sabr import DEFAULT_SHIFT, normal_vol_array

PARAMS = ("alpha", "nu", "rho")
TRANSFORM_OF = {"alpha": "log", "nu": "log", "rho": "artanh"}
_DEGENERATE = 1e-12

# Reference surface in transformed space: level + c_T log T + c_tau log tenor.
# 1y x 1y equals the fitted smile (alpha 0.0086, nu 1.0732, rho 0.6506, beta 0.5).
REFERENCE_SURFACE = {
    "alpha": (math.log(0.0086), 0.10, -0.06),
    "nu": (math.log(1.0732), -0.30, 0.06),
    "rho": (math.atanh(0.6506), -0.12, 0.05),
}


class IncrementModelError(ValueError):
    pass


@dataclass
class IncrementModel:
    """Normal fits for one transformed parameter on an (m, t) grid."""

    param: str
    anchor: tuple  # (mean, sd) of the top-left value
    row_inc: np.ndarray  # (t-1, 2): increments along the first row (tenor direction)
    col_inc: np.ndarray  # (m-1, 2): increments down the first column (maturity direction)
    ratio: np.ndarray  # (m-1, t-1, 2): interior ratio (mean, sd)

    @property
    def shape(self):
        return self.col_inc.shape[0] + 1, self.row_inc.shape[0] + 1

    def to_dict(self) -> dict:
        return {"param": self.param, "anchor": list(self.anchor),
                "row_inc": self.row_inc.tolist(), "col_inc": self.col_inc.tolist(),
                "ratio": self.ratio.tolist()}

    @classmethod
    def from_dict(cls, d) -> "IncrementModel":
        m, t = len(d["col_inc"]) + 1, len(d["row_inc"]) + 1
        return cls(d["param"], tuple(d["anchor"]),
                   np.array(d["row_inc"], dtype=float).reshape(t - 1, 2),
                   np.array(d["col_inc"], dtype=float).reshape(m - 1, 2),
                   np.array(d["ratio"], dtype=float).reshape(m - 1, t - 1, 2))


def _transformed(matrix: SabrParamMatrix, param: str) -> np.ndarray:
    return matrix.transformed()[PARAMS.index(param)]


def _normal_fit(x: np.ndarray, where: str) -> tuple[float, float]:
    x = x[np.isfinite(x)]
    if x.size < 2:
        raise IncrementModelError(f"fewer than 2 valid samples at {where}")
    return float(x.mean()), float(x.std())


def fit_increment_model(matrices, param: str) -> IncrementModel:
    if param not in PARAMS:
        raise ValueError(f"param must be one of {PARAMS}")
    if len(matrices) < 2:
        raise IncrementModelError("need at least 2 matrices")
    Z = np.stack([_transformed(m, param) for m in matrices])
    _, m, t = Z.shape
    anchor = _normal_fit(Z[:, 0, 0], "anchor (0, 0)")
    row = np.array([_normal_fit(Z[:, 0, j] - Z[:, 0, j - 1], f"row 0, column {j}") for j in range(1, t)])
    col = np.array([_normal_fit(Z[:, i, 0] - Z[:, i - 1, 0], f"column 0, row {i}") for i in range(1, m)])
    ratio = np.empty((m - 1, t - 1, 2))
    for i in range(1, m):
        for j in range(1, t):
            den = Z[:, i - 1, j] - Z[:, i, j - 1]
            ok = np.abs(den) >= _DEGENERATE
            r = (Z[ok, i, j] - Z[ok, i - 1, j]) / den[ok]
            ratio[i - 1, j - 1] = _normal_fit(r, f"interior ({i}, {j})")
    return IncrementModel(param, anchor, row.reshape(t - 1, 2), col.reshape(m - 1, 2), ratio)


def _box(param):
    k = PARAMS.index(param)
    return LOWER[k], UPPER[k]


def sample_transformed(model: IncrementModel, rng: np.random.Generator, anchor=None) -> np.ndarray:
    """One transformed matrix; values are clipped to the calibration box."""
    m, t = model.shape
    lo, hi = _box(model.param)
    Z = np.empty((m, t))
    Z[0, 0] = rng.normal(*model.anchor) if anchor is None else anchor
    for j in range(1, t):
        Z[0, j] = Z[0, j - 1] + rng.normal(*model.row_inc[j - 1])
    for i in range(1, m):
        Z[i, 0] = Z[i - 1, 0] + rng.normal(*model.col_inc[i - 1])
    np.clip(Z[0], lo, hi, out=Z[0])
    np.clip(Z[:, 0], lo, hi, out=Z[:, 0])
    for i in range(1, m):
        for j in range(1, t):
            r = rng.normal(*model.ratio[i - 1, j - 1])
            v = Z[i - 1, j] + r * (Z[i - 1, j] - Z[i, j - 1])
            Z[i, j] = min(max(v, lo), hi)
    return Z


def sample_param_matrix(models: dict, maturities, tenors, rng, beta=0.5, shift=DEFAULT_SHIFT,
                        anchors=None) -> SabrParamMatrix:
    anchors = anchors or {}
    z = np.stack([sample_transformed(models[p], rng, anchors.get(p)) for p in PARAMS])
    return SabrParamMatrix.from_transformed(maturities, tenors, z, beta, shift)


# ------------------------------------------------------------------ forwards

@dataclass
class ForwardModel:
    """Per-slice forwards: base + N(0, sd) draws truncated at -shift + floor."""

    base: np.ndarray
    sd: float = 0.002
    shift: float = DEFAULT_SHIFT
    floor: float = 0.001

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)

    @classmethod
    def flat(cls, shape, level=0.01, sd=0.002, shift=DEFAULT_SHIFT):
        return cls(np.full(shape, level), sd, shift)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        lo = -self.shift + self.floor
        out = self.base + self.sd * rng.standard_normal(self.base.shape)
        bad = out <= lo
        while bad.any():
            out[bad] = self.base[bad] + self.sd * rng.standard_normal(int(bad.sum()))
            bad = out <= lo
        return out


# ------------------------------------------------------------ cube building

def cube_from_params(matrix: SabrParamMatrix, forwards, grid: CubeGrid,
                     beta=None, shift=None) -> VolCube:
    """Fully observed cube of SABR normal vols (bp) at strikes F + offset."""
    beta = matrix.beta if beta is None else beta
    shift = matrix.shift if shift is None else shift
    if matrix.shape != grid.shape[:2]:
        raise ValueError(f"matrix shape {matrix.shape} does not match grid {grid.shape[:2]}")
    F = np.asarray(forwards, dtype=float).reshape(grid.shape[:2])[..., None]
    off = np.asarray(grid.strike_offsets)
    T = np.asarray(grid.maturities)[:, None, None]
    vols = normal_vol_array(matrix.alpha[..., None], beta, matrix.nu[..., None],
                            matrix.rho[..., None], shift, F, F + off, T)
    return VolCube(grid, vols.reshape(-1) / 1e-4)


def reference_matrix(maturities, tenors, beta=0.5, shift=DEFAULT_SHIFT) -> SabrParamMatrix:
    lT = np.log(np.asarray(maturities, dtype=float))[:, None]
    lt = np.log(np.asarray(tenors, dtype=float))[None, :]
    z = np.stack([lvl + cT * lT + ct * lt for lvl, cT, ct in (REFERENCE_SURFACE[p] for p in PARAMS)])
    z = np.clip(z, LOWER[:, None, None], UPPER[:, None, None])
    return SabrParamMatrix.from_transformed(maturities, tenors, z, beta, shift)


def bootstrap_history(maturities, tenors, n_days=120, seed=0, beta=0.5, shift=DEFAULT_SHIFT,
                      level_sd=(0.15, 0.15, 0.10), slope_sd=(0.02, 0.03, 0.02),
                      node_sd=0.01, persistence=0.97):
    """Stand-in daily history of calibrated parameter matrices.

    Reference surface plus AR(1) level and maturity-slope factors per
    parameter and small independent node noise, all in transformed space.
    """
    rng = np.random.default_rng([seed, 7919])
    base = reference_matrix(maturities, tenors, beta, shift).transformed()
    lT = np.log(np.asarray(maturities, dtype=float))[:, None]
    level_sd = np.asarray(level_sd)
    slope_sd = np.asarray(slope_sd)
    innov = math.sqrt(1.0 - persistence ** 2)
    level = rng.standard_normal(3) * level_sd
    slope = rng.standard_normal(3) * slope_sd
    out = []
    for _ in range(n_days):
        level = persistence * level + innov * level_sd * rng.standard_normal(3)
        slope = persistence * slope + innov * slope_sd * rng.standard_normal(3)
        z = base + level[:, None, None] + slope[:, None, None] * lT
        z = z + node_sd * rng.standard_normal(z.shape)
        z = np.clip(z, LOWER[:, None, None], UPPER[:, None, None])
        out.append(SabrParamMatrix.from_transformed(maturities, tenors, z, beta, shift))
    return out


@dataclass
class SynthModel:
    """Everything needed to draw synthetic cubes reproducibly."""

    grid: CubeGrid
    increments: dict
    forwards: ForwardModel
    beta: float = 0.5
    shift: float = DEFAULT_SHIFT
    meta: dict = field(default_factory=dict)

    @classmethod
    def fit(cls, source_matrices, grid: CubeGrid, forwards: ForwardModel = None,
            beta=0.5, shift=DEFAULT_SHIFT) -> "SynthModel":
        inc = {p: fit_increment_model(source_matrices, p) for p in PARAMS}
        fm = forwards or ForwardModel.flat(grid.shape[:2], shift=shift)
        return cls(grid, inc, fm, beta, shift, {"n_source": len(source_matrices)})

    @classmethod
    def bootstrap(cls, grid: CubeGrid, seed=0, n_days=120, beta=0.5, shift=DEFAULT_SHIFT):
        hist = bootstrap_history(grid.maturities, grid.tenors, n_days, seed, beta, shift)
        model = cls.fit(hist, grid, beta=beta, shift=shift)
        model.meta.update({"bootstrap_seed": seed, "source": "bootstrap"})
        return model

    def to_dict(self) -> dict:
        return {"grid": self.grid.to_dict(), "beta": self.beta, "shift": self.shift,
                "increments": {p: m.to_dict() for p, m in self.increments.items()},
                "forwards": {"base": self.forwards.base.tolist(), "sd": self.forwards.sd,
                             "floor": self.forwards.floor},
                "meta": self.meta}

    @classmethod
    def from_dict(cls, d) -> "SynthModel":
        grid = CubeGrid.from_dict(d["grid"])
        fm = ForwardModel(np.array(d["forwards"]["base"]), d["forwards"]["sd"], d["shift"],
                          d["forwards"]["floor"])
        inc = {p: IncrementModel.from_dict(v) for p, v in d["increments"].items()}
        return cls(grid, inc, fm, d["beta"], d["shift"], d.get("meta", {}))

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()

    def draw(self, rng: np.random.Generator):
        matrix = sample_param_matrix(self.increments, self.grid.maturities, self.grid.tenors,
                                     rng, self.beta, self.shift)
        fwd = self.forwards.sample(rng)
        return matrix, fwd, cube_from_params(matrix, fwd, self.grid, self.beta, self.shift)


def cube_rng(seed: int, index: int) -> np.random.Generator:
    """Independent stream per (master seed, cube index)."""
    return np.random.default_rng([int(seed), int(index)])


def generate_training_set(n: int, model: SynthModel, seed: int, with_params=False):
    """``n`` fully observed synthetic cubes; cube ``i`` depends only on (seed, i)."""
    cubes, fwds, mats = [], [], []
    for i in range(n):
        matrix, fwd, cube = model.draw(cube_rng(seed, i))
        cubes.append(cube)
        fwds.append(fwd)
        mats.append(matrix)
    if with_params:
        return cubes, fwds, mats
    return cubes, fwds


# --------------------------------------------------------------- container

def write_training_set(directory, cubes, forwards, model: SynthModel, seed: int) -> Path:
    """Directory layout: manifest.json, forwards.csv, cubes/cube_NNNNN.csv."""
    d = Path(directory)
    (d / "cubes").mkdir(parents=True, exist_ok=True)
    names = []
    for i, cube in enumerate(cubes):
        name = f"cubes/cube_{i:05d}.csv"
        write_cube(cube, d / name)
        names.append(name)
    grid = model.grid
    with open(d / "forwards.csv", "w") as fh:
        fh.write("cube,maturity,tenor,forward\n")
        for i, f in enumerate(forwards):
            f = np.asarray(f).reshape(grid.shape[:2])
            for a, T in enumerate(grid.maturities):
                for b, tau in enumerate(grid.tenors):
                    fh.write(f"{i},{T!r},{tau!r},{float(f[a, b])!r}\n")
    (d / "synth_model.json").write_text(json.dumps(model.to_dict(), sort_keys=True) + "\n")
    manifest = {"kind": "volgibbs-training-set", "version": 1, "seed": seed, "n_cubes": len(cubes),
                "grid": grid.to_dict(), "synth_model_sha256": model.digest(), "cubes": names}
    (d / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return d


def read_training_set(directory):
    """Returns ``(cubes, forwards, manifest)``."""
    d = Path(directory)
    manifest = json.loads((d / "manifest.json").read_text())
    cubes = [read_cube(d / name) for name in manifest["cubes"]]
    grid = CubeGrid.from_dict(manifest["grid"])
    fwd = np.zeros((len(cubes),) + grid.shape[:2])
    path = d / "forwards.csv"
    if path.exists():
        lines = path.read_text().splitlines()[1:]
        for line in lines:
            i, T, tau, f = line.split(",")
            fwd[int(i), grid.maturities.index(float(T)), grid.tenors.index(float(tau))] = float(f)
    return cubes, list(fwd), manifest
