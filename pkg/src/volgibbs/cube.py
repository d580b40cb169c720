"""Volatility cube data model, masking, value transforms and CSV/JSON I/O.

Cube values are kept in basis points (the unit of every file the package
reads or writes); the SABR analytics work in decimals and convert at the
point of use.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

BP = 1e-4

# 21 x 14 x 17 = 4998 points.
DEFAULT_MATURITIES = (
    1 / 12, 1 / 6, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0,
    9.0, 10.0, 12.0, 15.0, 20.0, 25.0, 30.0,
)
DEFAULT_TENORS = (1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0, 12.0, 15.0, 20.0, 30.0)
DEFAULT_STRIKE_OFFSETS_BP = (-200, -150, -100, -75, -50, -37.5, -25, -12.5, 0,
                             12.5, 25, 37.5, 50, 75, 100, 150, 200)

# Reduced grid for CI-sized runs: 8 x 6 x 7 = 336 points.
DESK_MATURITIES = (0.25, 0.5, 1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
DESK_TENORS = (1.0, 2.0, 3.0, 5.0, 7.0, 10.0)
DESK_STRIKE_OFFSETS_BP = (-200, -100, -50, 0, 50, 100, 200)


class GridError(ValueError):
    pass


class CubeFormatError(ValueError):
    pass


def _strictly_increasing(xs: np.ndarray) -> bool:
    return bool(np.all(np.diff(xs) > 0))


@dataclass(frozen=True)
class CubeGrid:
    maturities: tuple
    tenors: tuple
    strike_offsets: tuple

    def __post_init__(self):
        for name in ("maturities", "tenors", "strike_offsets"):
            vals = tuple(float(v) for v in getattr(self, name))
            if not vals:
                raise GridError(f"{name} must be non-empty")
            if not _strictly_increasing(np.asarray(vals)):
                raise GridError(f"{name} must be strictly increasing")
            object.__setattr__(self, name, vals)
        if min(self.maturities) <= 0 or min(self.tenors) <= 0:
            raise GridError("maturities and tenors must be positive")
        if 0.0 not in self.strike_offsets:
            raise GridError("strike_offsets must contain the ATM offset 0")

    @classmethod
    def default(cls) -> "CubeGrid":
        return cls(DEFAULT_MATURITIES, DEFAULT_TENORS,
                   tuple(o * BP for o in DEFAULT_STRIKE_OFFSETS_BP))

    @classmethod
    def desk(cls) -> "CubeGrid":
        return cls(DESK_MATURITIES, DESK_TENORS,
                   tuple(o * BP for o in DESK_STRIKE_OFFSETS_BP))

    @property
    def shape(self) -> tuple[int, int, int]:
        return len(self.maturities), len(self.tenors), len(self.strike_offsets)

    @property
    def size(self) -> int:
        m, t, s = self.shape
        return m * t * s

    @property
    def atm_index(self) -> int:
        return self.strike_offsets.index(0.0)

    def flatten_index(self, i_mat: int, j_ten: int, k_strike: int) -> int:
        m, t, s = self.shape
        if not (0 <= i_mat < m and 0 <= j_ten < t and 0 <= k_strike < s):
            raise IndexError(f"index ({i_mat}, {j_ten}, {k_strike}) outside grid {self.shape}")
        return (i_mat * t + j_ten) * s + k_strike

    def unflatten_index(self, flat: int) -> tuple[int, int, int]:
        if not 0 <= flat < self.size:
            raise IndexError(f"flat index {flat} outside grid of size {self.size}")
        _, t, s = self.shape
        ij, k = divmod(flat, s)
        i, j = divmod(ij, t)
        return i, j, k

    def points(self) -> Iterator[tuple[float, float, float]]:
        for T in self.maturities:
            for tau in self.tenors:
                for off in self.strike_offsets:
                    yield T, tau, off

    def to_dict(self) -> dict:
        return {"maturities": list(self.maturities), "tenors": list(self.tenors),
                "strike_offsets": list(self.strike_offsets)}

    @classmethod
    def from_dict(cls, d: dict) -> "CubeGrid":
        try:
            return cls(d["maturities"], d["tenors"], d["strike_offsets"])
        except KeyError as exc:
            raise GridError(f"grid config missing axis {exc}") from None


def flatten_index(i_mat: int, j_ten: int, k_strike: int, grid: CubeGrid) -> int:
    return grid.flatten_index(i_mat, j_ten, k_strike)


def unflatten_index(flat: int, grid: CubeGrid) -> tuple[int, int, int]:
    return grid.unflatten_index(flat)


@dataclass(frozen=True, eq=False)
class VolCube:
    """Normal vols in bp on a grid, flat in (maturity, tenor, strike) order.

    ``mask`` is True where a value is observed; entries under a False mask
    carry no meaning (they are usually NaN).
    """

    grid: CubeGrid
    values: np.ndarray
    mask: np.ndarray = field(default=None)

    def __post_init__(self):
        values = np.array(self.values, dtype=float).reshape(-1)
        mask = (np.ones(values.shape, dtype=bool) if self.mask is None
                else np.array(self.mask, dtype=bool).reshape(-1))
        if values.size != self.grid.size or mask.size != self.grid.size:
            raise CubeFormatError(
                f"cube has {values.size} values / {mask.size} mask entries, grid needs {self.grid.size}")
        obs = values[mask]
        if not np.all(np.isfinite(obs)) or np.any(obs <= 0):
            raise CubeFormatError("observed vols must be finite and positive")
        values.setflags(write=False)
        mask.setflags(write=False)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "mask", mask)

    def __eq__(self, other):
        if not isinstance(other, VolCube):
            return NotImplemented
        return (self.grid == other.grid and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.values[self.mask], other.values[other.mask]))

    @property
    def n_missing(self) -> int:
        return int((~self.mask).sum())

    def as_array(self) -> np.ndarray:
        """Values reshaped to (maturity, tenor, strike); missing entries NaN."""
        out = np.where(self.mask, self.values, np.nan)
        return out.reshape(self.grid.shape)

    def with_mask(self, mask: np.ndarray) -> "VolCube":
        mask = np.asarray(mask, dtype=bool).reshape(-1) & self.mask
        return VolCube(self.grid, np.where(mask, self.values, np.nan), mask)

    def filled(self, values: np.ndarray) -> "VolCube":
        """Fully observed cube taking missing entries from ``values``."""
        values = np.asarray(values, dtype=float).reshape(-1)
        return VolCube(self.grid, np.where(self.mask, self.values, values))


def random_mask(grid: CubeGrid, missing_rate: float, rng: np.random.Generator) -> np.ndarray:
    """Boolean observation mask with ``round(missing_rate * size)`` hidden points."""
    if not 0.0 <= missing_rate < 1.0:
        raise ValueError("missing_rate must lie in [0, 1)")
    n_missing = int(round(missing_rate * grid.size))
    mask = np.ones(grid.size, dtype=bool)
    mask[rng.choice(grid.size, size=n_missing, replace=False)] = False
    return mask


# ---------------------------------------------------------------- transforms

TRANSFORMS = ("log", "artanh", "identity")


@dataclass(frozen=True)
class TransformSpec:
    kind: str

    def __post_init__(self):
        if self.kind not in TRANSFORMS:
            raise ValueError(f"unknown transform {self.kind!r}")


def _check_domain(x, kind):
    x = np.asarray(x, dtype=float)
    if kind == "log" and np.any(~(x > 0)):
        raise ValueError("log transform needs strictly positive input")
    if kind == "artanh" and np.any(~(np.abs(x) < 1)):
        raise ValueError("artanh transform needs input in (-1, 1)")
    return x


def apply_transform(x, spec: TransformSpec | str):
    kind = spec.kind if isinstance(spec, TransformSpec) else TransformSpec(spec).kind
    x = _check_domain(x, kind)
    if kind == "log":
        out = np.log(x)
    elif kind == "artanh":
        out = np.arctanh(x)
    else:
        out = x.copy()
    return out if out.ndim else float(out)


def inverse_transform(y, spec: TransformSpec | str):
    kind = spec.kind if isinstance(spec, TransformSpec) else TransformSpec(spec).kind
    y = np.asarray(y, dtype=float)
    if kind == "log":
        out = np.exp(y)
    elif kind == "artanh":
        out = np.tanh(y)
    else:
        out = y.copy()
    return out if out.ndim else float(out)


# ----------------------------------------------------------------------- I/O

CUBE_HEADER = ["maturity", "tenor", "strike_offset", "vol_bp"]


def _fmt(x: float) -> str:
    return repr(float(x))


def write_cube(cube: VolCube, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CUBE_HEADER)
        for (T, tau, off), v, obs in zip(cube.grid.points(), cube.values, cube.mask):
            w.writerow([_fmt(T), _fmt(tau), _fmt(off), _fmt(v) if obs else ""])


def read_cube(path) -> VolCube:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != CUBE_HEADER:
        raise CubeFormatError(f"{path}: header must be {','.join(CUBE_HEADER)}")
    coords, vals, mask = [], [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if not row:
            continue
        if len(row) != 4:
            raise CubeFormatError(f"{path}: row {lineno}: expected 4 fields, got {len(row)}")
        try:
            T, tau, off = (float(c) for c in row[:3])
        except ValueError:
            raise CubeFormatError(f"{path}: row {lineno}: non-numeric coordinate") from None
        vol = row[3].strip()
        if vol == "":
            vals.append(math.nan)
            mask.append(False)
        else:
            try:
                v = float(vol)
            except ValueError:
                raise CubeFormatError(f"{path}: row {lineno}: non-numeric vol {vol!r}") from None
            if not math.isfinite(v) or v <= 0:
                raise CubeFormatError(f"{path}: row {lineno}: observed vol must be positive, got {vol}")
            vals.append(v)
            mask.append(True)
        coords.append((T, tau, off))
    if not coords:
        raise CubeFormatError(f"{path}: no data rows")
    mats = sorted({c[0] for c in coords})
    tens = sorted({c[1] for c in coords})
    offs = sorted({c[2] for c in coords})
    grid = CubeGrid(mats, tens, offs)  # raises GridError, e.g. without an ATM column
    expected = list(grid.points())
    if len(coords) != len(expected):
        raise GridError(f"{path}: {len(coords)} rows do not fill a {grid.shape} grid")
    for lineno, (got, want) in enumerate(zip(coords, expected), start=2):
        if got != want:
            raise GridError(f"{path}: row {lineno}: point {got} out of flatten order, expected {want}")
    return VolCube(grid, np.array(vals), np.array(mask))


def write_grid(grid: CubeGrid, path) -> None:
    Path(path).write_text(json.dumps(grid.to_dict(), indent=2) + "\n")


def read_grid(path) -> CubeGrid:
    return CubeGrid.from_dict(json.loads(Path(path).read_text()))


def stack_values(cubes: Sequence[VolCube]) -> np.ndarray:
    """(n_cubes, n_points) matrix of fully observed cube values."""
    if any(c.n_missing for c in cubes):
        raise ValueError("stack_values needs fully observed cubes")
    return np.stack([c.values for c in cubes]) if cubes else np.empty((0, 0))
