"""Interpolation baseline for masked cubes.

Missing points are filled by piecewise-linear interpolation over a
Delaunay tessellation of the observed points in (maturity, tenor, offset)
index coordinates, i.e. the scattered-data analogue of trilinear
interpolation. Points outside the convex hull of the observed set take the
value of the nearest observed point.
"""
import numpy as np
from scipy.interpolate import LinearNDInterpolator, NearestNDInterpolator
from scipy.spatial import QhullError

from .cube import VolCube


def interpolate_cube(cube: VolCube) -> VolCube:
    if cube.mask.all():
        return cube
    obs = np.flatnonzero(cube.mask)
    if obs.size == 0:
        raise ValueError("cube has no observed values")
    m, t, s = cube.grid.shape
    coords = np.stack(np.unravel_index(np.arange(m * t * s), (m, t, s)), axis=1).astype(float)
    pts, vals = coords[obs], cube.values[obs]
    miss = np.flatnonzero(~cube.mask)
    near = NearestNDInterpolator(pts, vals)
    filled = near(coords[miss])
    if obs.size >= 4:
        try:
            lin = LinearNDInterpolator(pts, vals, rescale=False)
            est = lin(coords[miss])
            ok = np.isfinite(est)
            filled[ok] = est[ok]
        except QhullError:
            pass  # degenerate (e.g. coplanar) observations: nearest only
    out = cube.values.copy()
    out[miss] = filled
    return VolCube(cube.grid, out)
