"""Pseudo-Gibbs imputation of masked cube entries over a trained VAE.

One step alternates

    z        ~ q(z | x_obs, x_miss)     (encoder, reparameterized draw)
    x_miss'  ~ p(x_miss | z)            (decoder, diagonal Gaussian)

with observed coordinates held fixed. The imputation is the average of
x_miss over the steps after burn-in. Note that a confidence interval built
from the OBM standard error covers E_q[x_miss | x_obs], whatever this value
will be, and not the true masked value.

All sampling happens in the model's standardized space; the start value
(zeros) is applied there as well.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .cube import VolCube
from .vae import VaeModel, decode, encode


class ImputationError(ValueError):
    pass


@dataclass(frozen=True)
class GibbsConfig:
    length: int = 2000
    burn_in: int = 100
    seed: int = 0
    obm_batch: int = None  # default floor(sqrt(n))
    start: str = "zeros"  # or "mean": decoder mean at z = 0
    store_cap: int = 5_000_000  # stored values (steps x coords) kept for diagnostics

    def __post_init__(self):
        if not 0 <= self.burn_in < self.length:
            raise ValueError("need 0 <= burn_in < length")
        if self.start not in ("zeros", "mean"):
            raise ValueError(f"unknown start rule {self.start!r}")


@dataclass
class GibbsChain:
    """Samples of the missing coordinates (bp), one row per step 1..T."""

    missing_index: np.ndarray
    burn_in: int
    samples: np.ndarray = None  # (n_stored, n_missing) or None once over the cap
    mean: np.ndarray = None  # post-burn-in running mean (bp)
    n_kept: int = 0
    obm_se: np.ndarray = None
    latent_means: np.ndarray = None  # (T, d) encoder means along the chain, if recorded

    @property
    def length(self):
        return 0 if self.samples is None else self.samples.shape[0]

    def post_burn_in(self):
        if self.samples is None:
            return None
        return self.samples[self.burn_in:]


def _start_values(model, n_missing_shape, config):
    if config.start == "zeros":
        return np.zeros(n_missing_shape)
    mu, _ = decode(model, np.zeros(model.latent_dim))
    return np.broadcast_to(mu, n_missing_shape).copy()


def gibbs_step(model: VaeModel, u, missing, rng):
    """One pseudo-Gibbs sweep in standardized space.

    ``u`` is (n, k) with current values in the missing slots, ``missing`` a
    boolean (n, k) array. Returns ``(z, u_next)``; observed entries of
    ``u_next`` are exactly those of ``u``.
    """
    mu_z, var_z = encode(model, u)
    z = mu_z + np.sqrt(var_z) * rng.standard_normal(mu_z.shape)
    mu_x, var_x = decode(model, z)
    draw = mu_x + np.sqrt(var_x) * rng.standard_normal(mu_x.shape)
    return z, np.where(missing, draw, u)


def run_chains(model: VaeModel, values, observed, config: GibbsConfig, start=None,
               store=True, record_latent=False, rng=None):
    """Batched chains, one per row of ``values`` (bp, NaN allowed where missing).

    Returns ``(mean_bp, samples, latent)``: the post-burn-in average of every
    coordinate (observed ones echo their input), the stacked per-step
    states in bp (T, n, k) if ``store``, and per-step encoder means.
    ``start`` (bp) overrides the start rule for the missing slots.
    """
    X = np.atleast_2d(np.asarray(values, dtype=float))
    obs = np.atleast_2d(np.broadcast_to(np.asarray(observed, dtype=bool), X.shape))
    missing = ~obs
    if rng is None:
        rng = np.random.default_rng([config.seed, 31])
    u = np.where(obs, model.standardize(np.where(obs, X, 0.0)), 0.0)
    if start is not None:
        u = np.where(missing, model.standardize(np.atleast_2d(start)), u)
    elif config.start == "mean":
        u = np.where(missing, _start_values(model, u.shape, config), u)
    u_obs = u.copy()
    acc = np.zeros_like(u)
    samples = np.empty((config.length,) + u.shape) if store else None
    latent = np.empty((config.length, u.shape[0], model.latent_dim)) if record_latent else None
    for t in range(config.length):
        if record_latent:
            latent[t] = encode(model, u)[0]
        _, u = gibbs_step(model, u, missing, rng)
        if t >= config.burn_in:
            acc += u
        if store:
            samples[t] = model.destandardize(u)
    mean = model.destandardize(acc / (config.length - config.burn_in))
    mean = np.where(obs, X, mean)
    assert np.array_equal(np.where(obs, u, 0.0), np.where(obs, u_obs, 0.0))
    if store:
        samples[:, obs] = X[obs]
    return mean, samples, latent


def impute(model: VaeModel, cube: VolCube, config: GibbsConfig = GibbsConfig(),
           record_latent=False, start=None):
    """Fill the missing entries of ``cube`` with the post-burn-in chain mean.

    Observed entries are returned bit-identical. A fully observed cube is
    passed through with an empty chain.
    """
    if cube.values.shape[0] != model.data_dim:
        raise ImputationError(f"cube has {cube.values.shape[0]} points, model expects {model.data_dim}")
    miss_idx = np.flatnonzero(~cube.mask)
    if miss_idx.size == 0:
        return cube, GibbsChain(miss_idx, config.burn_in, np.empty((0, 0)), np.empty(0), 0, np.empty(0))
    if miss_idx.size == cube.mask.size:
        raise ImputationError("cube has no observed values")
    store = config.length * miss_idx.size <= config.store_cap
    mean, samples, latent = run_chains(model, cube.as_array().reshape(-1), cube.mask, config, start, store,
                                       record_latent)
    filled = cube.values.copy()
    filled[miss_idx] = mean[0, miss_idx]
    chain = GibbsChain(miss_idx, config.burn_in, mean=mean[0, miss_idx],
                       n_kept=config.length - config.burn_in)
    if store:
        chain.samples = samples[:, 0, miss_idx]
        kept = chain.samples[config.burn_in:]
        if kept.shape[0] >= 2 * _batch_len(kept.shape[0], config.obm_batch):
            chain.obm_se = obm_standard_error(kept, config.obm_batch)
    if record_latent:
        chain.latent_means = latent[:, 0]
    return VolCube(cube.grid, filled), chain


def impute_many(model: VaeModel, cubes, config: GibbsConfig = GibbsConfig(), starts=None):
    """Batched :func:`impute` without chain storage; returns filled cubes."""
    if not cubes:
        return []
    values = np.stack([c.as_array().reshape(-1) for c in cubes])
    mask = np.stack([c.mask for c in cubes])
    if np.any(mask.sum(axis=1) == 0):
        raise ImputationError("a cube has no observed values")
    mean, _, _ = run_chains(model, values, mask, config, starts, store=False)
    out = []
    for c, row in zip(cubes, mean):
        v = c.values.copy()
        v[~c.mask] = row[~c.mask]
        out.append(VolCube(c.grid, v))
    return out


# ----------------------------------------------------------------------- OBM

def _batch_len(n, b):
    return int(math.floor(math.sqrt(n))) if b is None else int(b)


def obm_standard_error(chain, b=None):
    """Overlapping-batch-means standard error of the chain mean.

    ``chain`` is (n,) or (n, p); the estimate is per column.
    """
    x = np.asarray(chain, dtype=float)
    n = x.shape[0]
    b = _batch_len(n, b)
    if b < 1 or n < 2 * b:
        raise ValueError(f"chain of length {n} too short for batch length {b}")
    c = np.concatenate([np.zeros((1,) + x.shape[1:]), np.cumsum(x, axis=0)])
    batch_means = (c[b:] - c[:-b]) / b  # n - b + 1 overlapping batches
    dev = batch_means - x.mean(axis=0)
    var = n * b / ((n - b) * (n - b + 1)) * np.sum(dev * dev, axis=0)
    return np.sqrt(var / n)


# ---------------------------------------------------------------- diagnostics

@dataclass
class LatentTrace:
    components: np.ndarray  # (r, d)
    center: np.ndarray
    explained_variance: np.ndarray
    reference: np.ndarray  # (n_ref, r)
    path: np.ndarray  # (T, r)
    target: np.ndarray = None  # (r,) encoding of the true cube if given


def pca_fit(points, n_components=2):
    P = np.asarray(points, dtype=float)
    if P.shape[0] < 2:
        raise ValueError("need at least 2 reference encodings")
    center = P.mean(axis=0)
    _, s, vt = np.linalg.svd(P - center, full_matrices=False)
    var = s ** 2 / (P.shape[0] - 1)
    rank = int(np.sum(var > 1e-12 * max(var.max(), 1e-300)))
    r = min(n_components, vt.shape[0])
    if rank < r:
        warnings.warn(f"reference encodings have rank {rank} < {r}; reduced-rank projection")
        vt = vt.copy()
        vt[rank:r] = 0.0
    return vt[:r], center, var[:r]


def latent_trace(model: VaeModel, chain: GibbsChain, cube: VolCube, reference,
                 truth: VolCube = None, n_components=2) -> LatentTrace:
    """PCA of reference encoder means; projects the chain's running-mean cubes.

    ``reference`` is an (n, k) array of raw cubes (bp).
    """
    if chain.samples is None or chain.samples.shape[0] == 0:
        raise ValueError("chain has no stored samples")
    ref_mu, _ = encode(model, model.standardize(reference))
    comps, center, var = pca_fit(ref_mu, n_components)
    steps = np.arange(1, chain.samples.shape[0] + 1)[:, None]
    running = np.cumsum(chain.samples, axis=0) / steps
    full = np.broadcast_to(np.where(cube.mask, cube.values, 0.0), (running.shape[0], cube.values.size)).copy()
    full[:, chain.missing_index] = running
    path_mu, _ = encode(model, model.standardize(full))
    proj = lambda m: (m - center) @ comps.T
    target = None
    if truth is not None:
        target = proj(encode(model, model.standardize(truth.values))[0])
    return LatentTrace(comps, center, var, proj(ref_mu), proj(path_mu), target)


def write_latent_trace(trace: LatentTrace, path):
    r = trace.components.shape[0]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["kind", "index"] + [f"pc{i + 1}" for i in range(r)])
        for i, row in enumerate(trace.reference):
            w.writerow(["reference", i] + [repr(float(v)) for v in row])
        for i, row in enumerate(trace.path):
            w.writerow(["path", i + 1] + [repr(float(v)) for v in row])
        if trace.target is not None:
            w.writerow(["target", 0] + [repr(float(v)) for v in trace.target])


def write_chain_csv(chain: GibbsChain, path, cap=100_000):
    """Long format ``t,coord,value``, truncated after ``cap`` rows."""
    rows = 0
    with open(path, "w") as fh:
        fh.write("t,coord,value\n")
        if chain.samples is None:
            return rows
        for t, row in enumerate(chain.samples, start=1):
            for coord, v in zip(chain.missing_index, row):
                if rows >= cap:
                    return rows
                fh.write(f"{t},{int(coord)},{float(v)!r}\n")
                rows += 1
    return rows


def obm_report(chain: GibbsChain, config: GibbsConfig) -> dict:
    se = chain.obm_se
    return {
        "n_missing": int(chain.missing_index.size),
        "length": config.length,
        "burn_in": config.burn_in,
        "seed": config.seed,
        "obm_batch": config.obm_batch,
        "coords": [int(i) for i in chain.missing_index],
        "mean_bp": [float(v) for v in (chain.mean if chain.mean is not None else [])],
        "obm_se_bp": None if se is None else [float(v) for v in se],
        "max_se_bp": None if se is None or se.size == 0 else float(se.max()),
        "note": "intervals cover E_q[x_miss | x_obs], not the true masked value",
    }


def write_obm_report(chain, config, path):
    with open(path, "w") as fh:
        json.dump(obm_report(chain, config), fh, indent=2, sort_keys=True)
        fh.write("\n")
