"""Named configuration profiles.

``desk`` is small enough for CI (8x6x7 grid, 500 training cubes, 2000
epochs, chains of 500, 200 hedge paths). ``full`` mirrors the full-scale
setup and is shipped but not exercised by the test suite.
"""
import copy
import hashlib
import json

DESK = {
    "grid": "desk",
    "seed": 0,
    "synth": {"n_cubes": 500, "bootstrap_days": 120, "bootstrap_seed": 0,
              "forward_base": 0.01, "forward_sd": 0.002},
    "train": {"epochs": 2000, "learning_rate": 1e-3, "latent_dim": 10, "head_std": 1e-3,
              "batch_size": 256, "checkpoint_every": 100},
    "gibbs": {"length": 500, "burn_in": 100, "mask_rate": 0.796},
    "hedge": {"n_paths": 200, "tiers": ["1w", "1d", "1h"], "steps_per_day": 24,
              "strategies": ["theoretical", "imputation"], "gibbs_length": 100,
              "gibbs_burn_in": 20, "rate": 0.01, "path_chunk": 500},
}

FULL = {
    "grid": "default",
    "seed": 0,
    "synth": {"n_cubes": 10000, "bootstrap_days": 120, "bootstrap_seed": 0,
              "forward_base": 0.01, "forward_sd": 0.002},
    "train": {"epochs": 50000, "learning_rate": 1e-6, "latent_dim": 10, "head_std": 1e-3,
              "batch_size": 256, "checkpoint_every": 1000},
    "gibbs": {"length": 2000, "burn_in": 100, "mask_rate": 0.796},
    "hedge": {"n_paths": 10000, "tiers": ["1w", "1d", "1h", "1m"], "steps_per_day": 1440,
              "strategies": ["theoretical", "imputation"], "gibbs_length": 100,
              "gibbs_burn_in": 20, "rate": 0.01, "path_chunk": 100},
}

PROFILES = {"desk": DESK, "full": FULL}


def merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_profile(name="desk", override=None) -> dict:
    if name not in PROFILES:
        raise KeyError(f"unknown profile {name!r}; choose from {sorted(PROFILES)}")
    return merge(PROFILES[name], override or {})


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
