"""Command-line front end: synth | train | impute | calibrate | hedge | diagnose.

Every command writes its artifacts plus ``run_manifest.json`` (command,
version, seed, config hash, input digests) into ``--out``. Outputs carry no
timestamps, so re-running with the same seed reproduces them byte for byte.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import traceback
from pathlib import Path

import numpy as np

from . import __version__
from .calibration import calibrate_cube, fit_report_json, read_param_matrix, write_param_matrix
from .cube import CubeGrid, VolCube, random_mask, read_cube, read_grid, stack_values, write_cube
from .profiles import config_hash, load_profile, merge


class CliError(Exception):
    def __init__(self, module, operation, cause):
        super().__init__(cause)
        self.module, self.operation, self.cause = module, operation, cause


def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dump_json(obj, path):
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _grid(cfg) -> CubeGrid:
    g = cfg["grid"]
    if g == "desk":
        return CubeGrid.desk()
    if g == "default":
        return CubeGrid.default()
    return read_grid(g)


def _manifest(out, command, cfg, seed, inputs=(), outputs=()):
    man = {"command": command, "version": __version__, "seed": seed,
           "config_sha256": config_hash(cfg),
           "inputs": {str(p): _sha256(p) for p in inputs if Path(p).is_file()},
           "outputs": sorted(str(o) for o in outputs)}
    _dump_json(man, Path(out) / "run_manifest.json")


def _require(path, what):
    if path is None or not Path(path).exists():
        raise CliError("cli", what, f"input path {path!r} does not exist")
    return path


def _synth_model(cfg, grid):
    from .synthgen import ForwardModel, SynthModel
    s = cfg["synth"]
    model = SynthModel.bootstrap(grid, s["bootstrap_seed"], s["bootstrap_days"])
    model.forwards = ForwardModel.flat(grid.shape[:2], s["forward_base"], s["forward_sd"])
    return model


def _train_config(cfg, seed):
    from .vae import TrainConfig
    t = dict(cfg["train"])
    t.pop("latent_dim", None)
    return TrainConfig(seed=seed, **t)


def _load_forwards(path, grid, default):
    F = np.full(grid.shape[:2], float(default))
    if path is None:
        return F
    lines = Path(path).read_text().splitlines()
    if not lines or lines[0].strip() != "maturity,tenor,forward":
        raise CliError("cli", "load_forwards", f"{path}: expected header maturity,tenor,forward")
    for n, line in enumerate(lines[1:], start=2):
        try:
            T, tau, f = (float(x) for x in line.split(","))
            F[grid.maturities.index(T), grid.tenors.index(tau)] = f
        except ValueError as exc:
            raise CliError("cli", "load_forwards", f"{path}: row {n}: {exc}") from None
    return F


# ------------------------------------------------------------------ commands

def cmd_synth(args, cfg):
    from .synthgen import generate_training_set, write_training_set
    grid = _grid(cfg)
    model = _synth_model(cfg, grid)
    n = cfg["synth"]["n_cubes"] if args.n is None else args.n
    cubes, fwds = generate_training_set(n, model, args.seed)
    write_training_set(args.out, cubes, fwds, model, args.seed)
    _manifest(args.out, "synth", cfg, args.seed, outputs=["manifest.json", "forwards.csv", "synth_model.json"])
    print(f"synth: wrote {n} cubes on a {grid.shape} grid to {args.out}")


def cmd_train(args, cfg):
    from .synthgen import read_training_set
    from .vae import active_units, latent_activity, save_model, train, write_loss_history
    data_dir = _require(args.data, "train")
    cubes, _, _ = read_training_set(data_dir)
    X = stack_values(cubes)
    tc = _train_config(cfg, args.seed)
    model, hist = train(X, tc, latent_dim=cfg["train"]["latent_dim"])
    model.config["grid"] = cubes[0].grid.to_dict()
    save_model(model, Path(args.out) / "model.vae")
    write_loss_history(hist, Path(args.out) / "loss.csv")
    act = latent_activity(model, X)
    _manifest(args.out, "train", cfg, args.seed, [Path(data_dir) / "manifest.json"],
              ["model.vae", "loss.csv"])
    last = hist[-1] if len(hist) else [float("nan")] * 3
    print(f"train: {tc.epochs} epochs, final elbo {last[0]:.3f} (recon {last[1]:.3f}, kl {last[2]:.3f}); "
          f"{active_units(act)}/{model.latent_dim} active latent units")


def cmd_impute(args, cfg):
    from .gibbs import GibbsConfig, impute, write_chain_csv, write_obm_report
    from .vae import load_model
    model = load_model(_require(args.model, "impute"))
    cube = read_cube(_require(args.cube, "impute"))
    truth = None
    if args.mask_rate is not None:
        truth = cube
        rng = np.random.default_rng([args.seed, 404])
        cube = cube.with_mask(random_mask(cube.grid, args.mask_rate, rng))
        write_cube(cube, Path(args.out) / "masked_cube.csv")
    g = cfg["gibbs"]
    gc = GibbsConfig(g["length"], g["burn_in"], args.seed)
    filled, chain = impute(model, cube, gc)
    write_cube(filled, Path(args.out) / "imputed_cube.csv")
    write_chain_csv(chain, Path(args.out) / "chain.csv")
    write_obm_report(chain, gc, Path(args.out) / "obm_report.json")
    outputs = ["imputed_cube.csv", "chain.csv", "obm_report.json"]
    _manifest(args.out, "impute", cfg, args.seed, [args.model, args.cube], outputs)
    msg = f"impute: {cube.n_missing} missing of {cube.values.size}"
    if cube.n_missing == 0:
        msg += " (passthrough)"
    elif truth is not None:
        miss = ~cube.mask
        mad = float(np.mean(np.abs(filled.values[miss] - truth.values[miss])))
        msg += f"; MAD vs input {mad:.4f} bp"
    if chain.obm_se is not None and chain.obm_se.size:
        msg += f"; max OBM SE {float(chain.obm_se.max()):.4f} bp"
    print(msg)


def cmd_calibrate(args, cfg):
    cube = read_cube(_require(args.cube, "calibrate"))
    F = _load_forwards(args.forwards, cube.grid, cfg["synth"]["forward_base"])
    matrix, report = calibrate_cube(cube, F, beta=0.5, atm_weight=args.atm_weight)
    write_param_matrix(matrix, Path(args.out) / "params.csv")
    _dump_json(fit_report_json(report), Path(args.out) / "fit_report.json")
    inputs = [args.cube] + ([args.forwards] if args.forwards else [])
    _manifest(args.out, "calibrate", cfg, args.seed, inputs, ["params.csv", "fit_report.json"])
    maes = [r.mae_bp for r in report.values()]
    print(f"calibrate: {len(report)} slices, mean MAE {np.mean(maes):.4f} bp, "
          f"{len(matrix.flags)} flagged")


def cmd_hedge(args, cfg):
    from .hedging import SimConfig, run_hedge, write_hedge_report, write_ledger
    from .synthgen import reference_matrix
    grid = _grid(cfg)
    h = dict(cfg["hedge"])
    strategies = args.strategies.split(",") if args.strategies else h.pop("strategies")
    h.pop("strategies", None)
    if args.paths is not None:
        h["n_paths"] = args.paths
    h["tiers"] = tuple(h["tiers"])
    sim = SimConfig(seed=args.seed, **h)
    matrix = read_param_matrix(args.matrix) if args.matrix else reference_matrix(grid.maturities, grid.tenors)
    model = None
    inputs = [args.matrix] if args.matrix else []
    if "imputation" in strategies:
        from .vae import load_model
        model = load_model(_require(args.model, "hedge"))
        inputs.append(args.model)
    report, ledgers = run_hedge(strategies, matrix, grid, sim, model, ledger_paths=args.ledger)
    write_hedge_report(report, Path(args.out) / "hedge_report.json")
    outputs = ["hedge_report.json"]
    if args.ledger:
        write_ledger(ledgers, Path(args.out) / "ledger.csv")
        outputs.append("ledger.csv")
    _manifest(args.out, "hedge", cfg, args.seed, inputs, outputs)
    for s, tiers in report["results"].items():
        row = ", ".join(f"{t}: {v['rmse_pct']:.4e}% (R2 {v['r2']:.4f})" for t, v in tiers.items())
        print(f"hedge {s}: {row}")


def cmd_diagnose(args, cfg):
    from .gibbs import GibbsConfig, impute, latent_trace, write_latent_trace
    from .synthgen import read_training_set
    from .vae import latent_activity, load_model
    model = load_model(_require(args.model, "diagnose"))
    cubes, _, _ = read_training_set(_require(args.data, "diagnose"))
    X = stack_values(cubes)
    act = latent_activity(model, X)
    with open(Path(args.out) / "latent_activity.csv", "w") as fh:
        fh.write("unit,activity,active\n")
        for u, a in enumerate(act):
            fh.write(f"{u},{float(a)!r},{int(a >= args.threshold)}\n")
    truth = cubes[0]
    rng = np.random.default_rng([args.seed, 505])
    masked = truth.with_mask(random_mask(truth.grid, cfg["gibbs"]["mask_rate"], rng))
    g = cfg["gibbs"]
    _, chain = impute(model, masked, GibbsConfig(g["length"], g["burn_in"], args.seed))
    trace = latent_trace(model, chain, masked, X, truth)
    write_latent_trace(trace, Path(args.out) / "latent_trace.csv")
    _manifest(args.out, "diagnose", cfg, args.seed, [args.model, Path(args.data) / "manifest.json"],
              ["latent_activity.csv", "latent_trace.csv"])
    start = np.linalg.norm(trace.path[0] - trace.target)
    end = np.linalg.norm(trace.path[-1] - trace.target)
    print(f"diagnose: {int(np.sum(act >= args.threshold))}/{act.size} active units "
          f"(threshold {args.threshold}); latent distance to truth {start:.3f} -> {end:.3f}")


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "impute": cmd_impute,
            "calibrate": cmd_calibrate, "hedge": cmd_hedge, "diagnose": cmd_diagnose}


def build_parser():
    p = argparse.ArgumentParser(prog="volgibbs", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file; may set 'profile' and override any section")
    common.add_argument("--profile", default=None, choices=["desk", "full"])
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--out", required=True, help="output directory")
    common.add_argument("--threads", type=int, default=None, help="cap BLAS/OpenMP worker threads")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", parents=[common], help="generate a synthetic training set")
    s.add_argument("--n", type=int, default=None, help="number of cubes")
    s = sub.add_parser("train", parents=[common], help="train the VAE")
    s.add_argument("--data", required=True, help="training-set directory")
    s = sub.add_parser("impute", parents=[common], help="impute missing cube entries")
    s.add_argument("--model", required=True)
    s.add_argument("--cube", required=True)
    s.add_argument("--mask-rate", type=float, default=None,
                   help="mask this fraction of the input cube first and report MAD against it")
    s = sub.add_parser("calibrate", parents=[common], help="fit SABR per slice")
    s.add_argument("--cube", required=True)
    s.add_argument("--forwards", default=None, help="CSV maturity,tenor,forward")
    s.add_argument("--atm-weight", type=float, default=1.0)
    s = sub.add_parser("hedge", parents=[common], help="delta-hedging study")
    s.add_argument("--model", default=None)
    s.add_argument("--matrix", default=None, help="parameter CSV; default synthetic reference matrix")
    s.add_argument("--strategies", default=None, help="comma list of theoretical,imputation,interpolation")
    s.add_argument("--paths", type=int, default=None)
    s.add_argument("--ledger", type=int, default=0, help="write per-rebalance ledger for this many paths")
    s = sub.add_parser("diagnose", parents=[common], help="latent activity and PCA trace")
    s.add_argument("--model", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--threshold", type=float, default=0.1)
    return p


def resolve_config(args) -> dict:
    override = {}
    if args.config:
        override = json.loads(Path(_require(args.config, "config")).read_text())
    profile = args.profile or override.pop("profile", "desk")
    override.pop("profile", None)
    cfg = load_profile(profile, override)
    if args.seed is None:
        args.seed = int(cfg["seed"])
    cfg = merge(cfg, {"seed": args.seed})
    return cfg


def _error_origin(exc):
    tb = traceback.extract_tb(exc.__traceback__)
    for frame in reversed(tb):
        mod = Path(frame.filename).stem
        if "volgibbs" in frame.filename:
            return mod, frame.name
    return "cli", "main"


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = resolve_config(args)
        os.makedirs(args.out, exist_ok=True)
        if args.threads:
            from threadpoolctl import threadpool_limits
            with threadpool_limits(limits=args.threads):
                COMMANDS[args.command](args, cfg)
        else:
            COMMANDS[args.command](args, cfg)
    except CliError as exc:
        err = {"module": exc.module, "operation": exc.operation, "cause": exc.cause}
        print(json.dumps({"error": err}), file=sys.stderr)
        return 2
    except (ValueError, ArithmeticError, RuntimeError, OSError, KeyError) as exc:
        module, op = _error_origin(exc)
        err = {"module": module, "operation": op, "cause": f"{type(exc).__name__}: {exc}"}
        print(json.dumps({"error": err}), file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
