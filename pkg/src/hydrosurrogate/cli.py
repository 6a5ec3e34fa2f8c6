"""Command line front end: ``hydrosurrogate {prepare,generate,train,eval,validate,bench}``.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.
The output directory defaults to ``./hydro_out`` and can be overridden with the
``HYDROSURROGATE_OUT`` environment variable or ``--out``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import bench as bn
from . import dataset as ds
from . import features as ft
from . import model as md
from . import validation as vl
from .defaults import load_defaults, merge
from .geometry import LabelError, MeshError, save_depth_samples, write_descriptors
from .pipeline import InferencePipeline
from .sdf import SdfGrid, build_grid
from .vehicles import load_vehicle

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
OUT_ENV = "HYDROSURROGATE_OUT"


class ConfigError(ValueError):
    pass


def fingerprint(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()[:16]


def _config(args) -> dict:
    cfg = load_defaults()
    if getattr(args, "config", None):
        try:
            cfg = merge(cfg, json.loads(Path(args.config).read_text()))
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {args.config}: {e}") from e
    if args.seed is not None:
        cfg["seed"] = args.seed
    return cfg


def _out_dir(args) -> Path:
    out = Path(args.out or os.environ.get(OUT_ENV) or "hydro_out")
    out.mkdir(parents=True, exist_ok=True)
    return out


def _stamp(cfg: dict, command: str, **extra) -> dict:
    return {"command": command, "seed": cfg["seed"], "config_fingerprint": fingerprint(cfg),
            **extra}


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=float))


def _load_vehicles(names, cfg) -> dict:
    n = cfg["features"]["samples_per_patch"]
    return {v.spec.name: v for v in (load_vehicle(name, n, cfg["seed"]) for name in names)}


# -- commands ---------------------------------------------------------------------

def cmd_prepare(args) -> int:
    cfg = _config(args)
    veh = load_vehicle(args.vehicle, cfg["features"]["samples_per_patch"], cfg["seed"])
    out = _out_dir(args) / veh.spec.name
    out.mkdir(parents=True, exist_ok=True)
    mesh_hash = veh.mesh.content_hash()
    margin = cfg["sdf"]["margin"]
    stamp = _stamp(cfg, "prepare", mesh_hash=mesh_hash, margin=margin,
                   samples_per_patch=cfg["features"]["samples_per_patch"])
    grid_path, stamp_path = out / "sdf.grid", out / "prepare.json"
    if grid_path.exists() and not args.force:
        old = SdfGrid.load(grid_path)
        if old.mesh_hash != mesh_hash:
            print(f"refusing: {grid_path} was built from mesh {old.mesh_hash[:12]}, current mesh "
                  f"is {mesh_hash[:12]} (stale grid); rerun with --force", file=sys.stderr)
            return EXIT_DATA
        if stamp_path.exists() and json.loads(stamp_path.read_text()) == stamp:
            print(f"{out}: up to date")
            return EXIT_OK
    grid = build_grid(veh.mesh, margin)
    grid.save(grid_path)
    write_descriptors(out / "patches.json", veh.patches, vehicle=veh.spec.name, **stamp)
    save_depth_samples(out / "depth_samples.npz", veh.patches)
    _write_json(stamp_path, stamp)
    print(f"{out}: grid {grid.dims} spacing {grid.spacing:.5f} m, {len(veh.patches)} patches")
    return EXIT_OK


def cmd_generate(args) -> int:
    cfg = _config(args)
    camp = cfg["campaign"]
    vehicles = _load_vehicles(args.vehicle, cfg)
    specs = {n: v.spec for n, v in vehicles.items()}
    out = _out_dir(args)
    n_cases = args.n_cases or camp["n_cases"]
    samples = []
    for i, (name, veh) in enumerate(vehicles.items()):
        ranges = camp["ranges"].get(name)
        if ranges is None:
            raise ConfigError(f"no parameter ranges configured for vehicle {name}")
        for k, (lo, hi) in ranges.items():
            if lo > hi:
                raise ConfigError(f"{name}: range for {k} has min {lo} > max {hi}")
        records = ds.generate_campaign(veh, ranges, n_cases, cfg["seed"] + i,
                                       camp["dt"].get(name), camp["t_end"], camp["noise"],
                                       jobs=args.jobs)
        case_dir = out / "cases" / name
        case_dir.mkdir(parents=True, exist_ok=True)
        for r in records:
            ds.write_case(case_dir / f"{r.case_id}.csv", r)
        samples += ds.records_to_samples(records, veh, camp["t_cut"], camp["n_sections"])
    samples = ds.augment(samples, specs)
    train, val = ds.split_dataset(samples, cfg["train"]["split_fraction"], cfg["seed"])
    stats = ds.fit_norm_stats(train, specs)
    manifest = _stamp(cfg, "generate", vehicles=list(args.vehicle), n_cases=n_cases,
                      n_samples=len(samples), n_train=len(train), n_val=len(val), config=cfg)
    ds.save_bundle(out / "dataset", train, val, stats, manifest)
    print(f"{out / 'dataset'}: {len(samples)} samples ({len(train)} train / {len(val)} val)")
    return EXIT_OK


def _bundle(path):
    train, val, stats, manifest = ds.load_bundle(path)
    cfg = manifest["config"]
    vehicles = _load_vehicles(manifest["vehicles"], cfg)
    return train, val, stats, manifest, vehicles


def cmd_train(args) -> int:
    cfg = _config(args)
    train, val, stats, manifest, vehicles = _bundle(args.dataset)
    specs = {n: v.spec for n, v in vehicles.items()}
    if args.variant == "dims_stripped":
        stats = ds.fit_norm_stats(train, specs, md.STRIPPED_FEATURES)
    tcfg = md.TrainConfig.from_defaults(**{k: v for k, v in cfg["train"].items()
                                           if k in md.TrainConfig.__dataclass_fields__},
                                        seed=cfg["seed"])
    model = md.ablation_variants(tcfg)[args.variant](stats)
    T = ds.build_tensor_sets(train, vehicles, stats)
    V = ds.build_tensor_sets(val, vehicles, stats)
    out = _out_dir(args)
    epochs = args.epochs if args.epochs is not None else tcfg.epochs

    def progress(rec):
        if not args.quiet:
            print(f"epoch {rec['epoch']:4d} lr {rec['lr']:.2e} train {rec['train_loss']:.5g} "
                  f"val {rec['val_loss']:.5g} mae_net {rec['val_mae_net']:.5g}", flush=True)

    res = md.train(model, T, V, tcfg, epochs, out / "train_log.csv", progress)
    md.save_weights(res.model, out / "model.hsw")
    _write_json(out / "train.json", _stamp(cfg, "train", dataset=str(args.dataset),
                                           variant=args.variant, epochs=epochs,
                                           best_epoch=res.best_epoch,
                                           train_fingerprint=tcfg.fingerprint()))
    print(f"{out / 'model.hsw'}: best epoch {res.best_epoch}")
    return EXIT_OK


def cmd_eval(args) -> int:
    cfg = _config(args)
    _, val, _, _, vehicles = _bundle(args.dataset)
    model = md.load_weights(args.model)
    sets = ds.build_tensor_sets(val, vehicles, model.stats)
    types = {n: [p.semantic_type for p in v.patches] for n, v in vehicles.items()}
    report = md.evaluate_metrics(model, sets, types)
    out = _out_dir(args)
    _write_json(out / "metrics.json", {**_stamp(cfg, "eval", model=str(args.model)),
                                       "metrics": report})
    for name, e in report.items():
        print(f"{name}: n={e['n']}")
        for comp, m in e["net"].items():
            print(f"  {comp}  MAE {m['mae']:.3f} N  RMSE {m['rmse']:.3f} N  "
                  f"sMAPE {m['smape']:.2f} %")
    return EXIT_OK


def cmd_validate(args) -> int:
    cfg = _config(args)
    veh = load_vehicle(args.vehicle, cfg["features"]["samples_per_patch"], cfg["seed"])
    if args.oracle:
        predictor = vl.OraclePredictor(veh)
    elif args.model:
        predictor = vl.SurrogatePredictor(InferencePipeline(
            md.load_weights(args.model, ft.GLOBAL_FEATURES), veh))
    else:
        raise ConfigError("validate needs --model or --oracle")
    if args.traces:
        traces = [vl.read_trace(p) for p in sorted(Path(args.traces).glob("*.csv"))]
    else:
        traces = vl.synth_campaign(-veh.spec.z_0, cfg["validation"]["depths_in"],
                                   seed=cfg["seed"])
    report = vl.run_validation_suite(predictor, traces, veh.spec, args.rho, cfg["validation"])
    out = _out_dir(args)
    vl.write_report(out / "validation.json", {**_stamp(cfg, "validate"), **report})
    for f in report["drag"]["fits"]:
        print(f"drag  depth {f['depth']:.4f} m  C_eff {f['c_eff']:.2f}  R2 {f['r2']:.4f}  "
              f"C_D {f.get('cd', float('nan')):.3f}")
    for f in report["buoyancy"]["fits"]:
        print(f"vert  depth {f['depth']:.4f} m  F0 {f['f0']:.1f} N  C_L {f['c_lift']:.2f}")
    print(f"F0-depth R2 {report['buoyancy']['f0_vs_depth_r2']}")
    print(f"drag test {'PASS' if report['drag']['pass'] else 'FAIL'}, "
          f"buoyancy test {'PASS' if report['buoyancy']['pass'] else 'FAIL'}")
    return EXIT_OK


def cmd_bench(args) -> int:
    cfg = _config(args)
    bcfg = cfg["bench"]
    veh = load_vehicle(args.vehicle, cfg["features"]["samples_per_patch"], cfg["seed"])
    model = md.load_weights(args.model)
    out = _out_dir(args)
    state = {"v": np.array([args.speed, 0.0, 0.0]), "depth": args.depth, "rho": args.rho}
    rows = {}
    for dtype in (np.float64, np.float32):
        pipe = InferencePipeline(model, veh, dtype)
        stats, _ = bn.bench_single(pipe, [state], args.n_iters or bcfg["n_iters"], bcfg["warmup"])
        name = f"latency_{stats.precision}"
        bn.write_stats(out / f"{name}.json", stats, _stamp(cfg, "bench"))
        rows[stats.precision] = stats
    for prec, s in rows.items():
        print(f"{prec}: n {s.n}  mean {s.mean:.3f}  std {s.std:.3f}  median {s.median:.3f}  "
              f"p95 {s.p95:.3f}  p99 {s.p99:.3f} ms")
    if args.sustained:
        res = bn.bench_sustained(InferencePipeline(model, veh), state, args.sustained, args.mode)
        _write_json(out / "sustained.json", {**_stamp(cfg, "bench"), **res.summary()})
        print(f"sustained {res.duration:.1f} s: {res.rate_hz:.0f} Hz, "
              f"p99 {res.stats.p99:.3f} ms")
    return EXIT_OK


# -- parser ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hydrosurrogate", description=__doc__,
                                formatter_class=argparse.RawDescriptionHelpFormatter)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help=f"output directory (env {OUT_ENV})")
    common.add_argument("--seed", type=int, help="random seed (default from defaults file)")
    common.add_argument("--config", help="JSON file overriding the packaged defaults")
    common.add_argument("--jobs", type=int, default=1, help="worker threads for parallel stages")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("prepare", parents=[common], help="SDF grid, patch descriptors, depth samples")
    s.add_argument("--vehicle", required=True, help="toy vehicle name or vehicle directory")
    s.add_argument("--force", action="store_true", help="rebuild even if the grid is stale")
    s.set_defaults(func=cmd_prepare)

    s = sub.add_parser("generate", parents=[common], help="synthetic campaign and dataset bundle")
    s.add_argument("--vehicle", action="append", required=True)
    s.add_argument("--n-cases", type=int)
    s.set_defaults(func=cmd_generate)

    s = sub.add_parser("train", parents=[common], help="train a surrogate on a dataset bundle")
    s.add_argument("--dataset", required=True)
    s.add_argument("--epochs", type=int)
    s.add_argument("--variant", choices=("full", "dims_stripped"), default="full")
    s.add_argument("--quiet", action="store_true")
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", parents=[common], help="net-force metrics on the held-out split")
    s.add_argument("--model", required=True)
    s.add_argument("--dataset", required=True)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("validate", parents=[common], help="drag and buoyancy scaling tests")
    s.add_argument("--vehicle", required=True)
    s.add_argument("--model")
    s.add_argument("--oracle", action="store_true", help="drive the suite with the oracle")
    s.add_argument("--traces", help="directory of trace CSV files (default: synthetic trials)")
    s.add_argument("--rho", type=float, default=1000.0)
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("bench", parents=[common], help="inference latency")
    s.add_argument("--model", required=True)
    s.add_argument("--vehicle", required=True)
    s.add_argument("--n-iters", type=int)
    s.add_argument("--speed", type=float, default=0.6)
    s.add_argument("--depth", type=float, default=0.12)
    s.add_argument("--rho", type=float, default=1000.0)
    s.add_argument("--sustained", type=float, default=0.0, help="sustained-loop seconds")
    s.add_argument("--mode", choices=("constant", "time-varying"), default="constant")
    s.set_defaults(func=cmd_bench)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if getattr(args, "jobs", 1) < 1:
        print("error: --jobs must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    try:
        code = args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ds.DataError, md.SchemaError, md.ChecksumError, MeshError, LabelError,
            vl.GapError, FileNotFoundError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA
    except (md.NumericError, FloatingPointError) as e:
        print(f"numeric error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return code


if __name__ == "__main__":
    sys.exit(main())
