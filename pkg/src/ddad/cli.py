"""Command-line entry point.

Subcommands: synth, train, score, eval, sweep, compare.  Every run writes
a manifest.json (merged config, seeds, sha256 of produced artifacts) next
to its outputs so any artifact can be reproduced from the manifest alone.
Flags override values from an optional key=value config file.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import sys
from pathlib import Path

import numpy as np

from . import evaluation
from .backbones import BackboneConfig, load_checkpoint, save_checkpoint
from .data import export_dataset, generate_synthetic, ingest_directory, ingest_training_pools
from .scoring import export_pgm, export_raw, image_score
from .errors import ConfigError, DdadError
from .evaluation import (
    ALL_SCORE_KINDS,
    DEFAULT_AR_GRID,
    evaluate_modules,
    format_comparison_table,
    method_comparison_report,
    run_ar_sweep,
    sweep_csv,
)
from .trainer import EnsembleModule, TrainConfig, train_dual_ensembles

DEFAULTS = {
    "backbone": "ae",
    "k": 3,
    "epochs": 250,
    "lr": 5e-4,
    "batch_size": 64,
    "seed": 0,
    "ar": 0.6,
    "n_normal": 256,
    "m_unlabeled": 256,
    "t_normal": 96,
    "t_abnormal": 96,
    "score": "rec,intra,inter",
    "bins": 50,
    "sigma_pooling": "variance",
}


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    cfg = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value")
        key, value = line.split("=", 1)
        cfg[key.strip().replace("-", "_")] = value.strip()
    return cfg


def _resolve(args, key: str, cast=str):
    """Flag value if given, else config-file value, else built-in default."""
    cli_value = getattr(args, key, None)
    if cli_value is not None:
        return cli_value
    if key in args._file_config:
        return cast(args._file_config[key])
    return DEFAULTS.get(key)


def _sha256(path: Path) -> str:
    h = hashlib.sha256()
    h.update(path.read_bytes())
    return h.hexdigest()


def _write_manifest(outdir: Path, command: str, config: dict, artifacts: list[Path]) -> None:
    manifest = {
        "command": command,
        "config": config,
        "artifacts": {p.name: _sha256(p) for p in sorted(artifacts)},
    }
    (outdir / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def _train_config(args) -> TrainConfig:
    return TrainConfig(
        epochs=int(_resolve(args, "epochs", int)),
        learning_rate=float(_resolve(args, "lr", float)),
        batch_size=int(_resolve(args, "batch_size", int)),
        k=int(_resolve(args, "k", int)),
        base_seed=int(_resolve(args, "seed", int)),
    )


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _synth_params(args, *, include_ar: bool = True) -> dict:
    params = {
        "n_normal": int(_resolve(args, "n_normal", int)),
        "m_unlabeled": int(_resolve(args, "m_unlabeled", int)),
        "t_normal": int(_resolve(args, "t_normal", int)),
        "t_abnormal": int(_resolve(args, "t_abnormal", int)),
        "seed": int(_resolve(args, "seed", int)),
    }
    if include_ar:
        params["ar"] = float(_resolve(args, "ar", float))
    return params


def cmd_synth(args) -> int:
    out = _out_dir(args)
    params = _synth_params(args)
    spec = generate_synthetic(**params)
    export_dataset(spec, out)
    artifacts = [p for p in out.rglob("*.pgm")]
    _write_manifest(out, "synth", params, artifacts)
    print(f"wrote {len(artifacts)} images to {out}")
    return 0


def cmd_train(args) -> int:
    out = _out_dir(args)
    normal, unlabeled = ingest_training_pools(args.data)
    tc = _train_config(args)
    kind = _resolve(args, "backbone")
    backbone = BackboneConfig(kind=kind)
    module_a, module_b, loss_rows = train_dual_ensembles(
        normal, unlabeled, backbone, tc)
    artifacts = []
    for module in (module_a, module_b):
        for i, net in enumerate(module.nets):
            path = out / f"module{module.role}_member{i}.ckpt"
            save_checkpoint(net, path)
            artifacts.append(path)
    losses = out / "losses.csv"
    with open(losses, "w") as fh:
        fh.write("epoch,member,role,loss\n")
        for epoch, member, role, loss in loss_rows:
            fh.write(f"{epoch},{member},{role},{loss:.8f}\n")
    artifacts.append(losses)
    config = {"data": str(args.data), "backbone": kind, **dataclasses.asdict(tc)}
    _write_manifest(out, "train", config, artifacts)
    print(f"trained 2x{tc.k} {kind} networks -> {out}")
    return 0


def _load_modules(ckpt_dir: Path) -> tuple[EnsembleModule, EnsembleModule]:
    modules = []
    for role in ("A", "B"):
        paths = sorted(ckpt_dir.glob(f"module{role}_member*.ckpt"))
        if not paths:
            raise ConfigError(f"no module {role} checkpoints under {ckpt_dir}")
        modules.append(EnsembleModule(role, [load_checkpoint(p) for p in paths]))
    return modules[0], modules[1]


def _score_kinds(args) -> tuple[str, ...]:
    raw = _resolve(args, "score")
    kinds = tuple(k.strip() for k in raw.split(",") if k.strip())
    unknown = [k for k in kinds if k not in ALL_SCORE_KINDS]
    if unknown:
        raise ConfigError(f"unknown score kinds {unknown}; choose from {ALL_SCORE_KINDS}")
    return kinds


def cmd_score(args) -> int:
    out = _out_dir(args)
    spec = ingest_directory(args.data)
    module_a, module_b = _load_modules(Path(args.ckpt))
    kinds = _score_kinds(args)
    maps = evaluation.compute_maps(
        module_a, module_b, spec.test_images, kinds,
        sigma_pooling=_resolve(args, "sigma_pooling"))
    csv_path = out / "scores.csv"
    artifacts = [csv_path]
    with open(csv_path, "w") as fh:
        fh.write("id,label,kind,score\n")
        for kind, amap in maps.items():
            values = np.asarray(image_score(amap))
            for i, tid in enumerate(spec.test_ids):
                fh.write(f"{tid},{int(spec.test_labels[i])},{kind},{values[i]:.8f}\n")
            raw_path = out / f"maps_{kind}.f32"
            pgm_path = out / f"maps_{kind}.pgm"
            export_raw(amap, raw_path)
            export_pgm(amap, pgm_path)
            artifacts += [raw_path, pgm_path]
    config = {"data": str(args.data), "ckpt": str(args.ckpt), "score": ",".join(kinds)}
    _write_manifest(out, "score", config, artifacts)
    print(f"scored {spec.test_images.shape[0]} images -> {csv_path}")
    return 0


def cmd_eval(args) -> int:
    out = _out_dir(args)
    rows: dict[str, dict[str, float]] = {}
    labels: dict[str, int] = {}
    lines = Path(args.scores).read_text().splitlines()
    for line in lines[1:]:
        tid, label, kind, score = line.split(",")
        labels[tid] = int(label)
        rows.setdefault(kind, {})[tid] = float(score)
    n_bins = int(_resolve(args, "bins", int))
    report = {"auc": {}, "histograms": {}}
    artifacts = []
    for kind, by_id in rows.items():
        ids = sorted(by_id)
        scores = np.array([by_id[t] for t in ids])
        y = np.array([labels[t] for t in ids])
        report["auc"][kind] = evaluation.auc(scores, y)
        edges, cn, ca = evaluation.histogram(scores, y, n_bins)
        report["histograms"][kind] = {"bin_edges": edges.tolist(),
                                      "count_normal": cn.tolist(),
                                      "count_abnormal": ca.tolist()}
        hist_path = out / f"histogram_{kind}.csv"
        with open(hist_path, "w") as fh:
            fh.write("bin_lo,bin_hi,count_normal,count_abnormal\n")
            for b in range(n_bins):
                fh.write(f"{edges[b]:.6f},{edges[b+1]:.6f},{cn[b]},{ca[b]}\n")
        artifacts.append(hist_path)
    report_path = out / "report.json"
    report_path.write_text(json.dumps(report, indent=2) + "\n")
    artifacts.append(report_path)
    _write_manifest(out, "eval", {"scores": str(args.scores), "bins": n_bins}, artifacts)
    print(json.dumps(report["auc"], indent=2))
    return 0


def cmd_sweep(args) -> int:
    out = _out_dir(args)
    ar_values = (tuple(float(v) for v in args.ar.split(","))
                 if args.ar is not None else DEFAULT_AR_GRID)
    tc = _train_config(args)
    kind = _resolve(args, "backbone")
    params = _synth_params(args, include_ar=False)
    rows = run_ar_sweep(ar_values, BackboneConfig(kind=kind), tc, seed=tc.base_seed,
                        n_normal=params["n_normal"], m_unlabeled=params["m_unlabeled"],
                        t_normal=params["t_normal"], t_abnormal=params["t_abnormal"],
                        kinds=_score_kinds(args))
    csv_path = out / "sweep.csv"
    csv_path.write_text(sweep_csv(rows, kind))
    _write_manifest(out, "sweep",
                    {"ar_values": list(ar_values), "backbone": kind,
                     **params, **dataclasses.asdict(tc)}, [csv_path])
    print(csv_path.read_text(), end="")
    return 0


def cmd_compare(args) -> int:
    out = _out_dir(args)
    backbones = [b.strip() for b in (args.backbones or "ae").split(",")]
    kinds = _score_kinds(args)
    specs = [(b, k) for b in backbones for k in kinds]
    params = _synth_params(args)
    if args.data is not None:
        dataset = ingest_directory(args.data)
    else:
        dataset = generate_synthetic(**params)
    tc = _train_config(args)
    report = method_comparison_report(specs, dataset, tc)
    (out / "comparison.json").write_text(json.dumps(report, indent=2) + "\n")
    table = format_comparison_table(report)
    (out / "comparison.txt").write_text(table)
    _write_manifest(out, "compare",
                    {"backbones": backbones, "score": ",".join(kinds),
                     **params, **dataclasses.asdict(tc)},
                    [out / "comparison.json", out / "comparison.txt"])
    print(table, end="")
    return 0


def _add_common(p: argparse.ArgumentParser, *, data: bool = False) -> None:
    p.add_argument("--config", help="key=value config file; flags override it")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int)
    if data:
        p.add_argument("--data", help="dataset directory (normal/, unlabeled/, test/)")


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--backbone", choices=["ae", "aeu"])
    p.add_argument("--k", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float)
    p.add_argument("--batch-size", dest="batch_size", type=int)


def _add_synth_flags(p: argparse.ArgumentParser, *, ar_list: bool = False) -> None:
    if ar_list:
        p.add_argument("--ar", help="comma-separated anomaly rates")
    else:
        p.add_argument("--ar", type=float)
    p.add_argument("--n-normal", dest="n_normal", type=int)
    p.add_argument("--m-unlabeled", dest="m_unlabeled", type=int)
    p.add_argument("--t-normal", dest="t_normal", type=int)
    p.add_argument("--t-abnormal", dest="t_abnormal", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddad",
        description="Dual-ensemble reconstruction anomaly detection experiments")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset directory")
    _add_common(p)
    _add_synth_flags(p)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="train module A/B checkpoints")
    _add_common(p, data=True)
    _add_train_flags(p)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("score", help="compute anomaly maps and image scores")
    _add_common(p, data=True)
    p.add_argument("--ckpt", required=True, help="directory of module checkpoints")
    p.add_argument("--score")
    p.add_argument("--sigma-pooling", dest="sigma_pooling", choices=["variance", "sigma"])
    p.set_defaults(fn=cmd_score)

    p = sub.add_parser("eval", help="AUC, histograms, and report from scores")
    _add_common(p)
    p.add_argument("--scores", required=True, help="scores.csv from the score step")
    p.add_argument("--bins", type=int)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("sweep", help="anomaly-rate sweep on synthetic data")
    _add_common(p)
    _add_train_flags(p)
    _add_synth_flags(p, ar_list=True)
    p.add_argument("--score")
    p.set_defaults(fn=cmd_sweep)

    p = sub.add_parser("compare", help="method-comparison table")
    _add_common(p, data=True)
    _add_train_flags(p)
    _add_synth_flags(p)
    p.add_argument("--backbones", help="comma-separated: ae,aeu")
    p.add_argument("--score")
    p.set_defaults(fn=cmd_compare)
    return parser


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    try:
        args._file_config = _load_config_file(args.config)
        return args.fn(args)
    except DdadError as exc:
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
