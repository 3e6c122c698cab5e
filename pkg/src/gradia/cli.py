"""Command-line entry points for the workbench.

Subcommands cover the whole experiment lifecycle: generate a dataset, train
a baseline, inspect the validation matrix, fine-tune under a condition,
evaluate on the test split, run the few-shot study, serve the annotation
API, and render a run report. Exit codes: 0 success, 2 bad configuration or
arguments, 3 missing prerequisite (file or dataset), 4 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from pathlib import Path

from .errors import ConfigurationError, DataError, GradiaError, InputError

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_MISSING = 3
EXIT_RUNTIME = 4


def _load_toml(path: Path) -> dict:
    import tomli

    with path.open("rb") as fh:
        return tomli.load(fh)


def _config_overrides(args) -> dict:
    if args.config is None:
        return {}
    path = Path(args.config)
    if not path.exists():
        raise FileNotFoundError(f"config file {path} does not exist")
    return _load_toml(path)


def _apply(dc, table: dict, **direct):
    """Rebuild a dataclass with overrides from a TOML table plus direct kwargs."""
    fields = {f.name for f in dataclasses.fields(dc)}
    unknown = set(table) - fields
    if unknown:
        raise ConfigurationError(
            f"unknown {type(dc).__name__} fields in config: {sorted(unknown)}"
        )
    merged = {**table, **{k: v for k, v in direct.items() if v is not None}}
    coerced = {}
    for f in dataclasses.fields(dc):
        if f.name not in merged:
            continue
        value = merged[f.name]
        if isinstance(getattr(dc, f.name), tuple) and isinstance(value, list):
            value = tuple(value)
        coerced[f.name] = value
    return dataclasses.replace(dc, **coerced)


def _scene_and_counts(args):
    from .synthetic import SceneSpec, SplitCounts

    table = _config_overrides(args)
    scene = _apply(SceneSpec(), table.get("scene", {}), seed=args.seed)
    counts_table = table.get("counts", {})
    if counts_table:
        counts = SplitCounts(**counts_table)
    else:
        counts = SplitCounts.from_total(getattr(args, "total", None) or 1000)
    return scene, counts


def _train_config(args, *, finetune: bool):
    from .objective import BalanceFactors
    from .training import TrainConfig

    table = _config_overrides(args).get("train", {})
    factors = BalanceFactors(
        alpha=args.alpha if args.alpha is not None else float(table.pop("alpha", 0.2)),
        beta=args.beta if args.beta is not None else float(table.pop("beta", 0.5)),
        gamma=args.gamma if args.gamma is not None else float(table.pop("gamma", 0.8)),
    )
    base = TrainConfig.finetune_defaults() if finetune else TrainConfig()
    cfg = _apply(
        base,
        table,
        seed=args.seed,
        condition=getattr(args, "condition", None),
        higher_order=args.higher_order,
    )
    cfg = dataclasses.replace(cfg, factors=factors)
    cfg.validate()
    return cfg


def _data_dir(args) -> Path:
    raw = args.data or os.environ.get("GRADIA_DATA_DIR")
    if raw is None:
        raise FileNotFoundError(
            "no dataset directory: pass --data or set GRADIA_DATA_DIR"
        )
    path = Path(raw)
    if not (path / "manifest.jsonl").exists():
        raise FileNotFoundError(f"{path} has no manifest.jsonl; run gen-data first")
    return path


def _load_instances(args):
    from .synthetic import load_dataset

    return load_dataset(_data_dir(args))


def _load_params(path_arg, model_config):
    from .model import load_parameters

    path = Path(path_arg)
    if not path.exists():
        raise FileNotFoundError(f"no parameter archive at {path}")
    return load_parameters(path, model_config)


def _out_dir(args, default: str) -> Path:
    out = Path(args.out) if args.out else Path(default)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_gen_data(args) -> int:
    from .synthetic import generate_dataset, save_dataset

    scene, counts = _scene_and_counts(args)
    scene.validate()
    instances = generate_dataset(scene, counts)
    out = _out_dir(args, "data")
    manifest = save_dataset(instances, out)
    print(f"wrote {len(instances)} instances to {out} (manifest {manifest.name})")
    return EXIT_OK


def cmd_train(args) -> int:
    from .model import ModelConfig, save_parameters
    from .training import OracleAnnotator, accuracy, evaluate, train_baseline_with_curve

    instances = _load_instances(args)
    cfg = _train_config(args, finetune=False)
    params, curve = train_baseline_with_curve(
        [i for i in instances if i.split == "train"], cfg, ModelConfig()
    )
    out = _out_dir(args, "runs/baseline")
    save_parameters(params, out / "params.bin")
    with (out / "loss_curves.csv").open("w", encoding="utf-8") as fh:
        fh.write("step,term,value\n")
        for step, term, value in curve:
            fh.write(f"{step},{term},{value!r}\n")
    (out / "config.json").write_text(
        json.dumps(dataclasses.asdict(cfg), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    train_acc = accuracy(params, [i for i in instances if i.split == "train"])
    result = evaluate(
        params, [i for i in instances if i.split == "test"], OracleAnnotator()
    )
    print(f"train accuracy {train_acc:.4f}")
    print(result.metrics.render(), end="")
    print(f"params -> {out / 'params.bin'}")
    return EXIT_OK


def cmd_matrix(args) -> int:
    from .model import ModelConfig
    from .training import OracleAnnotator, build_validation_matrix

    instances = [i for i in _load_instances(args) if i.split == args.split]
    if not instances:
        raise DataError(f"dataset has no {args.split!r} split")
    params = _load_params(args.params, ModelConfig())
    matrix, pools = build_validation_matrix(params, instances, OracleAnnotator())
    counts = dict(zip(("RA", "UA", "RIA", "UIA"), matrix.counts()))
    print(json.dumps({"counts": counts, "total": matrix.total}, indent=2, sort_keys=True))
    if args.out:
        out = _out_dir(args, "matrix")
        (out / "matrix.json").write_text(
            json.dumps({"counts": counts, "ids": matrix.ids}, indent=2, sort_keys=True)
            + "\n",
            encoding="utf-8",
        )
    return EXIT_OK


def cmd_finetune(args) -> int:
    from .model import ModelConfig
    from .training import OracleAnnotator, run_condition, write_run_manifest

    instances = _load_instances(args)
    mc = ModelConfig()
    base = _load_params(args.params, mc)
    cfg = _train_config(args, finetune=True)
    report, tuned = run_condition(
        instances,
        cfg.condition,
        baseline_config=None,
        finetune_config=cfg,
        annotator=OracleAnnotator(),
        model_config=mc,
        base_params=base,
    )
    out = _out_dir(args, f"runs/{cfg.condition.lower()}")
    write_run_manifest(report, tuned, out)
    print(report.metrics_before.render(), end="")
    print("-- after --")
    print(report.metrics_after.render(), end="")
    print(f"run manifest -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    from .model import ModelConfig
    from .training import OracleAnnotator, evaluate

    instances = [i for i in _load_instances(args) if i.split == args.split]
    if not instances:
        raise DataError(f"dataset has no {args.split!r} split")
    params = _load_params(args.params, ModelConfig())
    result = evaluate(params, instances, OracleAnnotator())
    print(result.metrics.render(), end="")
    if result.auc is not None:
        print(f"auc {result.auc:.6f}")
    counts = dict(zip(("RA", "UA", "RIA", "UIA"), result.matrix.counts()))
    print(json.dumps({"counts": counts}, sort_keys=True))
    return EXIT_OK


def cmd_fewshot(args) -> int:
    from .model import ModelConfig
    from .training import (
        FewShotArm,
        FewShotScenario,
        OracleAnnotator,
        TrainConfig,
        annotated_pool,
        few_shot_study,
    )

    instances = _load_instances(args)
    mc = ModelConfig()
    base = _load_params(args.params, mc)
    pool_instances = [i for i in instances if i.split == "validation"]
    test = [i for i in instances if i.split == "test"]
    annotator = OracleAnnotator()
    pool = annotated_pool(pool_instances, base, annotator)
    scenario = FewShotScenario(
        shots_per_class=args.shots, num_seeds=args.num_seeds
    )
    arms = [FewShotArm("baseline", 0.0), FewShotArm("gradia", args.weight)]
    cfg = TrainConfig.finetune_defaults(seed=args.seed or 0)
    results = few_shot_study(
        scenario, arms, base_params=base, pool=pool, test_set=test, config=cfg
    )
    for name, arm in results.items():
        print(
            f"{name}: mean auc {arm.mean_auc:.4f} (std {arm.std_auc:.4f}) "
            f"over {len(arm.per_seed)} seeds"
        )
    if args.out:
        out = _out_dir(args, "runs/fewshot")
        payload = {
            name: {"mean_auc": arm.mean_auc, "std_auc": arm.std_auc, "per_seed": arm.per_seed}
            for name, arm in results.items()
        }
        (out / "fewshot.json").write_text(
            json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
        )
    return EXIT_OK


def cmd_serve(args) -> int:
    import uvicorn

    from .service import build_workbench, create_app

    data_dir = _data_dir(args)
    bench = build_workbench(
        data_dir,
        params_path=args.params,
        run_root=args.out,
    )
    app = create_app(bench, ui_dir=args.ui)
    port = args.port or int(os.environ.get("GRADIA_PORT", "8731"))
    uvicorn.run(app, host=args.host, port=port, log_level="warning")
    return EXIT_OK


def cmd_report(args) -> int:
    rows = []
    for run_dir in sorted(Path(args.runs).iterdir()):
        matrix_path = run_dir / "matrix.json"
        metrics_path = run_dir / "metrics_after.txt"
        if not matrix_path.exists() or not metrics_path.exists():
            continue
        matrix = json.loads(matrix_path.read_text(encoding="utf-8"))
        metrics = {}
        for line in metrics_path.read_text(encoding="utf-8").splitlines():
            key, value = line.rsplit(" ", 1)
            metrics[key] = float(value)
        rows.append((run_dir.name, matrix.get("condition", run_dir.name), metrics))
    if not rows:
        raise FileNotFoundError(f"no run manifests under {args.runs}")
    header = ("run", "m1", "m2", "m3_mean", "m4")
    print("{:<24}{:>10}{:>10}{:>10}{:>10}".format(*header))
    for name, _cond, m in rows:
        print(
            "{:<24}{:>10.4f}{:>10.4f}{:>10.4f}{:>10.4f}".format(
                name,
                m.get("m1_accuracy", float("nan")),
                m.get("m2_ra_performance", float("nan")),
                m.get("m3_mean_iou", float("nan")),
                m.get("m4_attention_accuracy", float("nan")),
            )
        )
    return EXIT_OK


def _add_common(parser, *, data=True, seed=True, out=True, config=True):
    if data:
        parser.add_argument("--data", help="dataset directory (or GRADIA_DATA_DIR)")
    if seed:
        parser.add_argument("--seed", type=int, default=None)
    if out:
        parser.add_argument("--out", help="output directory")
    if config:
        parser.add_argument("--config", help="TOML config file")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradia", description="attention-alignment workbench"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate the synthetic benchmark")
    _add_common(p, data=False)
    p.add_argument("--total", type=int, default=None, help="total instances (70/15/15 split)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a baseline classifier")
    _add_common(p)
    p.add_argument("--higher-order", action="store_true", default=None)
    _add_factor_args(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("matrix", help="build the reasonability matrix for a split")
    _add_common(p)
    p.add_argument("--params", required=True, help="parameter archive")
    p.add_argument("--split", default="validation", choices=("train", "validation", "test"))
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("finetune", help="fine-tune under a study condition")
    _add_common(p)
    p.add_argument("--params", required=True, help="baseline parameter archive")
    p.add_argument("--condition", default="C4", choices=("C1", "C2", "C3", "C4"))
    p.add_argument("--higher-order", action="store_true", default=None)
    _add_factor_args(p)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("evaluate", help="evaluate a parameter archive on a split")
    _add_common(p, seed=False, out=False)
    p.add_argument("--params", required=True)
    p.add_argument("--split", default="test", choices=("train", "validation", "test"))
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("fewshot", help="paired few-shot study from a pretrained model")
    _add_common(p)
    p.add_argument("--params", required=True, help="pretrained parameter archive")
    p.add_argument("--shots", type=int, default=5, choices=(1, 5, 10, 50))
    p.add_argument("--num-seeds", type=int, default=10)
    p.add_argument("--weight", type=float, default=0.5, help="gradia arm attention weight")
    p.add_argument("--jobs", type=int, default=1, help="reserved; single process")
    p.set_defaults(func=cmd_fewshot)

    p = sub.add_parser("serve", help="run the annotation service")
    _add_common(p, seed=False, config=False)
    p.add_argument("--params", default=None, help="parameter archive to activate")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=None, help="or GRADIA_PORT")
    p.add_argument("--ui", default=None, help="directory of built UI assets to host at /")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("report", help="tabulate metrics across run manifests")
    p.add_argument("--runs", default="runs", help="directory holding run manifests")
    p.set_defaults(func=cmd_report)

    return parser


def _add_factor_args(parser) -> None:
    parser.add_argument("--alpha", type=float, default=None)
    parser.add_argument("--beta", type=float, default=None)
    parser.add_argument("--gamma", type=float, default=None)


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad arguments already; normalize other exits
        return EXIT_CONFIG if exc.code not in (0, None) else EXIT_OK
    try:
        return args.func(args)
    except (ConfigurationError, InputError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except GradiaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
