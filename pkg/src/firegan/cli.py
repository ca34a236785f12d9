"""Command-line entry point: firegan {train,transfer,infer,evaluate,compare,make-splits}.

Exit codes: 0 success, 1 validation error, 2 runtime abort.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import data as D
from .config import ConfigError, RunConfig, load_config, with_overrides, write_config
from .evaluation import EvalJob, compare_runs, genir_table, run_eval
from .metrics import ROWS
from .model import ShapeError, fuse, generate_ir
from .training import TrainingAborted, fit, load_generators, load_state, transfer_learn

log = logging.getLogger("firegan")

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_VALIDATION):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------- helpers


def _resolve_config(args) -> RunConfig:
    cfg = load_config(args.config)
    return with_overrides(cfg, seed=args.seed)


def _load_split_data(cfg: RunConfig):
    """Train/val pairs resized to the training resolution; train is lazily augmented."""
    if cfg.manifest:
        rows = D.read_manifest(cfg.manifest)
        have_splits = any(r["split"] for r in rows)
        if have_splits:
            train = D.load_manifest(cfg.manifest, "train")
            val = D.load_manifest(cfg.manifest, "val")
            train_ids = [p.id for p in train]
            val_ids = [p.id for p in val]
        else:
            corpus = D.load_manifest(cfg.manifest)
            train, val = D.split(corpus, cfg.split_spec())
            train_ids, val_ids = [p.id for p in train], [p.id for p in val]
    elif cfg.data_root:
        rows = D.scan_corpus(cfg.data_root, cfg.pairing_rule())
        corpus = D.load_corpus(cfg.data_root, cfg.pairing_rule())
        train, val = D.split(corpus, cfg.split_spec())
        train_ids, val_ids = [p.id for p in train], [p.id for p in val]
    else:
        raise CliError("config needs data_root or manifest")
    train = [D.resize_pair(p, cfg.image_size) for p in train]
    val = [D.resize_pair(p, cfg.image_size) for p in val]
    if not train:
        raise CliError("training set is empty")
    size = D.training_size(len(train), cfg.split_spec())
    train_set = D.expand_training_set(train, size, cfg.augment_plan(), cfg.seed)
    return rows, train_set, val, train_ids, val_ids


def _print_header(title: str, tcfg, cfg: RunConfig) -> None:
    w = tcfg.weights
    print(f"== {title} ==")
    print(
        f"epochs={tcfg.epochs} batch_size={tcfg.batch_size} lr_generators={tcfg.lr_generators:g} "
        f"lr_discriminators={tcfg.lr_discriminators:g} d_update_period={tcfg.d_update_period}"
    )
    print(f"gamma={w.gamma:g} lambda={w.lambda_:g} xi={w.xi:g} g1={tcfg.g1.kind} image_size={cfg.image_size} seed={tcfg.seed}")


# --------------------------------------------------------------- commands


def cmd_train(args) -> int:
    cfg = _resolve_config(args)
    tcfg = cfg.training()
    out = Path(cfg.output_dir)
    rows, train, val, train_ids, val_ids = _load_split_data(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.resolved.toml")
    D.write_split_manifest(out / "splits.json", rows, train_ids, val_ids)
    _print_header("train", tcfg, cfg)
    print(f"train items={len(train)} val pairs={len(val)}")
    state = fit(
        train, val, tcfg, out_dir=out, metric_params=cfg.metric_params(),
        max_steps=1 if args.dry_run else None, checkpoint_extra={"image_size": cfg.image_size},
    )
    print(f"steps={state.step} discriminator_updates={state.d_updates}")
    print(out / "checkpoints" / "final")
    return EXIT_OK


def cmd_transfer(args) -> int:
    cfg = _resolve_config(args)
    cfg = with_overrides(cfg, transfer_epochs=args.epochs, transfer_gamma=args.gamma)
    checkpoint = Path(args.checkpoint)
    if not (checkpoint / "state.json").exists():
        raise CliError(f"checkpoint not found: {checkpoint}")
    tcfg = cfg.transfer_training()
    out = Path(cfg.output_dir)
    rows, train, val, train_ids, val_ids = _load_split_data(cfg)
    out.mkdir(parents=True, exist_ok=True)
    write_config(cfg, out / "config.resolved.toml")
    D.write_split_manifest(out / "splits.json", rows, train_ids, val_ids)
    _print_header("transfer", tcfg, cfg)
    state = load_state(checkpoint, tcfg)
    state = transfer_learn(
        state, train, tcfg, val=val, out_dir=out, metric_params=cfg.metric_params(),
        checkpoint_extra={"image_size": cfg.image_size}, max_steps=1 if args.dry_run else None,
    )
    print(f"steps={state.step} discriminator_updates={state.d_updates}")
    print(out / "checkpoints" / "final")
    return EXIT_OK


def _scan_inputs(input_dir: Path, rule: D.PairingRule) -> list[tuple[str, Path, Path | None]]:
    files = sorted(p for p in input_dir.iterdir() if p.suffix.lower() in D.IMAGE_EXTENSIONS)
    infrared = {p.stem[: -len(rule.infrared_suffix)]: p for p in files if p.stem.endswith(rule.infrared_suffix)}
    out = []
    for p in files:
        if p.stem.endswith(rule.infrared_suffix):
            continue
        pid = p.stem[: -len(rule.visible_suffix)] if p.stem.endswith(rule.visible_suffix) else p.stem
        out.append((pid, p, infrared.get(pid)))
    return out


def cmd_infer(args) -> int:
    cfg = _resolve_config(args)
    checkpoint = Path(args.checkpoint)
    if not (checkpoint / "g1").exists():
        raise CliError(f"checkpoint not found: {checkpoint}")
    input_dir, output_dir = Path(args.input_dir), Path(args.output_dir)
    if not input_dir.is_dir():
        raise CliError(f"input directory not found: {input_dir}")
    g1, g2 = load_generators(checkpoint)
    items = _scan_inputs(input_dir, cfg.pairing_rule())
    if not items:
        log.warning("no input images in %s", input_dir)
        print(f"warning: no input images in {input_dir}", file=sys.stderr)
        return EXIT_OK
    output_dir.mkdir(parents=True, exist_ok=True)
    written = skipped = 0
    for pid, vis_path, ir_path in items:
        try:
            vis = D.to_model_domain(D.read_image(vis_path).to_rgb())
            if vis.height % 2**g1.spec.depth or vis.width % 2**g1.spec.depth:
                raise ShapeError(f"{vis.height}x{vis.width} not divisible by 2^{g1.spec.depth}")
            gen = None
            if args.mode in ("ir_only", "both") or ir_path is None:
                gen = generate_ir(g1, vis)
            if args.mode in ("ir_only", "both"):
                D.write_image(output_dir / f"{pid}_genir.png", gen)
                written += 1
            if args.mode in ("fused", "both"):
                # real IR, when supplied, bypasses G1
                ir = D.to_model_domain(D.read_image(ir_path).to_rgb()) if ir_path is not None else gen
                if ir.shape[:2] != vis.shape[:2]:
                    raise ShapeError(f"infrared {ir.shape[:2]} vs visible {vis.shape[:2]}")
                D.write_image(output_dir / f"{pid}_fused.png", fuse(g2, vis, ir))
                written += 1
        except (ShapeError, D.DataError) as exc:
            log.warning("skipping %s: %s", vis_path.name, exc)
            print(f"skip {vis_path.name}: {exc}", file=sys.stderr)
            skipped += 1
    print(f"wrote {written} file(s) to {output_dir}; skipped {skipped}")
    return EXIT_OK


def _jobs_from_args(args, cfg: RunConfig) -> list[EvalJob]:
    sources = [("checkpoint", c) for c in args.checkpoint or []] + [("fused_dir", f) for f in args.fused_dir or []]
    if not sources:
        raise CliError("give at least one --checkpoint or --fused-dir")
    labels = args.label or []
    if labels and len(labels) != len(sources):
        raise CliError("--label must be given once per job")
    manifest = args.manifest or cfg.manifest
    if not manifest:
        raise CliError("--manifest is required")
    out = Path(args.output_dir or cfg.output_dir)
    jobs = []
    for i, (kind, src) in enumerate(sources):
        label = labels[i] if labels else Path(src).name
        if kind == "checkpoint" and not Path(src).exists():
            raise CliError(f"checkpoint not found: {src}")
        jobs.append(EvalJob(
            manifest=manifest,
            output_dir=out / label if len(sources) > 1 else out,
            metric_params=cfg.metric_params(),
            split=args.split,
            label=label,
            **{kind: src},
        ))
    # validate the manifest before any work
    D.read_manifest(manifest)
    return jobs


def cmd_evaluate(args) -> int:
    cfg = _resolve_config(args)
    jobs = _jobs_from_args(args, cfg)
    if len(jobs) > 1:
        return _compare(jobs, Path(args.output_dir or cfg.output_dir))
    result = run_eval(jobs[0])
    if result.genir_aggregate is not None:
        print("Generated IR vs real IR")
        print(genir_table(result))
        print()
    width = max(len(label) for _, label in ROWS)
    print(f"{'Metric'.ljust(width)}  {jobs[0].name}")
    for (name, label), v in zip(ROWS, result.aggregate.values()):
        print(f"{label.ljust(width)}  {'n/a' if v is None else f'{v:.4f}'}")
    print(f"items={len(result.items)} excluded={len(result.excluded)}")
    return EXIT_OK


def _compare(jobs: list[EvalJob], out: Path) -> int:
    table = compare_runs(jobs, out)
    print(table.to_text())
    return EXIT_OK


def cmd_compare(args) -> int:
    cfg = _resolve_config(args)
    jobs = _jobs_from_args(args, cfg)
    return _compare(jobs, Path(args.output_dir or cfg.output_dir))


def cmd_make_splits(args) -> int:
    cfg = _resolve_config(args)
    root = args.data_root or cfg.data_root
    if not root:
        raise CliError("give --data-root or set data_root in the config")
    rows = D.scan_corpus(root, cfg.pairing_rule())
    train_ids, val_ids = D.split_ids([r["id"] for r in rows], cfg.split_spec())
    out = Path(args.output or Path(cfg.output_dir) / "splits.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    D.write_split_manifest(out, rows, train_ids, val_ids)
    print(f"train={len(train_ids)} val={len(val_ids)} -> {out}")
    return EXIT_OK


# ----------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=argparse.SUPPRESS, help="TOML run config")
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS)
    common.add_argument("--dry-run", action="store_true", default=argparse.SUPPRESS,
                        help="validate config and data, run one step, exit")
    common.add_argument("--verbose", "-v", action="store_true", default=argparse.SUPPRESS)

    parser = argparse.ArgumentParser(prog="firegan", description=__doc__.splitlines()[0])
    parser.add_argument("--config", default=None, help="TOML run config")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--dry-run", action="store_true", default=False)
    parser.add_argument("--verbose", "-v", action="store_true", default=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", parents=[common], help="pretrain all four networks")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("transfer", parents=[common], help="fine-tune a checkpoint on a new corpus")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--gamma", type=float, default=None)
    p.set_defaults(func=cmd_transfer)

    p = sub.add_parser("infer", parents=[common], help="write synthetic IR and/or fused images")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--mode", choices=("ir_only", "fused", "both"), default="both")
    p.set_defaults(func=cmd_infer)

    for name, func, help_ in (
        ("evaluate", cmd_evaluate, "score fused outputs against a manifest"),
        ("compare", cmd_compare, "side-by-side table of several evaluation jobs"),
    ):
        p = sub.add_parser(name, parents=[common], help=help_)
        p.add_argument("--manifest")
        p.add_argument("--checkpoint", action="append", help="repeatable")
        p.add_argument("--fused-dir", action="append", help="repeatable")
        p.add_argument("--label", action="append", help="one per job, in order")
        p.add_argument("--split", default=None, help="manifest split to evaluate (default: all pairs)")
        p.add_argument("--output-dir")
        p.set_defaults(func=func)

    p = sub.add_parser("make-splits", parents=[common], help="write a train/val JSON manifest")
    p.add_argument("--data-root")
    p.add_argument("--output")
    p.set_defaults(func=cmd_make_splits)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except TrainingAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ConfigError, D.DataError, FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:  # noqa: BLE001
        log.exception("runtime failure")
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
