"""Batch evaluation of fused outputs and side-by-side comparison reports."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .data import (
    DataError,
    IMAGE_EXTENSIONS,
    ImagePair,
    load_pair,
    pair_to_model_domain,
    read_image,
    read_manifest,
    resize_pair,
)
from .metrics import (
    METRIC_FIELDS,
    ROWS,
    MetricError,
    MetricParams,
    MetricRecord,
    aggregate,
    evaluate_generated,
    evaluate_triple,
    five_number_summary,
    mean_ignoring_none,
)

log = logging.getLogger(__name__)

GENIR_FIELDS = ("en", "cc", "psnr", "ssim")


class ManifestMismatchError(ValueError):
    pass


@dataclass
class EvalJob:
    """One evaluation: a manifest plus exactly one of a checkpoint or a fused-image directory."""

    manifest: str | Path
    output_dir: str | Path
    checkpoint: str | Path | None = None
    fused_dir: str | Path | None = None
    metric_params: MetricParams = field(default_factory=MetricParams)
    split: str | None = None
    label: str | None = None

    def __post_init__(self):
        if (self.checkpoint is None) == (self.fused_dir is None):
            raise ValueError("EvalJob needs exactly one of checkpoint or fused_dir")

    @property
    def name(self) -> str:
        if self.label:
            return self.label
        return Path(self.checkpoint or self.fused_dir).name


@dataclass
class EvalResult:
    job: EvalJob
    items: list[tuple[str, MetricRecord]]
    aggregate: MetricRecord
    excluded: list[tuple[str, str]]
    genir_items: list[tuple[str, dict]] = field(default_factory=list)
    genir_aggregate: dict | None = None


def _fmt(v) -> str:
    if v is None:
        return ""
    return repr(float(v))


def _find_fused(fused_dir: Path, pid: str) -> Path | None:
    for stem in (f"{pid}_fused", pid):
        for ext in IMAGE_EXTENSIONS:
            p = fused_dir / f"{stem}{ext}"
            if p.exists():
                return p
    return None


def _checkpoint_image_size(checkpoint: Path) -> int:
    meta_path = checkpoint / "state.json"
    if meta_path.exists():
        return int(json.loads(meta_path.read_text()).get("image_size", 256))
    return 256


def _prepare_for_generator(pair: ImagePair, depth: int, fallback_size: int) -> ImagePair:
    m = 2**depth
    if pair.visible.height % m or pair.visible.width % m:
        pair = resize_pair(pair, fallback_size)
    return pair


def run_eval(job: EvalJob) -> EvalResult:
    """Score every manifest pair, write CSV/JSON reports, return the aggregate.

    Per-item failures are logged and excluded from the aggregate.
    """
    out = Path(job.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = read_manifest(job.manifest)
    if job.split is not None:
        rows = [r for r in rows if r["split"] == job.split]
    params = job.metric_params
    items: list[tuple[str, MetricRecord]] = []
    genir_items: list[tuple[str, dict]] = []
    excluded: list[tuple[str, str]] = []

    g1 = g2 = None
    if job.checkpoint is not None:
        from .model import fuse, generate_ir
        from .training import load_generators

        ckpt = Path(job.checkpoint)
        g1, g2 = load_generators(ckpt)
        fallback = _checkpoint_image_size(ckpt)

    for row in rows:
        pid = row["id"]
        try:
            pair = load_pair(pid, Path(row["visible"]), Path(row["infrared"]))
            if g1 is not None:
                pair = pair_to_model_domain(_prepare_for_generator(pair, g1.spec.depth, fallback))
                gen = generate_ir(g1, pair.visible)
                fused = fuse(g2, pair.visible, gen)
                genir_items.append((pid, evaluate_generated(pair.infrared, gen, params)))
            else:
                path = _find_fused(Path(job.fused_dir), pid)
                if path is None:
                    raise FileNotFoundError(f"no fused image for {pid!r} in {job.fused_dir}")
                fused = read_image(path)
                if fused.shape[:2] != pair.visible.shape[:2]:
                    raise DataError(f"fused image {fused.shape[:2]} not registered with sources {pair.visible.shape[:2]}")
            rec = evaluate_triple(pair.visible, pair.infrared, fused, params)
        except (OSError, DataError, MetricError, ValueError) as exc:
            log.warning("excluding %s: %s", pid, exc)
            excluded.append((pid, str(exc)))
            continue
        items.append((pid, rec))

    if excluded:
        log.warning("%d item(s) excluded from the aggregate", len(excluded))
    result = EvalResult(job, items, aggregate([r for _, r in items]), excluded, genir_items)
    if genir_items:
        result.genir_aggregate = {k: mean_ignoring_none(g[k] for _, g in genir_items) for k in GENIR_FIELDS}
    write_reports(result, out)
    return result


def write_reports(result: EvalResult, out: Path) -> None:
    cols = ["id", *METRIC_FIELDS, "errors"]
    with open(out / "per_item.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for pid, rec in result.items:
            errs = ";".join(f"{k}: {v}" for k, v in sorted(rec.errors.items()))
            w.writerow([pid, *(_fmt(v) for v in rec.values()), errs])
    with open(out / "aggregate.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "label", "value", "n_items", "n_excluded"])
        for (name, label), v in zip(ROWS, result.aggregate.values()):
            w.writerow([name, label, _fmt(v), len(result.items), len(result.excluded)])
    with open(out / "boxplot_summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["metric", "min", "q1", "median", "q3", "max"])
        for name, _ in ROWS:
            summary = five_number_summary(getattr(r, name) for _, r in result.items)
            w.writerow([name, *(_fmt(v) for v in (summary or (None,) * 5))])
    if result.genir_items:
        with open(out / "genir_per_item.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["id", *GENIR_FIELDS])
            for pid, g in result.genir_items:
                w.writerow([pid, *(_fmt(g[k]) for k in GENIR_FIELDS)])
    report = {
        "job": result.job.name,
        "n_items": len(result.items),
        "excluded": [{"id": pid, "reason": why} for pid, why in result.excluded],
        "aggregate": {name: _json_num(getattr(result.aggregate, name)) for name in METRIC_FIELDS},
        "generated_ir": (
            {k: _json_num(v) for k, v in result.genir_aggregate.items()} if result.genir_aggregate else None
        ),
        "items": [
            {"id": pid, **{k: _json_num(getattr(r, k)) for k in METRIC_FIELDS}, "errors": r.errors}
            for pid, r in result.items
        ],
    }
    (out / "report.json").write_text(json.dumps(report, indent=2) + "\n")


def _json_num(v):
    # JSON has no infinity literal
    if v is None:
        return None
    if math.isinf(v):
        return "inf" if v > 0 else "-inf"
    return v


# --------------------------------------------------------------- comparison


@dataclass
class ComparisonTable:
    columns: list[str]
    rows: list[tuple[str, list[float | None]]]

    def to_text(self, precision: int = 4) -> str:
        def cell(v):
            if v is None:
                return "n/a"
            if math.isinf(v):
                return "inf"
            return f"{v:.{precision}f}"

        header = ["Metric", *self.columns]
        body = [[label, *(cell(v) for v in vals)] for label, vals in self.rows]
        widths = [max(len(r[i]) for r in [header, *body]) for i in range(len(header))]
        lines = ["  ".join(c.ljust(widths[i]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)) for r in [header, *body]]
        rule = "-" * len(lines[0])
        return "\n".join([lines[0], rule, *lines[1:]])

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["metric", *self.columns])
            for label, vals in self.rows:
                w.writerow([label, *(_fmt(v) for v in vals)])


def _manifest_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def compare_runs(jobs: Sequence[EvalJob], output_dir: str | Path | None = None) -> ComparisonTable:
    """Evaluate each job and lay the aggregates out one column per job."""
    if not jobs:
        raise ValueError("compare_runs needs at least one job")
    digests = {_manifest_digest(j.manifest) for j in jobs}
    if len(digests) != 1:
        raise ManifestMismatchError("all jobs must share one corpus manifest")
    splits = {j.split for j in jobs}
    if len(splits) != 1:
        raise ManifestMismatchError(f"jobs select different manifest splits: {sorted(map(str, splits))}")
    results = [run_eval(j) for j in jobs]
    columns = [j.name for j in jobs]
    rows = [(label, [getattr(r.aggregate, name) for r in results]) for name, label in ROWS]
    table = ComparisonTable(columns, rows)
    if output_dir is not None:
        out = Path(output_dir)
        out.mkdir(parents=True, exist_ok=True)
        table.write_csv(out / "comparison.csv")
        (out / "comparison.txt").write_text(table.to_text() + "\n")
    return table


def genir_table(result: EvalResult, label: str | None = None) -> str:
    """Four-column EN / CC / PSNR / SSIM row for generated IR images."""
    table = ComparisonTable(
        ["EN", "CC", "PSNR", "SSIM"],
        [(label or result.job.name, [result.genir_aggregate[k] for k in GENIR_FIELDS] if result.genir_aggregate else [None] * 4)],
    )
    # one row, metrics as columns
    return table.to_text().replace("Metric", "Model ", 1)
