"""Adversarial training loop: TTUR optimizers, G:D update schedule, checkpoints."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import torch

from . import losses as L
from .data import ImagePair, pair_to_model_domain
from .metrics import METRIC_FIELDS, MetricParams, aggregate, evaluate_generated, evaluate_triple, mean_ignoring_none
from .model import (
    Discriminator,
    G1,
    G2Net,
    NetworkSpec,
    build_discriminator,
    build_g1,
    build_g2,
    fuse,
    generate_ir,
    discriminator_spec,
    g1_spec,
    g2_spec,
    load_network,
    read_tensors,
    save_network,
    write_tensors,
)

log = logging.getLogger(__name__)

LOSS_COLUMNS = ("step",) + L.LossReport.FIELDS
VAL_COLUMNS = ("epoch", "step", "genir_en", "genir_cc", "genir_psnr", "genir_ssim") + METRIC_FIELDS


class TrainingAborted(RuntimeError):
    pass


class LineageError(ValueError):
    pass


@dataclass(frozen=True)
class TrainingConfig:
    batch_size: int = 4
    epochs: int = 40
    lr_generators: float = 5e-5
    lr_discriminators: float = 1e-4
    d_update_period: int = 2
    weights: L.LossWeights = field(default_factory=L.LossWeights)
    seed: int = 0
    # 0 -> checkpoint only at the end of fit
    checkpoint_every: int = 0
    resume_from: str | None = None
    adam_betas: tuple[float, float] = (0.5, 0.999)
    g1: NetworkSpec = field(default_factory=g1_spec)
    g2: NetworkSpec = field(default_factory=g2_spec)
    discriminator: NetworkSpec = field(default_factory=discriminator_spec)

    def __post_init__(self):
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not self.lr_generators > 0:
            raise ValueError("lr_generators must be positive")
        if not self.lr_discriminators > 0:
            raise ValueError("lr_discriminators must be positive")
        if self.d_update_period < 1:
            raise ValueError("d_update_period must be >= 1")
        if self.checkpoint_every < 0:
            raise ValueError("checkpoint_every must be >= 0")


TRANSFER_EPOCHS = 3
TRANSFER_GAMMA = 4.5


def transfer_config(cfg: TrainingConfig | None = None, **overrides) -> TrainingConfig:
    """Fine-tuning settings: 3 epochs and gamma 4.5, everything else inherited."""
    cfg = cfg or TrainingConfig()
    weights = replace(cfg.weights, gamma=overrides.pop("gamma", TRANSFER_GAMMA))
    return replace(cfg, epochs=overrides.pop("epochs", TRANSFER_EPOCHS), weights=weights, **overrides)


@dataclass
class TrainState:
    g1: G1
    g2: G2Net
    d1: Discriminator
    d2: Discriminator
    optimizers: dict[str, torch.optim.Optimizer]
    step: int = 0
    epoch: int = 0
    d_updates: int = 0

    def networks(self) -> dict[str, torch.nn.Module]:
        return {"g1": self.g1, "g2": self.g2, "d1": self.d1, "d2": self.d2}


def make_optimizers(cfg: TrainingConfig, g1, g2, d1, d2) -> dict[str, torch.optim.Optimizer]:
    """Independent Adam optimizers; generators and discriminators get their own rates."""
    if not cfg.lr_generators > 0:
        raise ValueError("lr_generators must be positive")
    if not cfg.lr_discriminators > 0:
        raise ValueError("lr_discriminators must be positive")
    if cfg.lr_generators == cfg.lr_discriminators:
        log.warning("TTUR disabled: generator and discriminator learning rates are equal (%g)", cfg.lr_generators)
    betas = tuple(cfg.adam_betas)
    return {
        "g1": torch.optim.Adam(g1.parameters(), lr=cfg.lr_generators, betas=betas),
        "g2": torch.optim.Adam(g2.parameters(), lr=cfg.lr_generators, betas=betas),
        "d1": torch.optim.Adam(d1.parameters(), lr=cfg.lr_discriminators, betas=betas),
        "d2": torch.optim.Adam(d2.parameters(), lr=cfg.lr_discriminators, betas=betas),
    }


def init_state(cfg: TrainingConfig) -> TrainState:
    g1 = build_g1(cfg.g1)
    g2 = build_g2(cfg.g2)
    d1 = build_discriminator(cfg.discriminator)
    d2 = build_discriminator(replace(cfg.discriminator, seed=cfg.discriminator.seed + 7919))
    return TrainState(g1, g2, d1, d2, make_optimizers(cfg, g1, g2, d1, d2))


def batch_tensors(batch: Sequence[ImagePair]) -> tuple[torch.Tensor, torch.Tensor]:
    """Stack a batch into (visible, infrared) NCHW float tensors in model domain."""
    vis, ir = [], []
    for pair in batch:
        pair = pair_to_model_domain(pair)
        vis.append(pair.visible.values.transpose(2, 0, 1))
        ir.append(pair.infrared.to_rgb().values.transpose(2, 0, 1))
    return torch.from_numpy(np.stack(vis)).float(), torch.from_numpy(np.stack(ir)).float()


def _zero_all(state: TrainState) -> None:
    for net in state.networks().values():
        net.zero_grad(set_to_none=True)


def _guard(name: str, value: torch.Tensor) -> None:
    if not torch.isfinite(value).all():
        raise TrainingAborted(f"non-finite loss in {name} ({value.item()})")


def _compute(name: str, fn, *args):
    """Evaluate one objective; non-finite inputs abort the run naming the term."""
    try:
        return fn(*args)
    except L.LossError as exc:
        if "non-finite" in str(exc):
            raise TrainingAborted(f"non-finite loss in {name}: {exc}") from exc
        raise


def train_step(state: TrainState, batch: Sequence[ImagePair], cfg: TrainingConfig) -> tuple[TrainState, L.LossReport]:
    """One generator update (G1 then G2) and, every ``d_update_period`` steps, D1 and D2."""
    if len(batch) != cfg.batch_size:
        raise ValueError(f"batch has {len(batch)} pairs, expected {cfg.batch_size}")
    leaked = [p.id for p in batch if p.split == "val"]
    if leaked:
        raise LineageError(f"validation pairs in a training batch: {leaked}")
    vis, ir = batch_tensors(batch)
    w = cfg.weights
    g1, g2, d1, d2, opt = state.g1, state.g2, state.d1, state.d2, state.optimizers

    g1.train()
    g2.train()
    # power iterations advance only on discriminator updates
    d1.eval()
    d2.eval()

    _zero_all(state)
    gen_ir = g1(vis)
    loss_g1 = _compute("g1_total", L.g1_loss, d2(gen_ir), gen_ir, ir, w)
    _guard("g1_total", loss_g1)
    loss_g1.backward()
    opt["g1"].step()

    gen_ir = gen_ir.detach()
    _zero_all(state)
    fused = g2(torch.cat([vis, gen_ir], dim=1))
    terms = _compute("g2_total", L.g2_loss, d1(fused), d2(fused), fused, ir, vis, w)
    for name in ("adv_d1", "adv_d2", "content", "total"):
        _guard(f"g2_{name}", getattr(terms, name))
    terms.total.backward()
    opt["g2"].step()

    report = L.LossReport(
        g1_total=loss_g1.item(),
        g2_total=terms.total.item(),
        g2_adv_d1=terms.adv_d1.item(),
        g2_adv_d2=terms.adv_d2.item(),
        g2_content=terms.content.item(),
    )

    if state.step % cfg.d_update_period == 0:
        fused = fused.detach()
        d1.train()
        d2.train()
        _zero_all(state)
        loss_d1 = _compute("d1_total", L.d1_loss, d1(vis), d1(fused), w)
        _guard("d1_total", loss_d1)
        loss_d1.backward()
        opt["d1"].step()
        _zero_all(state)
        loss_d2 = _compute("d2_total", L.d2_loss, d2(ir), d2(gen_ir), d2(fused), w)
        _guard("d2_total", loss_d2)
        loss_d2.backward()
        opt["d2"].step()
        report.d1_total = loss_d1.item()
        report.d2_total = loss_d2.item()
        state.d_updates += 1

    _zero_all(state)
    state.step += 1
    return state, report


# ------------------------------------------------------------- checkpoints


def save_state(state: TrainState, directory: str | Path, cfg: TrainingConfig | None = None, extra: dict | None = None) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, net in state.networks().items():
        save_network(net, directory / name)
    tensors: dict[str, torch.Tensor] = {"torch_rng": torch.get_rng_state()}
    groups = {}
    for name, opt in state.optimizers.items():
        sd = opt.state_dict()
        groups[name] = sd["param_groups"]
        for idx, slots in sd["state"].items():
            for key, t in slots.items():
                tensors[f"{name}.{idx}.{key}"] = t
    manifest = write_tensors(directory / "optim", tensors)
    meta = {
        "step": state.step,
        "epoch": state.epoch,
        "d_updates": state.d_updates,
        "param_groups": groups,
        "tensors": manifest,
    }
    if cfg is not None:
        meta["config"] = config_to_dict(cfg)
    if extra:
        meta.update(extra)
    (directory / "state.json").write_text(json.dumps(meta, indent=2) + "\n")
    return directory


def load_state(directory: str | Path, cfg: TrainingConfig | None = None) -> TrainState:
    directory = Path(directory)
    if not (directory / "state.json").exists():
        raise FileNotFoundError(f"no training checkpoint at {directory}")
    meta = json.loads((directory / "state.json").read_text())
    nets = {name: load_network(directory / name) for name in ("g1", "g2", "d1", "d2")}
    if cfg is None:
        cfg = config_from_dict(meta["config"]) if "config" in meta else TrainingConfig()
    opts = make_optimizers(cfg, nets["g1"], nets["g2"], nets["d1"], nets["d2"])
    tensors = read_tensors(directory / "optim", meta["tensors"])
    for name, opt in opts.items():
        state: dict[int, dict] = {}
        prefix = f"{name}."
        for key, t in tensors.items():
            if key.startswith(prefix):
                idx, slot = key[len(prefix):].split(".", 1)
                state.setdefault(int(idx), {})[slot] = t
        opt.load_state_dict({"state": state, "param_groups": meta["param_groups"][name]})
    torch.set_rng_state(tensors["torch_rng"])
    return TrainState(
        nets["g1"], nets["g2"], nets["d1"], nets["d2"], opts,
        step=meta["step"], epoch=meta["epoch"], d_updates=meta["d_updates"],
    )


def load_generators(directory: str | Path) -> tuple[G1, G2Net]:
    directory = Path(directory)
    if not directory.exists():
        raise FileNotFoundError(f"checkpoint not found: {directory}")
    g1 = load_network(directory / "g1")
    g2 = load_network(directory / "g2")
    g1.eval()
    g2.eval()
    return g1, g2


def config_to_dict(cfg: TrainingConfig) -> dict:
    d = asdict(cfg)
    d["adam_betas"] = list(cfg.adam_betas)
    return d


def config_from_dict(d: dict) -> TrainingConfig:
    d = dict(d)
    d["weights"] = L.LossWeights(**d["weights"])
    d["adam_betas"] = tuple(d["adam_betas"])
    for key in ("g1", "g2", "discriminator"):
        d[key] = NetworkSpec(**d[key])
    return TrainingConfig(**d)


# -------------------------------------------------------------------- loop


def epoch_order(n: int, seed: int, epoch: int) -> np.ndarray:
    return np.random.default_rng([seed, epoch]).permutation(n)


def validate(state: TrainState, val: Sequence[ImagePair], params: MetricParams) -> dict:
    """Aggregate generated-IR and fused metrics over the validation pairs."""
    gen_rows, triples = [], []
    for pair in val:
        pair = pair_to_model_domain(pair)
        gen = generate_ir(state.g1, pair.visible)
        fused = fuse(state.g2, pair.visible, gen)
        gen_rows.append(evaluate_generated(pair.infrared, gen, params))
        triples.append(evaluate_triple(pair.visible, pair.infrared, fused, params))
    agg = aggregate(triples)
    row = {f"genir_{k}": mean_ignoring_none(r[k] for r in gen_rows) for k in ("en", "cc", "psnr", "ssim")}
    row.update({k: getattr(agg, k) for k in METRIC_FIELDS})
    return row


def _append_csv(path: Path, columns: Sequence[str], row: dict) -> None:
    new = not path.exists()
    with open(path, "a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns))
        if new:
            writer.writeheader()
        writer.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in columns})


StepHook = Callable[[TrainState, L.LossReport], None]


def fit(
    train: Sequence[ImagePair],
    val: Sequence[ImagePair],
    cfg: TrainingConfig,
    out_dir: str | Path | None = None,
    state: TrainState | None = None,
    metric_params: MetricParams | None = None,
    hooks: Sequence[StepHook] = (),
    max_steps: int | None = None,
    checkpoint_extra: dict | None = None,
) -> TrainState:
    """Run ``cfg.epochs`` passes of ``len(train) // batch_size`` steps.

    Resumes from ``cfg.resume_from`` (or a given ``state``) at its recorded step.
    ``max_steps`` stops early after that many global steps (dry runs, tests).
    """
    steps_per_epoch = len(train) // cfg.batch_size
    if steps_per_epoch == 0:
        raise ValueError(f"training set of {len(train)} pairs is smaller than batch_size {cfg.batch_size}")
    if state is None:
        torch.manual_seed(cfg.seed)
        state = load_state(cfg.resume_from, cfg) if cfg.resume_from else init_state(cfg)
    params = metric_params or MetricParams()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    total = cfg.epochs * steps_per_epoch
    if max_steps is not None:
        total = min(total, max_steps)

    while state.step < total:
        epoch, idx = divmod(state.step, steps_per_epoch)
        state.epoch = epoch
        order = epoch_order(len(train), cfg.seed, epoch)
        batch = [train[i] for i in order[idx * cfg.batch_size : (idx + 1) * cfg.batch_size]]
        step = state.step
        state, report = train_step(state, batch, cfg)
        for hook in hooks:
            hook(state, report)
        if out is not None:
            _append_csv(out / "losses.csv", LOSS_COLUMNS, report.as_row(step))
            if cfg.checkpoint_every and state.step % cfg.checkpoint_every == 0:
                save_state(state, out / "checkpoints" / f"step_{state.step:07d}", cfg, checkpoint_extra)
        if state.step % steps_per_epoch == 0:
            state.epoch = epoch + 1
            if val and out is not None:
                row = validate(state, val, params)
                row.update(epoch=epoch, step=state.step)
                _append_csv(out / "val_metrics.csv", VAL_COLUMNS, row)
                log.info("epoch %d val genir_ssim=%s", epoch, row.get("genir_ssim"))

    if out is not None:
        save_state(state, out / "checkpoints" / "final", cfg, checkpoint_extra)
    return state


def transfer_learn(
    state: TrainState,
    fire_corpus: Sequence[ImagePair],
    cfg: TrainingConfig | None = None,
    val: Sequence[ImagePair] = (),
    out_dir: str | Path | None = None,
    metric_params: MetricParams | None = None,
    checkpoint_extra: dict | None = None,
    max_steps: int | None = None,
) -> TrainState:
    """Continue training pretrained networks on a new corpus with fresh counters and optimizers."""
    cfg = cfg or transfer_config()
    fresh = TrainState(
        state.g1, state.g2, state.d1, state.d2,
        make_optimizers(cfg, state.g1, state.g2, state.d1, state.d2),
    )
    torch.manual_seed(cfg.seed)
    return fit(
        fire_corpus, val, replace(cfg, resume_from=None), out_dir=out_dir, state=fresh,
        metric_params=metric_params, checkpoint_extra=checkpoint_extra, max_steps=max_steps,
    )


def probe_forward(state: TrainState, probe: torch.Tensor) -> dict[str, torch.Tensor]:
    """Eval-mode outputs of all four networks on ``probe`` (checkpoint round-trip checks)."""
    outs = {}
    with torch.no_grad():
        for net in state.networks().values():
            net.eval()
        gen = state.g1(probe)
        fused = state.g2(torch.cat([probe, gen], dim=1))
        outs = {"g1": gen, "g2": fused, "d1": state.d1(fused), "d2": state.d2(gen)}
    return outs
