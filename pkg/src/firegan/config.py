"""Flat TOML run configuration with fail-fast validation."""

from __future__ import annotations

import sys
from dataclasses import MISSING, asdict, dataclass, field, fields, replace
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import PairingRule, SplitSpec
from .losses import LossWeights
from .metrics import MetricParams
from .model import NetworkSpec, discriminator_spec, g1_spec, g2_spec
from .training import TrainingConfig, transfer_config


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    # paths
    data_root: str = ""
    manifest: str = ""
    output_dir: str = "runs/firegan"
    resume_from: str = ""
    visible_suffix: str = "_rgb"
    infrared_suffix: str = "_nir"
    # data
    image_size: int = 256
    val_count: int = 96
    train_count: int = -1
    augmentation_factor: int = 1
    target_train_size: int = 6112
    augment_ops: list = field(default_factory=lambda: ["horizontal_flip", "crop", "rotate90"])
    crop_fraction: float = 0.8
    # optimisation
    seed: int = 0
    batch_size: int = 4
    epochs: int = 40
    lr_generators: float = 5e-5
    lr_discriminators: float = 1e-4
    d_update_period: int = 2
    adam_beta1: float = 0.5
    adam_beta2: float = 0.999
    checkpoint_every: int = 0
    # losses
    gamma: float = 1.0
    lambda_: float = 100.0
    xi: float = 0.5
    c1_label: float = 1.0
    c2_label: float = 1.0
    a_label: float = 0.0
    d1_real_label: float = 1.0
    d2_real_label: float = 1.0
    g1_adv_weight: float = 1.0
    content_norm: str = "hwc"
    gradient_operator: str = "laplacian"
    # transfer phase
    transfer_epochs: int = 3
    transfer_gamma: float = 4.5
    # networks
    g1_variant: str = "g1_unet"
    g1_depth: int = 4
    g1_base_filters: int = 64
    g1_kernel_size: int = 4
    g2_base_filters: int = 32
    d_depth: int = 4
    d_base_filters: int = 32
    d_kernel_size: int = 5
    spectral_norm: bool = True
    power_iterations: int = 1
    # metrics (0.0 for the ssim constants selects the derived defaults)
    entropy_levels: int = 256
    psnr_max: float = 255.0
    ssim_alpha: float = 1.0
    ssim_beta: float = 1.0
    ssim_gamma: float = 1.0
    ssim_c1: float = 0.0
    ssim_c2: float = 0.0
    ssim_c3: float = 0.0
    ssim_window: int = 11
    channel_mode: str = "per_channel"

    def validate(self) -> "RunConfig":
        """Build every derived object once so bad values fail here, by field name."""
        self.training()
        self.split_spec()
        self.metric_params()
        if self.image_size < 1:
            raise ConfigError("image_size must be >= 1")
        for key in ("g1_depth",):
            m = 2 ** getattr(self, key)
            if self.image_size % m:
                raise ConfigError(f"image_size {self.image_size} must be divisible by 2^g1_depth = {m}")
        if not 0.0 < self.crop_fraction <= 1.0:
            raise ConfigError("crop_fraction must be in (0, 1]")
        return self

    def pairing_rule(self) -> PairingRule:
        return PairingRule(self.visible_suffix, self.infrared_suffix)

    def augment_plan(self) -> list:
        return [("crop", self.crop_fraction) if op == "crop" else op for op in self.augment_ops]

    def split_spec(self) -> SplitSpec:
        try:
            return SplitSpec(
                train_count=None if self.train_count < 0 else self.train_count,
                val_count=self.val_count,
                augmentation_factor=self.augmentation_factor,
                seed=self.seed,
                target_train_size=self.target_train_size or None,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def loss_weights(self, gamma: float | None = None) -> LossWeights:
        try:
            return LossWeights(
                gamma=self.gamma if gamma is None else gamma,
                lambda_=self.lambda_,
                xi=self.xi,
                c1_label=self.c1_label,
                c2_label=self.c2_label,
                a_label=self.a_label,
                d1_real_label=self.d1_real_label,
                d2_real_label=self.d2_real_label,
                g1_adv_weight=self.g1_adv_weight,
                content_norm=self.content_norm,
                gradient_operator=self.gradient_operator,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def network_specs(self) -> tuple[NetworkSpec, NetworkSpec, NetworkSpec]:
        try:
            return (
                g1_spec(self.g1_variant, depth=self.g1_depth, base_filters=self.g1_base_filters,
                        kernel_size=self.g1_kernel_size, seed=self.seed),
                g2_spec(base_filters=self.g2_base_filters, seed=self.seed + 1),
                discriminator_spec(depth=self.d_depth, base_filters=self.d_base_filters,
                                   kernel_size=self.d_kernel_size, use_spectral_norm=self.spectral_norm,
                                   power_iterations=self.power_iterations, seed=self.seed + 2),
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def training(self) -> TrainingConfig:
        g1, g2, d = self.network_specs()
        try:
            return TrainingConfig(
                batch_size=self.batch_size,
                epochs=self.epochs,
                lr_generators=self.lr_generators,
                lr_discriminators=self.lr_discriminators,
                d_update_period=self.d_update_period,
                weights=self.loss_weights(),
                seed=self.seed,
                checkpoint_every=self.checkpoint_every,
                resume_from=self.resume_from or None,
                adam_betas=(self.adam_beta1, self.adam_beta2),
                g1=g1,
                g2=g2,
                discriminator=d,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    def transfer_training(self) -> TrainingConfig:
        return transfer_config(self.training(), epochs=self.transfer_epochs, gamma=self.transfer_gamma)

    def metric_params(self) -> MetricParams:
        try:
            return MetricParams(
                entropy_levels=self.entropy_levels,
                psnr_max=self.psnr_max,
                ssim_alpha=self.ssim_alpha,
                ssim_beta=self.ssim_beta,
                ssim_gamma=self.ssim_gamma,
                ssim_c1=self.ssim_c1 or None,
                ssim_c2=self.ssim_c2 or None,
                ssim_c3=self.ssim_c3 or None,
                ssim_window=self.ssim_window,
                channel_mode=self.channel_mode,
            )
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc


# TOML key -> dataclass field; "lambda" is a Python keyword
_ALIASES = {"lambda": "lambda_"}
_REVERSE = {v: k for k, v in _ALIASES.items()}


def _defaults() -> dict:
    out = {}
    for f in fields(RunConfig):
        out[f.name] = f.default if f.default is not MISSING else f.default_factory()
    return out


def from_mapping(data: dict, source: str = "<config>") -> RunConfig:
    defaults = _defaults()
    kwargs = {}
    unknown = []
    for key, value in data.items():
        name = _ALIASES.get(key, key)
        if name not in defaults:
            unknown.append(key)
            continue
        expected = defaults[name]
        if isinstance(expected, bool):
            ok = isinstance(value, bool)
        elif isinstance(expected, int):
            ok = isinstance(value, int) and not isinstance(value, bool)
        elif isinstance(expected, float):
            ok = isinstance(value, (int, float)) and not isinstance(value, bool)
            value = float(value) if ok else value
        elif isinstance(expected, list):
            ok = isinstance(value, list) and all(isinstance(v, str) for v in value)
        else:
            ok = isinstance(value, str)
        if not ok:
            raise ConfigError(f"{source}: {key} must be {type(expected).__name__}, got {value!r}")
        kwargs[name] = value
    if unknown:
        raise ConfigError(f"{source}: unknown config keys {sorted(unknown)}")
    return RunConfig(**kwargs).validate()


def load_config(path: str | Path | None) -> RunConfig:
    if path is None:
        return RunConfig().validate()
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = tomllib.loads(path.read_text())
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return from_mapping(data, str(path))


def _toml_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, float)):
        return repr(v)
    if isinstance(v, list):
        return "[" + ", ".join(_toml_value(x) for x in v) + "]"
    return '"' + str(v).replace("\\", "\\\\").replace('"', '\\"') + '"'


def dump_config(cfg: RunConfig) -> str:
    lines = [f"{_REVERSE.get(k, k)} = {_toml_value(v)}" for k, v in asdict(cfg).items()]
    return "\n".join(lines) + "\n"


def write_config(cfg: RunConfig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(dump_config(cfg))
    return path


def with_overrides(cfg: RunConfig, **overrides) -> RunConfig:
    return replace(cfg, **{k: v for k, v in overrides.items() if v is not None}).validate()
