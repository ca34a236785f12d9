"""G1 / G2 generators, spectrally normalized discriminators, and checkpoint IO."""

from __future__ import annotations

import json
import sys
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

from .data import MODEL_SIGNED, DomainError, ImageTensor

G1_ENCDEC = "g1_encdec"
G1_UNET = "g1_unet"
G2 = "g2"
DISCRIMINATOR = "discriminator"
KINDS = (G1_ENCDEC, G1_UNET, G2, DISCRIMINATOR)


class ShapeError(ValueError):
    pass


class CheckpointError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    kind: str
    depth: int = 4
    base_filters: int = 64
    kernel_size: int = 4
    use_spectral_norm: bool = False
    output_channels: int = 3
    seed: int = 0
    # power iterations per forward pass for spectral normalization
    power_iterations: int = 1

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown network kind {self.kind!r}")
        if self.depth < 1:
            raise ValueError("depth must be >= 1")
        if self.base_filters < 1:
            raise ValueError("base_filters must be >= 1")
        if self.kernel_size < 1:
            raise ValueError("kernel_size must be >= 1")
        if self.power_iterations < 1:
            raise ValueError("power_iterations must be >= 1")
        if self.kind == DISCRIMINATOR:
            if self.output_channels != 1:
                raise ValueError("discriminators have output_channels == 1")
        elif self.output_channels != 3:
            raise ValueError("generators emit 3 channels (1-channel output mode is not supported)")


def g1_spec(variant: str = G1_UNET, **kw) -> NetworkSpec:
    return NetworkSpec(kind=variant, **{"depth": 4, "base_filters": 64, "kernel_size": 4, **kw})


def g2_spec(**kw) -> NetworkSpec:
    return NetworkSpec(kind=G2, **{"depth": 4, "base_filters": 32, "kernel_size": 5, **kw})


def discriminator_spec(**kw) -> NetworkSpec:
    return NetworkSpec(
        kind=DISCRIMINATOR,
        **{"depth": 4, "base_filters": 32, "kernel_size": 5, "use_spectral_norm": True, "output_channels": 1, **kw},
    )


# ------------------------------------------------------------ spectral norm


def _l2normalize(v: torch.Tensor, eps: float = 1e-12) -> torch.Tensor:
    return v / (v.norm() + eps)


class SpectralNorm(nn.Module):
    """Wraps a layer so its weight is divided by its leading singular value.

    ``weight_orig`` is the trainable parameter; ``u``/``v`` are the persisted
    power-iteration vectors. They advance only in training mode, so eval
    forwards are deterministic.
    """

    WARMUP_ITERATIONS = 50

    def __init__(self, module: nn.Module, power_iterations: int = 1, generator: torch.Generator | None = None):
        super().__init__()
        self.module = module
        self.power_iterations = power_iterations
        w = module.weight
        rows = w.shape[0]
        cols = w[0].numel()
        self.weight_orig = nn.Parameter(w.detach().clone())
        del module._parameters["weight"]
        self.register_buffer("u", _l2normalize(torch.randn(rows, generator=generator, dtype=w.dtype)))
        self.register_buffer("v", _l2normalize(torch.randn(cols, generator=generator, dtype=w.dtype)))
        module.weight = self.weight_orig.detach()
        # converge the persisted vectors once so later single-step updates track sigma
        self.power_iterate(self.WARMUP_ITERATIONS)

    def matrix(self) -> torch.Tensor:
        return self.weight_orig.reshape(self.weight_orig.shape[0], -1)

    @torch.no_grad()
    def power_iterate(self, n: int) -> None:
        w = self.matrix()
        u, v = self.u, self.v
        for _ in range(n):
            v = _l2normalize(w.t() @ u)
            u = _l2normalize(w @ v)
        self.u.copy_(u)
        self.v.copy_(v)

    def sigma(self) -> torch.Tensor:
        # gradient flows through w only; clones keep later in-place updates out of the graph
        return torch.dot(self.u.clone(), self.matrix() @ self.v.clone())

    def normalized_weight(self) -> torch.Tensor:
        return self.weight_orig / self.sigma()

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if self.training:
            self.power_iterate(self.power_iterations)
        self.module.weight = self.normalized_weight()
        return self.module(x)


def spectral_layers(net: nn.Module) -> list[SpectralNorm]:
    return [m for m in net.modules() if isinstance(m, SpectralNorm)]


# -------------------------------------------------------------- networks


def _down_conv(cin: int, cout: int, k: int) -> nn.Conv2d:
    return nn.Conv2d(cin, cout, k, stride=2, padding=(k - 1) // 2)


def _up_conv(cin: int, cout: int, k: int) -> nn.ConvTranspose2d:
    # exact x2 upsampling for both even and odd kernels
    return nn.ConvTranspose2d(cin, cout, k, stride=2, padding=(k - 1) // 2, output_padding=k % 2)


def _init_weights(net: nn.Module, seed: int) -> None:
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for m in net.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d)):
                w = m._parameters.get("weight")
                if w is not None:
                    w.copy_(torch.randn(w.shape, generator=gen) * 0.02)
                if m.bias is not None:
                    m.bias.zero_()
            elif isinstance(m, nn.BatchNorm2d):
                m.weight.fill_(1.0)
                m.bias.zero_()


class Network(nn.Module):
    """Base for the four networks: holds its NetworkSpec and validates input shapes."""

    in_channels = 3

    def __init__(self, spec: NetworkSpec):
        super().__init__()
        self.spec = spec

    def check_input(self, x: torch.Tensor) -> None:
        if x.ndim != 4:
            raise ShapeError(f"expected NCHW batch, got shape {tuple(x.shape)}")
        if x.shape[1] != self.in_channels:
            raise ShapeError(f"{self.spec.kind} expects {self.in_channels} input channels, got {x.shape[1]}")

    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


class G1(Network):
    """Visible -> synthetic infrared. Encoder-decoder or U-Net."""

    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        self.unet = spec.kind == G1_UNET
        k, d, b = spec.kernel_size, spec.depth, spec.base_filters
        widths = [b * 2 ** min(i, 3) for i in range(d)]
        self.encoder = nn.ModuleList()
        cin = 3
        for i, w in enumerate(widths):
            layers: list[nn.Module] = [_down_conv(cin, w, k)]
            if i > 0:
                layers.append(nn.BatchNorm2d(w))
            layers.append(nn.LeakyReLU(0.2))
            self.encoder.append(nn.Sequential(*layers))
            cin = w
        self.decoder = nn.ModuleList()
        for j in range(d - 1):
            cin_j = widths[d - 1] if j == 0 else widths[d - 1 - j] * (2 if self.unet else 1)
            cout = widths[d - 2 - j]
            self.decoder.append(nn.Sequential(_up_conv(cin_j, cout, k), nn.BatchNorm2d(cout), nn.ReLU()))
        last_in = widths[0] * (2 if (self.unet and d > 1) else 1)
        self.head = nn.Sequential(_up_conv(last_in, spec.output_channels, k), nn.Tanh())
        _init_weights(self, spec.seed)

    def check_input(self, x):
        super().check_input(x)
        m = 2 ** self.spec.depth
        if x.shape[2] % m or x.shape[3] % m:
            raise ShapeError(f"input {x.shape[2]}x{x.shape[3]} not divisible by 2^depth = {m}")

    def forward(self, x: torch.Tensor, skip_scale: dict[int, float] | None = None) -> torch.Tensor:
        """``skip_scale`` maps encoder stage -> multiplier, used to probe U-Net wiring."""
        self.check_input(x)
        feats = []
        h = x
        for stage in self.encoder:
            h = stage(h)
            feats.append(h)
        d = self.spec.depth
        for j, stage in enumerate(self.decoder):
            if j > 0 and self.unet:
                h = torch.cat([h, self._skip(feats, d - 1 - j, skip_scale)], dim=1)
            h = stage(h)
        if self.unet and d > 1:
            h = torch.cat([h, self._skip(feats, 0, skip_scale)], dim=1)
        return self.head(h)

    @staticmethod
    def _skip(feats, i, skip_scale):
        if skip_scale and i in skip_scale:
            return feats[i] * skip_scale[i]
        return feats[i]


class G2Net(Network):
    """Fusion generator: (visible ++ infrared) 6 channels -> 3-channel fused image."""

    in_channels = 6

    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        b = spec.base_filters
        plan = [(8 * b, 5), (4 * b, 5), (2 * b, 3), (b, 3)]
        layers: list[nn.Module] = []
        cin = self.in_channels
        for cout, k in plan:
            layers += [nn.Conv2d(cin, cout, k, padding=k // 2), nn.BatchNorm2d(cout), nn.LeakyReLU(0.2)]
            cin = cout
        layers += [nn.Conv2d(cin, spec.output_channels, 1), nn.Tanh()]
        self.body = nn.Sequential(*layers)
        _init_weights(self, spec.seed)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.body(x)


class Discriminator(Network):
    """Strided conv body with a linear 1x1 score head; emits a patch score map."""

    def __init__(self, spec: NetworkSpec):
        super().__init__(spec)
        k, b = spec.kernel_size, spec.base_filters
        convs: list[nn.Module] = []
        cin = 3
        for i in range(spec.depth):
            cout = b * 2**i
            convs.append(_down_conv(cin, cout, k))
            cin = cout
        convs.append(nn.Conv2d(cin, 1, 1))
        _init_weights(nn.ModuleList(convs), spec.seed)
        gen = torch.Generator().manual_seed(spec.seed + 1)
        if spec.use_spectral_norm:
            convs = [SpectralNorm(c, spec.power_iterations, gen) for c in convs]
        layers: list[nn.Module] = []
        for c in convs[:-1]:
            layers += [c, nn.LeakyReLU(0.2)]
        layers.append(convs[-1])
        self.body = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        self.check_input(x)
        return self.body(x)


def build_g1(spec: NetworkSpec) -> G1:
    if spec.kind not in (G1_ENCDEC, G1_UNET):
        raise ValueError(f"build_g1 needs a g1 spec, got {spec.kind!r}")
    return G1(spec)


def build_g2(spec: NetworkSpec) -> G2Net:
    if spec.kind != G2:
        raise ValueError(f"build_g2 needs a g2 spec, got {spec.kind!r}")
    return G2Net(spec)


def build_discriminator(spec: NetworkSpec) -> Discriminator:
    if spec.kind != DISCRIMINATOR:
        raise ValueError(f"build_discriminator needs a discriminator spec, got {spec.kind!r}")
    return Discriminator(spec)


def build(spec: NetworkSpec) -> Network:
    if spec.kind in (G1_ENCDEC, G1_UNET):
        return build_g1(spec)
    if spec.kind == G2:
        return build_g2(spec)
    return build_discriminator(spec)


# ------------------------------------------------------- image-level ops


def image_to_batch(img: ImageTensor) -> torch.Tensor:
    return torch.from_numpy(np.ascontiguousarray(img.values.transpose(2, 0, 1))).float().unsqueeze(0)


def batch_to_image(x: torch.Tensor) -> ImageTensor:
    arr = x.detach().to(torch.float64).squeeze(0).permute(1, 2, 0).numpy()
    return ImageTensor(np.clip(arr, -1.0, 1.0), MODEL_SIGNED)


def _require_model_rgb(img: ImageTensor, what: str) -> None:
    if img.domain != MODEL_SIGNED:
        raise DomainError(f"{what} must be in the {MODEL_SIGNED} domain, got {img.domain}")
    if img.channels != 3:
        raise ShapeError(f"{what} must have 3 channels, got {img.channels}")


@torch.no_grad()
def generate_ir(g1: G1, visible: ImageTensor) -> ImageTensor:
    _require_model_rgb(visible, "visible")
    was_training = g1.training
    g1.eval()
    try:
        return batch_to_image(g1(image_to_batch(visible)))
    finally:
        g1.train(was_training)


@torch.no_grad()
def fuse(g2: G2Net, visible: ImageTensor, infrared: ImageTensor) -> ImageTensor:
    _require_model_rgb(visible, "visible")
    _require_model_rgb(infrared, "infrared")
    if visible.shape[:2] != infrared.shape[:2]:
        raise ShapeError(f"visible {visible.shape[:2]} and infrared {infrared.shape[:2]} differ")
    was_training = g2.training
    g2.eval()
    try:
        x = torch.cat([image_to_batch(visible), image_to_batch(infrared)], dim=1)
        return batch_to_image(g2(x))
    finally:
        g2.train(was_training)


# ------------------------------------------------------------ checkpoints

_DTYPES = {
    torch.float32: "float32",
    torch.float64: "float64",
    torch.int64: "int64",
    torch.uint8: "uint8",
}


def write_tensors(directory: Path, tensors: dict[str, torch.Tensor]) -> dict:
    """One raw blob per tensor plus a manifest entry (shape, dtype, byte order)."""
    blob_dir = directory / "blobs"
    blob_dir.mkdir(parents=True, exist_ok=True)
    manifest = {}
    for i, (name, t) in enumerate(tensors.items()):
        t = t.detach().cpu().contiguous()
        if t.dtype not in _DTYPES:
            raise CheckpointError(f"unsupported dtype {t.dtype} for {name}")
        fname = f"{i:04d}.bin"
        (blob_dir / fname).write_bytes(t.numpy().tobytes())
        manifest[name] = {
            "file": f"blobs/{fname}",
            "shape": list(t.shape),
            "dtype": _DTYPES[t.dtype],
            "byte_order": sys.byteorder,
        }
    return manifest


def read_tensors(directory: Path, manifest: dict) -> dict[str, torch.Tensor]:
    out = {}
    for name, meta in manifest.items():
        raw = (directory / meta["file"]).read_bytes()
        dt = np.dtype(meta["dtype"]).newbyteorder("<" if meta["byte_order"] == "little" else ">")
        arr = np.frombuffer(raw, dtype=dt)
        expected = int(np.prod(meta["shape"])) if meta["shape"] else 1
        if arr.size != expected:
            raise CheckpointError(f"blob for {name} holds {arr.size} values, manifest says {meta['shape']}")
        out[name] = torch.from_numpy(arr.astype(dt.newbyteorder("="), copy=True).reshape(meta["shape"]))
    return out


def save_network(net: Network, directory: str | Path) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "spec.json").write_text(json.dumps(asdict(net.spec), indent=2) + "\n")
    manifest = write_tensors(directory, net.state_dict())
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return directory


def load_network(directory: str | Path) -> Network:
    directory = Path(directory)
    if not (directory / "spec.json").exists():
        raise FileNotFoundError(f"no network checkpoint at {directory}")
    spec = NetworkSpec(**json.loads((directory / "spec.json").read_text()))
    net = build(spec)
    manifest = json.loads((directory / "manifest.json").read_text())
    expected = net.state_dict()
    if set(manifest) != set(expected):
        missing = sorted(set(expected) - set(manifest))
        extra = sorted(set(manifest) - set(expected))
        raise CheckpointError(f"{directory}: parameter names differ (missing {missing}, unexpected {extra})")
    for name, meta in manifest.items():
        if list(expected[name].shape) != meta["shape"]:
            raise CheckpointError(
                f"{directory}: {name} has shape {meta['shape']}, spec requires {list(expected[name].shape)}"
            )
    net.load_state_dict(read_tensors(directory, manifest))
    return net
