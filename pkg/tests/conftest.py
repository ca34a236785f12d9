import sys
from pathlib import Path

import numpy as np
import pytest
from PIL import Image

sys.path.insert(0, str(Path(__file__).parent))

from firegan.data import ImagePair, ImageTensor
from firegan.model import discriminator_spec, g1_spec, g2_spec
from firegan.training import TrainingConfig


def gradient_pair(k: int, size: int = 32, split: str | None = "train") -> ImagePair:
    """Coloured gradient visible image; infrared is a fixed tone curve of its luma."""
    y, x = np.mgrid[0:size, 0:size] / (size - 1)
    theta = k * np.pi / 8
    t = np.cos(theta) * x + np.sin(theta) * y
    t = (t - t.min()) / (t.max() - t.min())
    colour = np.array([[1, 0.3, 0.1], [0.2, 0.9, 0.4], [0.1, 0.4, 1.0], [0.9, 0.9, 0.2]])[k % 4]
    vis = 255 * (0.15 + 0.85 * t[..., None] * colour[None, None, :])
    gray = vis @ np.array([0.299, 0.587, 0.114])
    ir = 255 * (1 - gray / 255) ** 1.5
    return ImagePair(ImageTensor(vis), ImageTensor(np.repeat(ir[..., None], 3, 2)), f"s{k}", split)


@pytest.fixture
def synthetic_pairs():
    return [gradient_pair(k) for k in range(8)]


def tiny_config(**kw) -> TrainingConfig:
    base = dict(
        epochs=100,
        g1=g1_spec(base_filters=8, depth=3),
        g2=g2_spec(base_filters=4),
        discriminator=discriminator_spec(base_filters=8, depth=3),
    )
    base.update(kw)
    return TrainingConfig(**base)


@pytest.fixture
def tiny_cfg():
    return tiny_config()


def write_corpus(root: Path, n: int, size: int = 32, ir_gray: bool = True, seed: int = 0) -> list[str]:
    """Write n random rgb/nir PNG pairs named <id>_rgb.png / <id>_nir.png."""
    rng = np.random.default_rng(seed)
    root.mkdir(parents=True, exist_ok=True)
    ids = []
    for i in range(n):
        pid = f"{i:04d}"
        vis = rng.integers(0, 256, (size, size, 3), dtype=np.uint8)
        ir = rng.integers(0, 256, (size, size), dtype=np.uint8)
        Image.fromarray(vis).save(root / f"{pid}_rgb.png")
        Image.fromarray(ir if ir_gray else np.repeat(ir[..., None], 3, 2)).save(root / f"{pid}_nir.png")
        ids.append(pid)
    return ids


def write_manifest(root: Path, ids: list[str], name: str = "manifest.csv") -> Path:
    path = root / name
    lines = ["id,visible_path,infrared_path"] + [f"{i},{i}_rgb.png,{i}_nir.png" for i in ids]
    path.write_text("\n".join(lines) + "\n")
    return path


def copy_visible_as_fused(root: Path, ids: list[str], out: Path) -> Path:
    import shutil

    out.mkdir(parents=True, exist_ok=True)
    for i in ids:
        shutil.copy(root / f"{i}_rgb.png", out / f"{i}_fused.png")
    return out


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
