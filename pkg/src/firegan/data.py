"""Paired visible/infrared corpora: loading, domain conversion, augmentation, splits."""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import os
from dataclasses import dataclass, replace
from pathlib import Path
from collections.abc import Iterable, Sequence

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

FILE_U8 = "file_u8"
MODEL_SIGNED = "model_signed"
DOMAINS = {FILE_U8: (0.0, 255.0), MODEL_SIGNED: (-1.0, 1.0)}

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg", ".tif", ".tiff", ".bmp")


class DataError(ValueError):
    """Base class for corpus and image validation failures."""


class MissingPartnerError(DataError):
    pass


class DimensionMismatchError(DataError):
    pass


class UnreadableFileError(DataError):
    pass


class DomainError(DataError):
    pass


@dataclass(frozen=True)
class ImageTensor:
    """An (H, W, C) raster tagged with its value domain."""

    values: np.ndarray
    domain: str = FILE_U8

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.ndim == 2:
            v = v[:, :, None]
        if v.ndim != 3:
            raise DataError(f"expected (H, W, C) array, got shape {v.shape}")
        if self.domain not in DOMAINS:
            raise DomainError(f"unknown domain {self.domain!r}")
        h, w, c = v.shape
        if h < 1 or w < 1:
            raise DataError(f"empty image of shape {v.shape}")
        if c not in (1, 3):
            raise DataError(f"channels must be 1 or 3, got {c}")
        if not np.all(np.isfinite(v)):
            raise DataError("image contains non-finite values")
        lo, hi = DOMAINS[self.domain]
        # small tolerance for float round-off at the interval ends
        if v.min() < lo - 1e-6 or v.max() > hi + 1e-6:
            raise DomainError(
                f"values [{v.min():.4g}, {v.max():.4g}] outside {self.domain} interval [{lo}, {hi}]"
            )
        object.__setattr__(self, "values", v)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.values.shape

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def channels(self) -> int:
        return self.values.shape[2]

    def to_rgb(self) -> "ImageTensor":
        if self.channels == 3:
            return self
        return ImageTensor(np.repeat(self.values, 3, axis=2), self.domain)


@dataclass(frozen=True)
class ImagePair:
    visible: ImageTensor
    infrared: ImageTensor
    id: str
    # lineage tag set by split(); training refuses "val" items
    split: str | None = None

    def __post_init__(self):
        if self.visible.channels != 3:
            raise DataError(f"pair {self.id!r}: visible image must have 3 channels")
        if self.visible.shape[:2] != self.infrared.shape[:2]:
            raise DimensionMismatchError(
                f"pair {self.id!r}: visible {self.visible.shape[:2]} vs infrared {self.infrared.shape[:2]}"
            )
        if self.visible.domain != self.infrared.domain:
            raise DomainError(f"pair {self.id!r}: members in different domains")


@dataclass(frozen=True)
class PairingRule:
    visible_suffix: str = "_rgb"
    infrared_suffix: str = "_nir"


@dataclass(frozen=True)
class SplitSpec:
    """How to carve a corpus into train/val.

    ``train_count=None`` takes every pair not drawn for validation.
    ``target_train_size`` (when set) overrides ``augmentation_factor`` for
    :func:`expand_training_set`, which is how non-integer multiples such as
    381 -> 6112 are reached.
    """

    train_count: int | None = None
    val_count: int = 0
    augmentation_factor: int = 1
    seed: int = 0
    target_train_size: int | None = None

    def __post_init__(self):
        if self.val_count < 0:
            raise ValueError("val_count must be >= 0")
        if self.train_count is not None and self.train_count < 0:
            raise ValueError("train_count must be >= 0")
        if self.augmentation_factor < 1:
            raise ValueError("augmentation_factor must be >= 1")
        if self.target_train_size is not None and self.target_train_size < 0:
            raise ValueError("target_train_size must be >= 0")


# --------------------------------------------------------------------------- io


def _cache_path(path: Path) -> Path | None:
    cache_dir = os.environ.get("FIREGAN_CACHE_DIR")
    if not cache_dir:
        return None
    st = path.stat()
    key = hashlib.sha1(f"{path.resolve()}|{st.st_size}|{st.st_mtime_ns}".encode()).hexdigest()
    return Path(cache_dir) / f"{key}.npy"


def read_image(path: str | os.PathLike) -> ImageTensor:
    """Decode a raster to the file_u8 domain. Grayscale stays 1-channel."""
    path = Path(path)
    cached = _cache_path(path) if path.exists() else None
    if cached is not None and cached.exists():
        return ImageTensor(np.load(cached), FILE_U8)
    try:
        with Image.open(path) as im:
            if im.mode in ("L", "I;16", "I", "F", "1"):
                arr = np.asarray(im.convert("F"), dtype=np.float64)
                if im.mode in ("I;16", "I") and arr.max() > 255:
                    arr = arr / 257.0
            else:
                arr = np.asarray(im.convert("RGB"), dtype=np.float64)
    except (OSError, ValueError) as exc:
        raise UnreadableFileError(f"cannot read image {path}: {exc}") from exc
    arr = np.clip(arr, 0, 255)
    if cached is not None:
        cached.parent.mkdir(parents=True, exist_ok=True)
        np.save(cached, arr)
    return ImageTensor(arr, FILE_U8)


def quantize_u8(img: ImageTensor) -> np.ndarray:
    """Round-half-to-even to uint8; model-domain images are mapped first."""
    if img.domain == MODEL_SIGNED:
        img = from_model_domain(img)
    return np.clip(np.round(img.values), 0, 255).astype(np.uint8)


def write_image(path: str | os.PathLike, img: ImageTensor) -> None:
    arr = quantize_u8(img)
    if arr.shape[2] == 1:
        arr = arr[:, :, 0]
    Image.fromarray(arr).save(path)


def load_pair(pid: str, vis_path: Path, ir_path: Path) -> ImagePair:
    vis = read_image(vis_path)
    ir = read_image(ir_path)
    if vis.channels == 1:
        vis = vis.to_rgb()
    if vis.shape[:2] != ir.shape[:2]:
        raise DimensionMismatchError(
            f"pair {pid!r}: visible {vis.shape[:2]} vs infrared {ir.shape[:2]}"
        )
    # both generators emit 3 channels, so 1-channel IR is replicated
    return ImagePair(vis, ir.to_rgb(), pid)


def load_corpus(root_path: str | os.PathLike, pairing_rule: PairingRule | None = None) -> list[ImagePair]:
    """Load every matched pair under ``root_path``, sorted by id."""
    return [load_pair(r["id"], Path(r["visible"]), Path(r["infrared"])) for r in scan_corpus(root_path, pairing_rule)]


def read_manifest(path: str | os.PathLike) -> list[dict]:
    """Read a corpus manifest (CSV or JSON) into ``{id, visible, infrared, split}`` rows.

    Relative paths resolve against the manifest's directory.
    """
    path = Path(path)
    base = path.parent
    rows: list[dict] = []
    if path.suffix.lower() == ".csv":
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            missing = {"id", "visible_path", "infrared_path"} - set(reader.fieldnames or [])
            if missing:
                raise DataError(f"{path}:1: manifest header lacks {sorted(missing)}")
            for lineno, rec in enumerate(reader, start=2):
                if not rec.get("id") or not rec.get("visible_path") or not rec.get("infrared_path"):
                    raise DataError(f"{path}:{lineno}: incomplete manifest row")
                rows.append({
                    "id": rec["id"],
                    "visible": str(base / rec["visible_path"]),
                    "infrared": str(base / rec["infrared_path"]),
                    "split": rec.get("split") or None,
                })
        return rows
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}:{exc.lineno}: invalid JSON ({exc.msg})") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("pairs"), list):
        raise DataError(f"{path}:1: manifest must be an object with a 'pairs' list")
    split_of = {}
    for name, ids in (doc.get("splits") or {}).items():
        for pid in ids:
            split_of[pid] = name
    for i, rec in enumerate(doc["pairs"]):
        if not isinstance(rec, dict) or not all(k in rec for k in ("id", "visible", "infrared")):
            raise DataError(f"{path}: pairs[{i}] needs id, visible and infrared")
        rows.append({
            "id": str(rec["id"]),
            "visible": str(base / rec["visible"]),
            "infrared": str(base / rec["infrared"]),
            "split": split_of.get(str(rec["id"])),
        })
    return rows


def load_manifest(path: str | os.PathLike, split_name: str | None = None) -> list[ImagePair]:
    rows = read_manifest(path)
    if split_name is not None:
        rows = [r for r in rows if r["split"] == split_name]
    pairs = [load_pair(r["id"], Path(r["visible"]), Path(r["infrared"])) for r in rows]
    return [replace(p, split=r["split"]) for p, r in zip(pairs, rows)]


def write_split_manifest(
    path: str | os.PathLike,
    rows: Sequence[dict],
    train_ids: Iterable[str],
    val_ids: Iterable[str],
) -> None:
    """Write the JSON manifest consumed by training and evaluation."""
    path = Path(path)
    base = path.parent.resolve()

    def rel(p: str) -> str:
        try:
            return os.path.relpath(Path(p).resolve(), base)
        except ValueError:
            return str(Path(p).resolve())

    doc = {
        "pairs": [{"id": r["id"], "visible": rel(r["visible"]), "infrared": rel(r["infrared"])} for r in rows],
        "splits": {"train": list(train_ids), "val": list(val_ids)},
    }
    path.write_text(json.dumps(doc, indent=2) + "\n")


def scan_corpus(root_path: str | os.PathLike, pairing_rule: PairingRule | None = None) -> list[dict]:
    """Like :func:`load_corpus` but returns manifest rows without decoding pixels."""
    rule = pairing_rule or PairingRule()
    root = Path(root_path)
    if not root.is_dir():
        raise FileNotFoundError(f"corpus directory not found: {root}")
    vis, ir = {}, {}
    for p in sorted(root.iterdir()):
        if p.suffix.lower() not in IMAGE_EXTENSIONS:
            continue
        if p.stem.endswith(rule.visible_suffix):
            vis[p.stem[: -len(rule.visible_suffix)]] = p
        elif p.stem.endswith(rule.infrared_suffix):
            ir[p.stem[: -len(rule.infrared_suffix)]] = p
    for pid in sorted(set(vis) ^ set(ir)):
        have = vis.get(pid) or ir.get(pid)
        raise MissingPartnerError(f"no partner for {pid!r} ({have.name})")
    return [{"id": k, "visible": str(vis[k]), "infrared": str(ir[k]), "split": None} for k in sorted(vis)]


# ---------------------------------------------------------------- domains


def to_model_domain(img: ImageTensor) -> ImageTensor:
    if img.domain != FILE_U8:
        raise DomainError(f"expected {FILE_U8} source, got {img.domain}")
    return ImageTensor(img.values / 127.5 - 1.0, MODEL_SIGNED)


def from_model_domain(img: ImageTensor) -> ImageTensor:
    if img.domain != MODEL_SIGNED:
        raise DomainError(f"expected {MODEL_SIGNED} source, got {img.domain}")
    return ImageTensor((img.values + 1.0) * 127.5, FILE_U8)


def pair_to_model_domain(pair: ImagePair) -> ImagePair:
    if pair.visible.domain == MODEL_SIGNED:
        return pair
    return replace(pair, visible=to_model_domain(pair.visible), infrared=to_model_domain(pair.infrared))


# ----------------------------------------------------------- geometry


def _resize_array(arr: np.ndarray, height: int, width: int) -> np.ndarray:
    if arr.shape[:2] == (height, width):
        return arr
    channels = [
        np.asarray(Image.fromarray(arr[:, :, c].astype(np.float32), mode="F").resize((width, height), Image.BILINEAR))
        for c in range(arr.shape[2])
    ]
    return np.stack(channels, axis=2).astype(np.float64)


def _clip_domain(arr: np.ndarray, domain: str) -> np.ndarray:
    lo, hi = DOMAINS[domain]
    return np.clip(arr, lo, hi)


def resize_pair(pair: ImagePair, height: int, width: int | None = None) -> ImagePair:
    width = height if width is None else width
    vis, ir = pair.visible, pair.infrared
    return replace(
        pair,
        visible=ImageTensor(_clip_domain(_resize_array(vis.values, height, width), vis.domain), vis.domain),
        infrared=ImageTensor(_clip_domain(_resize_array(ir.values, height, width), ir.domain), ir.domain),
    )


AUGMENT_OPS = ("horizontal_flip", "crop", "rotate90")


def _parse_op(op) -> tuple[str, float | None]:
    if isinstance(op, str):
        name, arg = op, None
    else:
        name, arg = op[0], (op[1] if len(op) > 1 else None)
    if name not in AUGMENT_OPS:
        raise ValueError(f"unknown augmentation op {name!r}")
    if name == "crop":
        arg = 0.8 if arg is None else float(arg)
        if not 0.0 < arg <= 1.0:
            raise ValueError(f"crop fraction must be in (0, 1], got {arg}")
    return name, arg


def _transform(arr: np.ndarray, name: str, arg, params: dict) -> np.ndarray:
    if name == "horizontal_flip":
        return arr[:, ::-1, :].copy()
    if name == "rotate90":
        return np.rot90(arr, k=params["k"], axes=(0, 1)).copy()
    top, left, ch, cw = params["box"]
    return _resize_array(arr[top : top + ch, left : left + cw, :], arr.shape[0], arr.shape[1])


def _draw_params(name: str, arg, shape: tuple[int, ...], rng: np.random.Generator) -> dict:
    if name == "rotate90":
        k = int(rng.integers(1, 4))
        # quarter turns would change the shape of non-square images
        return {"k": k if shape[0] == shape[1] else 2}
    if name == "crop":
        h, w = shape[:2]
        ch, cw = int(round(h * arg)), int(round(w * arg))
        if ch < 1 or cw < 1:
            raise ValueError(f"crop fraction {arg} yields an empty crop on {h}x{w}")
        return {"box": (int(rng.integers(0, h - ch + 1)), int(rng.integers(0, w - cw + 1)), ch, cw)}
    return {}


def apply_ops(pair: ImagePair, ops: Sequence, rng: np.random.Generator) -> ImagePair:
    """Apply ``ops`` in order, drawing one parameter set per op for both members."""
    vis, ir = pair.visible.values, pair.infrared.values
    for op in ops:
        name, arg = _parse_op(op)
        params = _draw_params(name, arg, vis.shape, rng)
        vis = _transform(vis, name, arg, params)
        ir = _transform(ir, name, arg, params)
    dom = pair.visible.domain
    return replace(
        pair,
        visible=ImageTensor(_clip_domain(vis, dom), dom),
        infrared=ImageTensor(_clip_domain(ir, dom), dom),
    )


def augment(pair: ImagePair, ops: Sequence, seed: int) -> list[ImagePair]:
    """One augmented copy of ``pair`` per op; an empty op list returns ``[pair]``."""
    if not ops:
        return [pair]
    out = []
    for i, op in enumerate(ops):
        rng = np.random.default_rng(np.random.SeedSequence([seed, i]))
        out.append(apply_ops(pair, [op], rng))
    return out


DEFAULT_AUGMENT_OPS = ("horizontal_flip", ("crop", 0.8), "rotate90")


class AugmentedPairs(Sequence):
    """Lazily augmented view of ``pairs`` with exactly ``target_count`` items.

    Item k is pair ``k % n``; its first appearance is the original, later
    appearances get a random non-empty subset of ``ops`` seeded by
    ``(seed, k)``, so items are independent of access order and of each other.
    """

    def __init__(self, pairs: Sequence[ImagePair], target_count: int, ops: Sequence = DEFAULT_AUGMENT_OPS, seed: int = 0):
        if len(pairs) == 0:
            raise DataError("cannot augment an empty training set")
        if target_count < 0:
            raise ValueError("target_count must be >= 0")
        for op in ops:
            _parse_op(op)
        self.pairs = list(pairs)
        self.target_count = target_count
        self.ops = list(ops)
        self.seed = seed

    def __len__(self) -> int:
        return self.target_count

    def __getitem__(self, k):
        if isinstance(k, slice):
            return [self[i] for i in range(*k.indices(len(self)))]
        if k < 0:
            k += len(self)
        if not 0 <= k < len(self):
            raise IndexError(k)
        n = len(self.pairs)
        src = self.pairs[k % n]
        if k < n or not self.ops:
            return src
        rng = np.random.default_rng(np.random.SeedSequence([self.seed, k]))
        mask = rng.random(len(self.ops)) < 0.5
        if not mask.any():
            mask[rng.integers(len(self.ops))] = True
        chosen = [op for op, m in zip(self.ops, mask) if m]
        return replace(apply_ops(src, chosen, rng), id=f"{src.id}#aug{k // n}")


def expand_training_set(
    pairs: Sequence[ImagePair],
    target_count: int,
    ops: Sequence = DEFAULT_AUGMENT_OPS,
    seed: int = 0,
) -> AugmentedPairs:
    """Grow ``pairs`` to exactly ``target_count`` items (see :class:`AugmentedPairs`)."""
    return AugmentedPairs(pairs, target_count, ops, seed)


def split(corpus: Sequence[ImagePair], spec: SplitSpec) -> tuple[list[ImagePair], list[ImagePair]]:
    """Random, seeded train/val partition. Validation pairs are never augmented."""
    n = len(corpus)
    train_count = n - spec.val_count if spec.train_count is None else spec.train_count
    if spec.val_count + train_count > n or train_count < 0:
        raise DataError(
            f"corpus of {n} pairs too small for val_count={spec.val_count}, train_count={train_count}"
        )
    order = np.random.default_rng(spec.seed).permutation(n)
    val_idx = sorted(order[: spec.val_count])
    train_idx = sorted(order[spec.val_count : spec.val_count + train_count])
    val = [replace(corpus[i], split="val") for i in val_idx]
    train = [replace(corpus[i], split="train") for i in train_idx]
    return train, val


def split_ids(ids: Sequence[str], spec: SplitSpec) -> tuple[list[str], list[str]]:
    """Same partition as :func:`split` over bare ids (for manifest writing)."""
    n = len(ids)
    train_count = n - spec.val_count if spec.train_count is None else spec.train_count
    if spec.val_count + train_count > n or train_count < 0:
        raise DataError(
            f"corpus of {n} pairs too small for val_count={spec.val_count}, train_count={train_count}"
        )
    order = np.random.default_rng(spec.seed).permutation(n)
    return (
        [ids[i] for i in sorted(order[spec.val_count : spec.val_count + train_count])],
        [ids[i] for i in sorted(order[: spec.val_count])],
    )


def training_size(n_train: int, spec: SplitSpec) -> int:
    if spec.target_train_size is not None:
        return spec.target_train_size
    return n_train * spec.augmentation_factor
