"""Least-squares adversarial objectives for G1, G2, D1 and D2."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn.functional as F

from .data import ImageTensor

LAPLACIAN = "laplacian"
SOBEL = "sobel"


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossWeights:
    gamma: float = 1.0
    lambda_: float = 100.0
    xi: float = 0.5
    c1_label: float = 1.0
    c2_label: float = 1.0
    a_label: float = 0.0
    d1_real_label: float = 1.0
    d2_real_label: float = 1.0
    g1_adv_weight: float = 1.0
    # "hwc" divides the content term by H*W*C, "hw" by H*W only
    content_norm: str = "hwc"
    gradient_operator: str = LAPLACIAN

    def __post_init__(self):
        if not self.gamma > 0:
            raise ValueError("gamma must be positive")
        if self.lambda_ < 0:
            raise ValueError("lambda must be >= 0")
        if self.xi < 0:
            raise ValueError("xi must be >= 0")
        if self.g1_adv_weight < 0:
            raise ValueError("g1_adv_weight must be >= 0")
        labels = (self.c1_label, self.c2_label, self.a_label, self.d1_real_label, self.d2_real_label)
        if not all(np.isfinite(labels)):
            raise ValueError("labels must be finite")
        if self.content_norm not in ("hwc", "hw"):
            raise ValueError("content_norm must be 'hwc' or 'hw'")
        if self.gradient_operator not in (LAPLACIAN, SOBEL):
            raise ValueError(f"gradient_operator must be {LAPLACIAN!r} or {SOBEL!r}")


@dataclass
class LossReport:
    g1_total: float
    g2_total: float
    g2_adv_d1: float
    g2_adv_d2: float
    g2_content: float
    d1_total: float | None = None
    d2_total: float | None = None

    FIELDS = ("g1_total", "g2_total", "g2_adv_d1", "g2_adv_d2", "g2_content", "d1_total", "d2_total")

    def as_row(self, step: int) -> dict:
        row = {"step": step}
        row.update({k: ("" if v is None else v) for k, v in asdict(self).items()})
        return row


@dataclass
class G2Terms:
    total: torch.Tensor
    adv_d1: torch.Tensor
    adv_d2: torch.Tensor
    content: torch.Tensor


# ---------------------------------------------------------- gradient operator

_LAPLACE_KERNEL = torch.tensor([[0.0, 1.0, 0.0], [1.0, -4.0, 1.0], [0.0, 1.0, 0.0]])
_SOBEL_X = torch.tensor([[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]])


def _depthwise(x: torch.Tensor, kernel: torch.Tensor) -> torch.Tensor:
    c = x.shape[1]
    k = kernel.to(x.dtype).expand(c, 1, 3, 3)
    # replicate padding keeps constant images at exactly zero response
    return F.conv2d(F.pad(x, (1, 1, 1, 1), mode="replicate"), k, groups=c)


def gradient_tensor(x: torch.Tensor, operator: str = LAPLACIAN) -> torch.Tensor:
    """Per-channel gradient map of an NCHW batch, same shape as ``x``."""
    if operator == LAPLACIAN:
        return _depthwise(x, _LAPLACE_KERNEL)
    if operator == SOBEL:
        return _depthwise(x, _SOBEL_X).abs() + _depthwise(x, _SOBEL_X.t()).abs()
    raise ValueError(f"unknown gradient operator {operator!r}")


def gradient_map(img: ImageTensor | np.ndarray, operator: str = LAPLACIAN) -> np.ndarray:
    """Gradient map of an (H, W, C) image as a float array of the same shape.

    The response is not bounded to the image's value domain, so it is
    returned as a plain array rather than an ``ImageTensor``.
    """
    arr = img.values if isinstance(img, ImageTensor) else np.asarray(img, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    x = torch.from_numpy(np.ascontiguousarray(arr.transpose(2, 0, 1)))[None].to(torch.float64)
    return gradient_tensor(x, operator)[0].permute(1, 2, 0).numpy()


# ------------------------------------------------------------------ helpers


def _per_image_scores(scores: torch.Tensor) -> torch.Tensor:
    """Mean of each image's score map -> shape (N,)."""
    if scores.ndim == 0:
        raise LossError("score batch must have a leading batch dimension")
    return scores.reshape(scores.shape[0], -1).mean(dim=1)


def _ls_term(scores: torch.Tensor, label: float) -> torch.Tensor:
    return ((_per_image_scores(scores) - label) ** 2).mean()


def _check_finite(**tensors: torch.Tensor) -> None:
    for name, t in tensors.items():
        if not torch.isfinite(t).all():
            raise LossError(f"non-finite values in {name}")


def _check_batch(**tensors: torch.Tensor) -> int:
    sizes = {name: t.shape[0] for name, t in tensors.items()}
    if len(set(sizes.values())) != 1:
        raise LossError(f"batch-size mismatch: {sizes}")
    n = next(iter(sizes.values()))
    if n < 1:
        raise LossError("empty batch")
    return n


def _content_scale(x: torch.Tensor, w: LossWeights) -> float:
    n, c, h, wd = x.shape
    per_image = h * wd * (c if w.content_norm == "hwc" else 1)
    # averaged over the batch so the term does not grow with N
    return w.lambda_ / (per_image * n)


# ---------------------------------------------------------------- objectives


def g2_loss(
    fused_scores_d1: torch.Tensor,
    fused_scores_d2: torch.Tensor,
    fused: torch.Tensor,
    real_ir: torch.Tensor,
    visible: torch.Tensor,
    w: LossWeights,
) -> G2Terms:
    """Fusion-generator objective with the visible-adversarial term weighted by gamma."""
    _check_batch(d1=fused_scores_d1, d2=fused_scores_d2, fused=fused, real_ir=real_ir, visible=visible)
    _check_finite(d1=fused_scores_d1, d2=fused_scores_d2, fused=fused, real_ir=real_ir, visible=visible)
    if not (fused.shape == real_ir.shape == visible.shape):
        raise LossError(f"image shapes differ: {tuple(fused.shape)}, {tuple(real_ir.shape)}, {tuple(visible.shape)}")
    adv_d1 = _ls_term(fused_scores_d1, w.c1_label)
    adv_d2 = _ls_term(fused_scores_d2, w.c2_label)
    pixel = ((fused - real_ir) ** 2).sum()
    grad = ((gradient_tensor(fused, w.gradient_operator) - gradient_tensor(visible, w.gradient_operator)) ** 2).sum()
    content = _content_scale(fused, w) * (pixel + w.xi * grad)
    total = w.gamma * adv_d1 + adv_d2 + content
    return G2Terms(total=total, adv_d1=adv_d1, adv_d2=adv_d2, content=content)


def g1_loss(
    gen_ir_scores_d2: torch.Tensor,
    gen_ir: torch.Tensor,
    real_ir: torch.Tensor,
    w: LossWeights,
) -> torch.Tensor:
    _check_batch(scores=gen_ir_scores_d2, gen_ir=gen_ir, real_ir=real_ir)
    _check_finite(scores=gen_ir_scores_d2, gen_ir=gen_ir, real_ir=real_ir)
    if gen_ir.shape != real_ir.shape:
        raise LossError(f"gen_ir {tuple(gen_ir.shape)} vs real_ir {tuple(real_ir.shape)}")
    adv = _ls_term(gen_ir_scores_d2, w.d2_real_label)
    content = _content_scale(gen_ir, w) * ((gen_ir - real_ir) ** 2).sum()
    return w.g1_adv_weight * adv + content


def d1_loss(real_visible_scores: torch.Tensor, fused_scores: torch.Tensor, w: LossWeights) -> torch.Tensor:
    _check_batch(real=real_visible_scores, fused=fused_scores)
    _check_finite(real=real_visible_scores, fused=fused_scores)
    return _ls_term(real_visible_scores, w.d1_real_label) + _ls_term(fused_scores, w.a_label)


def d2_loss(
    real_ir_scores: torch.Tensor,
    gen_ir_scores: torch.Tensor,
    fused_scores: torch.Tensor,
    w: LossWeights,
) -> torch.Tensor:
    _check_batch(real=real_ir_scores, gen_ir=gen_ir_scores, fused=fused_scores)
    _check_finite(real=real_ir_scores, gen_ir=gen_ir_scores, fused=fused_scores)
    fake = 0.5 * (_ls_term(gen_ir_scores, w.a_label) + _ls_term(fused_scores, w.a_label))
    return _ls_term(real_ir_scores, w.d2_real_label) + fake
