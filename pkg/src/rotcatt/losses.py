"""Training objective (soft Dice without background + soft IoU) and the hard
evaluation metrics DSC, IoU and Hausdorff distance."""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import List, NamedTuple, Optional, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

__all__ = [
    "one_hot",
    "dice_loss",
    "iou_loss",
    "mix_losses",
    "combined_loss",
    "loss_terms",
    "LossTerms",
    "dsc_metric",
    "iou_metric",
    "hausdorff",
    "hausdorff_per_class",
    "MetricsReport",
    "REPORT_SCHEMA",
]


class EmptyForegroundWarning(UserWarning):
    pass


def one_hot(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """``(B, H, W)`` integer labels to ``(B, K, H, W)`` indicators."""
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise ValueError(f"labels outside [0, {num_classes})")
    return F.one_hot(labels.long(), num_classes).movedim(-1, 1)


def dice_loss(probs: torch.Tensor, target: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """``1 - mean_{c != 0} 2 sum(P G) / (sum P + sum G + eps)``.

    ``probs`` and ``target`` are ``(B, K, ...)``; sums run over batch and space.
    Returns 0 with an :class:`EmptyForegroundWarning` if neither tensor has any
    foreground mass.
    """
    if probs.shape != target.shape:
        raise ValueError(f"probs {tuple(probs.shape)} vs target {tuple(target.shape)}")
    target = target.to(probs.dtype)
    dims = (0,) + tuple(range(2, probs.dim()))
    p, g = probs[:, 1:], target[:, 1:]
    if p.shape[1] == 0 or float((p.sum() + g.sum()).detach()) == 0.0:
        warnings.warn("no foreground present in prediction or target", EmptyForegroundWarning)
        return probs.sum() * 0.0
    inter = (p * g).sum(dims)
    dice = 2 * inter / (p.sum(dims) + g.sum(dims) + eps)
    return 1 - dice.mean()


def iou_loss(probs: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """``1 - sum(P G) / sum(P + G - P G)`` over every class and pixel."""
    if probs.numel() == 0:
        raise ValueError("iou_loss on empty tensors")
    if probs.shape != target.shape:
        raise ValueError(f"probs {tuple(probs.shape)} vs target {tuple(target.shape)}")
    target = target.to(probs.dtype)
    inter = (probs * target).sum()
    union = (probs + target - probs * target).sum()
    if float(union.detach()) == 0.0:
        return probs.sum() * 0.0
    return 1 - inter / union


def mix_losses(dice: torch.Tensor | float, iou: torch.Tensor | float, alpha: float = 0.6):
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    if alpha == 0.0:
        return dice
    if alpha == 1.0:
        return iou
    return alpha * iou + (1 - alpha) * dice


def combined_loss(probs: torch.Tensor, target: torch.Tensor, alpha: float = 0.6, eps: float = 1e-5) -> torch.Tensor:
    """``alpha * IoU loss + (1 - alpha) * Dice loss`` on one-hot targets."""
    return mix_losses(dice_loss(probs, target, eps), iou_loss(probs, target), alpha)


class LossTerms(NamedTuple):
    dice: torch.Tensor
    iou: torch.Tensor
    combined: torch.Tensor


def loss_terms(logits: torch.Tensor, labels: torch.Tensor, alpha: float = 0.6, eps: float = 1e-5) -> LossTerms:
    """All loss components from raw logits ``(B, K, H, W)`` and labels ``(B, H, W)``."""
    probs = logits.softmax(dim=1)
    target = one_hot(labels, logits.shape[1])
    dice = dice_loss(probs, target, eps)
    iou = iou_loss(probs, target)
    return LossTerms(dice, iou, mix_losses(dice, iou, alpha))


def _check_labels(*arrays, num_classes: int):
    for a in arrays:
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            raise ValueError(f"label values outside [0, {num_classes})")


def _overlaps(pred, gt, num_classes):
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    _check_labels(pred, gt, num_classes=num_classes)
    for c in range(num_classes):
        p, g = pred == c, gt == c
        yield np.count_nonzero(p & g), np.count_nonzero(p), np.count_nonzero(g)


def dsc_metric(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    """Per-class hard Dice, index 0 is background. Classes absent from both masks score 1."""
    out = []
    for inter, np_, ng in _overlaps(pred, gt, num_classes):
        out.append(1.0 if np_ + ng == 0 else 2.0 * inter / (np_ + ng))
    return np.array(out)


def iou_metric(pred: np.ndarray, gt: np.ndarray, num_classes: int) -> np.ndarray:
    out = []
    for inter, np_, ng in _overlaps(pred, gt, num_classes):
        union = np_ + ng - inter
        out.append(1.0 if union == 0 else inter / union)
    return np.array(out)


def _directed(a: np.ndarray, b: np.ndarray, spacing) -> float:
    # distance from each voxel of ``a`` to the nearest voxel of ``b``
    dist = ndimage.distance_transform_edt(~b, sampling=spacing)
    return float(dist[a].max())


def hausdorff(pred_mask: np.ndarray, gt_mask: np.ndarray, spacing: Optional[Sequence[float]] = None) -> float:
    """Symmetric Hausdorff distance between two binary masks in physical units.

    Both masks must be non-empty; see :func:`hausdorff_per_class` for the
    handling of missing classes.
    """
    a = np.asarray(pred_mask, dtype=bool)
    b = np.asarray(gt_mask, dtype=bool)
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        raise ValueError("hausdorff distance needs two non-empty masks")
    spacing = tuple(float(s) for s in spacing) if spacing is not None else (1.0,) * a.ndim
    return max(_directed(a, b, spacing), _directed(b, a, spacing))


def hausdorff_per_class(pred: np.ndarray, gt: np.ndarray, num_classes: int, spacing=None):
    """Per-class HD. Returns ``(distances, flags)``.

    A class absent from both masks gets ``nan``; a class present in exactly one
    gets the volume diagonal and a flag naming it.
    """
    pred, gt = np.asarray(pred), np.asarray(gt)
    if pred.shape != gt.shape:
        raise ValueError(f"mask shapes differ: {pred.shape} vs {gt.shape}")
    _check_labels(pred, gt, num_classes=num_classes)
    spacing = tuple(float(s) for s in spacing) if spacing is not None else (1.0,) * pred.ndim
    diagonal = math.sqrt(sum((n * s) ** 2 for n, s in zip(pred.shape, spacing)))
    dists, flags = [], []
    for c in range(num_classes):
        p, g = pred == c, gt == c
        if not p.any() and not g.any():
            dists.append(float("nan"))
        elif not p.any() or not g.any():
            dists.append(diagonal)
            flags.append(f"class {c} present in only one mask; HD set to volume diagonal")
        else:
            dists.append(hausdorff(p, g, spacing))
    return np.array(dists), flags


def _nanmean(values) -> Optional[float]:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.mean(vals)) if vals else None


REPORT_SCHEMA = {
    "type": "object",
    "required": ["num_classes", "dsc", "iou", "hd", "hd_px", "macro", "loss", "flags"],
    "properties": {
        "num_classes": {"type": "integer", "minimum": 1},
        "dsc": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "iou": {"type": "array", "items": {"type": "number", "minimum": 0, "maximum": 1}},
        "hd": {"type": "array", "items": {"type": ["number", "null"], "minimum": 0}},
        "hd_px": {"type": "array", "items": {"type": ["number", "null"], "minimum": 0}},
        "macro": {
            "type": "object",
            "required": ["dsc", "iou", "hd", "hd_px"],
            "properties": {k: {"type": ["number", "null"]} for k in ("dsc", "iou", "hd", "hd_px")},
        },
        "loss": {
            "type": "object",
            "properties": {k: {"type": ["number", "null"]} for k in ("dice", "iou", "combined")},
        },
        "flags": {"type": "array", "items": {"type": "string"}},
        "spacing": {"type": "array", "items": {"type": "number"}},
    },
}


@dataclass
class MetricsReport:
    """Per-class scores (index 0 = background) and foreground macro means.

    ``hd`` is in the volume's physical units, ``hd_px`` in voxels; ``None``
    marks a class absent from both volumes.
    """

    num_classes: int
    dsc: List[float]
    iou: List[float]
    hd: List[Optional[float]]
    hd_px: List[Optional[float]]
    macro: dict
    loss: dict = field(default_factory=dict)
    flags: List[str] = field(default_factory=list)
    spacing: List[float] = field(default_factory=list)

    @classmethod
    def compute(cls, pred: np.ndarray, gt: np.ndarray, num_classes: int, spacing=None, loss: Optional[dict] = None):
        dsc = dsc_metric(pred, gt, num_classes)
        iou = iou_metric(pred, gt, num_classes)
        hd, flags = hausdorff_per_class(pred, gt, num_classes, spacing)
        hd_px, _ = hausdorff_per_class(pred, gt, num_classes, None)
        to_list = lambda a: [None if math.isnan(v) else float(v) for v in a]
        hd, hd_px = to_list(hd), to_list(hd_px)
        macro = {
            "dsc": _nanmean(dsc[1:]),
            "iou": _nanmean(iou[1:]),
            "hd": _nanmean(hd[1:]),
            "hd_px": _nanmean(hd_px[1:]),
        }
        spacing = list(spacing) if spacing is not None else [1.0] * np.asarray(pred).ndim
        return cls(num_classes, [float(v) for v in dsc], [float(v) for v in iou], hd, hd_px,
                   macro, dict(loss or {}), flags, [float(s) for s in spacing])

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> "MetricsReport":
        return cls(**d)

    def csv_header(self) -> List[str]:
        cols = ["macro_dsc", "macro_iou", "macro_hd", "macro_hd_px"]
        for c in range(self.num_classes):
            cols += [f"dsc_{c}", f"iou_{c}", f"hd_{c}"]
        cols += ["dice_loss", "iou_loss", "combined"]
        return cols

    def csv_row(self) -> List[str]:
        fmt = lambda v: "" if v is None else f"{v:.10g}"
        row = [fmt(self.macro[k]) for k in ("dsc", "iou", "hd", "hd_px")]
        for c in range(self.num_classes):
            row += [fmt(self.dsc[c]), fmt(self.iou[c]), fmt(self.hd[c])]
        row += [fmt(self.loss.get(k)) for k in ("dice", "iou", "combined")]
        return row

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.csv_header())
        w.writerow(self.csv_row())
        return buf.getvalue()
