"""Segmentation-sequence evaluation: Dice, HD95, and temporal consistency.

HD95 is the 95th percentile (linear interpolation) of the symmetric
boundary-to-boundary Euclidean distances, with boundaries taken as
8-connected border pixels. TCD summarizes frame-to-frame stability as
the mean absolute change of the per-frame Dice series; lower is better.
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import binary_erosion, distance_transform_edt

from .errors import DimensionError, InsufficientDataError, UndefinedDistanceError
from .seqio import MaskSequence

LABEL_NAMES = {1: "LV", 2: "LVM", 3: "LA"}

_FULL_3X3 = np.ones((3, 3), dtype=bool)


def dice(a: np.ndarray, b: np.ndarray) -> float:
    """2|A n B| / (|A| + |B|); two empty masks count as a perfect 1.0."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    total = int(a.sum()) + int(b.sum())
    if total == 0:
        return 1.0
    return 2.0 * int((a & b).sum()) / total


def boundary_pixels(mask: np.ndarray) -> np.ndarray:
    """8-connectivity border: mask pixels with any non-mask neighbor (image edge counts)."""
    mask = np.asarray(mask, dtype=bool)
    interior = binary_erosion(mask, structure=_FULL_3X3, border_value=0)
    return mask & ~interior


def hd95(a: np.ndarray, b: np.ndarray) -> float:
    """95th-percentile symmetric boundary distance in pixels."""
    a = np.asarray(a, dtype=bool)
    b = np.asarray(b, dtype=bool)
    if a.shape != b.shape:
        raise DimensionError(f"mask shapes differ: {a.shape} vs {b.shape}")
    if not a.any() or not b.any():
        raise UndefinedDistanceError("hd95 undefined for an empty mask")
    ba = boundary_pixels(a)
    bb = boundary_pixels(b)
    dist_to_bb = distance_transform_edt(~bb)
    dist_to_ba = distance_transform_edt(~ba)
    distances = np.concatenate([dist_to_bb[ba], dist_to_ba[bb]])
    return float(np.percentile(distances, 95))


def tcd(dice_per_frame: np.ndarray) -> float:
    """Mean absolute frame-to-frame change of the Dice series."""
    d = np.asarray(dice_per_frame, dtype=np.float64)
    if d.ndim != 1 or d.shape[0] < 2:
        raise InsufficientDataError("need at least 2 per-frame Dice values")
    return float(np.mean(np.abs(np.diff(d))))


@dataclass(frozen=True)
class LabelMetrics:
    dice_per_frame: list[float]
    mean_dice: float
    hd95_per_frame: list[float | None]  # None where undefined (empty mask)
    mean_hd95: float | None
    tcd: float
    hd95_missing_frames: list[int]


@dataclass(frozen=True)
class MetricsReport:
    per_label: dict[str, LabelMetrics]
    average_tcd: float


def evaluate(pred: MaskSequence, gt: MaskSequence) -> MetricsReport:
    """Per-label Dice/HD95/TCD over a mask sequence pair.

    HD95 is skipped (recorded as missing) on frames where either side's
    label mask is empty; mean_hd95 averages the defined frames only.
    """
    if pred.masks.shape != gt.masks.shape:
        raise DimensionError(
            f"mask sequence shapes differ: {pred.masks.shape} vs {gt.masks.shape}"
        )
    per_label: dict[str, LabelMetrics] = {}
    for value, name in LABEL_NAMES.items():
        dices: list[float] = []
        hd95s: list[float | None] = []
        missing: list[int] = []
        for t in range(gt.t_count):
            p = pred.masks[t] == value
            g = gt.masks[t] == value
            dices.append(dice(p, g))
            if g.any() and p.any():
                hd95s.append(hd95(p, g))
            else:
                hd95s.append(None)
                missing.append(t)
        defined = [h for h in hd95s if h is not None]
        per_label[name] = LabelMetrics(
            dice_per_frame=dices,
            mean_dice=float(np.mean(dices)),
            hd95_per_frame=hd95s,
            mean_hd95=float(np.mean(defined)) if defined else None,
            tcd=tcd(np.array(dices)),
            hd95_missing_frames=missing,
        )
    average_tcd = float(np.mean([m.tcd for m in per_label.values()]))
    return MetricsReport(per_label=per_label, average_tcd=average_tcd)


def save_report_json(report: MetricsReport, path: Path | str) -> None:
    with open(path, "w") as fh:
        json.dump(asdict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")


def save_report_csv(report: MetricsReport, path: Path | str) -> None:
    """Flat rows `label,frame,dice,hd95` plus per-label and overall summary rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["label", "frame", "dice", "hd95"])
        for name, m in report.per_label.items():
            for t, (d, h) in enumerate(zip(m.dice_per_frame, m.hd95_per_frame)):
                writer.writerow([name, t, repr(d), "" if h is None else repr(h)])
        for name, m in report.per_label.items():
            writer.writerow([name, "mean", repr(m.mean_dice),
                             "" if m.mean_hd95 is None else repr(m.mean_hd95)])
            writer.writerow([name, "tcd", repr(m.tcd), ""])
        writer.writerow(["all", "average_tcd", repr(report.average_tcd), ""])
