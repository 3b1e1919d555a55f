"""Polar-sector motion descriptors and their standardize+PCA reduction.

Each frame pair is pooled over an R x TH annular-sector grid centered on
the image center. Every sector contributes 6 features in fixed order:
[mean v_r, mean v_theta, std v_r, std v_theta, mean gray, std gray],
where v_r / v_theta are the radial and tangential flow projections.
Descriptors are standardized column-wise and reduced by PCA to the
per-frame low-dimensional state vector z_t.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    InsufficientDataError,
    ModelError,
    NumericError,
    ParameterError,
)
from .flow import FlowField
from .seqio import FrameSequence

FEATURES_PER_SECTOR = 6


@dataclass(frozen=True)
class SectorGrid:
    """R x TH polar partition of the image disc."""

    r_bins: int = 4
    theta_bins: int = 12
    center: tuple[float, float] | None = None  # (cx, cy); None = image center
    r_max: float | None = None  # None = min(H, W) / 2

    def __post_init__(self):
        if self.r_bins < 1 or self.theta_bins < 1:
            raise ParameterError("r_bins and theta_bins must be >= 1")
        if self.r_max is not None and self.r_max <= 0:
            raise ParameterError("r_max must be > 0")

    @property
    def sector_count(self) -> int:
        return self.r_bins * self.theta_bins

    @property
    def descriptor_length(self) -> int:
        return self.sector_count * FEATURES_PER_SECTOR

    def resolve(self, h: int, w: int) -> tuple[float, float, float]:
        """Concrete (cx, cy, r_max) for an H x W image."""
        cx, cy = self.center if self.center is not None else ((w - 1) / 2.0, (h - 1) / 2.0)
        if not (0 <= cx <= w - 1 and 0 <= cy <= h - 1):
            raise ParameterError(f"grid center {(cx, cy)} outside {h}x{w} image")
        r_max = self.r_max if self.r_max is not None else min(h, w) / 2.0
        return cx, cy, r_max


@dataclass(frozen=True)
class RawDescriptor:
    values: np.ndarray  # length R*TH*6
    frame_index: int = 0


def sector_of(x: float, y: float, grid: SectorGrid,
              h: int | None = None, w: int | None = None) -> tuple[int, int] | None:
    """Map a pixel to its (ring, angle-bin) sector, or None when outside.

    When the grid uses image-relative defaults, `h`/`w` must be given.
    Angle 0 points along +x and increases toward +y (downward in images).
    """
    if grid.center is not None and grid.r_max is not None:
        cx, cy = grid.center
        r_max = grid.r_max
    else:
        if h is None or w is None:
            raise ParameterError("grid has image-relative defaults; pass h and w")
        cx, cy, r_max = grid.resolve(h, w)
    rho = np.hypot(x - cx, y - cy)
    if rho >= r_max:
        return None
    ring = min(int(rho * grid.r_bins / r_max), grid.r_bins - 1)
    angle = np.arctan2(y - cy, x - cx)  # atan2(0,0) == 0 at the pole
    if angle < 0:
        angle += 2.0 * np.pi
    tbin = min(int(angle * grid.theta_bins / (2.0 * np.pi)), grid.theta_bins - 1)
    return ring, tbin


def sector_index_map(grid: SectorGrid, h: int, w: int) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized sector lookup: (sector id map, inside-disc mask) for an image."""
    cx, cy, r_max = grid.resolve(h, w)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    rho = np.hypot(dx, dy)
    inside = rho < r_max
    ring = np.minimum((rho * grid.r_bins / r_max).astype(np.int64), grid.r_bins - 1)
    angle = np.arctan2(dy, dx)
    angle[angle < 0] += 2.0 * np.pi
    tbin = np.minimum((angle * grid.theta_bins / (2.0 * np.pi)).astype(np.int64),
                      grid.theta_bins - 1)
    return ring * grid.theta_bins + tbin, inside


def extract_descriptor(frame: np.ndarray, flow: FlowField, grid: SectorGrid,
                       frame_index: int = 0) -> RawDescriptor:
    """Pool flow/gray statistics per sector into one fixed-length vector.

    Concatenation is ring-major, then angle bin, then feature. Empty
    sectors contribute all-zero features.
    """
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape != flow.u.shape:
        raise DimensionError(
            f"frame shape {frame.shape} does not match flow shape {flow.u.shape}"
        )
    h, w = frame.shape
    cx, cy, _ = grid.resolve(h, w)
    sector_ids, inside = sector_index_map(grid, h, w)

    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    dx, dy = xs - cx, ys - cy
    rho = np.hypot(dx, dy)
    with np.errstate(invalid="ignore", divide="ignore"):
        ex = np.where(rho > 0, dx / rho, 0.0)
        ey = np.where(rho > 0, dy / rho, 0.0)
    v_r = flow.u * ex + flow.v * ey
    v_t = -flow.u * ey + flow.v * ex

    ids = sector_ids[inside]
    n_sec = grid.sector_count
    counts = np.bincount(ids, minlength=n_sec).astype(np.float64)
    nonempty = counts > 0
    safe = np.where(nonempty, counts, 1.0)

    feats = np.zeros((n_sec, FEATURES_PER_SECTOR))
    for mean_col, std_col, field in ((0, 2, v_r), (1, 3, v_t), (4, 5, frame)):
        vals = field[inside]
        s1 = np.bincount(ids, weights=vals, minlength=n_sec)
        mean = np.where(nonempty, s1 / safe, 0.0)
        # two-pass variance: exact zeros on constant sectors
        centered = vals - mean[ids]
        s2 = np.bincount(ids, weights=centered * centered, minlength=n_sec)
        var = np.where(nonempty, s2 / safe, 0.0)
        feats[:, mean_col] = mean
        feats[:, std_col] = np.sqrt(var)
    return RawDescriptor(values=feats.reshape(-1), frame_index=frame_index)


@dataclass(frozen=True)
class ScalerModel:
    mean: np.ndarray
    scale: np.ndarray  # per-dimension stddev, floored at 1e-8


def fit_scaler(x: np.ndarray) -> ScalerModel:
    """Column-wise mean/population-stddev; stddev floored at 1e-8."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise InsufficientDataError(f"need an N x D matrix with N >= 2, got {x.shape}")
    return ScalerModel(mean=x.mean(axis=0), scale=np.maximum(x.std(axis=0), 1e-8))


def apply_scaler(model: ScalerModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.mean.shape[0]:
        raise ModelError(
            f"scaler expects dimension {model.mean.shape[0]}, got {x.shape[-1]}"
        )
    return (x - model.mean) / model.scale


@dataclass(frozen=True)
class PcaModel:
    components: np.ndarray  # k x D orthonormal rows
    explained_variance: np.ndarray  # length k, nonincreasing
    input_mean: np.ndarray  # length D
    k: int


def fit_pca(x: np.ndarray, k: int) -> PcaModel:
    """Top-k principal axes of X via SVD of the centered matrix.

    explained_variance holds eigenvalues of the population covariance
    (divisor N). Sign convention: the largest-magnitude entry of each
    component is positive, which makes fitted models reproducible.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ParameterError(f"X must be 2-D, got shape {x.shape}")
    if not np.isfinite(x).all():
        raise NumericError("PCA input contains non-finite values")
    n, d = x.shape
    if not (1 <= k <= min(n - 1, d)):
        raise ParameterError(f"k={k} out of range 1..min(N-1={n - 1}, D={d})")
    mean = x.mean(axis=0)
    _, s, vt = np.linalg.svd(x - mean, full_matrices=False)
    comps = vt[:k].copy()
    for row in comps:
        if row[np.argmax(np.abs(row))] < 0:
            row *= -1.0
    variance = (s[:k] ** 2) / n
    return PcaModel(components=comps, explained_variance=variance, input_mean=mean, k=k)


def project(model: PcaModel, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_mean.shape[0]:
        raise ModelError(
            f"PCA expects dimension {model.input_mean.shape[0]}, got {x.shape[-1]}"
        )
    return (x - model.input_mean) @ model.components.T


def back_project(model: PcaModel, z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.k:
        raise ModelError(f"PCA back-projection expects length {model.k}, got {z.shape[-1]}")
    return z @ model.components + model.input_mean


def descriptor_sequence(seq: FrameSequence, flows: list[FlowField], grid: SectorGrid,
                        scaler: ScalerModel | None = None,
                        pca: PcaModel | None = None,
                        k: int = 10) -> tuple[np.ndarray, ScalerModel, PcaModel]:
    """Per-frame-pair z_t rows: pool -> standardize -> PCA.

    With `scaler`/`pca` absent the models are fitted on this sequence
    (training mode); with both present they are applied as-is (inference
    mode). Row t pairs frame t with flow t -> t+1.
    """
    if len(flows) != seq.t_count - 1:
        raise DimensionError(
            f"expected {seq.t_count - 1} flow fields, got {len(flows)}"
        )
    if (scaler is None) != (pca is None):
        raise ParameterError("pass both scaler and pca, or neither")
    raw = np.stack([
        extract_descriptor(seq.frames[t], flows[t], grid, frame_index=t).values
        for t in range(seq.t_count - 1)
    ])
    if scaler is None:
        scaler = fit_scaler(raw)
        scaled = apply_scaler(scaler, raw)
        pca = fit_pca(scaled, k)
    else:
        scaled = apply_scaler(scaler, raw)
    z = project(pca, scaled)
    return z, scaler, pca


def save_descriptors_csv(descriptors: list[RawDescriptor], path: Path | str) -> None:
    """One row per frame pair, header t,f0..f{D-1}."""
    if not descriptors:
        raise InsufficientDataError("no descriptors to write")
    d = descriptors[0].values.shape[0]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"f{i}" for i in range(d)])
        for desc in descriptors:
            writer.writerow([desc.frame_index] + [repr(v) for v in desc.values.tolist()])


def save_feature_models(scaler: ScalerModel, pca: PcaModel, path: Path | str) -> None:
    payload = {
        "scaler": {"mean": scaler.mean.tolist(), "scale": scaler.scale.tolist()},
        "pca": {
            "components": pca.components.tolist(),
            "explained_variance": pca.explained_variance.tolist(),
            "input_mean": pca.input_mean.tolist(),
            "k": pca.k,
        },
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_feature_models(path: Path | str) -> tuple[ScalerModel, PcaModel]:
    with open(path) as fh:
        payload = json.load(fh)
    scaler = ScalerModel(
        mean=np.asarray(payload["scaler"]["mean"], dtype=np.float64),
        scale=np.asarray(payload["scaler"]["scale"], dtype=np.float64),
    )
    pca = PcaModel(
        components=np.asarray(payload["pca"]["components"], dtype=np.float64),
        explained_variance=np.asarray(payload["pca"]["explained_variance"], dtype=np.float64),
        input_mean=np.asarray(payload["pca"]["input_mean"], dtype=np.float64),
        k=int(payload["pca"]["k"]),
    )
    return scaler, pca
