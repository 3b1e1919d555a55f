"""RBF-network modeling of descriptor dynamics and the resulting EDG.

The one-step state change dz_t = z_{t+1} - z_t is approximated by a
Gaussian RBF network whose centers come from k-means over the trajectory.
Weights are learned by cycling a per-sample LMS update over the frames
(a closed-form ridge solve is available as an alternative). Prediction
residuals weight the kernel responses into per-frame energy vectors E_t,
which are remapped onto the polar sector grid (the EDG) and reduced a
second time by PCA into the low-dimensional per-frame feature P_EDG.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .descriptor import (
    PcaModel,
    ScalerModel,
    SectorGrid,
    fit_pca,
    project,
    sector_index_map,
)
from .errors import (
    DivergenceError,
    InsufficientDataError,
    ModelError,
    ParameterError,
)
from .seqio import quantize_frame, write_pgm


@dataclass(frozen=True)
class RbfConfig:
    m_centers: int = 16
    sigma: float | None = None  # None: median pairwise center distance at fit time
    learn_rate: float = 0.05
    epochs: int = 200
    ridge: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if self.m_centers < 1:
            raise ParameterError("m_centers must be >= 1")
        if self.learn_rate <= 0:
            raise ParameterError("learn_rate must be > 0")
        if self.epochs < 1:
            raise ParameterError("epochs must be >= 1")
        if self.sigma is not None and self.sigma <= 0:
            raise ParameterError("sigma must be > 0 when given")


@dataclass(frozen=True)
class DynamicsModel:
    centers: np.ndarray  # M x k
    weights: np.ndarray  # M x k; row i is the output weight vector of center i
    sigma: float
    config: RbfConfig
    train_residual_history: np.ndarray  # mean squared residual per epoch


@dataclass(frozen=True)
class EnergyFrame:
    """Residual-weighted kernel responses for one frame pair."""

    e: np.ndarray  # length M, nonnegative
    residual_norm: float
    frame_index: int


@dataclass(frozen=True)
class EdgMap:
    sectors: np.ndarray  # R x TH nonnegative energies
    frame_index: int


def kmeans(z: np.ndarray, m: int, seed: int) -> np.ndarray:
    """Lloyd's algorithm with k-means++ seeding; deterministic given seed.

    Runs at most 100 iterations or until assignments stop changing. An
    empty cluster is reseeded to the point farthest from its currently
    assigned center.
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if m < 1:
        raise ParameterError("m must be >= 1")
    if n < m:
        raise InsufficientDataError(f"need at least {m} points, got {n}")

    rng = np.random.default_rng(seed)
    centers = np.empty((m, z.shape[1]))
    centers[0] = z[rng.integers(n)]
    for j in range(1, m):
        d2 = np.min(((z[:, None, :] - centers[None, :j, :]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centers[j] = z[rng.integers(n)]
        else:
            centers[j] = z[rng.choice(n, p=d2 / total)]

    assign = np.full(n, -1)
    for _ in range(100):
        d2 = ((z[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new_assign = np.argmin(d2, axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for j in range(m):
            members = z[assign == j]
            if len(members):
                centers[j] = members.mean(axis=0)
        empty = [j for j in range(m) if not (assign == j).any()]
        if empty:
            own_dist = ((z - centers[assign]) ** 2).sum(axis=1)
            order = np.argsort(-own_dist, kind="stable")
            for j, idx in zip(empty, order):
                centers[j] = z[idx]
    return centers


def rbf_response(z: np.ndarray, centers: np.ndarray, sigma: float) -> np.ndarray:
    """Gaussian kernel responses exp(-||z - c_i||^2 / (2 sigma^2)), each in (0,1]."""
    z = np.asarray(z, dtype=np.float64)
    single = z.ndim == 1
    zz = z[None, :] if single else z
    d2 = ((zz[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
    phi = np.exp(-d2 / (2.0 * sigma ** 2))
    return phi[0] if single else phi


def _resolve_sigma(centers: np.ndarray, config: RbfConfig) -> float:
    if config.sigma is not None:
        return config.sigma
    m = centers.shape[0]
    if m < 2:
        return 1.0
    iu = np.triu_indices(m, k=1)
    dists = np.sqrt(((centers[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2))[iu]
    med = float(np.median(dists))
    return med if med > 0 else 1.0


def fit_rbf_weights(phi: np.ndarray, targets: np.ndarray, config: RbfConfig,
                    method: str = "lms") -> tuple[np.ndarray, np.ndarray]:
    """Fit output weights to precomputed kernel responses; returns (W, history).

    method="lms": zero-initialized weights updated per sample in order
    each epoch with W += lr * phi (target - W^T phi)^T; history holds the
    full-set mean squared residual at each epoch end. method="ls": the
    closed-form ridge solution (history is constant).
    """
    m = phi.shape[1]
    if method == "ls":
        w = np.linalg.solve(phi.T @ phi + config.ridge * np.eye(m), phi.T @ targets)
        mse = float(np.mean(np.sum((targets - phi @ w) ** 2, axis=1)))
        return w, np.full(config.epochs, mse)
    if method != "lms":
        raise ParameterError(f"unknown fit method '{method}' (use 'lms' or 'ls')")
    w = np.zeros((m, targets.shape[1]))
    history = np.empty(config.epochs)
    lr = config.learn_rate
    for epoch in range(config.epochs):
        for t in range(phi.shape[0]):
            err = targets[t] - w.T @ phi[t]
            w += lr * np.outer(phi[t], err)
        mse = float(np.mean(np.sum((targets - phi @ w) ** 2, axis=1)))
        if not np.isfinite(mse) or mse > 1e6:
            raise DivergenceError(
                f"training diverged at epoch {epoch} (mse={mse}); reduce learn_rate"
            )
        history[epoch] = mse
    return w, history


def train_dynamics(z: np.ndarray, config: RbfConfig = RbfConfig(),
                   method: str = "lms") -> DynamicsModel:
    """Fit the RBF network to the one-step differences of the trajectory.

    Centers come from k-means over all states, sigma defaults to the
    median pairwise center distance, and weights are fitted per
    `fit_rbf_weights` (incremental LMS by default).
    """
    z = np.asarray(z, dtype=np.float64)
    n = z.shape[0]
    if n < max(config.m_centers, 2):
        raise InsufficientDataError(
            f"need at least max(M={config.m_centers}, 2) samples, got {n}"
        )
    centers = kmeans(z, config.m_centers, config.seed)
    sigma = _resolve_sigma(centers, config)
    targets = z[1:] - z[:-1]
    phi = rbf_response(z[:-1], centers, sigma)  # (N-1) x M
    w, history = fit_rbf_weights(phi, targets, config, method=method)
    return DynamicsModel(centers=centers, weights=w, sigma=sigma,
                         config=config, train_residual_history=history)


def predict_delta(model: DynamicsModel, z: np.ndarray) -> np.ndarray:
    """Predicted one-step change W^T Phi(z); accepts a vector or a batch."""
    z = np.asarray(z, dtype=np.float64)
    if z.shape[-1] != model.centers.shape[1]:
        raise ModelError(
            f"model expects state dimension {model.centers.shape[1]}, got {z.shape[-1]}"
        )
    return rbf_response(z, model.centers, model.sigma) @ model.weights


def energy_sequence(model: DynamicsModel, z: np.ndarray) -> list[EnergyFrame]:
    """E_t = Phi(z_t) * ||predicted dz_t - observed dz_t||_2 for each frame pair."""
    z = np.asarray(z, dtype=np.float64)
    if z.ndim != 2 or z.shape[0] < 2:
        raise InsufficientDataError("need at least 2 state rows")
    deltas = z[1:] - z[:-1]
    phi = rbf_response(z[:-1], model.centers, model.sigma)
    pred = phi @ model.weights
    res = np.linalg.norm(pred - deltas, axis=1)
    return [EnergyFrame(e=phi[t] * res[t], residual_norm=float(res[t]), frame_index=t)
            for t in range(z.shape[0] - 1)]


def edg_from_energy(frame_energy: EnergyFrame, model: DynamicsModel,
                    pca: PcaModel, scaler: ScalerModel, grid: SectorGrid,
                    z_t: np.ndarray, delta_z: np.ndarray) -> EdgMap:
    """Remap one frame's residual energy onto the R x TH sector grid.

    The state-space prediction residual is pushed back through the PCA
    components into raw descriptor space (components only, no mean) and
    un-standardized; each sector then gets the L2 norm of its 6 feature
    residuals, scaled by the mean kernel response at z_t.
    """
    residual = predict_delta(model, z_t) - np.asarray(delta_z, dtype=np.float64)
    raw = (residual @ pca.components) * scaler.scale
    if raw.shape[0] != grid.descriptor_length:
        raise ModelError(
            f"descriptor length {raw.shape[0]} does not match grid "
            f"({grid.descriptor_length})"
        )
    per_sector = np.linalg.norm(raw.reshape(grid.sector_count, -1), axis=1)
    phi_mean = float(np.mean(rbf_response(z_t, model.centers, model.sigma)))
    sectors = np.maximum(per_sector * phi_mean, 0.0)
    return EdgMap(sectors=sectors.reshape(grid.r_bins, grid.theta_bins),
                  frame_index=frame_energy.frame_index)


def edg_sequence(model: DynamicsModel, z: np.ndarray, pca: PcaModel,
                 scaler: ScalerModel, grid: SectorGrid) -> list[EdgMap]:
    """EDG maps for every frame pair of a state trajectory."""
    energies = energy_sequence(model, z)
    deltas = z[1:] - z[:-1]
    return [edg_from_energy(en, model, pca, scaler, grid, z[en.frame_index],
                            deltas[en.frame_index])
            for en in energies]


def pedg_sequence(energies: list[EnergyFrame], k2: int = 8) -> tuple[np.ndarray, PcaModel]:
    """Secondary PCA over the stacked E_t vectors; rows of P are P_EDG per frame."""
    if len(energies) < 2:
        raise InsufficientDataError("need at least 2 energy frames")
    e = np.stack([en.e for en in energies])
    if not (1 <= k2 <= min(e.shape[0] - 1, e.shape[1])):
        raise ParameterError(
            f"k2={k2} out of range 1..min(count-1={e.shape[0] - 1}, M={e.shape[1]})"
        )
    model = fit_pca(e, k2)
    return project(model, e), model


def save_dynamics_model(model: DynamicsModel, path: Path | str) -> None:
    payload = {
        "centers": model.centers.tolist(),
        "weights": model.weights.tolist(),
        "sigma": model.sigma,
        "config": {
            "m_centers": model.config.m_centers,
            "sigma": model.config.sigma,
            "learn_rate": model.config.learn_rate,
            "epochs": model.config.epochs,
            "ridge": model.config.ridge,
            "seed": model.config.seed,
        },
        "residual_history": model.train_residual_history.tolist(),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_dynamics_model(path: Path | str) -> DynamicsModel:
    with open(path) as fh:
        payload = json.load(fh)
    config = RbfConfig(**payload["config"])
    return DynamicsModel(
        centers=np.asarray(payload["centers"], dtype=np.float64),
        weights=np.asarray(payload["weights"], dtype=np.float64),
        sigma=float(payload["sigma"]),
        config=config,
        train_residual_history=np.asarray(payload["residual_history"], dtype=np.float64),
    )


def render_edg_map(edg: EdgMap, grid: SectorGrid, h: int, w: int,
                   lo: float, hi: float) -> np.ndarray:
    """Paint sector energies into the annular-sector region as a [0,1] image."""
    sector_ids, inside = sector_index_map(grid, h, w)
    values = edg.sectors.reshape(-1)
    img = np.zeros((h, w))
    if hi > lo:
        img[inside] = (values[sector_ids[inside]] - lo) / (hi - lo)
    return np.clip(img, 0.0, 1.0)


def save_edg_outputs(maps: list[EdgMap], grid: SectorGrid, h: int, w: int,
                     out_dir: Path | str) -> None:
    """Per-frame PGM heatmaps (min-max normalized over the sequence) + edg.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    all_vals = np.concatenate([m.sectors.reshape(-1) for m in maps])
    lo, hi = float(all_vals.min()), float(all_vals.max())
    for m in maps:
        img = render_edg_map(m, grid, h, w, lo, hi)
        write_pgm(out_dir / f"edg_{m.frame_index:04d}.pgm", quantize_frame(img))
    with open(out_dir / "edg.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t", "r", "theta", "energy"])
        for m in maps:
            for r in range(grid.r_bins):
                for th in range(grid.theta_bins):
                    writer.writerow([m.frame_index, r, th, repr(float(m.sectors[r, th]))])


def save_pedg_csv(p: np.ndarray, path: Path | str) -> None:
    """P_EDG rows, one per frame, header t,p0..p{k2-1}."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["t"] + [f"p{i}" for i in range(p.shape[1])])
        for t, row in enumerate(p):
            writer.writerow([t] + [repr(float(v)) for v in row])


def load_pedg_csv(path: Path | str) -> np.ndarray:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in row[1:]] for row in rows[1:]], dtype=np.float64)
