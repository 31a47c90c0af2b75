"""Pixel-wise anomaly scores from the dual ensembles.

Three base maps per test image:
  rec    - squared reconstruction error against a single normal-only net;
  intra  - population std-dev across module B's member reconstructions;
  inter  - absolute difference between module A's and B's mean maps.
The intra/inter maps can additionally be divided by the uncertainty
pooled from module B's AE-U members.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .tensor import Tensor, no_grad
from .trainer import EnsembleModule

SIGMA_FLOOR = 1e-3
REFINABLE = ("intra", "inter")


@dataclass
class AnomalyMap:
    """Per-pixel scores, shape [N,H,W] (leading batch axis) and a kind tag."""
    scores: np.ndarray
    kind: str

    def __post_init__(self):
        self.scores = np.asarray(self.scores)


@dataclass
class EnsembleOutputs:
    """Eval-mode reconstructions of one module over a test batch."""
    member_recons: np.ndarray          # [K,N,H,W]
    mean_map: np.ndarray               # [N,H,W]
    member_vars: np.ndarray | None = None  # [K,N,H,W] for AEU members

    @property
    def k(self) -> int:
        return self.member_recons.shape[0]


def ensemble_outputs(module: EnsembleModule, images: np.ndarray,
                     batch_size: int = 64) -> EnsembleOutputs:
    """Run every member over [N,1,H,W] images in eval mode."""
    recons, variances = [], []
    is_aeu = module.nets[0].config.kind == "aeu"
    with no_grad():
        for net in module.nets:
            parts_r, parts_v = [], []
            for start in range(0, images.shape[0], batch_size):
                batch = Tensor(images[start:start + batch_size])
                out = net.forward(batch, training=False)
                if is_aeu:
                    recon, logvar = out
                    parts_v.append(np.exp(logvar.data[:, 0]))
                    parts_r.append(recon.data[:, 0])
                else:
                    parts_r.append(out.data[:, 0])
            recons.append(np.concatenate(parts_r, axis=0))
            if is_aeu:
                variances.append(np.concatenate(parts_v, axis=0))
    member = np.stack(recons, axis=0)
    return EnsembleOutputs(
        member_recons=member,
        mean_map=member.mean(axis=0),
        member_vars=np.stack(variances, axis=0) if is_aeu else None,
    )


def score_rec(x: np.ndarray, reconstruction: np.ndarray) -> AnomalyMap:
    """Squared per-pixel reconstruction error."""
    x = np.asarray(x)
    reconstruction = np.asarray(reconstruction)
    if x.shape != reconstruction.shape:
        raise ShapeError(f"score_rec: {x.shape} vs {reconstruction.shape}")
    d = x - reconstruction
    return AnomalyMap(d * d, "rec")


def score_intra(outputs_b: EnsembleOutputs) -> AnomalyMap:
    """Population standard deviation (1/K) across member reconstructions."""
    d = outputs_b.member_recons - outputs_b.mean_map[None]
    return AnomalyMap(np.sqrt((d * d).mean(axis=0)), "intra")


def score_inter(outputs_a: EnsembleOutputs, outputs_b: EnsembleOutputs) -> AnomalyMap:
    """Absolute difference between the two modules' mean maps."""
    if outputs_a.mean_map.shape != outputs_b.mean_map.shape:
        raise ShapeError("score_inter: mean map shapes disagree")
    return AnomalyMap(np.abs(outputs_a.mean_map - outputs_b.mean_map), "inter")


def pooled_sigma(outputs_b: EnsembleOutputs, pooling: str = "variance") -> np.ndarray:
    """Pool module B's per-member uncertainties into one sigma map.

    pooling="variance": sqrt of the mean member variance (default);
    pooling="sigma": mean of the member standard deviations.
    """
    if outputs_b.member_vars is None:
        raise ConfigError("uncertainty pooling requires AEU members")
    if pooling == "variance":
        return np.sqrt(outputs_b.member_vars.mean(axis=0))
    if pooling == "sigma":
        return np.sqrt(outputs_b.member_vars).mean(axis=0)
    raise ConfigError(f"unknown sigma pooling {pooling!r}")


def refine_with_uncertainty(amap: AnomalyMap, sigma: np.ndarray) -> AnomalyMap:
    """Divide an intra/inter map by the (floored) pooled uncertainty."""
    if amap.kind not in REFINABLE:
        raise ConfigError(f"cannot refine a {amap.kind!r} map")
    if sigma.shape != amap.scores.shape:
        raise ShapeError(f"refine: sigma shape {sigma.shape} vs map {amap.scores.shape}")
    sigma = np.maximum(sigma, SIGMA_FLOOR)
    return AnomalyMap(amap.scores / sigma, amap.kind + "_refined")


def image_score(amap: AnomalyMap) -> np.ndarray | float:
    """Mean pixel score per image (scalar for a single [H,W] map)."""
    s = amap.scores
    if s.ndim <= 2:
        return float(s.mean())
    return s.reshape(s.shape[0], -1).mean(axis=1)


# -- export ---------------------------------------------------------------


def export_pgm(amap: AnomalyMap, path) -> None:
    """Write a per-map min-max scaled 8-bit P5 image (batch maps stack rows)."""
    s = amap.scores
    if s.ndim == 3:
        s = s.reshape(-1, s.shape[-1])
    lo, hi = float(s.min()), float(s.max())
    scaled = np.zeros_like(s) if hi == lo else (s - lo) / (hi - lo)
    pixels = np.round(scaled * 255).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(f"P5\n{pixels.shape[1]} {pixels.shape[0]}\n255\n".encode())
        fh.write(pixels.tobytes())


def export_raw(amap: AnomalyMap, path) -> None:
    """Write the raw scores as little-endian float32, row-major."""
    with open(path, "wb") as fh:
        fh.write(np.ascontiguousarray(amap.scores, dtype="<f4").tobytes())
