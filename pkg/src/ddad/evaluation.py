"""Image-level evaluation: AUC, score histograms, anomaly-rate sweeps,
and method-comparison tables."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import rankdata

from .backbones import BackboneConfig
from .data import generate_synthetic
from .errors import EvaluationError
from .scoring import (
    ensemble_outputs,
    image_score,
    pooled_sigma,
    refine_with_uncertainty,
    score_inter,
    score_intra,
    score_rec,
)
from .trainer import EnsembleModule, TrainConfig, train_dual_ensembles

DEFAULT_BINS = 50
DEFAULT_AR_GRID = (0.0, 0.2, 0.4, 0.6, 0.8, 1.0)
ALL_SCORE_KINDS = ("rec", "intra", "inter", "intra_refined", "inter_refined")


def auc(scores, labels) -> float:
    """Mann-Whitney AUC with 0.5 credit for ties, via average ranks."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise EvaluationError("scores and labels must be equal-length vectors")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise EvaluationError("AUC needs both classes present")
    ranks = rankdata(scores, method="average")
    u = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def histogram(scores, labels, n_bins: int = DEFAULT_BINS):
    """Joint min-max normalization to [0,1], then per-class binning.

    Bins are right-exclusive except the last; a constant score vector
    (degenerate normalization) maps everything to bin 0.  Returns
    (bin_edges, counts_normal, counts_abnormal).
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels)
    edges = np.linspace(0.0, 1.0, n_bins + 1)
    lo, hi = scores.min(), scores.max()
    if hi == lo:
        norm = np.zeros_like(scores)
    else:
        norm = (scores - lo) / (hi - lo)
    idx = np.minimum((norm * n_bins).astype(np.intp), n_bins - 1)
    counts_n = np.bincount(idx[labels == 0], minlength=n_bins)
    counts_a = np.bincount(idx[labels == 1], minlength=n_bins)
    return edges, counts_n, counts_a


def histogram_overlap(scores, labels, n_bins: int = DEFAULT_BINS) -> float:
    """Overlap coefficient of the class-normalized histograms."""
    _, cn, ca = histogram(scores, labels, n_bins)
    if cn.sum() == 0 or ca.sum() == 0:
        raise EvaluationError("overlap needs both classes present")
    return float(np.minimum(cn / cn.sum(), ca / ca.sum()).sum())


@dataclass
class EvalReport:
    entries: list[dict]                      # per image: id, label, scores by kind
    auc_by_kind: dict[str, float]
    histograms: dict[str, dict]
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "metadata": self.metadata,
            "auc": self.auc_by_kind,
            "histograms": self.histograms,
            "entries": self.entries,
        }, indent=2)


def compute_maps(module_a: EnsembleModule, module_b: EnsembleModule,
                 test_images: np.ndarray, kinds=("rec", "intra", "inter"),
                 sigma_pooling: str = "variance") -> dict:
    """Pixel-wise anomaly maps per kind for a [T,1,H,W] test set.

    The rec baseline uses module B's first member (a plain normal-only
    reconstruction network).
    """
    out_a = ensemble_outputs(module_a, test_images)
    out_b = ensemble_outputs(module_b, test_images)
    maps = {}
    if "rec" in kinds:
        maps["rec"] = score_rec(test_images[:, 0], out_b.member_recons[0])
    if "intra" in kinds or "intra_refined" in kinds:
        maps["intra"] = score_intra(out_b)
    if "inter" in kinds or "inter_refined" in kinds:
        maps["inter"] = score_inter(out_a, out_b)
    if any(k.endswith("_refined") for k in kinds):
        sigma = pooled_sigma(out_b, sigma_pooling)
        for base in ("intra", "inter"):
            if f"{base}_refined" in kinds:
                maps[f"{base}_refined"] = refine_with_uncertainty(maps[base], sigma)
    return {k: maps[k] for k in kinds if k in maps}


def score_test_set(module_a: EnsembleModule, module_b: EnsembleModule,
                   test_images: np.ndarray, kinds=("rec", "intra", "inter"),
                   sigma_pooling: str = "variance") -> dict[str, np.ndarray]:
    """Image-level scores (mean pixel score) per kind."""
    maps = compute_maps(module_a, module_b, test_images, kinds, sigma_pooling)
    return {k: np.asarray(image_score(m)) for k, m in maps.items()}


def evaluate_modules(module_a, module_b, test_images, test_labels,
                     kinds=("rec", "intra", "inter"), sigma_pooling="variance",
                     test_ids=None, n_bins: int = DEFAULT_BINS,
                     metadata: dict | None = None) -> EvalReport:
    scores = score_test_set(module_a, module_b, test_images, kinds, sigma_pooling)
    labels = np.asarray(test_labels)
    if test_ids is None:
        test_ids = [f"img_{i:05d}" for i in range(labels.shape[0])]
    entries = []
    for i, tid in enumerate(test_ids):
        entries.append({"id": tid, "label": int(labels[i]),
                        "scores": {k: float(v[i]) for k, v in scores.items()}})
    auc_by_kind = {k: auc(v, labels) for k, v in scores.items()}
    histograms = {}
    for k, v in scores.items():
        edges, cn, ca = histogram(v, labels, n_bins)
        histograms[k] = {"bin_edges": edges.tolist(),
                         "count_normal": cn.tolist(),
                         "count_abnormal": ca.tolist()}
    return EvalReport(entries=entries, auc_by_kind=auc_by_kind,
                      histograms=histograms, metadata=metadata or {})


# -- experiments ----------------------------------------------------------


@dataclass
class SweepRow:
    ar: float
    auc_by_kind: dict[str, float]
    seed: int
    error: str | None = None


def run_ar_sweep(ar_values, backbone: BackboneConfig, train_config: TrainConfig,
                 seed: int, n_normal: int = 256, m_unlabeled: int = 256,
                 t_normal: int = 96, t_abnormal: int = 96,
                 kinds=("rec", "intra", "inter")) -> list[SweepRow]:
    """Regenerate D_u at each anomaly rate, retrain, and evaluate.

    Failures at one AR point are recorded on the row and the sweep continues.
    """
    rows: list[SweepRow] = []
    for ar in ar_values:
        try:
            spec = generate_synthetic(n_normal, m_unlabeled, ar, t_normal, t_abnormal, seed)
            module_a, module_b, _ = train_dual_ensembles(
                spec.normal, spec.unlabeled, backbone, train_config)
            scores = score_test_set(module_a, module_b, spec.test_images, kinds)
            rows.append(SweepRow(ar=float(ar), seed=seed,
                                 auc_by_kind={k: auc(v, spec.test_labels)
                                              for k, v in scores.items()}))
        except Exception as exc:  # keep remaining AR points alive
            rows.append(SweepRow(ar=float(ar), seed=seed, auc_by_kind={}, error=str(exc)))
    return rows


def sweep_csv(rows: list[SweepRow], backbone_kind: str) -> str:
    lines = ["ar,score_kind,backbone,auc,seed"]
    for row in rows:
        if row.error is not None:
            lines.append(f"{row.ar},ERROR,{backbone_kind},{row.error!r},{row.seed}")
            continue
        for kind, value in row.auc_by_kind.items():
            lines.append(f"{row.ar},{kind},{backbone_kind},{value:.6f},{row.seed}")
    return "\n".join(lines) + "\n"


def method_comparison_report(specs, dataset, train_config: TrainConfig,
                             base_backbone: BackboneConfig | None = None) -> dict:
    """Train/evaluate (backbone kind, score kind) cells on one dataset.

    `specs` is a list of (backbone_kind, score_kind) pairs; backbones are
    trained once per kind and reused across their score kinds.
    """
    base_backbone = base_backbone or BackboneConfig()
    by_backbone: dict[str, list[str]] = {}
    for bk, sk in specs:
        by_backbone.setdefault(bk, []).append(sk)
    cells = []
    for bk, kinds in by_backbone.items():
        backbone = dataclasses.replace(base_backbone, kind=bk)
        module_a, module_b, _ = train_dual_ensembles(
            dataset.normal, dataset.unlabeled, backbone, train_config)
        scores = score_test_set(module_a, module_b, dataset.test_images, tuple(kinds))
        for sk in kinds:
            cells.append({"backbone": bk, "score_kind": sk,
                          "auc": auc(scores[sk], dataset.test_labels)})
    return {
        "metadata": {
            "k": train_config.k,
            "epochs": train_config.epochs,
            "seed": train_config.base_seed,
            "anomaly_rate": dataset.anomaly_rate,
        },
        "cells": cells,
    }


def format_comparison_table(report: dict) -> str:
    width = 12
    lines = [f"{'backbone':<{width}}{'score':<{width}}{'auc':>{width}}"]
    for cell in report["cells"]:
        lines.append(f"{cell['backbone']:<{width}}{cell['score_kind']:<{width}}"
                     f"{cell['auc']:>{width}.4f}")
    return "\n".join(lines) + "\n"
