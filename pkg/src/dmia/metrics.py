"""Rank-based attack metrics and a Fréchet-distance quality proxy.

All rank metrics sweep the threshold through the distinct score values
(higher score = predicted member); tied scores move through the sweep as one
group, so the ROC visits one vertex per distinct value plus the (0,0)
origin. AUC is the trapezoidal area, which equals the Mann-Whitney pair
statistic with ties counted 1/2.

The Fréchet distance fits a Gaussian to each feature set and returns
||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa^1/2 Sb Sa^1/2)^1/2), with symmetric
square roots via eigendecomposition (eigenvalues clamped at zero). The
default image featurizer is a flattened 8x8 grayscale downscale, a stand-in
for heavyweight embedding networks that supports trend comparisons only.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ContractViolation

log = logging.getLogger(__name__)

COV_EPS = 1e-6


@dataclass(frozen=True)
class RocCurve:
    """Vertices (fpr, tpr) from (0,0) to (1,1), both coordinates non-decreasing."""

    points: np.ndarray  # shape (k, 2)

    @property
    def fpr(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def tpr(self) -> np.ndarray:
        return self.points[:, 1]


def _score_arrays(scores) -> tuple[np.ndarray, np.ndarray]:
    """Accept a MembershipScoreSet or a (member, nonmember) pair."""
    if hasattr(scores, "member_scores"):
        m, nm = scores.member_scores, scores.nonmember_scores
    else:
        m, nm = scores
    m = np.asarray(m, dtype=np.float64)
    nm = np.asarray(nm, dtype=np.float64)
    if m.size == 0 or nm.size == 0:
        raise ContractViolation("both member and non-member scores must be non-empty")
    if np.isnan(m).any() or np.isnan(nm).any():
        raise ContractViolation("scores must not contain NaN")
    return m, nm


def roc_curve(scores) -> RocCurve:
    """Threshold sweep over distinct score values, tied groups as single vertices."""
    m, nm = _score_arrays(scores)
    values = np.unique(np.concatenate([m, nm]))[::-1]  # descending thresholds
    pts = [(0.0, 0.0)]
    for v in values:
        tpr = float(np.count_nonzero(m >= v)) / m.size
        fpr = float(np.count_nonzero(nm >= v)) / nm.size
        pts.append((fpr, tpr))
    return RocCurve(np.asarray(pts, dtype=np.float64))


def aucroc(scores_or_curve) -> float:
    """Area under the ROC curve (trapezoidal; ties count one half)."""
    curve = scores_or_curve if isinstance(scores_or_curve, RocCurve) else roc_curve(scores_or_curve)
    return float(np.trapezoid(curve.tpr, curve.fpr))


def asr(scores) -> float:
    """Attack success rate: best balanced accuracy over swept thresholds."""
    curve = roc_curve(scores)
    return float(np.max((curve.tpr + 1.0 - curve.fpr) / 2.0))


def tpr_at_fpr(scores, fpr_cap: float) -> float:
    """Best TPR among thresholds whose FPR stays at or below the cap.

    Conservative under ties: a tied group that would push FPR past the cap
    is excluded entirely (no interpolation into the group).
    """
    if not 0.0 < fpr_cap < 1.0:
        raise ContractViolation(f"fpr_cap must lie in (0, 1), got {fpr_cap}")
    curve = roc_curve(scores)
    ok = curve.fpr <= fpr_cap
    return float(np.max(curve.tpr[ok]))


def frechet_distance(feats_a: np.ndarray, feats_b: np.ndarray) -> float:
    """Fréchet distance between Gaussian fits of two feature sets."""
    a = np.asarray(feats_a, dtype=np.float64)
    b = np.asarray(feats_b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ContractViolation(f"feature sets must be (n, d) with equal d, got {a.shape}, {b.shape}")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = _covariance(a)
    cov_b = _covariance(b)
    sqrt_a = _sqrtm(cov_a)
    inner = _sqrtm(sqrt_a @ cov_b @ sqrt_a)
    dist = float(np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a) + np.trace(cov_b) - 2.0 * np.trace(inner))
    return max(dist, 0.0)


def _covariance(x: np.ndarray) -> np.ndarray:
    n, d = x.shape
    centered = x - x.mean(axis=0)
    cov = centered.T @ centered / max(n - 1, 1)
    if n <= d:
        log.info("regularizing covariance: n=%d <= d=%d, adding %.0e * I", n, d, COV_EPS)
        cov = cov + COV_EPS * np.eye(d)
    return cov


def _sqrtm(sym: np.ndarray) -> np.ndarray:
    """Symmetric PSD square root; eigenvalues clamped at zero."""
    vals, vecs = np.linalg.eigh((sym + sym.T) / 2.0)
    vals = np.clip(vals, 0.0, None)
    return (vecs * np.sqrt(vals)) @ vecs.T


def image_features(images: np.ndarray, out_side: int = 8) -> np.ndarray:
    """Default quality-proxy featurizer: flattened grayscale block-mean downscale.

    Accepts (n, c, h, w) images; h and w must be multiples of out_side.
    """
    x = np.asarray(images, dtype=np.float64)
    if x.ndim != 4:
        raise ContractViolation(f"expected (n, c, h, w) images, got shape {x.shape}")
    n, c, h, w = x.shape
    if h % out_side or w % out_side:
        raise ContractViolation(f"image side {h}x{w} not divisible by {out_side}")
    gray = x.mean(axis=1)
    bh, bw = h // out_side, w // out_side
    blocks = gray.reshape(n, out_side, bh, out_side, bw).mean(axis=(2, 4))
    return blocks.reshape(n, out_side * out_side)


FeatureFn = Callable[[np.ndarray], np.ndarray]


def fid_proxy(real: np.ndarray, generated: np.ndarray, features: FeatureFn = image_features) -> float:
    """Fréchet distance between featurized real and generated batches."""
    return frechet_distance(features(real), features(generated))
