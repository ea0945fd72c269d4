"""Image quality, Frechet distance and verification ROC metrics."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass, field

import numpy as np
import torch
from scipy import linalg
from skimage.metrics import structural_similarity
from sklearn.metrics import auc as trapezoid_auc
from sklearn.metrics import roc_curve

from facefill.errors import ContractError, ShapeError

DEFAULT_FPRS = (0.01, 0.001)
_SYMMETRY_TOLERANCE = 1e-8

ArrayLike = np.ndarray | torch.Tensor


def _as_array(value: ArrayLike) -> np.ndarray:
    if isinstance(value, torch.Tensor):
        return value.detach().cpu().to(torch.float64).numpy()
    return np.asarray(value, dtype=np.float64)


def psnr(a: ArrayLike, b: ArrayLike, peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB; identical inputs give ``math.inf``."""
    left, right = _as_array(a), _as_array(b)
    if left.shape != right.shape:
        raise ShapeError(f"psnr inputs differ in shape: {left.shape} vs {right.shape}")
    mse = float(np.mean((left - right) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(peak * peak / mse)


def ssim(
    a: ArrayLike,
    b: ArrayLike,
    window: int = 11,
    sigma: float = 1.5,
    k1: float = 0.01,
    k2: float = 0.03,
    data_range: float = 1.0,
) -> float:
    """Gaussian-windowed SSIM averaged over channels and positions.

    Images are [C, H, W] or [H, W]. The Gaussian window spans ``window`` taps
    at the default sigma.
    """
    left, right = _as_array(a), _as_array(b)
    if left.shape != right.shape:
        raise ShapeError(f"ssim inputs differ in shape: {left.shape} vs {right.shape}")
    if left.ndim not in (2, 3):
        raise ShapeError(f"ssim expects [C, H, W] or [H, W], got {left.shape}")
    return float(
        structural_similarity(
            left,
            right,
            win_size=window,
            gaussian_weights=True,
            sigma=sigma,
            use_sample_covariance=False,
            K1=k1,
            K2=k2,
            data_range=data_range,
            channel_axis=0 if left.ndim == 3 else None,
        )
    )


@dataclass(frozen=True)
class GaussianStats:
    mean: np.ndarray
    cov: np.ndarray
    n: int

    def __post_init__(self) -> None:
        mean = np.asarray(self.mean, dtype=np.float64)
        cov = np.asarray(self.cov, dtype=np.float64)
        if mean.ndim != 1 or cov.shape != (mean.shape[0], mean.shape[0]):
            raise ShapeError(f"mean {mean.shape} and covariance {cov.shape} are inconsistent")
        scale = max(1.0, float(np.abs(cov).max(initial=0.0)))
        if not np.allclose(cov, cov.T, rtol=0.0, atol=_SYMMETRY_TOLERANCE * scale):
            raise ContractError("covariance matrix is not symmetric")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @property
    def dim(self) -> int:
        return int(self.mean.shape[0])

    @classmethod
    def from_samples(cls, samples: ArrayLike) -> GaussianStats:
        accumulator = GaussianAccumulator(_as_array(samples).shape[1])
        accumulator.update(samples)
        return accumulator.finalize()


class GaussianAccumulator:
    """Streaming first and second moments; ``merge`` is order independent up to rounding."""

    def __init__(self, dim: int) -> None:
        self.dim = dim
        self.n = 0
        self.total = np.zeros(dim, dtype=np.float64)
        self.outer = np.zeros((dim, dim), dtype=np.float64)

    def update(self, samples: ArrayLike) -> None:
        rows = _as_array(samples)
        if rows.ndim != 2 or rows.shape[1] != self.dim:
            raise ShapeError(f"expected [n, {self.dim}] samples, got {rows.shape}")
        self.n += rows.shape[0]
        self.total += rows.sum(axis=0)
        self.outer += rows.T @ rows

    def merge(self, other: GaussianAccumulator) -> GaussianAccumulator:
        if other.dim != self.dim:
            raise ShapeError(f"cannot merge accumulators of dim {self.dim} and {other.dim}")
        merged = GaussianAccumulator(self.dim)
        merged.n = self.n + other.n
        merged.total = self.total + other.total
        merged.outer = self.outer + other.outer
        return merged

    def finalize(self) -> GaussianStats:
        if self.n == 0:
            raise ContractError("no samples accumulated")
        mean = self.total / self.n
        if self.n < 2:
            cov = np.zeros((self.dim, self.dim))
        else:
            cov = (self.outer - self.n * np.outer(mean, mean)) / (self.n - 1)
            cov = 0.5 * (cov + cov.T)
        return GaussianStats(mean=mean, cov=cov, n=self.n)


def _psd_sqrt(matrix: np.ndarray) -> np.ndarray:
    eigenvalues, eigenvectors = linalg.eigh(matrix)
    roots = np.sqrt(np.clip(eigenvalues, 0.0, None))
    return (eigenvectors * roots) @ eigenvectors.T


def frechet_distance(s1: GaussianStats, s2: GaussianStats) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)), clamped at 0.

    Tr((S1 S2)^(1/2)) is taken from the symmetric similar matrix
    S1^(1/2) S2 S1^(1/2), whose negative eigenvalues are clipped to 0.
    """
    if s1.dim != s2.dim:
        raise ShapeError(f"Gaussian dimensions differ: {s1.dim} vs {s2.dim}")
    root = _psd_sqrt(s1.cov)
    product = root @ s2.cov @ root
    product = 0.5 * (product + product.T)
    eigenvalues = np.clip(linalg.eigvalsh(product), 0.0, None)
    trace_root = float(np.sqrt(eigenvalues).sum())
    diff = s1.mean - s2.mean
    distance = float(diff @ diff) + float(np.trace(s1.cov) + np.trace(s2.cov)) - 2.0 * trace_root
    return max(distance, 0.0)


@dataclass(frozen=True)
class VerificationPair:
    embedding_a: np.ndarray
    embedding_b: np.ndarray
    same_identity: bool


@dataclass(frozen=True)
class VerificationResult:
    auc: float
    tpr_at_fpr: dict[float, float]
    fpr: np.ndarray = field(repr=False)
    tpr: np.ndarray = field(repr=False)


def cosine_similarity(a: ArrayLike, b: ArrayLike) -> float:
    left, right = _as_array(a).ravel(), _as_array(b).ravel()
    denominator = float(np.linalg.norm(left) * np.linalg.norm(right))
    if denominator == 0.0:
        return 0.0
    return float(left @ right) / denominator


def tpr_at(fpr: np.ndarray, tpr: np.ndarray, target: float) -> float:
    """Read the ROC polyline at ``target`` FPR.

    At an FPR the curve actually visits, the highest TPR reached there is
    returned; otherwise the value is linearly interpolated along the segment
    that crosses ``target``.
    """
    index = int(np.searchsorted(fpr, target, side="right")) - 1
    index = max(index, 0)
    if fpr[index] == target or index == len(fpr) - 1:
        return float(tpr[index])
    following = index + 1
    fraction = (target - fpr[index]) / (fpr[following] - fpr[index])
    return float(tpr[index] + fraction * (tpr[following] - tpr[index]))


def roc_from_scores(
    scores: Sequence[float] | np.ndarray,
    labels: Sequence[bool] | np.ndarray,
    fprs: Sequence[float] = DEFAULT_FPRS,
) -> VerificationResult:
    score_array = np.asarray(scores, dtype=np.float64)
    label_array = np.asarray(labels, dtype=bool)
    if label_array.all() or not label_array.any():
        raise ContractError("ROC needs at least one positive and one negative pair")
    # Equal scores share one threshold, so a tie block is one diagonal segment.
    fpr, tpr, _ = roc_curve(label_array, score_array, drop_intermediate=False)
    return VerificationResult(
        auc=float(trapezoid_auc(fpr, tpr)),
        tpr_at_fpr={float(target): tpr_at(fpr, tpr, target) for target in fprs},
        fpr=fpr,
        tpr=tpr,
    )


def roc_auc(
    pairs: Sequence[VerificationPair], fprs: Sequence[float] = DEFAULT_FPRS
) -> VerificationResult:
    """Cosine-scored verification ROC with trapezoid AUC and TPR at fixed FPRs."""
    scores = [cosine_similarity(pair.embedding_a, pair.embedding_b) for pair in pairs]
    labels = [pair.same_identity for pair in pairs]
    return roc_from_scores(scores, labels, fprs)


def verification_pairs(
    gallery: Sequence[np.ndarray], probes: Sequence[np.ndarray]
) -> list[VerificationPair]:
    """Pair probe i with gallery i (genuine) and gallery (i + 1) mod n (impostor)."""
    if len(gallery) != len(probes):
        raise ShapeError(f"{len(gallery)} gallery embeddings but {len(probes)} probes")
    if len(gallery) < 2:
        raise ContractError("verification needs at least two identities")
    n = len(gallery)
    pairs = []
    for i, probe in enumerate(probes):
        pairs.append(VerificationPair(np.asarray(gallery[i]), np.asarray(probe), True))
        pairs.append(VerificationPair(np.asarray(gallery[(i + 1) % n]), np.asarray(probe), False))
    return pairs
