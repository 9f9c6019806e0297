"""Squared-MMD knowledge transfer between source and target activations.

The estimator is the biased V-statistic, all three double sums including
i = j terms, with a Gaussian kernel exp(-||x - y||^2 / (2 sigma^2)).
Bandwidth is either fixed or the median of pairwise distances over the
pooled sample (fallback 1 when the median is 0). The median is treated as
a constant in the backward pass: gradients never flow through sigma, and
gradient certification runs with a fixed bandwidth.

The loss taps two points per stream: the pooled representation entering
FC1, and the post-relu hidden activations after FC1 (pre-dropout).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, SampleError, ShapeError


@dataclass(frozen=True)
class KernelConfig:
    """sigma is a positive number or the string "median"."""

    sigma: float | str = "median"

    def __post_init__(self):
        if isinstance(self.sigma, str):
            if self.sigma != "median":
                raise ConfigError(f'kernel sigma must be positive or "median", got {self.sigma!r}')
        elif not self.sigma > 0:
            raise ConfigError(f"kernel sigma must be positive, got {self.sigma}")


@dataclass(frozen=True)
class TransferConfig:
    enabled: bool = True
    fc2_enabled: bool = True


def gaussian_kernel(x: np.ndarray, y: np.ndarray, sigma: float) -> float:
    """exp(-||x - y||^2 / (2 sigma^2)); 1 at x = y, in (0, 1]."""
    if sigma <= 0:
        raise ConfigError(f"kernel sigma must be positive, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"kernel arguments differ in shape: {x.shape} vs {y.shape}")
    diff = x - y
    return float(np.exp(-(diff @ diff) / (2.0 * sigma * sigma)))


def _sq_dists(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    # direct (x-y).(x-y) per pair; exact zeros on identical rows
    diff = a[:, None, :] - b[None, :, :]
    return np.sum(diff * diff, axis=-1)


def median_bandwidth(points: np.ndarray) -> float:
    """Median pairwise Euclidean distance over the pooled sample."""
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 2:
        raise SampleError("median bandwidth needs at least 2 vectors")
    sq = _sq_dists(points, points)
    iu = np.triu_indices(points.shape[0], k=1)
    med = float(np.median(np.sqrt(sq[iu])))
    return med if med > 0 else 1.0


def resolve_sigma(t: np.ndarray, u: np.ndarray, kcfg: KernelConfig) -> float:
    if kcfg.sigma == "median":
        return median_bandwidth(np.vstack([t, u]))
    return float(kcfg.sigma)


def _check_pair(t: np.ndarray, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    t = np.asarray(t, dtype=np.float64)
    u = np.asarray(u, dtype=np.float64)
    if t.ndim != 2 or u.ndim != 2:
        raise ShapeError("batches must be 2-D (rows are vectors)")
    if t.shape[0] < 1 or u.shape[0] < 1:
        raise SampleError("both batches need at least one vector")
    if t.shape[1] != u.shape[1]:
        raise ShapeError(f"batch dims differ: {t.shape[1]} vs {u.shape[1]}")
    return t, u


def mmd2(t: np.ndarray, u: np.ndarray, sigma: float) -> float:
    """Biased squared-MMD V-statistic between row batches T and U."""
    t, u = _check_pair(t, u)
    s2 = 2.0 * sigma * sigma
    k_tt = float(np.sum(np.exp(-_sq_dists(t, t) / s2))) / (t.shape[0] ** 2)
    k_uu = float(np.sum(np.exp(-_sq_dists(u, u) / s2))) / (u.shape[0] ** 2)
    k_tu = float(np.sum(np.exp(-_sq_dists(t, u) / s2))) / (t.shape[0] * u.shape[0])
    return k_tt + k_uu - 2.0 * k_tu


def mmd2_grad_u(t: np.ndarray, u: np.ndarray, sigma: float) -> np.ndarray:
    """d mmd2 / d u_p, sigma held constant (the source side is frozen).

    For the Gaussian kernel, d k(x, y)/d x = k(x, y) (y - x) / sigma^2.
    """
    t, u = _check_pair(t, u)
    n_t, n_u = t.shape[0], u.shape[0]
    s2 = sigma * sigma
    k_uu = np.exp(-_sq_dists(u, u) / (2.0 * s2))    # (n_u, n_u)
    k_tu = np.exp(-_sq_dists(t, u) / (2.0 * s2))    # (n_t, n_u)
    # UU term: entries (p,j) and (j,p) contribute equally; the p=j entry is 0
    diff_uu = u[None, :, :] - u[:, None, :]          # [p, j] = u_j - u_p
    g = (2.0 / (n_u * n_u)) * np.sum(k_uu[:, :, None] * diff_uu, axis=1) / s2
    diff_tu = t[:, None, :] - u[None, :, :]          # [i, p] = t_i - u_p
    g -= (2.0 / (n_t * n_u)) * np.sum(k_tu[:, :, None] * diff_tu, axis=0) / s2
    return g


@dataclass(frozen=True)
class TransferTerms:
    """L_KT = fc1 + fc2 (fc2 is 0 when disabled)."""

    fc1: float
    fc2: float
    sigma_fc1: float
    sigma_fc2: float

    @property
    def total(self) -> float:
        return self.fc1 + self.fc2


def transfer_loss(source_m: np.ndarray, source_hidden: np.ndarray,
                  target_m: np.ndarray, target_hidden: np.ndarray,
                  kcfg: KernelConfig, fc2_enabled: bool = True) -> TransferTerms:
    """Squared MMD at both classifier taps for one stream's batches."""
    if source_m.shape[1] != target_m.shape[1]:
        raise ConfigError("source and target pooled widths differ")
    sigma_fc1 = resolve_sigma(source_m, target_m, kcfg)
    fc1 = mmd2(source_m, target_m, sigma_fc1)
    if fc2_enabled:
        if source_hidden.shape[1] != target_hidden.shape[1]:
            raise ConfigError("source and target hidden widths differ")
        sigma_fc2 = resolve_sigma(source_hidden, target_hidden, kcfg)
        fc2 = mmd2(source_hidden, target_hidden, sigma_fc2)
    else:
        fc2, sigma_fc2 = 0.0, 1.0
    return TransferTerms(fc1=fc1, fc2=fc2, sigma_fc1=sigma_fc1, sigma_fc2=sigma_fc2)


def transfer_grads(source_m: np.ndarray, source_hidden: np.ndarray,
                   target_m: np.ndarray, target_hidden: np.ndarray,
                   terms: TransferTerms, fc2_enabled: bool = True
                   ) -> tuple[np.ndarray, np.ndarray]:
    """Gradients of L_KT w.r.t. the target batches (rows align with videos)."""
    g_m = mmd2_grad_u(source_m, target_m, terms.sigma_fc1)
    if fc2_enabled:
        g_hidden = mmd2_grad_u(source_hidden, target_hidden, terms.sigma_fc2)
    else:
        g_hidden = np.zeros_like(target_hidden)
    return g_m, g_hidden
