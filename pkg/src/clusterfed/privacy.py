"""Client-side privacy transforms applied before upload.

Two mechanisms:

* pseudo item gradients: rows for sampled non-interacted items drawn from a
  Gaussian matched to the per-dimension mean and variance of the real rows,
  so the server cannot read the interaction set off the non-zero rows;
* local differential privacy: L2 clipping to ``clip_threshold`` followed by
  i.i.d. Laplace(0, ``noise_scale``) noise per component.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .model import GatLayerParams, LocalGradients, ModelParams, NumericError
from .wire import ClientUpdate, SparseItemGradients

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PrivacyConfig:
    clip_threshold: float = 0.2
    noise_scale: float = 0.1
    num_pseudo: int = 1000

    def __post_init__(self):
        if not self.clip_threshold > 0:
            raise ValueError("clip_threshold must be > 0")
        if self.noise_scale < 0:
            raise ValueError("noise_scale must be >= 0")
        if self.num_pseudo < 0:
            raise ValueError("num_pseudo must be >= 0")


def _rng(seed) -> np.random.Generator:
    return seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)


def synthesize_pseudo_gradients(real_rows, candidate_items, n: int, seed):
    """Sample ``n`` candidate items and Gaussian gradients for them.

    Returns ``(item_ids, rows)``. If ``n`` exceeds the candidate count it is
    capped with a warning.
    """
    real = np.asarray(real_rows, dtype=np.float64)
    if real.ndim != 2 or real.shape[0] == 0:
        raise ValueError("need at least one real item gradient row")
    candidates = np.asarray(candidate_items)
    if n > candidates.size:
        log.warning("requested %d pseudo items but only %d candidates; capping", n, candidates.size)
        n = int(candidates.size)
    rng = _rng(seed)
    mean = real.mean(axis=0)
    std = np.sqrt(real.var(axis=0))  # population variance: a single row gives 0
    ids = rng.choice(candidates, size=n, replace=False) if n else candidates[:0]
    z = rng.standard_normal((n, real.shape[1]))
    return np.asarray(ids, dtype=np.int64), mean[None, :] + std[None, :] * z


def clip_rows(X: np.ndarray, threshold: float) -> np.ndarray:
    """Rescale each row of ``X`` whose L2 norm exceeds ``threshold`` onto the ball."""
    X = np.array(X, dtype=np.float64, ndmin=2)
    norms = np.linalg.norm(X, axis=1)
    over = norms > threshold
    if np.any(over):
        X[over] *= (threshold / norms[over])[:, None]
        # rounding can leave the rescaled norm a few ulps above the bound
        for _ in range(8):
            still = np.linalg.norm(X, axis=1) > threshold
            if not np.any(still):
                break
            X[still] *= 1.0 - 4.0 * np.finfo(np.float64).eps
    return X


def _laplace_rows(X: np.ndarray, scale: float, rng: np.random.Generator) -> np.ndarray:
    if scale > 0:
        X = X + rng.laplace(0.0, scale, size=X.shape)
    return X


def apply_ldp(grad, clip_threshold: float, noise_scale: float, seed) -> np.ndarray:
    """clip(g, delta) + Laplace(0, lambda), treating ``grad`` as one tensor."""
    g = np.asarray(grad, dtype=np.float64)
    if not np.all(np.isfinite(g)):
        raise NumericError("non-finite gradient passed to apply_ldp")
    if not clip_threshold > 0 or noise_scale < 0:
        raise ValueError("need clip_threshold > 0 and noise_scale >= 0")
    clipped = clip_rows(g.reshape(1, -1), clip_threshold).reshape(g.shape)
    return _laplace_rows(clipped, noise_scale, _rng(seed))


def _ldp_theta(theta: ModelParams, cfg: PrivacyConfig, rng) -> ModelParams:
    # one clipping group per layer: W and a together
    layers = []
    for layer in theta.layers:
        flat = np.concatenate([layer.W.ravel(), layer.a])
        flat = apply_ldp(flat, cfg.clip_threshold, cfg.noise_scale, rng)
        nw = layer.W.size
        layers.append(GatLayerParams(flat[:nw].reshape(layer.W.shape), flat[nw:], layer.leaky_relu_slope))
    return ModelParams(*layers)


def privatize_update(update: LocalGradients, user_id: int, num_items: int,
                     cfg: PrivacyConfig, seed) -> ClientUpdate:
    """Pseudo rows, shuffle, then LDP on every uploaded tensor."""
    rng = _rng(seed)
    real_ids = np.asarray(update.item_ids, dtype=np.int64)
    real_rows = np.asarray(update.grad_items, dtype=np.float64)
    for t in (update.grad_user, real_rows, *update.grad_theta.tensors()):
        if not np.all(np.isfinite(t)):
            raise NumericError("non-finite local gradient")

    if cfg.num_pseudo > 0:
        candidates = np.setdiff1d(np.arange(num_items), real_ids)
        p_ids, p_rows = synthesize_pseudo_gradients(real_rows, candidates, cfg.num_pseudo, rng)
    else:
        p_ids, p_rows = np.empty(0, dtype=np.int64), np.empty((0, real_rows.shape[1]))

    ids = np.concatenate([real_ids, p_ids])
    rows = np.vstack([real_rows, p_rows])
    pseudo = np.concatenate([np.zeros(real_ids.size, bool), np.ones(p_ids.size, bool)])
    perm = rng.permutation(ids.size)
    ids, rows, pseudo = ids[perm], rows[perm], pseudo[perm]

    theta = _ldp_theta(update.grad_theta, cfg, rng)
    user = apply_ldp(update.grad_user, cfg.clip_threshold, cfg.noise_scale, rng)
    rows = _laplace_rows(clip_rows(rows, cfg.clip_threshold), cfg.noise_scale, rng)

    return ClientUpdate(
        user_id=int(user_id),
        grad_theta=theta,
        grad_user=user,
        item_grads=SparseItemGradients(ids, rows, _pseudo=pseudo),
        weight=int(real_ids.size),
        train_loss=update.loss,
    )
