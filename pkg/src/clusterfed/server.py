"""Server-side aggregation and global parameter updates.

This module only ever sees :class:`~clusterfed.wire.ClientUpdate` objects and
the global tables; it has no access to client shards.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import EmbeddingTable, GatLayerParams, ModelParams
from .wire import ClientUpdate


@dataclass
class AggregatedGradients:
    theta: ModelParams
    user_grad: np.ndarray  # (M, d), zero where untouched
    user_mask: np.ndarray  # (M,) bool
    item_grad: np.ndarray  # (N, d)
    item_mask: np.ndarray  # (N,) bool
    weights: dict  # user_id -> n_k / n


ROW_WEIGHTINGS = ("round", "contributors")


def aggregate(updates: list[ClientUpdate], num_users: int, num_items: int,
              row_weighting: str = "round") -> AggregatedGradients:
    """Sample-count weighted sum of client gradients.

    Every tensor, dense or sparse, is combined as ``sum_k (n_k / n) g_k`` with
    ``n`` the total interaction count of this round's participants. Summation
    runs in ascending user id so the result does not depend on arrival order.

    With ``row_weighting="contributors"`` each embedding row is instead
    normalised by the weight of the clients that actually sent it.
    """
    if not updates:
        raise ValueError("cannot aggregate an empty round")
    if row_weighting not in ROW_WEIGHTINGS:
        raise ValueError(f"row_weighting must be one of {ROW_WEIGHTINGS}")
    updates = sorted(updates, key=lambda u: u.user_id)
    d = updates[0].dim
    ref = updates[0].grad_theta
    for up in updates:
        if up.dim != d or any(a.shape != b.shape for a, b in zip(up.grad_theta.tensors(), ref.tensors())):
            raise ValueError(f"update from user {up.user_id} has mismatched shapes")
        if up.item_grads.rows.shape[1:] != (d,):
            raise ValueError(f"update from user {up.user_id} has bad item rows")
    total = float(sum(up.weight for up in updates))
    weights = {up.user_id: up.weight / total for up in updates}

    theta = ref.zeros_like()
    user_grad = np.zeros((num_users, d))
    user_mask = np.zeros(num_users, dtype=bool)
    item_grad = np.zeros((num_items, d))
    item_mass = np.zeros(num_items)
    for up in updates:
        w = weights[up.user_id]
        for acc, t in zip(theta.tensors(), up.grad_theta.tensors()):
            acc += w * t
        user_grad[up.user_id] += w * up.grad_user
        user_mask[up.user_id] = True
        ids = np.ascontiguousarray(up.item_grads.item_ids, dtype=np.int64)
        rows = np.ascontiguousarray(up.item_grads.rows, dtype=np.float64)
        kernels.scatter_add_rows(item_grad, ids, rows, np.full(ids.size, w))
        item_mass[ids] += w
    item_mask = item_mass > 0
    if row_weighting == "contributors":
        item_grad[item_mask] /= item_mass[item_mask, None]
        for uid, w in weights.items():
            user_grad[uid] /= w
    return AggregatedGradients(theta, user_grad, user_mask, item_grad, item_mask, weights)


def apply_updates(model: ModelParams, users: EmbeddingTable, items: EmbeddingTable,
                  agg: AggregatedGradients, lr: float, weight_decay: float = 0.0):
    """Plain gradient step with multiplicative L2 shrinkage on updated tensors.

    Only embedding rows that received gradient mass change. Returns new
    ``(model, users, items)``; the inputs are left untouched.
    """
    if lr <= 0:
        raise ValueError("learning rate must be > 0")
    shrink = 1.0 - lr * weight_decay
    layers = []
    for layer, g in zip(model.layers, agg.theta.layers):
        if layer.W.shape != g.W.shape or layer.a.shape != g.a.shape:
            raise ValueError("gradient shape does not match model")
        layers.append(GatLayerParams(shrink * layer.W - lr * g.W, shrink * layer.a - lr * g.a,
                                     layer.leaky_relu_slope))
    new_users = _step_rows(users.values, agg.user_grad, agg.user_mask, lr, shrink)
    new_items = _step_rows(items.values, agg.item_grad, agg.item_mask, lr, shrink)
    return ModelParams(*layers), EmbeddingTable(new_users), EmbeddingTable(new_items)


def _step_rows(table, grad, mask, lr, shrink):
    if table.shape != grad.shape:
        raise ValueError("gradient shape does not match embedding table")
    out = table.copy()
    out[mask] = shrink * table[mask] - lr * grad[mask]
    return out
