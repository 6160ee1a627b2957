"""Two-layer graph attention network over a client's star-shaped local graph.

Node 0 of every local graph is the client's own user. It is linked to each
collaborative neighbour and each rated item; those leaves are linked only to
the centre. Each layer is a single-head GAT with self-loops::

    z_j   = W h_j
    e_ij  = LeakyReLU(a_src . z_i + a_dst . z_j)
    h_i'  = ELU(sum_j softmax_j(e_ij) z_j)      j in N(i) + {i}

Gradients are derived by hand; ``backward`` is checked against finite
differences in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LEAKY_SLOPE = 0.2


class NumericError(ArithmeticError):
    """Non-finite values entered or left a model computation."""


class StaleCacheError(RuntimeError):
    """A backward pass was given a cache from a different forward pass."""


@dataclass
class GatLayerParams:
    W: np.ndarray  # (d_out, d_in)
    a: np.ndarray  # (2 * d_out,): [a_src, a_dst]
    leaky_relu_slope: float = LEAKY_SLOPE

    @property
    def d_in(self) -> int:
        return self.W.shape[1]

    @property
    def d_out(self) -> int:
        return self.W.shape[0]

    def copy(self) -> "GatLayerParams":
        return GatLayerParams(self.W.copy(), self.a.copy(), self.leaky_relu_slope)


@dataclass
class ModelParams:
    layer1: GatLayerParams
    layer2: GatLayerParams

    @property
    def layers(self) -> tuple[GatLayerParams, GatLayerParams]:
        return (self.layer1, self.layer2)

    @property
    def dim(self) -> int:
        return self.layer1.d_in

    def tensors(self) -> list[np.ndarray]:
        return [self.layer1.W, self.layer1.a, self.layer2.W, self.layer2.a]

    def copy(self) -> "ModelParams":
        return ModelParams(self.layer1.copy(), self.layer2.copy())

    def zeros_like(self) -> "ModelParams":
        return ModelParams(
            GatLayerParams(np.zeros_like(self.layer1.W), np.zeros_like(self.layer1.a),
                           self.layer1.leaky_relu_slope),
            GatLayerParams(np.zeros_like(self.layer2.W), np.zeros_like(self.layer2.a),
                           self.layer2.leaky_relu_slope),
        )


@dataclass
class EmbeddingTable:
    values: np.ndarray  # (rows, d)

    def __post_init__(self):
        if self.values.ndim != 2:
            raise ValueError("embedding table must be 2-d")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return self.values.shape[1]


@dataclass
class LocalGraph:
    """Embeddings gathered for one client; rows are copies, never views of the tables."""

    user: np.ndarray  # (d,)
    neighbors: np.ndarray  # (p, d)
    items: np.ndarray  # (q, d)
    item_ids: np.ndarray
    ratings: np.ndarray

    def __post_init__(self):
        if self.items.shape[0] < 1:
            raise ValueError("local graph needs at least one item")
        if self.items.shape[0] != len(self.item_ids) or len(self.item_ids) != len(self.ratings):
            raise ValueError("items, item_ids and ratings must be aligned")

    @property
    def p(self) -> int:
        return self.neighbors.shape[0]

    @property
    def q(self) -> int:
        return self.items.shape[0]

    def node_features(self) -> np.ndarray:
        d = self.user.shape[0]
        return np.vstack([self.user[None, :], self.neighbors.reshape(-1, d), self.items])


@dataclass
class LocalGradients:
    grad_theta: ModelParams
    grad_user: np.ndarray
    grad_items: np.ndarray  # (q, d), aligned with the graph's item_ids
    item_ids: np.ndarray
    loss: float = float("nan")


@dataclass
class _LayerCache:
    H: np.ndarray
    Z: np.ndarray
    xc: np.ndarray  # centre logits before LeakyReLU, over all nodes
    alpha: np.ndarray  # centre attention
    xs: np.ndarray  # leaf self logits (pre-activation)
    xn: np.ndarray  # leaf-to-centre logits (pre-activation)
    beta: np.ndarray  # leaf self attention; centre weight is 1 - beta
    pre: np.ndarray
    out: np.ndarray


@dataclass
class ForwardCache:
    model: ModelParams
    graph: LocalGraph
    layers: list = field(default_factory=list)
    predictions: np.ndarray | None = None


def _check_finite(*arrays):
    for arr in arrays:
        if not np.all(np.isfinite(arr)):
            raise NumericError("non-finite value in GAT input")


def _leaky(x, slope):
    return np.where(x > 0, x, slope * x)


def _leaky_grad(x, slope):
    return np.where(x > 0, 1.0, slope)


def _elu(x):
    return np.where(x > 0, x, np.expm1(np.minimum(x, 0.0)))


INIT_SCHEMES = ("uniform", "offset")


def init_params(d: int, seed: int, num_users: int, num_items: int,
                scheme: str = "uniform", base_score: float = 3.0):
    """Initialise ``(ModelParams, user EmbeddingTable, item EmbeddingTable)``.

    ``"uniform"`` draws every tensor from U(-1/sqrt(d), 1/sqrt(d)).

    ``"offset"`` keeps the same uniform draws for embeddings and attention
    vectors but adds ``sqrt(base_score / d)`` to every embedding entry and
    starts both weight matrices at the identity, so the initial score
    ``u . v`` is close to ``base_score`` instead of close to zero (where the
    inner-product model sits at a saddle and clipped updates barely move it).
    """
    if d < 1:
        raise ValueError(f"embedding dimension must be >= 1, got {d}")
    if scheme not in INIT_SCHEMES:
        raise ValueError(f"unknown init scheme {scheme!r}")
    rng = np.random.default_rng(seed)
    s = 1.0 / np.sqrt(d)

    def draw(*shape):
        return rng.uniform(-s, s, size=shape)

    user = draw(num_users, d)
    item = draw(num_items, d)
    layers = [GatLayerParams(draw(d, d), draw(2 * d)) for _ in range(2)]
    if scheme == "offset":
        shift = np.sqrt(base_score / d)
        user += shift
        item += shift
        for layer in layers:
            layer.W = np.eye(d)
    return ModelParams(*layers), EmbeddingTable(user), EmbeddingTable(item)


def gat_layer_forward(params: GatLayerParams, center, leaves):
    """One attention layer on a star graph.

    ``center`` is a vector, ``leaves`` an (n_leaves, d_in) array. Returns
    ``(center_out, leaves_out, cache)``.
    """
    center = np.asarray(center, dtype=np.float64)
    leaves = np.asarray(leaves, dtype=np.float64).reshape(-1, center.shape[0])
    cache = _layer_forward(params, np.vstack([center[None, :], leaves]))
    return cache.out[0], cache.out[1:], cache


def _layer_forward(params: GatLayerParams, H: np.ndarray) -> _LayerCache:
    _check_finite(H)
    slope = params.leaky_relu_slope
    d_out = params.d_out
    Z = H @ params.W.T
    s = Z @ params.a[:d_out]
    t = Z @ params.a[d_out:]

    xc = s[0] + t
    ec = _leaky(xc, slope)
    ec = np.exp(ec - ec.max())
    alpha = ec / ec.sum()

    xs = s[1:] + t[1:]
    xn = s[1:] + t[0]
    es, en = _leaky(xs, slope), _leaky(xn, slope)
    m = np.maximum(es, en)
    ws, wn = np.exp(es - m), np.exp(en - m)
    beta = ws / (ws + wn)

    pre = np.empty_like(Z)
    pre[0] = alpha @ Z
    pre[1:] = beta[:, None] * Z[1:] + (1.0 - beta)[:, None] * Z[0][None, :]
    out = _elu(pre)
    return _LayerCache(H, Z, xc, alpha, xs, xn, beta, pre, out)


def _layer_backward(params: GatLayerParams, c: _LayerCache, G_out: np.ndarray):
    """Return (dW, da, dH) for upstream gradient ``G_out`` on the layer output."""
    slope = params.leaky_relu_slope
    d_out = params.d_out
    a_src, a_dst = params.a[:d_out], params.a[d_out:]
    Z = c.Z
    # ELU'(x) = 1 for x > 0, exp(x) = out + 1 otherwise
    G = G_out * np.where(c.pre > 0, 1.0, c.out + 1.0)

    dZ = np.zeros_like(Z)
    ds = np.zeros(Z.shape[0])
    dt = np.zeros(Z.shape[0])

    # centre node
    g0 = G[0]
    dalpha = Z @ g0
    dZ += c.alpha[:, None] * g0[None, :]
    de = c.alpha * (dalpha - c.alpha @ dalpha)
    dx = de * _leaky_grad(c.xc, slope)
    ds[0] += dx.sum()
    dt += dx

    # leaves
    if Z.shape[0] > 1:
        GL = G[1:]
        beta = c.beta
        gamma = 1.0 - beta
        dbs = np.einsum("ij,ij->i", GL, Z[1:])
        dbn = GL @ Z[0]
        dZ[1:] += beta[:, None] * GL
        dZ[0] += gamma @ GL
        mean = beta * dbs + gamma * dbn
        dxs = beta * (dbs - mean) * _leaky_grad(c.xs, slope)
        dxn = gamma * (dbn - mean) * _leaky_grad(c.xn, slope)
        ds[1:] += dxs + dxn
        dt[1:] += dxs
        dt[0] += dxn.sum()

    dZ += np.outer(ds, a_src) + np.outer(dt, a_dst)
    da = np.concatenate([Z.T @ ds, Z.T @ dt])
    dW = dZ.T @ c.H
    dH = dZ @ params.W
    return dW, da, dH


def forward(model: ModelParams, graph: LocalGraph):
    """Run both layers; returns ``(refined_user, refined_items, cache)``."""
    H = graph.node_features()
    cache = ForwardCache(model, graph)
    for layer in model.layers:
        lc = _layer_forward(layer, H)
        cache.layers.append(lc)
        H = lc.out
    item_rows = slice(1 + graph.p, None)
    return H[0], H[item_rows], cache


def refine_query_items(model: ModelParams, cache: ForwardCache, queries: np.ndarray) -> np.ndarray:
    """Layer outputs for extra item leaves that listen to the centre but do not feed it.

    This is the leaf update of ``forward`` applied to items outside the graph,
    so the centre's representation stays exactly as in ``forward``.
    """
    H = np.asarray(queries, dtype=np.float64).reshape(-1, model.dim)
    _check_finite(H)
    for layer, lc in zip(model.layers, cache.layers):
        d_out = layer.d_out
        slope = layer.leaky_relu_slope
        Z = H @ layer.W.T
        z0 = lc.Z[0]
        s = Z @ layer.a[:d_out]
        es = _leaky(s + Z @ layer.a[d_out:], slope)
        en = _leaky(s + z0 @ layer.a[d_out:], slope)
        m = np.maximum(es, en)
        ws, wn = np.exp(es - m), np.exp(en - m)
        beta = ws / (ws + wn)
        H = _elu(beta[:, None] * Z + (1.0 - beta)[:, None] * z0[None, :])
    return H


def predict(refined_user, refined_item):
    """Inner-product rating score. Accepts a single item vector or a (q, d) stack."""
    return np.asarray(refined_item) @ np.asarray(refined_user)


def loss(predicted, actual) -> float:
    predicted = np.asarray(predicted, dtype=np.float64)
    actual = np.asarray(actual, dtype=np.float64)
    if predicted.size == 0:
        raise ValueError("loss over zero ratings is undefined")
    if predicted.shape != actual.shape:
        raise ValueError("predicted and actual must be aligned")
    return float(np.mean((actual - predicted) ** 2))


def backward(model: ModelParams, graph: LocalGraph, cache: ForwardCache) -> LocalGradients:
    """Exact gradients of the mean squared rating error.

    Neighbour embeddings are treated as constants and get no gradient.
    """
    if cache.model is not model or cache.graph is not graph or len(cache.layers) != 2:
        raise StaleCacheError("cache does not belong to this (model, graph) pair")
    out = cache.layers[-1].out
    p, q = graph.p, graph.q
    u = out[0]
    V = out[1 + p:]
    preds = V @ u
    cache.predictions = preds
    resid = preds - graph.ratings
    dr = 2.0 * resid / q

    G = np.zeros_like(out)
    G[0] = dr @ V
    G[1 + p:] = dr[:, None] * u[None, :]

    grads = []
    for layer, lc in zip(reversed(model.layers), reversed(cache.layers)):
        dW, da, G = _layer_backward(layer, lc, G)
        grads.append(GatLayerParams(dW, da, layer.leaky_relu_slope))
    grad_theta = ModelParams(grads[1], grads[0])
    result = LocalGradients(
        grad_theta=grad_theta,
        grad_user=G[0].copy(),
        grad_items=G[1 + p:].copy(),
        item_ids=np.asarray(graph.item_ids),
        loss=float(np.mean(resid ** 2)),
    )
    _check_finite(result.grad_user, result.grad_items, *grad_theta.tensors())
    return result


def build_graph(user_vec, neighbor_vecs, item_table: np.ndarray, item_ids, ratings) -> LocalGraph:
    d = item_table.shape[1]
    return LocalGraph(
        user=np.array(user_vec, dtype=np.float64),
        neighbors=np.asarray(neighbor_vecs, dtype=np.float64).reshape(-1, d).copy(),
        items=item_table[np.asarray(item_ids)].copy(),
        item_ids=np.asarray(item_ids),
        ratings=np.asarray(ratings, dtype=np.float64),
    )
