"""Client update and broadcast documents, their binary encoding, and model checkpoints.

Uplink (client -> server), little endian::

    b"CFU1" | u32 d | u32 user_id | u32 weight | u32 rows
    | theta: W1 (d*d f8), a1 (2d f8), W2 (d*d f8), a2 (2d f8)
    | user gradient (d f8) | item ids (rows i4) | item gradients (rows*d f8)

Downlink (server -> client)::

    b"CFD1" | u32 d | u32 user_id | u32 p | u32 N
    | theta | user row (d f8) | neighbour ids (p i4) | neighbour rows (p*d f8)
    | item table (N*d f8)

The uplink carries no marker telling real item rows from pseudo rows.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .model import EmbeddingTable, GatLayerParams, ModelParams

UPLINK_MAGIC = b"CFU1"
DOWNLINK_MAGIC = b"CFD1"
CHECKPOINT_FORMAT = "clusterfed-checkpoint-v1"
_HEADER = struct.Struct("<4sIIII")


class WireFormatError(ValueError):
    pass


@dataclass
class SparseItemGradients:
    item_ids: np.ndarray  # (rows,) int
    rows: np.ndarray  # (rows, d)
    # Client-side bookkeeping only; never written by ``encode_update``.
    _pseudo: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if len(np.unique(self.item_ids)) != len(self.item_ids):
            raise ValueError("item ids in an upload must be unique")

    def __len__(self):
        return int(self.item_ids.shape[0])


@dataclass
class ClientUpdate:
    user_id: int
    grad_theta: ModelParams
    grad_user: np.ndarray
    item_grads: SparseItemGradients
    weight: int
    train_loss: float = float("nan")  # local diagnostic, not transmitted

    def __post_init__(self):
        if self.weight < 1:
            raise ValueError("update weight n_k must be >= 1")

    @property
    def dim(self) -> int:
        return int(self.grad_user.shape[0])

    def wire_size(self) -> int:
        return uplink_size(self.dim, len(self.item_grads))


def _theta_floats(d: int) -> int:
    return 2 * d * d + 4 * d


def uplink_size(d: int, rows: int) -> int:
    return _HEADER.size + 8 * (_theta_floats(d) + d) + rows * (4 + 8 * d)


def downlink_size(d: int, p: int, num_items: int) -> int:
    return _HEADER.size + 8 * (_theta_floats(d) + d) + p * (4 + 8 * d) + 8 * num_items * d


def _theta_bytes(theta: ModelParams) -> bytes:
    return b"".join(np.ascontiguousarray(t, dtype="<f8").tobytes() for t in theta.tensors())


def _read_theta(buf: memoryview, off: int, d: int, slope: float = 0.2):
    parts = []
    for shape in ((d, d), (2 * d,), (d, d), (2 * d,)):
        n = int(np.prod(shape))
        parts.append(np.frombuffer(buf, dtype="<f8", count=n, offset=off).reshape(shape).copy())
        off += 8 * n
    theta = ModelParams(GatLayerParams(parts[0], parts[1], slope), GatLayerParams(parts[2], parts[3], slope))
    return theta, off


def encode_update(update: ClientUpdate) -> bytes:
    d = update.dim
    rows = len(update.item_grads)
    out = [
        _HEADER.pack(UPLINK_MAGIC, d, update.user_id, update.weight, rows),
        _theta_bytes(update.grad_theta),
        np.ascontiguousarray(update.grad_user, dtype="<f8").tobytes(),
        np.ascontiguousarray(update.item_grads.item_ids, dtype="<i4").tobytes(),
        np.ascontiguousarray(update.item_grads.rows, dtype="<f8").tobytes(),
    ]
    return b"".join(out)


def decode_update(data: bytes) -> ClientUpdate:
    buf = memoryview(data)
    if len(data) < _HEADER.size:
        raise WireFormatError("truncated uplink header")
    magic, d, user_id, weight, rows = _HEADER.unpack_from(buf, 0)
    if magic != UPLINK_MAGIC:
        raise WireFormatError(f"bad uplink magic {magic!r}")
    if len(data) != uplink_size(d, rows):
        raise WireFormatError("uplink length does not match its header")
    theta, off = _read_theta(buf, _HEADER.size, d)
    grad_user = np.frombuffer(buf, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    ids = np.frombuffer(buf, dtype="<i4", count=rows, offset=off).astype(np.int64)
    off += 4 * rows
    item_rows = np.frombuffer(buf, dtype="<f8", count=rows * d, offset=off).reshape(rows, d).copy()
    return ClientUpdate(user_id, theta, grad_user, SparseItemGradients(ids, item_rows), weight)


@dataclass
class Broadcast:
    """What the server sends one participating client."""

    user_id: int
    theta: ModelParams
    user_row: np.ndarray
    neighbor_ids: np.ndarray
    neighbor_rows: np.ndarray
    item_table: np.ndarray

    def wire_size(self) -> int:
        return downlink_size(self.user_row.shape[0], len(self.neighbor_ids), self.item_table.shape[0])


def encode_broadcast(msg: Broadcast) -> bytes:
    d = msg.user_row.shape[0]
    return b"".join([
        _HEADER.pack(DOWNLINK_MAGIC, d, msg.user_id, len(msg.neighbor_ids), msg.item_table.shape[0]),
        _theta_bytes(msg.theta),
        np.ascontiguousarray(msg.user_row, dtype="<f8").tobytes(),
        np.ascontiguousarray(msg.neighbor_ids, dtype="<i4").tobytes(),
        np.ascontiguousarray(msg.neighbor_rows, dtype="<f8").tobytes(),
        np.ascontiguousarray(msg.item_table, dtype="<f8").tobytes(),
    ])


def decode_broadcast(data: bytes) -> Broadcast:
    buf = memoryview(data)
    magic, d, user_id, p, n_items = _HEADER.unpack_from(buf, 0)
    if magic != DOWNLINK_MAGIC:
        raise WireFormatError(f"bad downlink magic {magic!r}")
    if len(data) != downlink_size(d, p, n_items):
        raise WireFormatError("downlink length does not match its header")
    theta, off = _read_theta(buf, _HEADER.size, d)
    user_row = np.frombuffer(buf, dtype="<f8", count=d, offset=off).copy()
    off += 8 * d
    nids = np.frombuffer(buf, dtype="<i4", count=p, offset=off).astype(np.int64)
    off += 4 * p
    nrows = np.frombuffer(buf, dtype="<f8", count=p * d, offset=off).reshape(p, d).copy()
    off += 8 * p * d
    table = np.frombuffer(buf, dtype="<f8", count=n_items * d, offset=off).reshape(n_items, d).copy()
    return Broadcast(user_id, theta, user_row, nids, nrows, table)


def save_checkpoint(path, model: ModelParams, users: EmbeddingTable, items: EmbeddingTable, **meta) -> None:
    arrays = {f"theta_{k}": t for k, t in zip(("W1", "a1", "W2", "a2"), model.tensors())}
    np.savez(
        Path(path),
        format=np.array(CHECKPOINT_FORMAT),
        dim=np.array(model.dim),
        leaky_relu_slope=np.array(model.layer1.leaky_relu_slope),
        user_embeddings=users.values,
        item_embeddings=items.values,
        **arrays,
        **{f"meta_{k}": np.array(v) for k, v in meta.items()},
    )


def load_checkpoint(path):
    with np.load(Path(path), allow_pickle=False) as z:
        if str(z["format"]) != CHECKPOINT_FORMAT:
            raise WireFormatError(f"unsupported checkpoint format {z['format']!s}")
        slope = float(z["leaky_relu_slope"])
        model = ModelParams(GatLayerParams(z["theta_W1"].copy(), z["theta_a1"].copy(), slope),
                            GatLayerParams(z["theta_W2"].copy(), z["theta_a2"].copy(), slope))
        meta = {k[5:]: z[k].item() for k in z.files if k.startswith("meta_")}
        return model, EmbeddingTable(z["user_embeddings"].copy()), EmbeddingTable(z["item_embeddings"].copy()), meta
