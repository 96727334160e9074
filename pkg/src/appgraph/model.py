"""Embedding tables, cosine-logistic losses and their hand-derived gradients.

Within one subgraph the APP row ``p`` is scored against sampled installers
``U_pos`` and non-installers ``U_neg``::

    L_pair     = mean_i softplus(-beta * s(p, u_i+)) - mean_j softplus(-beta * s(p, u_j-))
    L_centroid = softplus(-beta * s(p, mean_i u_i+))

where ``s`` is cosine similarity. With stop-gradient on, ``p`` only receives
the centroid gradient (installers treated as constants), installers only
receive the pairwise gradient (``p`` treated as constant), and non-installers
receive nothing. With it off, every term back-propagates everywhere.

Concurrency: in the default mode a single writer owns the tables. The
trainer's parallel mode lets several threads update rows without locks
(hogwild); interleaved row updates may lose increments but never produce
non-finite values.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from .graph import BipartiteGraph

EPS = 1e-12
MAGIC = b"APGE"
FORMAT_VERSION = 1

PathLike = Union[str, os.PathLike]


@dataclass
class EmbeddingTables:
    user_emb: np.ndarray  # (M, d)
    app_emb: np.ndarray  # (N, d)
    user_ids: Optional[np.ndarray] = None  # original ids, index = dense id
    app_ids: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.user_emb.ndim != 2 or self.app_emb.ndim != 2:
            raise ValueError("embedding tables must be 2-d")
        if self.user_emb.shape[1] != self.app_emb.shape[1]:
            raise ValueError("user and APP tables disagree on dimension")
        if self.user_ids is None:
            self.user_ids = np.arange(self.num_users, dtype=np.int64)
        if self.app_ids is None:
            self.app_ids = np.arange(self.num_apps, dtype=np.int64)
        if len(self.user_ids) != self.num_users or len(self.app_ids) != self.num_apps:
            raise ValueError("id mapping length does not match table rows")

    @property
    def num_users(self) -> int:
        return self.user_emb.shape[0]

    @property
    def num_apps(self) -> int:
        return self.app_emb.shape[0]

    @property
    def dim(self) -> int:
        return self.user_emb.shape[1]

    def copy(self) -> "EmbeddingTables":
        return EmbeddingTables(
            self.user_emb.copy(), self.app_emb.copy(), self.user_ids.copy(), self.app_ids.copy()
        )


@dataclass(frozen=True)
class LossConfig:
    beta: float = 5.0
    use_centroid: bool = True
    use_stop_gradient: bool = True

    def __post_init__(self):
        if not self.beta > 0:
            raise ValueError(f"beta must be positive, got {self.beta}")


@dataclass
class TrainingBatch:
    app_id: int
    pos_ids: np.ndarray
    neg_ids: np.ndarray
    p: np.ndarray
    U_pos: np.ndarray
    U_neg: np.ndarray


@dataclass
class GradientSet:
    """Sparse gradients for one step. ``user_ids`` may repeat; repeats accumulate."""

    app_id: Optional[int] = None
    app_grad: Optional[np.ndarray] = None
    user_ids: Optional[np.ndarray] = None
    user_grads: Optional[np.ndarray] = None
    pairwise_loss: float = 0.0
    centroid_loss: float = 0.0

    def user_grad_map(self) -> dict[int, np.ndarray]:
        """Per-user accumulated gradients (for inspection)."""
        out: dict[int, np.ndarray] = {}
        if self.user_ids is None:
            return out
        for uid, g in zip(self.user_ids.tolist(), self.user_grads):
            out[uid] = out[uid] + g if uid in out else g.copy()
        return out


def init_embeddings(
    graph: BipartiteGraph, d: int, seed=None, dtype=np.float32
) -> EmbeddingTables:
    """Random user rows in ``[-1/sqrt(d), 1/sqrt(d)]``; each APP row is the mean of its installers."""
    if d < 1:
        raise ValueError("embedding dimension must be >= 1")
    rng = np.random.default_rng(seed)
    bound = 1.0 / np.sqrt(d)
    users = rng.uniform(-bound, bound, size=(graph.num_users, d))
    sizes = graph.app_sizes
    if (sizes < 1).any():
        raise ValueError("every APP needs at least one installer")
    sums = np.add.reduceat(users[graph.app_users], graph.app_indptr[:-1], axis=0)
    apps = sums / sizes[:, None]
    return EmbeddingTables(
        users.astype(dtype), apps.astype(dtype), graph.user_ids.copy(), graph.app_ids.copy()
    )


def make_batch(tables: EmbeddingTables, app_id: int, pos_ids, neg_ids) -> TrainingBatch:
    pos_ids = np.asarray(pos_ids, dtype=np.int64)
    neg_ids = np.asarray(neg_ids, dtype=np.int64)
    return TrainingBatch(
        app_id,
        pos_ids,
        neg_ids,
        tables.app_emb[app_id],
        tables.user_emb[pos_ids],
        tables.user_emb[neg_ids],
    )


def _norm(x: np.ndarray) -> np.ndarray:
    return np.maximum(np.sqrt(np.einsum("...i,...i->...", x, x)), EPS)


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return np.exp(-np.logaddexp(0.0, -x))


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / (_norm(a) * _norm(b)))


def cosine_rows(p: np.ndarray, U: np.ndarray) -> np.ndarray:
    """Cosine of one vector against every row of ``U``."""
    return (U @ p) / (_norm(U) * _norm(p))


def centroid(U_pos: np.ndarray) -> np.ndarray:
    U_pos = np.asarray(U_pos)
    if U_pos.ndim != 2 or U_pos.shape[0] == 0:
        raise ValueError("centroid of an empty set")
    return U_pos.mean(axis=0)


def pairwise_loss(p, U_pos, U_neg, beta: float) -> float:
    if len(U_pos) == 0 or len(U_neg) == 0:
        raise ValueError("pairwise loss needs at least one positive and one negative")
    s_pos = cosine_rows(p, np.asarray(U_pos))
    s_neg = cosine_rows(p, np.asarray(U_neg))
    return float(_softplus(-beta * s_pos).mean() - _softplus(-beta * s_neg).mean())


def centroid_loss(p, u_c, beta: float) -> float:
    return float(_softplus(-beta * cosine(p, u_c)))


def _dcos_da(a, na, b, nb, s):
    """d s(a, b) / d a for row-broadcastable a, b with their guarded norms."""
    return b / (na * nb)[..., None] - (s / (na * na))[..., None] * a


def batch_gradients(batch: TrainingBatch, config: LossConfig) -> GradientSet:
    beta = config.beta
    p, U_pos, U_neg = batch.p, batch.U_pos, batch.U_neg
    n_pos, n_neg = len(U_pos), len(U_neg)
    if n_pos == 0 or n_neg == 0:
        raise ValueError("batch needs at least one positive and one negative")

    n_p = _norm(p)
    n_u = _norm(U_pos)
    n_v = _norm(U_neg)
    s_pos = (U_pos @ p) / (n_u * n_p)
    s_neg = (U_neg @ p) / (n_v * n_p)
    l_pair = _softplus(-beta * s_pos).mean() - _softplus(-beta * s_neg).mean()

    # dL/ds for each similarity
    g_pos = (-beta / n_pos) * _sigmoid(-beta * s_pos)
    g_neg = (beta / n_neg) * _sigmoid(-beta * s_neg)

    # d s(p, u) / d u for every positive, p fixed
    ds_du = _dcos_da(U_pos, n_u, p, n_p, s_pos)
    pos_grads = g_pos[:, None] * ds_du

    out = GradientSet(app_id=batch.app_id, pairwise_loss=float(l_pair))

    if config.use_centroid:
        u_c = U_pos.mean(axis=0)
        n_c = _norm(u_c)
        s_c = (u_c @ p) / (n_c * n_p)
        out.centroid_loss = float(_softplus(-beta * s_c))
        g_c = -beta * _sigmoid(-beta * s_c)
        app_grad = g_c * _dcos_da(p, n_p, u_c, n_c, s_c)
    else:
        app_grad = None

    if config.use_stop_gradient:
        out.app_grad = app_grad
        out.user_ids = batch.pos_ids
        out.user_grads = pos_grads
        return out

    # Full back-propagation of L_centroid + L_pair.
    ds_dp_pos = _dcos_da(p, n_p, U_pos, n_u, s_pos)
    ds_dp_neg = _dcos_da(p, n_p, U_neg, n_v, s_neg)
    full_app = g_pos @ ds_dp_pos + g_neg @ ds_dp_neg
    neg_grads = g_neg[:, None] * _dcos_da(U_neg, n_v, p, n_p, s_neg)
    if config.use_centroid:
        full_app = full_app + app_grad
        # the centroid depends on each positive with weight 1/n_pos
        pos_grads = pos_grads + (g_c / n_pos) * _dcos_da(u_c, n_c, p, n_p, s_c)
    out.app_grad = full_app
    out.user_ids = np.concatenate([batch.pos_ids, batch.neg_ids])
    out.user_grads = np.concatenate([pos_grads, neg_grads])
    return out


def apply_update(tables: EmbeddingTables, grads: GradientSet, lr: float) -> None:
    if not lr > 0:
        raise ValueError("learning rate must be positive")
    if grads.app_grad is not None and not np.isfinite(grads.app_grad).all():
        raise FloatingPointError(f"non-finite gradient for APP {grads.app_id}")
    if grads.user_grads is not None and not np.isfinite(grads.user_grads).all():
        raise FloatingPointError(f"non-finite user gradient in step on APP {grads.app_id}")
    if grads.app_grad is not None:
        tables.app_emb[grads.app_id] -= lr * grads.app_grad
    ids = grads.user_ids
    if ids is not None and len(ids):
        ordered = np.sort(ids)
        if (ordered[1:] != ordered[:-1]).all():
            tables.user_emb[ids] -= lr * grads.user_grads
        else:
            np.subtract.at(tables.user_emb, ids, lr * grads.user_grads)


# -- persistence ------------------------------------------------------------

_HEADER = struct.Struct("<4sIQQQ")


def save_embeddings(path: PathLike, tables: EmbeddingTables) -> None:
    """Binary layout: magic, u32 version, u64 M/N/d, f32 user rows, f32 APP rows,
    then the original ids (i64) for users and APPs in dense order."""
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, FORMAT_VERSION, tables.num_users, tables.num_apps, tables.dim))
        fh.write(np.ascontiguousarray(tables.user_emb, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(tables.app_emb, dtype="<f4").tobytes())
        fh.write(np.ascontiguousarray(tables.user_ids, dtype="<i8").tobytes())
        fh.write(np.ascontiguousarray(tables.app_ids, dtype="<i8").tobytes())


class EmbeddingFormatError(ValueError):
    pass


def load_embeddings(path: PathLike) -> EmbeddingTables:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise EmbeddingFormatError(f"{path}: truncated header")
    magic, version, m, n, d = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise EmbeddingFormatError(f"{path}: bad magic {magic!r}, not an embedding file")
    if version != FORMAT_VERSION:
        raise EmbeddingFormatError(f"{path}: unsupported format version {version}")
    expected = _HEADER.size + 4 * (m + n) * d + 8 * (m + n)
    if len(raw) != expected:
        raise EmbeddingFormatError(f"{path}: size {len(raw)} bytes, expected {expected}")
    off = _HEADER.size
    users = np.frombuffer(raw, dtype="<f4", count=m * d, offset=off).reshape(m, d)
    off += 4 * m * d
    apps = np.frombuffer(raw, dtype="<f4", count=n * d, offset=off).reshape(n, d)
    off += 4 * n * d
    user_ids = np.frombuffer(raw, dtype="<i8", count=m, offset=off)
    off += 8 * m
    app_ids = np.frombuffer(raw, dtype="<i8", count=n, offset=off)
    return EmbeddingTables(
        users.astype(np.float32), apps.astype(np.float32),
        user_ids.astype(np.int64), app_ids.astype(np.int64),
    )


def export_text(path: PathLike, tables: EmbeddingTables) -> None:
    """``id<TAB>v1,...,vd`` rows; a ``# users`` section followed by ``# apps``."""
    with open(path, "w", encoding="utf-8") as fh:
        for header, ids, rows in (
            ("# users", tables.user_ids, tables.user_emb),
            ("# apps", tables.app_ids, tables.app_emb),
        ):
            fh.write(header + "\n")
            for i, row in zip(ids.tolist(), rows.astype(np.float32)):
                fh.write(f"{i}\t" + ",".join(f"{v:.9g}" for v in row.tolist()) + "\n")


def import_text(path: PathLike) -> EmbeddingTables:
    sections: dict[str, tuple[list, list]] = {"users": ([], []), "apps": ([], [])}
    current = None
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            if line.startswith("#"):
                current = line[1:].strip()
                if current not in sections:
                    raise EmbeddingFormatError(f"{path}:{lineno}: unknown section {current!r}")
                continue
            if current is None:
                raise EmbeddingFormatError(f"{path}:{lineno}: row before any section header")
            key, _, vec = line.partition("\t")
            ids, rows = sections[current]
            ids.append(int(key))
            rows.append([float(v) for v in vec.split(",")])
    (uid, urows), (aid, arows) = sections["users"], sections["apps"]
    return EmbeddingTables(
        np.array(urows, dtype=np.float32), np.array(arows, dtype=np.float32),
        np.array(uid, dtype=np.int64), np.array(aid, dtype=np.int64),
    )
