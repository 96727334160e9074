"""User-APP installation graph: loading, per-APP decomposition and time split.

Raw ids from the edge list are densified to contiguous integers. Users map to
``[0, M)`` and APPs to ``[0, N)``, in ascending order of the original id. The
original ids travel with the graph (``user_ids`` / ``app_ids``) so that
embeddings can be exported under the ids the data came with.
"""

from __future__ import annotations

import io
import logging
import os
from dataclasses import dataclass
from typing import BinaryIO, Iterable, Iterator, NamedTuple, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

Source = Union[str, os.PathLike, BinaryIO, bytes]


class EdgeParseError(ValueError):
    """A row of an edge-list file could not be parsed."""

    def __init__(self, lineno: int, line: str, reason: str):
        super().__init__(f"line {lineno}: {reason}: {line!r}")
        self.lineno = lineno


class EdgeRecord(NamedTuple):
    user_id: int
    app_id: int
    day: int = 0


@dataclass(frozen=True)
class Edges:
    """Column-oriented batch of raw edge records (duplicates allowed)."""

    users: np.ndarray
    apps: np.ndarray
    days: np.ndarray

    def __post_init__(self):
        if not (len(self.users) == len(self.apps) == len(self.days)):
            raise ValueError("edge columns must have equal length")
        if len(self.days) and self.days.min() < 0:
            raise ValueError("day stamps must be non-negative")

    @classmethod
    def from_records(cls, records: Iterable[Sequence[int]]) -> "Edges":
        rows = [tuple(r) for r in records]
        users = np.array([r[0] for r in rows], dtype=np.int64)
        apps = np.array([r[1] for r in rows], dtype=np.int64)
        days = np.array([r[2] if len(r) > 2 else 0 for r in rows], dtype=np.int64)
        return cls(users, apps, days)

    def __len__(self) -> int:
        return len(self.users)

    def __iter__(self) -> Iterator[EdgeRecord]:
        for u, a, d in zip(self.users.tolist(), self.apps.tolist(), self.days.tolist()):
            yield EdgeRecord(u, a, d)

    def select(self, mask: np.ndarray) -> "Edges":
        return Edges(self.users[mask], self.apps[mask], self.days[mask])


def as_edges(records: Union[Edges, Iterable[Sequence[int]]]) -> Edges:
    if isinstance(records, Edges):
        return records
    return Edges.from_records(records)


def _open_text(source: Source):
    if isinstance(source, bytes):
        return io.TextIOWrapper(io.BytesIO(source), encoding="utf-8"), True
    if isinstance(source, (str, os.PathLike)):
        return open(source, "r", encoding="utf-8"), True
    if isinstance(source, io.TextIOBase):
        return source, False
    return io.TextIOWrapper(source, encoding="utf-8"), False


def read_edges(source: Source) -> Edges:
    """Parse ``user_id<TAB>app_id[<TAB>day]`` rows. ``#`` lines and blanks are skipped."""
    fh, owned = _open_text(source)
    users, apps, days = [], [], []
    try:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped or stripped.startswith("#"):
                continue
            fields = stripped.split("\t")
            if len(fields) not in (2, 3):
                raise EdgeParseError(lineno, stripped, f"expected 2 or 3 tab-separated fields, got {len(fields)}")
            try:
                values = [int(f) for f in fields]
            except ValueError:
                raise EdgeParseError(lineno, stripped, "non-integer field") from None
            if len(values) == 3 and values[2] < 0:
                raise EdgeParseError(lineno, stripped, "negative day")
            users.append(values[0])
            apps.append(values[1])
            days.append(values[2] if len(values) == 3 else 0)
    finally:
        if owned:
            fh.close()
    if not users:
        raise ValueError("edge list is empty")
    return Edges(
        np.array(users, dtype=np.int64),
        np.array(apps, dtype=np.int64),
        np.array(days, dtype=np.int64),
    )


def write_edges(path: Union[str, os.PathLike], edges: Edges) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for u, a, d in edges:
            fh.write(f"{u}\t{a}\t{d}\n")


def dedup_earliest(edges: Edges) -> Edges:
    """Collapse repeated (user, app) pairs, keeping the earliest day."""
    if len(edges) == 0:
        return edges
    order = np.lexsort((edges.days, edges.apps, edges.users))
    u, a, d = edges.users[order], edges.apps[order], edges.days[order]
    first = np.ones(len(u), dtype=bool)
    first[1:] = (u[1:] != u[:-1]) | (a[1:] != a[:-1])
    return Edges(u[first], a[first], d[first])


@dataclass(frozen=True)
class SubgraphView:
    """One APP together with the sorted ids of the users that installed it."""

    app_id: int
    users: np.ndarray

    @property
    def size(self) -> int:
        return len(self.users)


class BipartiteGraph:
    """Immutable user-APP edge store, indexed in both directions (CSR).

    ``app_users[app_indptr[a]:app_indptr[a + 1]]`` are the sorted dense ids of
    the users who installed APP ``a``; ``user_apps`` is the transpose.
    """

    def __init__(
        self,
        user_ids: np.ndarray,
        app_ids: np.ndarray,
        app_indptr: np.ndarray,
        app_users: np.ndarray,
        app_days: np.ndarray,
        user_indptr: np.ndarray,
        user_apps: np.ndarray,
    ):
        self.user_ids = user_ids
        self.app_ids = app_ids
        self.app_indptr = app_indptr
        self.app_users = app_users
        self.app_days = app_days
        self.user_indptr = user_indptr
        self.user_apps = user_apps
        for arr in vars(self).values():
            arr.setflags(write=False)
        self._user_index = {int(x): i for i, x in enumerate(user_ids.tolist())}
        self._app_index = {int(x): i for i, x in enumerate(app_ids.tolist())}

    @classmethod
    def from_edges(cls, edges: Union[Edges, Iterable[Sequence[int]]]) -> "BipartiteGraph":
        edges = dedup_earliest(as_edges(edges))
        if len(edges) == 0:
            raise ValueError("cannot build a graph from zero edges")
        # APPs without installers never reach this point: ids come from the edges.
        user_ids, u = np.unique(edges.users, return_inverse=True)
        app_ids, a = np.unique(edges.apps, return_inverse=True)
        m, n = len(user_ids), len(app_ids)

        order = np.lexsort((u, a))
        app_users = u[order].astype(np.int64)
        app_days = edges.days[order]
        app_indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(a, minlength=n), out=app_indptr[1:])

        order = np.lexsort((a, u))
        user_apps = a[order].astype(np.int64)
        user_indptr = np.zeros(m + 1, dtype=np.int64)
        np.cumsum(np.bincount(u, minlength=m), out=user_indptr[1:])

        return cls(user_ids, app_ids, app_indptr, app_users, app_days, user_indptr, user_apps)

    @property
    def num_users(self) -> int:
        return len(self.user_ids)

    @property
    def num_apps(self) -> int:
        return len(self.app_ids)

    @property
    def num_edges(self) -> int:
        return len(self.app_users)

    @property
    def app_sizes(self) -> np.ndarray:
        return np.diff(self.app_indptr)

    @property
    def user_degrees(self) -> np.ndarray:
        return np.diff(self.user_indptr)

    def users_of(self, app: int) -> np.ndarray:
        return self.app_users[self.app_indptr[app]:self.app_indptr[app + 1]]

    def apps_of(self, user: int) -> np.ndarray:
        return self.user_apps[self.user_indptr[user]:self.user_indptr[user + 1]]

    def dense_user(self, original_id: int) -> int | None:
        return self._user_index.get(int(original_id))

    def dense_app(self, original_id: int) -> int | None:
        return self._app_index.get(int(original_id))

    def to_edges(self) -> Edges:
        """Edge set in original ids, APP-major order."""
        apps = np.repeat(np.arange(self.num_apps), self.app_sizes)
        return Edges(self.user_ids[self.app_users], self.app_ids[apps], self.app_days.copy())

    def _check_user(self, user: int) -> None:
        if not 0 <= user < self.num_users:
            raise IndexError(f"user id {user} out of range [0, {self.num_users})")

    def _check_app(self, app: int) -> None:
        if not 0 <= app < self.num_apps:
            raise IndexError(f"app id {app} out of range [0, {self.num_apps})")

    def __repr__(self) -> str:
        return f"BipartiteGraph(M={self.num_users}, N={self.num_apps}, L={self.num_edges})"


def load_edges(source: Source) -> BipartiteGraph:
    return BipartiteGraph.from_edges(read_edges(source))


def decompose(graph: BipartiteGraph) -> list[SubgraphView]:
    return [SubgraphView(a, graph.users_of(a)) for a in range(graph.num_apps)]


def installed(graph: BipartiteGraph, user_id: int, app_id: int) -> bool:
    graph._check_user(user_id)
    graph._check_app(app_id)
    users = graph.users_of(app_id)
    i = np.searchsorted(users, user_id)
    return bool(i < len(users) and users[i] == user_id)


def installed_many(graph: BipartiteGraph, user_ids: np.ndarray, app_id: int) -> np.ndarray:
    """Vectorised ``installed`` for many users against one APP (no range checks)."""
    users = graph.users_of(app_id)
    if len(users) == 0:
        return np.zeros(len(user_ids), dtype=bool)
    i = np.searchsorted(users, user_ids)
    np.minimum(i, len(users) - 1, out=i)
    return users[i] == user_ids


def popularity_fraction(graph: BipartiteGraph, app_id: int) -> float:
    graph._check_app(app_id)
    return graph.app_sizes[app_id] / graph.num_users


def time_split(
    records: Union[Edges, Iterable[Sequence[int]]], holdout_days: int = 5
) -> tuple[BipartiteGraph, Edges]:
    """Train on days ``<= max_day - holdout_days``; test on newly seen pairs after that.

    Test edges keep their original ids. Users or APPs that only appear in the
    test window have no dense id in the train graph.
    """
    if holdout_days < 1:
        raise ValueError("holdout_days must be >= 1")
    edges = as_edges(records)
    if len(edges) == 0:
        raise ValueError("no records to split")
    boundary = int(edges.days.max()) - holdout_days
    in_train = edges.days <= boundary
    if not in_train.any():
        raise ValueError(
            f"all records fall in the {holdout_days}-day holdout window "
            f"(max day {int(edges.days.max())}); are day stamps present?"
        )
    train_graph = BipartiteGraph.from_edges(edges.select(in_train))

    test = dedup_earliest(edges.select(~in_train))
    seen = _pair_keys(train_graph.to_edges())
    fresh = ~np.isin(_pair_keys(test), seen)
    test = test.select(fresh)

    cold_apps = np.setdiff1d(test.apps, train_graph.app_ids).size
    cold_users = np.setdiff1d(test.users, train_graph.user_ids).size
    if cold_apps or cold_users:
        logger.info("time split: %d users and %d APPs appear only in the test window", cold_users, cold_apps)
    return train_graph, test


def _pair_keys(edges: Edges) -> np.ndarray:
    # Structured view so np.isin compares (user, app) pairs.
    pairs = np.stack([edges.users, edges.apps], axis=1)
    return np.ascontiguousarray(pairs).view([("u", np.int64), ("a", np.int64)]).ravel()


def write_id_map(path: Union[str, os.PathLike], original_ids: np.ndarray) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for dense, orig in enumerate(original_ids.tolist()):
            fh.write(f"{orig}\t{dense}\n")


def read_id_map(path: Union[str, os.PathLike]) -> np.ndarray:
    pairs = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 2:
                raise EdgeParseError(lineno, line, "expected original_id<TAB>dense_id")
            pairs.append((int(fields[1]), int(fields[0])))
    pairs.sort()
    if [d for d, _ in pairs] != list(range(len(pairs))):
        raise ValueError(f"{path}: dense ids are not contiguous from 0")
    return np.array([o for _, o in pairs], dtype=np.int64)
