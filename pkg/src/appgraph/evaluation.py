"""Memory and inference evaluation of trained embeddings.

Memory: per APP, score sampled installers and non-installers from the
training graph by cosine and pool all pairs into one precision and AUC.

Inference: score held-out installs against never-installed items, averaged
per user (user side) or per APP (APP side). Each side is also reported with
popular APPs filtered out: AUC+ drops APPs installed by more than 8% of users
and AUC* drops those above 2.5%.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Optional, Union

import numpy as np

from .graph import BipartiteGraph, Edges, as_edges
from .model import EmbeddingTables, cosine_rows

AUC_PLUS_MAX_FRACTION = 0.08
AUC_STAR_MAX_FRACTION = 0.025


def auc(pos_scores, neg_scores) -> float:
    """Mann-Whitney AUC: P(pos > neg) + 0.5 P(pos == neg), in O(n log n)."""
    pos = np.asarray(pos_scores, dtype=np.float64).ravel()
    neg = np.sort(np.asarray(neg_scores, dtype=np.float64).ravel())
    if pos.size == 0 or neg.size == 0:
        raise ValueError("AUC needs at least one positive and one negative score")
    below = np.searchsorted(neg, pos, side="left")
    tied = np.searchsorted(neg, pos, side="right") - below
    # Twice the U statistic is an exact integer.
    twice_u = 2 * int(below.sum()) + int(tied.sum())
    return twice_u / (2 * pos.size * neg.size)


class Precision(NamedTuple):
    value: float
    empty: bool  # nothing was predicted positive


def precision_at_threshold(pos_scores, neg_scores, theta: float) -> Precision:
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    tp = int((pos >= theta).sum())
    fp = int((neg >= theta).sum())
    if tp + fp == 0:
        return Precision(0.0, True)
    return Precision(tp / (tp + fp), False)


def best_f1_threshold(pos_scores, neg_scores) -> tuple[float, float]:
    """Threshold (among observed scores) maximising F1; returns (theta, f1)."""
    pos = np.asarray(pos_scores, dtype=np.float64)
    neg = np.asarray(neg_scores, dtype=np.float64)
    scores = np.concatenate([pos, neg])
    labels = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    order = np.argsort(-scores, kind="stable")
    scores, labels = scores[order], labels[order]
    tp = np.cumsum(labels)
    fp = np.cumsum(1 - labels)
    # only cut between distinct scores
    last = np.append(scores[1:] != scores[:-1], True)
    tp, fp, cut = tp[last], fp[last], scores[last]
    f1 = 2 * tp / (tp + fp + len(pos))
    best = int(np.argmax(f1))
    return float(cut[best]), float(f1[best])


@dataclass
class MemoryReport:
    precision: float
    auc: float
    threshold: float
    apps_evaluated: int
    apps_skipped: int = 0
    empty_prediction: bool = False
    best_f1_threshold: float = math.nan
    best_f1: float = math.nan
    best_f1_precision: float = math.nan
    macro_precision: float = math.nan
    macro_auc: float = math.nan
    pairs: int = 0

    def metrics(self) -> dict:
        return asdict(self)


def _sample_without(pool: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    if len(pool) <= k:
        return pool
    return rng.choice(pool, size=k, replace=False)


def _complement(n: int, taken: np.ndarray) -> np.ndarray:
    mask = np.ones(n, dtype=bool)
    mask[taken] = False
    return np.flatnonzero(mask)


def check_alignment(graph: BipartiteGraph, tables: EmbeddingTables) -> None:
    """Raise if the tables were not trained on this graph's id space."""
    if tables.num_users != graph.num_users or tables.num_apps != graph.num_apps:
        raise ValueError(
            f"embedding/graph id mismatch: embeddings have {tables.num_users} users and "
            f"{tables.num_apps} APPs, graph has {graph.num_users} users and {graph.num_apps} APPs"
        )
    if not (np.array_equal(tables.user_ids, graph.user_ids) and np.array_equal(tables.app_ids, graph.app_ids)):
        raise ValueError("embedding/graph id mismatch: original id mappings differ")


def memory_eval(
    graph: BipartiteGraph,
    tables: EmbeddingTables,
    k: int = 96,
    theta: float = 0.0,
    rng: Optional[np.random.Generator] = None,
) -> MemoryReport:
    check_alignment(graph, tables)
    rng = np.random.default_rng(rng)
    users = tables.user_emb.astype(np.float64)
    apps = tables.app_emb.astype(np.float64)
    all_pos, all_neg = [], []
    per_app_auc, per_app_prec = [], []
    skipped = 0
    for a in range(graph.num_apps):
        installers = graph.users_of(a)
        others = _complement(graph.num_users, installers)
        if len(others) == 0:
            skipped += 1
            continue
        pos = cosine_rows(apps[a], users[_sample_without(installers, k, rng)])
        neg = cosine_rows(apps[a], users[_sample_without(others, k, rng)])
        all_pos.append(pos)
        all_neg.append(neg)
        per_app_auc.append(auc(pos, neg))
        prec = precision_at_threshold(pos, neg, theta)
        if not prec.empty:
            per_app_prec.append(prec.value)
    if not all_pos:
        raise ValueError("no APP has both installers and non-installers")
    pos = np.concatenate(all_pos)
    neg = np.concatenate(all_neg)
    prec = precision_at_threshold(pos, neg, theta)
    f1_theta, f1 = best_f1_threshold(pos, neg)
    return MemoryReport(
        precision=prec.value,
        auc=auc(pos, neg),
        threshold=theta,
        apps_evaluated=len(all_pos),
        apps_skipped=skipped,
        empty_prediction=prec.empty,
        best_f1_threshold=f1_theta,
        best_f1=f1,
        best_f1_precision=precision_at_threshold(pos, neg, f1_theta).value,
        macro_precision=float(np.mean(per_app_prec)) if per_app_prec else math.nan,
        macro_auc=float(np.mean(per_app_auc)),
        pairs=len(pos) + len(neg),
    )


FILTERS = {"auc": math.inf, "auc_plus": AUC_PLUS_MAX_FRACTION, "auc_star": AUC_STAR_MAX_FRACTION}


@dataclass
class SideReport:
    auc: float = math.nan
    auc_plus: float = math.nan
    auc_star: float = math.nan
    counts: dict = field(default_factory=dict)  # filter name -> units averaged
    per_unit: dict = field(default_factory=dict)  # filter name -> {unit id: auc}


@dataclass
class InferenceReport:
    app_side: SideReport
    user_side: SideReport
    app_sets: dict  # filter name -> dense APP ids kept by the filter
    skipped_cold_users: int = 0
    skipped_cold_apps: int = 0
    skipped_test_edges: int = 0
    test_edges: int = 0

    def metrics(self) -> dict:
        out = {}
        for side in ("app_side", "user_side"):
            rep: SideReport = getattr(self, side)
            for name in FILTERS:
                out[f"{side}.{name}"] = getattr(rep, name)
                out[f"{side}.{name}.count"] = rep.counts.get(name, 0)
        for name, s in self.app_sets.items():
            out[f"apps_kept.{name}"] = len(s)
        out["skipped_cold_users"] = self.skipped_cold_users
        out["skipped_cold_apps"] = self.skipped_cold_apps
        out["skipped_test_edges"] = self.skipped_test_edges
        out["test_edges"] = self.test_edges
        return out


def filtered_app_sets(graph: BipartiteGraph) -> dict[str, np.ndarray]:
    """Dense APP ids kept by each popularity filter (strictly above the cap is dropped)."""
    frac = graph.app_sizes / graph.num_users
    return {name: np.flatnonzero(frac <= cap) for name, cap in FILTERS.items()}


def _mean_or_nan(values) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def inference_eval(
    train_graph: BipartiteGraph,
    test_edges: Union[Edges, list],
    tables: EmbeddingTables,
    k_user: int = 8,
    k96: int = 96,
    rng: Optional[np.random.Generator] = None,
) -> InferenceReport:
    """Held-out prediction quality; ``test_edges`` carry original ids."""
    check_alignment(train_graph, tables)
    test = as_edges(test_edges)
    if len(test) == 0:
        raise ValueError("test set is empty")
    rng = np.random.default_rng(rng)
    m, n = train_graph.num_users, train_graph.num_apps

    # Map test edges into the train id space; drop cold entities.
    uidx = np.searchsorted(train_graph.user_ids, test.users)
    aidx = np.searchsorted(train_graph.app_ids, test.apps)
    u_ok = (uidx < m) & (train_graph.user_ids[np.minimum(uidx, m - 1)] == test.users)
    a_ok = (aidx < n) & (train_graph.app_ids[np.minimum(aidx, n - 1)] == test.apps)
    keep = u_ok & a_ok
    t_users, t_apps = uidx[keep], aidx[keep]
    cold_users = np.unique(test.users[~u_ok]).size
    cold_apps = np.unique(test.apps[~a_ok]).size

    users = tables.user_emb.astype(np.float64)
    apps = tables.app_emb.astype(np.float64)
    sets = filtered_app_sets(train_graph)
    allowed = {}
    for name, ids in sets.items():
        mask = np.zeros(n, dtype=bool)
        mask[ids] = True
        allowed[name] = mask

    # Installed = train or test; negatives must avoid both.
    inst = np.zeros((m, n), dtype=bool) if m * n <= 50_000_000 else None
    if inst is not None:
        inst[np.repeat(np.arange(m), train_graph.user_degrees), train_graph.user_apps] = True
        inst[t_users, t_apps] = True

    def installed_apps(u: int, held: np.ndarray) -> np.ndarray:
        if inst is not None:
            return np.flatnonzero(inst[u])
        return np.union1d(train_graph.apps_of(u), held)

    def installed_users(a: int, held: np.ndarray) -> np.ndarray:
        if inst is not None:
            return np.flatnonzero(inst[:, a])
        return np.union1d(train_graph.users_of(a), held)

    user_side = SideReport()
    order = np.argsort(t_users, kind="stable")
    bounds = np.flatnonzero(np.diff(t_users[order])) + 1
    for name in FILTERS:
        user_side.per_unit[name] = {}
    for group in np.split(order, bounds) if len(order) else []:
        u = int(t_users[group[0]])
        held = np.unique(t_apps[group])
        never = _complement(n, installed_apps(u, held))
        last_sizes, score = None, None
        for name in FILTERS:
            ok = allowed[name]
            pos_pool, neg_pool = held[ok[held]], never[ok[never]]
            if len(pos_pool) == 0 or len(neg_pool) == 0:
                continue
            # Filters are nested: equal pool sizes mean equal pools, so reuse the draw.
            if (len(pos_pool), len(neg_pool)) != last_sizes:
                pos_apps = _sample_without(pos_pool, k_user, rng)
                neg_apps = _sample_without(neg_pool, k_user, rng)
                score = auc(cosine_rows(users[u], apps[pos_apps]), cosine_rows(users[u], apps[neg_apps]))
                last_sizes = (len(pos_pool), len(neg_pool))
            user_side.per_unit[name][u] = score

    app_side = SideReport()
    for name in FILTERS:
        app_side.per_unit[name] = {}
    order = np.argsort(t_apps, kind="stable")
    bounds = np.flatnonzero(np.diff(t_apps[order])) + 1
    for group in np.split(order, bounds) if len(order) else []:
        a = int(t_apps[group[0]])
        held = np.unique(t_users[group])
        never = _complement(m, installed_users(a, held))
        if len(never) == 0:
            continue
        score = auc(
            cosine_rows(apps[a], users[_sample_without(held, k96, rng)]),
            cosine_rows(apps[a], users[_sample_without(never, k96, rng)]),
        )
        for name in FILTERS:
            if allowed[name][a]:
                app_side.per_unit[name][a] = score

    for side in (user_side, app_side):
        for name in FILTERS:
            vals = list(side.per_unit[name].values())
            setattr(side, name, _mean_or_nan(vals))
            side.counts[name] = len(vals)

    return InferenceReport(
        app_side=app_side,
        user_side=user_side,
        app_sets=sets,
        skipped_cold_users=int(cold_users),
        skipped_cold_apps=int(cold_apps),
        skipped_test_edges=int((~keep).sum()),
        test_edges=len(test),
    )


def format_metrics(metrics: dict) -> str:
    lines = []
    for key, value in metrics.items():
        if isinstance(value, float):
            value = f"{value:.6f}" if math.isfinite(value) else "nan"
        lines.append(f"{key}\t{value}")
    return "\n".join(lines) + "\n"


def write_json(path: Union[str, os.PathLike], metrics: dict) -> None:
    clean = {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in metrics.items()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(clean, fh, indent=2, sort_keys=True)
        fh.write("\n")
