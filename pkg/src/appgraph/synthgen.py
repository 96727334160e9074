"""Synthetic installation data with planted interest clusters and Zipf popularity."""

from __future__ import annotations

import os
from dataclasses import dataclass
from typing import Union

import numpy as np

from .graph import Edges


@dataclass(frozen=True)
class SynthConfig:
    num_users: int = 2000
    num_apps: int = 50
    num_clusters: int = 10
    installs_per_user: float = 30.0
    popularity_exponent: float = 1.0
    in_cluster_prob: float = 0.8
    num_days: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.num_users < 1 or self.num_apps < 1 or self.num_clusters < 1:
            raise ValueError("num_users, num_apps and num_clusters must be >= 1")
        if self.num_clusters > self.num_apps:
            raise ValueError("num_clusters cannot exceed num_apps")
        if not 0 < self.in_cluster_prob <= 1:
            raise ValueError("in_cluster_prob must be in (0, 1]")
        if not self.installs_per_user > 0:
            raise ValueError("installs_per_user must be positive")
        if self.popularity_exponent < 0:
            raise ValueError("popularity_exponent must be non-negative")
        if self.num_days < 1:
            raise ValueError("num_days must be >= 1")


@dataclass(frozen=True)
class GroundTruth:
    user_cluster: np.ndarray
    app_cluster: np.ndarray
    app_rank: np.ndarray  # 1 = most popular


def generate(config: SynthConfig) -> tuple[Edges, GroundTruth]:
    """Each user installs ~Poisson(installs_per_user) distinct APPs.

    A Binomial(n, in_cluster_prob) share comes from the user's own cluster
    (popularity-weighted, capped by the cluster size); the rest is drawn by
    global popularity among APPs not yet installed. APP ranks are a random
    permutation; weights are ``rank ** -popularity_exponent``. Clusters are
    dealt round-robin over ranks so every cluster holds popular and niche APPs.
    """
    cfg = config
    if cfg.installs_per_user > cfg.num_apps:
        raise ValueError(
            f"infeasible: {cfg.installs_per_user} installs per user but only {cfg.num_apps} APPs"
        )
    rng = np.random.default_rng(cfg.seed)
    n_apps = cfg.num_apps
    rank = rng.permutation(n_apps) + 1
    weight = rank.astype(np.float64) ** -cfg.popularity_exponent
    app_cluster = (rank - 1) % cfg.num_clusters
    user_cluster = rng.integers(cfg.num_clusters, size=cfg.num_users)
    members = [np.flatnonzero(app_cluster == c) for c in range(cfg.num_clusters)]

    counts = np.clip(rng.poisson(cfg.installs_per_user, size=cfg.num_users), 1, n_apps)
    users, apps = [], []
    for u in range(cfg.num_users):
        n = int(counts[u])
        own = members[user_cluster[u]]
        k_in = min(int(rng.binomial(n, cfg.in_cluster_prob)), len(own))
        w = weight[own]
        chosen = rng.choice(own, size=k_in, replace=False, p=w / w.sum()) if k_in else own[:0]
        rest = n - k_in
        if rest:
            pool = np.setdiff1d(np.arange(n_apps), chosen, assume_unique=True)
            w = weight[pool]
            chosen = np.concatenate([chosen, rng.choice(pool, size=rest, replace=False, p=w / w.sum())])
        users.append(np.full(n, u, dtype=np.int64))
        apps.append(chosen.astype(np.int64))
    users = np.concatenate(users)
    apps = np.concatenate(apps)
    days = rng.integers(cfg.num_days, size=len(users))
    return Edges(users, apps, days), GroundTruth(user_cluster, app_cluster, rank)


def write_ground_truth(path: Union[str, os.PathLike], truth: GroundTruth) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i, c in enumerate(truth.user_cluster.tolist()):
            fh.write(f"user\t{i}\t{c}\n")
        for i, c in enumerate(truth.app_cluster.tolist()):
            fh.write(f"app\t{i}\t{c}\n")


def read_ground_truth(path: Union[str, os.PathLike]) -> tuple[dict[int, int], dict[int, int]]:
    users: dict[int, int] = {}
    apps: dict[int, int] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            kind, i, c = line.rstrip("\n").split("\t")
            (users if kind == "user" else apps)[int(i)] = int(c)
    return users, apps
