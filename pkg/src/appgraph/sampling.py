"""Temperature-weighted subgraph sampling plus positive/negative user sampling.

Subgraph ``i`` is drawn with probability ``|P_i| ** tau / sum_j |P_j| ** tau``.
``tau = 1`` reproduces edge-proportional sampling and ``tau = 0`` gives every
APP the same chance.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import BipartiteGraph, SubgraphView, installed_many

# Above this installer fraction, rejection sampling wastes too many draws.
COMPLEMENT_FALLBACK_FRACTION = 0.5
MAX_REJECTION_ROUNDS = 32


@dataclass(frozen=True)
class SamplerConfig:
    tau: float = 0.5
    seed: int = 0

    def __post_init__(self):
        if not self.tau >= 0:
            raise ValueError(f"tau must be non-negative, got {self.tau}")


class AliasTable:
    """Vose's alias method: O(n) construction, O(1) per draw."""

    def __init__(self, probabilities: np.ndarray):
        p = np.asarray(probabilities, dtype=np.float64)
        n = len(p)
        if n == 0:
            raise ValueError("alias table needs at least one outcome")
        scaled = p * (n / p.sum())
        prob = np.ones(n, dtype=np.float64)
        alias = np.arange(n, dtype=np.int64)
        small = [i for i in range(n) if scaled[i] < 1.0]
        large = [i for i in range(n) if scaled[i] >= 1.0]
        while small and large:
            s = small.pop()
            g = large.pop()
            prob[s] = scaled[s]
            alias[s] = g
            scaled[g] = (scaled[g] + scaled[s]) - 1.0
            (small if scaled[g] < 1.0 else large).append(g)
        # Leftovers are 1 up to rounding; they keep prob 1 and alias to themselves.
        self.prob = prob
        self.alias = alias

    def __len__(self) -> int:
        return len(self.prob)

    def draw(self, rng: np.random.Generator) -> int:
        i = int(rng.integers(len(self.prob)))
        return i if rng.random() < self.prob[i] else int(self.alias[i])

    def draw_many(self, rng: np.random.Generator, size: int) -> np.ndarray:
        i = rng.integers(len(self.prob), size=size)
        keep = rng.random(size) < self.prob[i]
        return np.where(keep, i, self.alias[i])

    def implied_probabilities(self) -> np.ndarray:
        """Outcome distribution encoded by the table (for checking construction)."""
        n = len(self.prob)
        out = self.prob.copy()
        np.add.at(out, self.alias, 1.0 - self.prob)
        return out / n


def subgraph_probabilities(sizes: np.ndarray, tau: float) -> np.ndarray:
    sizes = np.asarray(sizes, dtype=np.float64)
    if tau == 0:
        weights = np.ones_like(sizes)
    elif tau == 1:
        weights = sizes
    else:
        weights = sizes**tau
    return weights / weights.sum()


class SubgraphSampler:
    def __init__(self, sizes: np.ndarray, tau: float):
        self.tau = tau
        self.probabilities = subgraph_probabilities(sizes, tau)
        self.alias_table = AliasTable(self.probabilities)

    def __len__(self) -> int:
        return len(self.probabilities)

    def sample(self, rng: np.random.Generator, size: int | None = None):
        if size is None:
            return self.alias_table.draw(rng)
        return self.alias_table.draw_many(rng, size)


def build_sampler(sizes, config: SamplerConfig) -> SubgraphSampler:
    sizes = np.asarray(sizes)
    if sizes.ndim != 1 or len(sizes) == 0:
        raise ValueError("need at least one subgraph")
    if (sizes < 1).any():
        bad = np.flatnonzero(sizes < 1)[:5].tolist()
        raise ValueError(f"subgraphs must be non-empty; empty APP ids: {bad}")
    return SubgraphSampler(sizes, config.tau)


def sample_subgraph(sampler: SubgraphSampler, rng: np.random.Generator) -> int:
    return sampler.sample(rng)


def sample_positives(view: SubgraphView, n_pos: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw from the APP's installers; with replacement only when there are too few."""
    if n_pos < 1:
        raise ValueError("n_pos must be >= 1")
    return rng.choice(view.users, size=n_pos, replace=n_pos > view.size)


class NegativeSampler:
    """Uniform sampling over the users that did *not* install a given APP.

    Sparse APPs use rejection sampling against the installer list. APPs
    installed by more than half the users use a cached explicit complement.
    """

    def __init__(self, graph: BipartiteGraph):
        self.graph = graph
        self._complements: dict[int, np.ndarray] = {}

    def complement(self, app_id: int) -> np.ndarray:
        comp = self._complements.get(app_id)
        if comp is None:
            mask = np.ones(self.graph.num_users, dtype=bool)
            mask[self.graph.users_of(app_id)] = False
            comp = np.flatnonzero(mask)
            self._complements[app_id] = comp
        return comp

    def sample(self, app_id: int, n_neg: int, rng: np.random.Generator) -> np.ndarray:
        graph = self.graph
        m = graph.num_users
        size = int(graph.app_indptr[app_id + 1] - graph.app_indptr[app_id])
        if size >= m:
            raise ValueError(f"APP {app_id} is installed by every user; no negatives exist")
        if size / m > COMPLEMENT_FALLBACK_FRACTION:
            comp = self.complement(app_id)
            return comp[rng.integers(len(comp), size=n_neg)]

        out = np.empty(0, dtype=np.int64)
        for _ in range(MAX_REJECTION_ROUNDS):
            need = n_neg - len(out)
            cand = rng.integers(m, size=2 * need + 8)
            cand = cand[~installed_many(graph, cand, app_id)]
            out = np.concatenate([out, cand[:need]])
            if len(out) == n_neg:
                return out
        comp = self.complement(app_id)
        return np.concatenate([out, comp[rng.integers(len(comp), size=n_neg - len(out))]])


def sample_negatives(
    graph: BipartiteGraph,
    app_id: int,
    n_neg: int,
    rng: np.random.Generator,
    sampler: NegativeSampler | None = None,
) -> np.ndarray:
    graph._check_app(app_id)
    if n_neg < 1:
        raise ValueError("n_neg must be >= 1")
    if sampler is None:
        sampler = NegativeSampler(graph)
    return sampler.sample(app_id, n_neg, rng)
