"""Training loop: one sampled subgraph per step, plain SGD on sparse rows."""

from __future__ import annotations

import logging
import queue
import threading
import time
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .graph import BipartiteGraph, decompose
from .model import (
    EmbeddingTables,
    LossConfig,
    apply_update,
    batch_gradients,
    init_embeddings,
    make_batch,
)
from .sampling import NegativeSampler, SamplerConfig, build_sampler, sample_positives

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    tau: float = 0.5
    beta: float = 5.0
    d: int = 64
    lr: float = 0.05
    n_pos: int = 96
    n_neg: int = 96
    steps: int = 20000
    seed: int = 0
    use_centroid: bool = True
    use_stop_gradient: bool = True
    workers: int = 1
    log_every: int = 1000

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.n_pos < 1 or self.n_neg < 1:
            raise ValueError("n_pos and n_neg must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if self.log_every < 0:
            raise ValueError("log_every must be >= 0")
        SamplerConfig(self.tau, self.seed)
        LossConfig(self.beta)

    @property
    def loss_config(self) -> LossConfig:
        return LossConfig(self.beta, self.use_centroid, self.use_stop_gradient)


@dataclass(frozen=True)
class StepStats:
    step: int
    app_id: int
    pairwise_loss: float
    centroid_loss: float
    micros: int
    skipped: bool = False

    def key(self) -> tuple:
        """Everything except wall-clock time."""
        return (self.step, self.app_id, self.pairwise_loss, self.centroid_loss, self.skipped)


class Trainer:
    """Holds the sampler, negative cache and tables for one training run."""

    def __init__(self, graph: BipartiteGraph, config: TrainConfig, tables: Optional[EmbeddingTables] = None):
        self.graph = graph
        self.config = config
        self.loss_config = config.loss_config
        seeds = np.random.SeedSequence(config.seed).spawn(1 + config.workers)
        self._init_seed, self._worker_seeds = seeds[0], seeds[1:]
        self.tables = tables if tables is not None else init_embeddings(graph, config.d, np.random.default_rng(self._init_seed))
        self.views = decompose(graph)
        self.sampler = build_sampler(graph.app_sizes, SamplerConfig(config.tau, config.seed))
        self.negatives = NegativeSampler(graph)
        self.stats: list[StepStats] = []
        self.skipped = 0
        self._saturated: set[int] = set()

    def worker_rng(self, worker: int = 0) -> np.random.Generator:
        return np.random.default_rng(self._worker_seeds[worker])

    def train_step(self, rng: np.random.Generator, step: int = 0) -> StepStats:
        t0 = time.perf_counter_ns()
        cfg = self.config
        app = self.sampler.sample(rng)
        view = self.views[app]
        if view.size >= self.graph.num_users:
            if app not in self._saturated:
                self._saturated.add(app)
                logger.warning("APP %d is installed by every user; its steps are skipped", app)
            return StepStats(step, app, 0.0, 0.0, (time.perf_counter_ns() - t0) // 1000, skipped=True)
        pos = sample_positives(view, cfg.n_pos, rng)
        neg = self.negatives.sample(app, cfg.n_neg, rng)
        grads = batch_gradients(make_batch(self.tables, app, pos, neg), self.loss_config)
        if not (np.isfinite(grads.pairwise_loss) and np.isfinite(grads.centroid_loss)):
            raise FloatingPointError(
                f"step {step}: non-finite loss on APP {app} "
                f"(pair={grads.pairwise_loss}, centroid={grads.centroid_loss}, "
                f"|p|={np.linalg.norm(self.tables.app_emb[app]):.3g})"
            )
        apply_update(self.tables, grads, cfg.lr)
        return StepStats(
            step, app, grads.pairwise_loss, grads.centroid_loss, (time.perf_counter_ns() - t0) // 1000
        )

    def run(self, on_step: Optional[Callable[[StepStats], None]] = None) -> EmbeddingTables:
        if self.config.workers == 1:
            rng = self.worker_rng(0)
            for step in range(self.config.steps):
                self._record(self.train_step(rng, step), on_step)
        else:
            self._run_parallel(on_step)
        if self.skipped:
            logger.warning("%d of %d steps skipped (APP installed by every user)", self.skipped, self.config.steps)
        return self.tables

    def _record(self, st: StepStats, on_step) -> None:
        self.stats.append(st)
        self.skipped += st.skipped
        if on_step is not None:
            on_step(st)
        every = self.config.log_every
        if every and (st.step + 1) % every == 0:
            recent = self.stats[-every:]
            logger.info(
                "step %d  pair %.4f  centroid %.4f  %.1f us/step",
                st.step + 1,
                np.mean([s.pairwise_loss for s in recent]),
                np.mean([s.centroid_loss for s in recent]),
                np.mean([s.micros for s in recent]),
            )

    def _run_parallel(self, on_step) -> None:
        # Workers race on the shared tables; stats funnel through one queue.
        workers = self.config.workers
        steps = self.config.steps
        channel: queue.Queue = queue.Queue()
        errors: list[BaseException] = []

        def work(w: int) -> None:
            rng = self.worker_rng(w)
            try:
                for step in range(w, steps, workers):
                    channel.put(self.train_step(rng, step))
            except BaseException as exc:  # surfaced after join
                errors.append(exc)
            finally:
                channel.put(None)

        threads = [threading.Thread(target=work, args=(w,), daemon=True) for w in range(workers)]
        for t in threads:
            t.start()
        collected: list[StepStats] = []
        done = 0
        while done < workers:
            item = channel.get()
            if item is None:
                done += 1
            else:
                collected.append(item)
        for t in threads:
            t.join()
        if errors:
            raise errors[0]
        collected.sort(key=lambda s: s.step)
        for st in collected:
            self._record(st, on_step)


def train(
    graph: BipartiteGraph,
    config: TrainConfig,
    on_step: Optional[Callable[[StepStats], None]] = None,
) -> EmbeddingTables:
    return Trainer(graph, config).run(on_step)
