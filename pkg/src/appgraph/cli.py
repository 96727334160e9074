"""Command-line driver: generate, train, eval-memory, eval-inference, export.

Exit codes: 0 success, 1 usage error, 2 data error (missing file, malformed
input or config, embeddings that do not match the graph).
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from typing import Optional, Sequence

import numpy as np

from . import evaluation, graph, model, synthgen
from .config import ConfigError, field_types, load_config, parse_bool
from .synthgen import SynthConfig
from .trainer import TrainConfig, Trainer

logger = logging.getLogger("appgraph")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}\n\n{self.format_usage()}")


def _add_config_flags(parser: argparse.ArgumentParser, cls) -> None:
    group = parser.add_argument_group(f"{cls.__name__} overrides")
    for name, typ in field_types(cls).items():
        flags = [f"--{name}"]
        if "_" in name:
            flags.append(f"--{name.replace('_', '-')}")
        group.add_argument(*flags, dest=name, default=None, metavar=typ.__name__.upper(),
                           type=parse_bool if typ is bool else typ)


def _overrides(args: argparse.Namespace, cls) -> dict:
    return {name: getattr(args, name) for name in field_types(cls) if getattr(args, name) is not None}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="appgraph", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic edge list and ground-truth sidecar")
    p.add_argument("--config", help="SynthConfig key = value file")
    p.add_argument("--out", required=True, help="edge-list TSV to write")
    p.add_argument("--truth", help="ground-truth sidecar (default: OUT.truth)")
    _add_config_flags(p, SynthConfig)

    p = sub.add_parser("train", help="learn user and APP embeddings")
    p.add_argument("--edges", required=True)
    p.add_argument("--config", help="TrainConfig key = value file")
    p.add_argument("--out", required=True, help="binary embedding file to write")
    p.add_argument("--holdout-days", "--holdout_days", dest="holdout_days", type=int, default=5,
                   help="train only on days before the last N (0 = use every edge)")
    _add_config_flags(p, TrainConfig)

    p = sub.add_parser("eval-memory", help="precision/AUC on training installations")
    p.add_argument("--edges", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--k", type=int, default=96)
    p.add_argument("--theta", type=float, default=0.0)
    p.add_argument("--holdout-days", "--holdout_days", dest="holdout_days", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="write the metric report here instead of stdout")
    p.add_argument("--json", help="also write a JSON dump of the report")

    p = sub.add_parser("eval-inference", help="AUC on held-out (last days) installations")
    p.add_argument("--edges", required=True)
    p.add_argument("--emb", required=True)
    p.add_argument("--holdout-days", "--holdout_days", dest="holdout_days", type=int, default=5)
    p.add_argument("--k-user", "--k_user", dest="k_user", type=int, default=8)
    p.add_argument("--k96", type=int, default=96)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--json")

    p = sub.add_parser("export", help="binary embeddings to id<TAB>v1,...,vd text")
    p.add_argument("--emb", required=True)
    p.add_argument("--out", required=True)
    return parser


def _read_edges(path: str) -> graph.Edges:
    try:
        return graph.read_edges(path)
    except FileNotFoundError:
        raise DataError(f"edge file not found: {path}") from None
    except (graph.EdgeParseError, ValueError) as exc:
        raise DataError(f"{path}: {exc}") from None


def _load_emb(path: str) -> model.EmbeddingTables:
    try:
        return model.load_embeddings(path)
    except FileNotFoundError:
        raise DataError(f"embedding file not found: {path}") from None
    except model.EmbeddingFormatError as exc:
        raise DataError(str(exc)) from None


def training_graph(edges: graph.Edges, holdout_days: int) -> graph.BipartiteGraph:
    """The graph training sees: everything, or only days before the holdout window."""
    if holdout_days < 0:
        raise UsageError("--holdout-days must be >= 0")
    if holdout_days == 0:
        return graph.BipartiteGraph.from_edges(edges)
    try:
        train, _ = graph.time_split(edges, holdout_days)
    except ValueError as exc:
        logger.warning("time split unavailable (%s); using every edge", exc)
        return graph.BipartiteGraph.from_edges(edges)
    return train


def _emit(text: str, out: Optional[str]) -> None:
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _check_alignment(g: graph.BipartiteGraph, tables: model.EmbeddingTables) -> None:
    try:
        evaluation.check_alignment(g, tables)
    except ValueError as exc:
        raise DataError(f"{exc} (was the embedding trained on this edge file and holdout?)") from None


def cmd_generate(args) -> None:
    try:
        cfg = load_config(SynthConfig, args.config, _overrides(args, SynthConfig))
        edges, truth = synthgen.generate(cfg)
    except FileNotFoundError:
        raise DataError(f"config file not found: {args.config}") from None
    except (ConfigError, ValueError) as exc:
        raise DataError(str(exc)) from None
    graph.write_edges(args.out, edges)
    synthgen.write_ground_truth(args.truth or args.out + ".truth", truth)
    logger.info("wrote %d edges for %d users / %d APPs to %s", len(edges), cfg.num_users, cfg.num_apps, args.out)


def cmd_train(args) -> None:
    try:
        cfg = load_config(TrainConfig, args.config, _overrides(args, TrainConfig))
    except FileNotFoundError:
        raise DataError(f"config file not found: {args.config}") from None
    except ConfigError as exc:
        raise DataError(str(exc)) from None
    g = training_graph(_read_edges(args.edges), args.holdout_days)
    logger.info("training on %r with %s", g, dataclasses.asdict(cfg))
    trainer = Trainer(g, cfg)
    tables = trainer.run()
    model.save_embeddings(args.out, tables)
    graph.write_id_map(args.out + ".users.tsv", tables.user_ids)
    graph.write_id_map(args.out + ".apps.tsv", tables.app_ids)
    tail = trainer.stats[-min(len(trainer.stats), 1000):]
    _emit(evaluation.format_metrics({
        "steps": cfg.steps,
        "skipped_steps": trainer.skipped,
        "users": g.num_users,
        "apps": g.num_apps,
        "edges": g.num_edges,
        "pairwise_loss_tail": float(np.mean([s.pairwise_loss for s in tail])),
        "centroid_loss_tail": float(np.mean([s.centroid_loss for s in tail])),
    }), None)


def cmd_eval_memory(args) -> None:
    g = training_graph(_read_edges(args.edges), args.holdout_days)
    tables = _load_emb(args.emb)
    _check_alignment(g, tables)
    report = evaluation.memory_eval(g, tables, k=args.k, theta=args.theta, rng=np.random.default_rng(args.seed))
    _emit(evaluation.format_metrics(report.metrics()), args.out)
    if args.json:
        evaluation.write_json(args.json, report.metrics())


def cmd_eval_inference(args) -> None:
    if args.holdout_days < 1:
        raise UsageError("eval-inference needs --holdout-days >= 1")
    edges = _read_edges(args.edges)
    try:
        train, test = graph.time_split(edges, args.holdout_days)
    except ValueError as exc:
        raise DataError(f"cannot split {args.edges} by day: {exc}") from None
    if len(test) == 0:
        raise DataError("holdout window contains no new installations")
    tables = _load_emb(args.emb)
    _check_alignment(train, tables)
    report = evaluation.inference_eval(
        train, test, tables, k_user=args.k_user, k96=args.k96, rng=np.random.default_rng(args.seed)
    )
    _emit(evaluation.format_metrics(report.metrics()), args.out)
    if args.json:
        evaluation.write_json(args.json, report.metrics())


def cmd_export(args) -> None:
    model.export_text(args.out, _load_emb(args.emb))


COMMANDS = {
    "generate": cmd_generate,
    "train": cmd_train,
    "eval-memory": cmd_eval_memory,
    "eval-inference": cmd_eval_inference,
    "export": cmd_export,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError(parser.format_help())
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        COMMANDS[args.command](args)
    except UsageError as exc:
        sys.stderr.write(f"usage error: {exc}\n")
        return EXIT_USAGE
    except DataError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    except OSError as exc:
        sys.stderr.write(f"data error: {exc}\n")
        return EXIT_DATA
    return EXIT_OK


run = main

if __name__ == "__main__":
    sys.exit(main())
