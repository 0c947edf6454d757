# Copyright 2025 The orthogonal-kge Authors.
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#   http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.
"""Command line: ``orthokge prepare | train | eval | analyze | param-count | sweep``.

Exit status is 0 on success, 2 for data, configuration or protocol errors and
1 for anything unexpected.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path
from typing import Sequence, cast

from rich.console import Console
from rich.table import Table

from orthokge.checkpoint import Checkpoint
from orthokge.evaluation import evaluate
from orthokge.exceptions import OrthoKGEError
from orthokge.kg_data import (
    CACHE_MANIFEST_FILE,
    KGDataset,
    SplitName,
    Vocabulary,
    build_filter_index,
    load_dataset,
    read_cache,
    write_cache,
)
from orthokge.logging_helper import get_logger, log_command, set_log_level
from orthokge.model import (
    Parameterization,
    parameter_counts,
    reference_rotation_parameters,
)
from orthokge.patterns import ARITY, DEFAULT_BINS, PatternKind, analyze, write_report
from orthokge.settings import RuntimeSettings, load_training_config
from orthokge.studies import SWEEP_FILE, run_sweep, sweep_configs
from orthokge.trainer import Trainer

logger = get_logger("CLI")
console = Console()
error_console = Console(stderr=True)


def load_data(data_dir: str | Path) -> KGDataset:
    """Load a prepared cache directory or a directory of triple files."""
    path = Path(data_dir)
    if (path / CACHE_MANIFEST_FILE).is_file():
        return read_cache(path)
    return load_dataset(path)


@log_command
def cmd_prepare(data_dir: str | Path, out_dir: str | Path) -> int:
    dataset = load_dataset(data_dir)
    stats = dataset.statistics()
    table = Table(title=f"Dataset {stats.name}")
    for column in ("Entities", "Relations", "Train", "Valid", "Test"):
        table.add_column(column, justify="right")
    table.add_row(
        *(
            str(v)
            for v in (
                stats.entities,
                stats.relations,
                stats.train,
                stats.valid,
                stats.test,
            )
        )
    )
    console.print(table)
    write_cache(dataset, out_dir)
    return 0


@log_command
def cmd_train(
    config_path: str | Path,
    data_dir: str | Path,
    out_dir: str | Path,
    settings: RuntimeSettings | None = None,
    seed: int | None = None,
) -> int:
    # Config errors surface here, before any data is read.
    config = load_training_config(config_path, overrides={"seed": seed})
    dataset = load_data(data_dir)
    summary = Trainer(config, dataset, out_dir, settings).fit()
    if summary.test_metrics is not None:
        console.print(summary.test_metrics.table(title="Test (best checkpoint)"))
        print(summary.test_metrics.machine_line())
    return 0


@log_command
def cmd_eval(
    checkpoint_dir: str | Path,
    data_dir: str | Path,
    split: SplitName = "test",
    both_sides: bool = False,
    settings: RuntimeSettings | None = None,
) -> int:
    settings = settings or RuntimeSettings()
    checkpoint = Checkpoint.load(checkpoint_dir)
    dataset = load_data(data_dir)
    checkpoint.check_vocabulary(dataset.vocab)
    metrics = evaluate(
        checkpoint.entities(),
        checkpoint.relations(),
        dataset.split(split),
        build_filter_index(dataset.train, dataset.valid, dataset.test),
        both_sides=both_sides,
        threads=settings.threads,
        chunk_size=settings.eval_chunk_size,
    )
    title = f"{split} ({'head and tail, non-standard' if both_sides else 'tail'})"
    console.print(metrics.table(title=title))
    print(metrics.machine_line())
    return 0


@log_command
def cmd_analyze(
    checkpoint_dir: str | Path,
    kind: PatternKind,
    relation_names: Sequence[str],
    out_dir: str | Path,
    num_bins: int = DEFAULT_BINS,
) -> int:
    checkpoint = Checkpoint.load(checkpoint_dir)
    vocab = checkpoint.vocabulary()
    relations = checkpoint.relations()
    ids = [vocab.relation_id(name) for name in relation_names]
    report = analyze(
        kind, [relations.relation(i) for i in ids], relation_names, num_bins
    )
    csv_path, json_path = write_report(report, out_dir)
    line = f"kind={report.kind} residual_norm={report.residual_norm:.6e}"
    if report.swapped_norm is not None:
        line += f" swapped_norm={report.swapped_norm:.6e}"
    print(line)
    console.print(f"Wrote {csv_path} and {json_path}")
    return 0


@log_command
def cmd_param_count(
    config_path: str | Path, data_dir: str | Path | None = None
) -> int:
    config = load_training_config(config_path)
    dataset = load_data(data_dir) if data_dir is not None else None
    per_entity = config.n * config.m
    _, per_relation = parameter_counts(
        config, dataset.vocab if dataset is not None else Vocabulary()
    )
    reference = reference_rotation_parameters(config)
    ratio = per_relation / reference if reference else float("nan")

    table = Table(title=f"Parameters (n={config.n}, m={config.m}, d={config.d})")
    table.add_column("Quantity")
    table.add_column("Count", justify="right")
    table.add_row("Entity matrix entries per entity", str(per_entity))
    table.add_row("Relation parameters per relation", str(per_relation))
    table.add_row("2x2-rotation reference per relation", str(reference))
    if dataset is not None:
        entity_total, _ = parameter_counts(config, dataset.vocab)
        table.add_row("Entity parameters in total (with biases)", str(entity_total))
    console.print(table)
    print(
        f"entity_per_entity={per_entity} relation_per_relation={per_relation} "
        f"reference_per_relation={reference} ratio={ratio:.6f}"
    )
    return 0


@log_command
def cmd_sweep(
    config_path: str | Path,
    data_dir: str | Path,
    out_dir: str | Path,
    block_sizes: Sequence[int] = (),
    entity_widths: Sequence[int] = (),
    optimizers: Sequence[Parameterization] = (),
    settings: RuntimeSettings | None = None,
) -> int:
    base = load_training_config(config_path)
    configs = sweep_configs(base, block_sizes, entity_widths, optimizers)
    dataset = load_data(data_dir)
    frame = run_sweep(configs, dataset, out_dir, settings)
    table = Table(title=f"Sweep over {len(configs)} runs")
    table.add_column("label")
    for column in ("relation_params", "best_valid_mrr", "test_mrr"):
        table.add_column(column, justify="right")
    for row in frame.iter_rows(named=True):
        table.add_row(
            row["label"],
            str(row["relation_params"]),
            *(
                "-" if row[key] is None else f"{row[key]:.4f}"
                for key in ("best_valid_mrr", "test_mrr")
            ),
        )
    console.print(table)
    console.print(f"Wrote {Path(out_dir) / SWEEP_FILE}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orthokge",
        description="Block-diagonal orthogonal knowledge-graph embeddings",
    )
    parser.add_argument("--log-level", default=None, help="DEBUG, INFO, WARNING...")
    parser.add_argument(
        "--threads", type=int, default=None, help="worker threads (1 = deterministic)"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    prepare = sub.add_parser("prepare", help="validate triple files and cache them")
    prepare.add_argument("--data", required=True, help="dir with train/valid/test.txt")
    prepare.add_argument("--out", required=True, help="cache output directory")

    train = sub.add_parser("train", help="train a model")
    train.add_argument("--config", required=True, help="key=value config file")
    train.add_argument("--data", required=True, help="dataset or cache directory")
    train.add_argument("--out", required=True, help="run output directory")
    train.add_argument("--seed", type=int, default=None, help="override config seed")

    evaluate_cmd = sub.add_parser("eval", help="evaluate a checkpoint")
    evaluate_cmd.add_argument("--checkpoint", required=True)
    evaluate_cmd.add_argument("--data", required=True)
    evaluate_cmd.add_argument("--split", choices=["valid", "test"], default="test")
    evaluate_cmd.add_argument(
        "--both-sides",
        action="store_true",
        help="also rank heads (not the standard tail-only protocol)",
    )

    analyze_cmd = sub.add_parser("analyze", help="relation-pattern residuals")
    analyze_cmd.add_argument("--checkpoint", required=True)
    analyze_cmd.add_argument("--kind", required=True, choices=sorted(ARITY))
    analyze_cmd.add_argument("--out", default="analysis")
    analyze_cmd.add_argument("--bins", type=int, default=DEFAULT_BINS)
    analyze_cmd.add_argument("relations", nargs="+", help="relation names in order")

    count = sub.add_parser("param-count", help="parameter counts for a config")
    count.add_argument("--config", required=True)
    count.add_argument("--data", default=None, help="optional dataset for totals")
    sweep = sub.add_parser("sweep", help="one training run per sweep variant")
    sweep.add_argument("--config", required=True, help="base key=value config file")
    sweep.add_argument("--data", required=True, help="dataset or cache directory")
    sweep.add_argument("--out", required=True, help="sweep output directory")
    sweep.add_argument("--block-sizes", type=int, nargs="+", default=[], metavar="D")
    sweep.add_argument("--entity-widths", type=int, nargs="+", default=[], metavar="M")
    sweep.add_argument(
        "--optimizers",
        nargs="+",
        default=[],
        choices=["riemannian", "gram_schmidt"],
    )
    return parser


def run(args: argparse.Namespace, settings: RuntimeSettings) -> int:
    if args.command == "prepare":
        return cmd_prepare(args.data, args.out)
    if args.command == "train":
        return cmd_train(args.config, args.data, args.out, settings, args.seed)
    if args.command == "eval":
        return cmd_eval(
            args.checkpoint,
            args.data,
            cast(SplitName, args.split),
            args.both_sides,
            settings,
        )
    if args.command == "analyze":
        return cmd_analyze(
            args.checkpoint,
            cast(PatternKind, args.kind),
            args.relations,
            args.out,
            args.bins,
        )
    if args.command == "sweep":
        return cmd_sweep(
            args.config,
            args.data,
            args.out,
            args.block_sizes,
            args.entity_widths,
            args.optimizers,
            settings,
        )
    return cmd_param_count(args.config, args.data)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        overrides = {
            key: value
            for key, value in (("threads", args.threads), ("log_level", args.log_level))
            if value is not None
        }
        settings = RuntimeSettings(**overrides)
        set_log_level(settings.log_level.upper())
        return run(args, settings)
    except (OrthoKGEError, FileNotFoundError) as e:
        error_console.print(f"{type(e).__name__}: {e}", style="bold red", markup=False)
        return 2
    except Exception as e:
        error_console.print(f"Unexpected error: {e!r}", style="bold red", markup=False)
        return 1


if __name__ == "__main__":
    sys.exit(main())
