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
"""Hyperparameter sweeps over block size, entity width and relation optimizer.

Each variant is a full training run in its own subdirectory; one row per run is
collected in ``sweep.tsv``.
"""

from __future__ import annotations

import itertools
from pathlib import Path
from typing import Any, Sequence

import polars as pl
from pydantic import BaseModel

from orthokge.kg_data import KGDataset
from orthokge.logging_helper import get_logger
from orthokge.model import Parameterization, parameter_counts
from orthokge.settings import RuntimeSettings, TrainingConfig, parse_training_config
from orthokge.trainer import Trainer

logger = get_logger("Sweep")

SWEEP_FILE = "sweep.tsv"


class SweepRow(BaseModel):
    label: str
    n: int
    m: int
    d: int
    relation_optimizer: str
    entity_params: int
    relation_params: int
    epochs_run: int
    best_epoch: int
    best_valid_mrr: float | None
    test_mrr: float | None
    test_hits_at_1: float | None
    test_hits_at_3: float | None
    test_hits_at_10: float | None


def block_size_n(n: int, d: int) -> int:
    """The multiple of ``d`` nearest to ``n`` (at least ``d``): 500 -> 501 for d=3."""
    return d * max(1, round(n / d))


def sweep_configs(
    base: TrainingConfig,
    block_sizes: Sequence[int] = (),
    entity_widths: Sequence[int] = (),
    optimizers: Sequence[Parameterization] = (),
) -> list[TrainingConfig]:
    """Every combination of the given axes; an empty axis keeps the base value.

    Changing the block size moves n to the nearest multiple of the new d, so
    entity dimensions stay comparable across block sizes.
    """
    configs = []
    for d, m, optimizer in itertools.product(
        block_sizes or [base.d],
        entity_widths or [base.m],
        optimizers or [base.relation_optimizer],
    ):
        values: dict[str, Any] = base.model_dump()
        values.update(m=m, d=d, relation_optimizer=optimizer)
        if d != base.d:
            values["n"] = block_size_n(base.n, d)
        configs.append(parse_training_config(values, source=f"sweep variant d={d}"))
    return configs


def variant_label(config: TrainingConfig) -> str:
    return f"n{config.n}_d{config.d}_m{config.m}_{config.relation_optimizer}"


def run_sweep(
    configs: Sequence[TrainingConfig],
    dataset: KGDataset,
    out_dir: str | Path,
    settings: RuntimeSettings | None = None,
) -> pl.DataFrame:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows: list[SweepRow] = []
    for index, config in enumerate(configs, start=1):
        label = variant_label(config)
        logger.info(f"Sweep run {index}/{len(configs)}: {label}")
        summary = Trainer(config, dataset, out / label, settings).fit()
        entity_params, relation_params = parameter_counts(config, dataset.vocab)
        test = summary.test_metrics
        rows.append(
            SweepRow(
                label=label,
                n=config.n,
                m=config.m,
                d=config.d,
                relation_optimizer=config.relation_optimizer,
                entity_params=entity_params,
                relation_params=relation_params,
                epochs_run=summary.epochs_run,
                best_epoch=summary.best_epoch,
                best_valid_mrr=summary.best_valid_mrr,
                test_mrr=None if test is None else test.mrr,
                test_hits_at_1=None if test is None else test.hits_at[1],
                test_hits_at_3=None if test is None else test.hits_at[3],
                test_hits_at_10=None if test is None else test.hits_at[10],
            )
        )
        write_sweep(rows, out)
    return sweep_frame(rows)


SWEEP_SCHEMA = {
    "label": pl.String,
    "n": pl.Int64,
    "m": pl.Int64,
    "d": pl.Int64,
    "relation_optimizer": pl.String,
    "entity_params": pl.Int64,
    "relation_params": pl.Int64,
    "epochs_run": pl.Int64,
    "best_epoch": pl.Int64,
    "best_valid_mrr": pl.Float64,
    "test_mrr": pl.Float64,
    "test_hits_at_1": pl.Float64,
    "test_hits_at_3": pl.Float64,
    "test_hits_at_10": pl.Float64,
}


def sweep_frame(rows: Sequence[SweepRow]) -> pl.DataFrame:
    return pl.DataFrame(
        {name: [getattr(row, name) for row in rows] for name in SWEEP_SCHEMA},
        schema=SWEEP_SCHEMA,
    )


def write_sweep(rows: Sequence[SweepRow], out_dir: Path) -> Path:
    path = out_dir / SWEEP_FILE
    sweep_frame(rows).write_csv(path, separator="\t")
    return path
