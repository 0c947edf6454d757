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
from __future__ import annotations

import time
from pathlib import Path

import numpy as np
import polars as pl
from pydantic import BaseModel

from orthokge.checkpoint import Checkpoint, save_training_checkpoint
from orthokge.evaluation import Metrics, evaluate
from orthokge.exceptions import ConfigError, NumericError
from orthokge.kg_data import KGDataset, build_filter_index, iter_batches
from orthokge.logging_helper import format_json, get_logger, log_memory
from orthokge.model import EntityTable, RelationTable, init_params
from orthokge.optim import (
    EntityOptimizer,
    EpochResult,
    GramSchmidtRelationOptimizer,
    RelationOptimizer,
    RiemannianRelationOptimizer,
    alternating_epoch,
    joint_epoch,
)
from orthokge.settings import RuntimeSettings, TrainingConfig

logger = get_logger("Trainer")

METRICS_FILE = "metrics.tsv"
CHECKPOINT_DIR = "checkpoint"
TEST_METRICS_FILE = "test_metrics.json"


class EpochRecord(BaseModel):
    epoch: int
    train_loss: float
    valid_mrr: float | None
    wall_time: float


class TrainingSummary(BaseModel):
    epochs_run: int
    best_epoch: int
    best_valid_mrr: float | None
    stopped_early: bool
    test_metrics: Metrics | None = None


def build_relation_optimizer(
    config: TrainingConfig, relations: RelationTable
) -> RelationOptimizer:
    if config.relation_optimizer == "gram_schmidt":
        return GramSchmidtRelationOptimizer(
            relations, config.lr_relation, config.adagrad_epsilon
        )
    return RiemannianRelationOptimizer(
        relations,
        config.lr_relation,
        beta1=config.beta1,
        beta2=config.beta2,
        epsilon=config.adam_epsilon,
        stabilize_every=config.stabilize_every,
    )


class Trainer:
    """Owns the dataset, the parameters and both optimizers for one run.

    Gram-Schmidt runs update relations and entities jointly; Riemannian runs
    alternate a relation phase and an entity phase on every batch.
    """

    def __init__(
        self,
        config: TrainingConfig,
        dataset: KGDataset,
        out_dir: str | Path,
        settings: RuntimeSettings | None = None,
    ) -> None:
        if config.negative_k > 0 and dataset.vocab.num_entities < 2:
            raise ConfigError("negative sampling needs at least two entities")
        if len(dataset.train) == 0:
            raise ConfigError(f"dataset {dataset.name} has no training triples")
        self.config = config
        self.dataset = dataset
        self.out_dir = Path(out_dir)
        self.settings = settings or RuntimeSettings()
        self.filter_index = build_filter_index(
            dataset.train, dataset.valid, dataset.test
        )
        self.entities: EntityTable
        self.relations: RelationTable
        self.entities, self.relations = init_params(
            config, dataset.vocab, np.random.default_rng(config.seed)
        )
        self.relation_optimizer = build_relation_optimizer(config, self.relations)
        self.entity_optimizer = EntityOptimizer(
            self.entities, config.lr_entity, config.adagrad_epsilon
        )
        self.history: list[EpochRecord] = []

    @property
    def checkpoint_dir(self) -> Path:
        return self.out_dir / CHECKPOINT_DIR

    def run_epoch(self, epoch: int) -> EpochResult:
        rng = np.random.default_rng([self.config.seed, epoch])
        batches = iter_batches(
            self.dataset.train,
            self.config.batch_size,
            self.config.negative_k,
            self.dataset.vocab.num_entities,
            rng,
        )
        epoch_fn = (
            joint_epoch
            if self.config.relation_optimizer == "gram_schmidt"
            else alternating_epoch
        )
        try:
            return epoch_fn(
                self.entities,
                self.relations,
                batches,
                self.relation_optimizer,
                self.entity_optimizer,
                chunk_size=self.settings.loss_chunk_size,
                threads=self.settings.threads,
            )
        except NumericError as e:
            raise NumericError(f"training diverged in epoch {epoch}: {e}") from e

    def validate(self) -> Metrics | None:
        if len(self.dataset.valid) == 0:
            return None
        return evaluate(
            self.entities,
            self.relations,
            self.dataset.valid,
            self.filter_index,
            threads=self.settings.threads,
            chunk_size=self.settings.eval_chunk_size,
        )

    def save_checkpoint(self, epoch: int, valid_mrr: float | None) -> None:
        save_training_checkpoint(
            self.checkpoint_dir,
            config=self.config,
            vocab=self.dataset.vocab,
            dataset=self.dataset.name,
            epoch=epoch,
            valid_mrr=valid_mrr,
            entities=self.entities,
            relations=self.relations,
            relation_optimizer=self.relation_optimizer,
            entity_optimizer=self.entity_optimizer,
        )

    def write_metrics_log(self) -> Path:
        path = self.out_dir / METRICS_FILE
        pl.DataFrame(
            {
                name: [getattr(record, name) for record in self.history]
                for name in EpochRecord.model_fields
            },
            schema={
                "epoch": pl.Int64,
                "train_loss": pl.Float64,
                "valid_mrr": pl.Float64,
                "wall_time": pl.Float64,
            },
        ).write_csv(path, separator="\t")
        return path

    def fit(self) -> TrainingSummary:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        logger.info(f"Training config:\n{format_json(self.config)}")
        config = self.config
        best_mrr: float | None = None
        best_epoch = 0
        evals_since_best = 0
        stopped_early = False
        start = time.perf_counter()
        epoch = 0

        for epoch in range(1, config.max_epochs + 1):
            result = self.run_epoch(epoch)
            last = epoch == config.max_epochs
            evaluate_now = epoch % config.eval_every == 0 or last
            metrics = self.validate() if evaluate_now else None
            valid_mrr = metrics.mrr if metrics is not None else None
            self.history.append(
                EpochRecord(
                    epoch=epoch,
                    train_loss=result.loss,
                    valid_mrr=valid_mrr,
                    wall_time=time.perf_counter() - start,
                )
            )
            self.write_metrics_log()
            logger.info(
                f"epoch {epoch}: loss={result.loss:.6f}"
                + ("" if valid_mrr is None else f" valid_mrr={valid_mrr:.4f}")
                + f" ({self.history[-1].wall_time:.1f}s)"
            )
            log_memory(logger)

            if valid_mrr is not None:
                if best_mrr is None or valid_mrr > best_mrr:
                    best_mrr, best_epoch = valid_mrr, epoch
                    evals_since_best = 0
                    self.save_checkpoint(epoch, valid_mrr)
                else:
                    evals_since_best += config.eval_every
                    if evals_since_best >= config.patience:
                        logger.info(
                            f"No valid MRR improvement for {evals_since_best} "
                            f"epochs, stopping at epoch {epoch}"
                        )
                        stopped_early = True
                        break

        if best_mrr is None:
            # No validation split: keep the final parameters.
            best_epoch = epoch
            self.save_checkpoint(epoch, None)

        summary = TrainingSummary(
            epochs_run=epoch,
            best_epoch=best_epoch,
            best_valid_mrr=best_mrr,
            stopped_early=stopped_early,
            test_metrics=self.test_best(),
        )
        logger.info(f"Training finished:\n{format_json(summary)}")
        return summary

    def test_best(self) -> Metrics | None:
        """Evaluate the best checkpoint on the test split and write the metrics."""
        if len(self.dataset.test) == 0:
            return None
        checkpoint = Checkpoint.load(self.checkpoint_dir)
        metrics = evaluate(
            checkpoint.entities(),
            checkpoint.relations(),
            self.dataset.test,
            self.filter_index,
            threads=self.settings.threads,
            chunk_size=self.settings.eval_chunk_size,
        )
        (self.out_dir / TEST_METRICS_FILE).write_text(
            metrics.model_dump_json(indent=2), encoding="utf-8"
        )
        logger.info(f"test {metrics.machine_line()}")
        return metrics
