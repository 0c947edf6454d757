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
"""Checkpoint directories: ``manifest.json`` plus a raw ``params.bin`` payload.

The payload is the concatenation of little-endian float64 arrays in manifest
order. Saving the same parameters twice gives byte-identical files.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, ValidationError

from orthokge.exceptions import CompatibilityError, NumericError
from orthokge.kg_data import Vocabulary
from orthokge.logging_helper import get_logger
from orthokge.model import EntityTable, RelationTable
from orthokge.optim import EntityOptimizer, RelationOptimizer
from orthokge.settings import TrainingConfig
from orthokge.tensor_core import (
    ORTHOGONALITY_TOLERANCE,
    DenseMatrix,
    max_orthogonality_residual,
)

logger = get_logger("Checkpoint")

FORMAT_VERSION = 1
MANIFEST_FILE = "manifest.json"
PAYLOAD_FILE = "params.bin"
PAYLOAD_DTYPE = "<f8"

PARAMETER_ARRAYS = ("entity_matrices", "entity_biases", "relation_weights")


class ArrayEntry(BaseModel):
    model_config = ConfigDict(extra="forbid")

    name: str
    shape: list[int]
    offset: int


class CheckpointManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int
    endianness: str
    numeric_width: int
    dataset: str
    epoch: int
    valid_mrr: float | None = None
    config: TrainingConfig
    entity_names: list[str]
    relation_names: list[str]
    arrays: list[ArrayEntry]
    relation_step_counts: list[int]


@dataclass
class Checkpoint:
    manifest: CheckpointManifest
    arrays: dict[str, DenseMatrix]

    @classmethod
    def from_training(
        cls,
        *,
        config: TrainingConfig,
        vocab: Vocabulary,
        dataset: str,
        epoch: int,
        valid_mrr: float | None,
        entities: EntityTable,
        relations: RelationTable,
        relation_optimizer: RelationOptimizer | None = None,
        entity_optimizer: EntityOptimizer | None = None,
    ) -> Checkpoint:
        arrays: dict[str, DenseMatrix] = {
            "entity_matrices": entities.matrices.copy(),
            "entity_biases": entities.biases.copy(),
            "relation_weights": relations.weights.copy(),
        }
        step_counts: list[int] = []
        if relation_optimizer is not None:
            relation_arrays, step_counts = relation_optimizer.export_state()
            arrays.update(relation_arrays)
        if entity_optimizer is not None:
            arrays.update(entity_optimizer.export_state())
        manifest = CheckpointManifest(
            format_version=FORMAT_VERSION,
            endianness="little",
            numeric_width=64,
            dataset=dataset,
            epoch=epoch,
            valid_mrr=valid_mrr,
            config=config,
            entity_names=vocab.entity_names,
            relation_names=vocab.relation_names,
            arrays=_layout(arrays),
            relation_step_counts=step_counts,
        )
        return cls(manifest, arrays)

    @property
    def parameterization(self) -> Literal["riemannian", "gram_schmidt"]:
        return self.manifest.config.relation_optimizer

    def vocabulary(self) -> Vocabulary:
        return Vocabulary(self.manifest.entity_names, self.manifest.relation_names)

    def entities(self) -> EntityTable:
        return EntityTable(
            self.arrays["entity_matrices"].copy(), self.arrays["entity_biases"].copy()
        )

    def relations(self) -> RelationTable:
        return RelationTable(
            self.arrays["relation_weights"].copy(), self.parameterization
        )

    def optimizer_arrays(self) -> dict[str, DenseMatrix]:
        return {
            name: array
            for name, array in self.arrays.items()
            if name not in PARAMETER_ARRAYS
        }

    def check_vocabulary(self, vocab: Vocabulary) -> None:
        """Raise CompatibilityError unless ``vocab`` matches the checkpoint's ids."""
        if vocab.entity_names != self.manifest.entity_names:
            raise CompatibilityError(
                f"entity vocabulary differs from the checkpoint "
                f"({vocab.num_entities} vs {len(self.manifest.entity_names)} "
                "entities, or a different order)"
            )
        if vocab.relation_names != self.manifest.relation_names:
            raise CompatibilityError(
                f"relation vocabulary differs from the checkpoint "
                f"({vocab.num_relations} vs {len(self.manifest.relation_names)} "
                "relations, or a different order)"
            )

    def save(self, directory: str | Path) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        payload = b"".join(
            np.ascontiguousarray(self.arrays[entry.name], dtype=PAYLOAD_DTYPE).tobytes()
            for entry in self.manifest.arrays
        )
        (out / PAYLOAD_FILE).write_bytes(payload)
        (out / MANIFEST_FILE).write_text(
            self.manifest.model_dump_json(indent=2), encoding="utf-8"
        )
        logger.debug(f"Saved checkpoint ({len(payload)} bytes) to {out}")
        return out

    @classmethod
    def load(cls, directory: str | Path) -> Checkpoint:
        src = Path(directory)
        manifest_path = src / MANIFEST_FILE
        payload_path = src / PAYLOAD_FILE
        if not manifest_path.is_file() or not payload_path.is_file():
            raise CompatibilityError(
                f"{src} is not a checkpoint directory (need {MANIFEST_FILE} "
                f"and {PAYLOAD_FILE})"
            )
        try:
            manifest = CheckpointManifest.model_validate_json(
                manifest_path.read_bytes()
            )
        except ValidationError as e:
            raise CompatibilityError(f"invalid checkpoint manifest: {e}") from e
        if manifest.format_version != FORMAT_VERSION:
            raise CompatibilityError(
                f"checkpoint format {manifest.format_version} is not supported "
                f"(expected {FORMAT_VERSION})"
            )
        if manifest.endianness != "little" or manifest.numeric_width != 64:
            raise CompatibilityError(
                f"unsupported payload encoding {manifest.endianness}/"
                f"{manifest.numeric_width}-bit"
            )

        payload = payload_path.read_bytes()
        expected = sum(8 * int(np.prod(entry.shape)) for entry in manifest.arrays)
        if len(payload) != expected:
            raise CompatibilityError(
                f"payload has {len(payload)} bytes, manifest describes {expected}"
            )
        arrays: dict[str, DenseMatrix] = {}
        for entry in manifest.arrays:
            count = int(np.prod(entry.shape))
            arrays[entry.name] = (
                np.frombuffer(
                    payload, dtype=PAYLOAD_DTYPE, count=count, offset=entry.offset
                )
                .astype(np.float64)
                .reshape(entry.shape)
            )
        missing = [name for name in PARAMETER_ARRAYS if name not in arrays]
        if missing:
            raise CompatibilityError(f"checkpoint lacks arrays {missing}")

        checkpoint = cls(manifest, arrays)
        checkpoint._check_parameters()
        return checkpoint

    def _check_parameters(self) -> None:
        for name in PARAMETER_ARRAYS:
            if not np.all(np.isfinite(self.arrays[name])):
                raise NumericError(f"checkpoint array {name} has non-finite entries")
        if self.parameterization == "riemannian":
            residual = max_orthogonality_residual(self.arrays["relation_weights"])
            if residual > ORTHOGONALITY_TOLERANCE:
                raise NumericError(
                    f"checkpoint relation blocks are not orthogonal "
                    f"(residual {residual:.3e})"
                )
        shape = self.arrays["entity_matrices"].shape
        if shape[0] != len(self.manifest.entity_names):
            raise CompatibilityError("entity matrix count differs from the names")
        if self.arrays["relation_weights"].shape[0] != len(
            self.manifest.relation_names
        ):
            raise CompatibilityError("relation count differs from the names")


def _layout(arrays: dict[str, DenseMatrix]) -> list[ArrayEntry]:
    entries = []
    offset = 0
    for name, array in arrays.items():
        entries.append(ArrayEntry(name=name, shape=list(array.shape), offset=offset))
        offset += 8 * array.size
    return entries


def save_training_checkpoint(
    directory: str | Path,
    *,
    config: TrainingConfig,
    vocab: Vocabulary,
    dataset: str,
    epoch: int,
    valid_mrr: float | None,
    entities: EntityTable,
    relations: RelationTable,
    relation_optimizer: RelationOptimizer,
    entity_optimizer: EntityOptimizer,
) -> Checkpoint:
    """Stabilize the live relation blocks, then write a checkpoint of the state."""
    relation_optimizer.stabilize_all()
    checkpoint = Checkpoint.from_training(
        config=config,
        vocab=vocab,
        dataset=dataset,
        epoch=epoch,
        valid_mrr=valid_mrr,
        entities=entities,
        relations=relations,
        relation_optimizer=relation_optimizer,
        entity_optimizer=entity_optimizer,
    )
    if checkpoint.parameterization == "riemannian":
        residual = max_orthogonality_residual(checkpoint.arrays["relation_weights"])
        if residual > ORTHOGONALITY_TOLERANCE:
            raise NumericError(
                f"refusing to save non-orthogonal relation blocks ({residual:.3e})"
            )
    checkpoint.save(directory)
    return checkpoint
