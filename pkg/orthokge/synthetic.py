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
"""Small constructed knowledge graphs with a known relation pattern."""

from __future__ import annotations

from pathlib import Path

import numpy as np
import numpy.typing as npt
import polars as pl

from orthokge.kg_data import SPLITS, KGDataset, TripleSet, Vocabulary
from orthokge.logging_helper import get_logger
from orthokge.manifold import Seed, as_generator, random_orthogonal_blocks
from orthokge.tensor_core import BlockDiagOrthogonal, block_apply

logger = get_logger("Synthetic")


def _entity_names(count: int) -> list[str]:
    width = len(str(max(count - 1, 0)))
    return [f"e{i:0{width}d}" for i in range(count)]


def _split(
    triples: npt.NDArray[np.int64],
    valid_fraction: float,
    rng: np.random.Generator,
) -> tuple[TripleSet, TripleSet]:
    shuffled = triples[rng.permutation(triples.shape[0])]
    num_valid = int(round(valid_fraction * shuffled.shape[0]))
    return (
        TripleSet("train", shuffled[num_valid:]),
        TripleSet("valid", shuffled[:num_valid]),
    )


def symmetric_kg(
    num_groups: int = 25,
    group_side: int = 4,
    valid_fraction: float = 0.1,
    seed: Seed = 0,
) -> KGDataset:
    """One relation holding in both directions inside complete bipartite groups.

    Entities are shuffled into ``num_groups`` groups of two sides with
    ``group_side`` entities each. Every left/right pair {a, b} of a group
    contributes (a, r, b) and (b, r, a); the triples are then split at random
    into train and valid. All partners of an entity share their partners, so a
    held-out pair is implied by the rest of its group.
    """
    if num_groups < 1 or group_side < 1:
        raise ValueError(
            f"need at least one group and one entity per side, got "
            f"num_groups={num_groups}, group_side={group_side}"
        )
    rng = as_generator(seed)
    num_entities = 2 * num_groups * group_side
    groups = rng.permutation(num_entities).reshape(num_groups, 2, group_side)
    left = np.repeat(groups[:, 0, :], group_side, axis=1).ravel()
    right = np.tile(groups[:, 1, :], (1, group_side)).ravel()
    zeros = np.zeros(left.size, dtype=np.int64)
    triples = np.concatenate(
        [np.column_stack([left, zeros, right]), np.column_stack([right, zeros, left])]
    ).astype(np.int64)
    train, valid = _split(triples, valid_fraction, rng)
    vocab = Vocabulary(_entity_names(num_entities), ["symmetric_to"])
    return KGDataset("symmetric", vocab, train, valid)


def composition_kg(
    num_entities: int = 300,
    n: int = 6,
    d: int = 3,
    valid_fraction: float = 0.1,
    seed: Seed = 0,
) -> tuple[KGDataset, list[BlockDiagOrthogonal]]:
    """Three relations where following r1 then r2 is exactly r3.

    A hidden model places every entity at a random point of R^n and draws two
    block-diagonal rotations. The tail of (h, r) is the entity nearest to the
    rotated head for r1 and r2, and r3 maps h to f2(f1(h)). Returns the dataset
    and the hidden rotations (r1, r2, r2 r1).
    """
    rng = as_generator(seed)
    points = rng.normal(size=(num_entities, n))
    r1, r2 = (
        BlockDiagOrthogonal(random_orthogonal_blocks(n // d, d, rng, std=1.0))
        for _ in range(2)
    )

    def nearest(rotation: BlockDiagOrthogonal) -> npt.NDArray[np.int64]:
        rotated = block_apply(rotation, points.T).T
        dists = np.linalg.norm(rotated[:, None, :] - points[None, :, :], axis=-1)
        return np.argmin(dists, axis=1).astype(np.int64)

    f1, f2 = nearest(r1), nearest(r2)
    heads = np.arange(num_entities, dtype=np.int64)
    triples = np.concatenate(
        [
            np.column_stack([heads, np.full(num_entities, 0), f1]),
            np.column_stack([heads, np.full(num_entities, 1), f2]),
            np.column_stack([heads, np.full(num_entities, 2), f2[f1]]),
        ]
    ).astype(np.int64)
    train, valid = _split(triples, valid_fraction, rng)
    vocab = Vocabulary(_entity_names(num_entities), ["r1", "r2", "r3"])
    return KGDataset("composition", vocab, train, valid), [r1, r2, r2.compose(r1)]


def write_kg(dataset: KGDataset, out_dir: str | Path) -> Path:
    """Write the splits as head<TAB>relation<TAB>tail files."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entities = np.array(dataset.vocab.entity_names, dtype=object)
    relations = np.array(dataset.vocab.relation_names, dtype=object)
    for split in SPLITS:
        triples = dataset.split(split)
        pl.DataFrame(
            {
                "head": entities[triples.heads].tolist(),
                "relation": relations[triples.relations].tolist(),
                "tail": entities[triples.tails].tolist(),
            },
            schema={"head": pl.String, "relation": pl.String, "tail": pl.String},
        ).write_csv(
            out / f"{split}.txt",
            separator="\t",
            include_header=False,
            quote_style="never",
        )
    logger.info(f"Wrote {dataset.name} triples to {out}")
    return out
