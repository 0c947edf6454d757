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
from pathlib import Path
from typing import Callable

import numpy as np
import pytest

from orthokge.manifold import random_orthogonal_blocks
from orthokge.model import EntityTable, RelationTable

ParamsFactory = Callable[..., tuple[EntityTable, RelationTable]]

TOY_TRAIN = "a\tr\tb\nb\tr\ta\na\ts\tc\n"
TOY_VALID = "c\tr\tb\n"
TOY_TEST = "b\ts\tc\n"


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20250101)


@pytest.fixture
def toy_kg_dir(tmp_path: Path) -> Path:
    data = tmp_path / "toy"
    data.mkdir()
    (data / "train.txt").write_text(TOY_TRAIN, encoding="utf-8")
    (data / "valid.txt").write_text(TOY_VALID, encoding="utf-8")
    (data / "test.txt").write_text(TOY_TEST, encoding="utf-8")
    return data


@pytest.fixture
def toy_config(tmp_path: Path) -> Path:
    path = tmp_path / "toy.conf"
    path.write_text(
        "\n".join(
            [
                "# toy run",
                "n=4",
                "m=1",
                "d=2",
                "negative_k=3",
                "lr_entity=0.2",
                "lr_relation=0.02",
                "batch_size=2",
                "max_epochs=3",
                "eval_every=1",
                "patience=5",
                "seed=7",
            ]
        )
        + "\n",
        encoding="utf-8",
    )
    return path


@pytest.fixture
def make_params() -> ParamsFactory:
    """Random parameters with non-trivial rotations and biases."""

    def factory(
        n: int,
        m: int,
        d: int,
        num_entities: int,
        num_relations: int = 2,
        seed: int = 0,
        relation_std: float = 1.0,
        bias_scale: float = 0.1,
    ) -> tuple[EntityTable, RelationTable]:
        gen = np.random.default_rng(seed)
        matrices = gen.normal(size=(num_entities, n, m))
        biases = bias_scale * gen.normal(size=num_entities)
        blocks = random_orthogonal_blocks(
            num_relations * (n // d), d, gen, std=relation_std
        ).reshape(num_relations, n // d, d, d)
        return EntityTable(matrices, biases), RelationTable(blocks)

    return factory
