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
"""Filtered link-prediction metrics.

Ranks use the mid-tie convention: every other candidate with exactly the
target's score counts as half a place above it.
"""

from __future__ import annotations

from typing import Collection

import numpy as np
import numpy.typing as npt
from joblib import Parallel, delayed
from pydantic import BaseModel, Field
from rich.table import Table

from orthokge.exceptions import ProtocolError
from orthokge.kg_data import FilterIndex, TripleSet
from orthokge.logging_helper import get_logger
from orthokge.model import (
    EntityTable,
    RelationTable,
    rotate_all,
    score_all_heads,
    score_all_tails,
)

logger = get_logger("Evaluation")

HITS_AT = (1, 3, 10)


class Metrics(BaseModel):
    mrr: float = Field(gt=0, le=1)
    hits_at: dict[int, float]
    count: int = Field(ge=1)

    def machine_line(self) -> str:
        return (
            f"mrr={self.mrr:.6f} h1={self.hits_at[1]:.6f} "
            f"h3={self.hits_at[3]:.6f} h10={self.hits_at[10]:.6f} n={self.count}"
        )

    def table(self, title: str = "Filtered link prediction") -> Table:
        table = Table(title=title)
        table.add_column("Metric")
        table.add_column("Value", justify="right")
        table.add_row("MRR", f"{self.mrr:.4f}")
        for k in HITS_AT:
            table.add_row(f"Hits@{k}", f"{self.hits_at[k]:.4f}")
        table.add_row("Triples", str(self.count))
        return table


def filtered_rank(
    scores: npt.ArrayLike, target: int, known_true: Collection[int] = ()
) -> float:
    """Rank of ``target`` among the candidates left after filtering.

    Every id in ``known_true`` except the target is removed. A non-empty
    ``known_true`` must contain the target.
    """
    values = np.asarray(scores, dtype=np.float64)
    if not 0 <= target < values.shape[0]:
        raise ProtocolError(f"target {target} is outside the candidate range")
    keep = np.ones(values.shape[0], dtype=bool)
    if known_true:
        if target not in known_true:
            raise ProtocolError(
                f"target {target} is missing from its own filter set; the filter "
                "index was not built over the evaluated split"
            )
        keep[np.fromiter(known_true, dtype=np.int64, count=len(known_true))] = False
        keep[target] = True
    target_score = values[target]
    kept = values[keep]
    greater = int(np.count_nonzero(kept > target_score))
    ties = int(np.count_nonzero(kept == target_score)) - 1
    return 1.0 + greater + ties / 2.0


def metrics_from_ranks(ranks: npt.ArrayLike) -> Metrics:
    values = np.asarray(ranks, dtype=np.float64)
    if values.size == 0:
        raise ProtocolError("cannot compute metrics over zero ranks")
    return Metrics(
        mrr=float(np.mean(1.0 / values)),
        hits_at={k: float(np.mean(values <= k)) for k in HITS_AT},
        count=int(values.size),
    )


def _tail_ranks(
    entities: EntityTable,
    relations: RelationTable,
    triples: npt.NDArray[np.int64],
    filter_index: FilterIndex,
) -> npt.NDArray[np.float64]:
    ranks = np.empty(triples.shape[0])
    for i, (h, r, t) in enumerate(triples.tolist()):
        scores = score_all_tails(entities, relations, h, r)
        ranks[i] = filtered_rank(scores, t, filter_index.known_tails(h, r))
    return ranks


def _head_ranks(
    entities: EntityTable,
    relations: RelationTable,
    triples: npt.NDArray[np.int64],
    filter_index: FilterIndex,
) -> npt.NDArray[np.float64]:
    ranks = np.empty(triples.shape[0])
    rotated: dict[int, npt.NDArray[np.float64]] = {}
    for i, (h, r, t) in enumerate(triples.tolist()):
        if r not in rotated:
            rotated[r] = rotate_all(entities, relations, r)
        scores = score_all_heads(entities, relations, r, t, rotated[r])
        ranks[i] = filtered_rank(scores, h, filter_index.known_heads(r, t))
    return ranks


def ranks(
    entities: EntityTable,
    relations: RelationTable,
    split: TripleSet,
    filter_index: FilterIndex,
    both_sides: bool = False,
    threads: int = 1,
    chunk_size: int = 256,
) -> npt.NDArray[np.float64]:
    """Filtered tail ranks of every triple of ``split`` in split order.

    With ``both_sides`` the head ranks follow the tail ranks.
    """
    if len(split) == 0:
        raise ProtocolError(f"cannot evaluate the empty {split.split} split")
    triples = split.triples
    chunks = [triples[s : s + chunk_size] for s in range(0, len(split), chunk_size)]
    workers = [_tail_ranks] + ([_head_ranks] if both_sides else [])
    parts: list[npt.NDArray[np.float64]] = []
    for worker in workers:
        jobs = [
            delayed(worker)(entities, relations, chunk, filter_index)
            for chunk in chunks
        ]
        if threads > 1 and len(chunks) > 1:
            results = Parallel(n_jobs=threads, prefer="threads")(jobs)
        else:
            results = [fn(*args, **kwargs) for fn, args, kwargs in jobs]
        parts.extend(results)
    return np.concatenate(parts)


def evaluate(
    entities: EntityTable,
    relations: RelationTable,
    split: TripleSet,
    filter_index: FilterIndex,
    both_sides: bool = False,
    threads: int = 1,
    chunk_size: int = 256,
) -> Metrics:
    """MRR and Hits@{1,3,10} of tail prediction on ``split``.

    ``both_sides`` also ranks heads and pools both directions; tail prediction
    alone is the reported protocol.
    """
    metrics = metrics_from_ranks(
        ranks(entities, relations, split, filter_index, both_sides, threads, chunk_size)
    )
    logger.debug(f"Evaluated {split.split}: {metrics.machine_line()}")
    return metrics
