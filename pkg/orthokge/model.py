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
"""Parameters, scoring function, loss and analytic gradients.

Score of a triple (h, r, t):

    s = -|| e_R . e_H - e_T ||_F + b_h + b_t

Loss over the sampled tails t' of every triple (the true tail first):

    L = sum log(1 + exp(y * s)),   y = -1 for the true tail, +1 otherwise
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Literal, Sequence

import numpy as np
import numpy.typing as npt
from joblib import Parallel, delayed
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from orthokge.exceptions import ConfigError, NumericError, ShapeError
from orthokge.kg_data import Batch, Vocabulary
from orthokge.manifold import (
    INIT_SKEW_STD,
    Seed,
    as_generator,
    gram_schmidt,
    haar_orthogonal_blocks,
    random_orthogonal_blocks,
)
from orthokge.tensor_core import (
    BlockDiagOrthogonal,
    DenseMatrix,
    block_apply,
    block_apply_batch,
    block_apply_transpose_batch,
    ensure_finite,
)

IntArray = npt.NDArray[np.int64]
Parameterization = Literal["riemannian", "gram_schmidt"]
GradientTarget = Literal["relations", "entities", "both"]
RelationInit = Literal["near_identity", "haar"]

# Below this distance the distance term is treated as a cusp: zero subgradient.
DISTANCE_EPSILON = 1e-12


class ModelConfig(BaseModel):
    """Model and optimizer hyperparameters."""

    model_config = ConfigDict(extra="forbid", frozen=True)

    n: int = Field(ge=1, description="Rows of entity matrices and relation size")
    m: int = Field(default=1, ge=1, description="Columns of entity matrices")
    d: int = Field(default=2, ge=1, description="Size of the orthogonal blocks")
    negative_k: int = Field(default=300, ge=0)
    lr_entity: float = Field(default=0.2, gt=0)
    lr_relation: float = Field(default=0.02, gt=0)
    batch_size: int = Field(default=500, ge=1)
    max_epochs: int = Field(default=500, ge=1)
    seed: int = 0
    relation_optimizer: Parameterization = "riemannian"
    beta1: float = Field(default=0.9, ge=0, lt=1)
    beta2: float = Field(default=0.999, ge=0, lt=1)
    adam_epsilon: float = Field(default=1e-8, ge=0)
    adagrad_epsilon: float = Field(default=1e-10, ge=0)
    stabilize_every: int = Field(default=1000, ge=1)
    relation_init: RelationInit = "near_identity"
    relation_init_std: float = Field(default=INIT_SKEW_STD, ge=0)

    @model_validator(mode="after")
    def check_block_layout(self) -> ModelConfig:
        if self.n % self.d != 0:
            raise ValueError(
                f"n={self.n} must be divisible by d={self.d}; pad n to a multiple "
                "of the block size"
            )
        return self

    @property
    def num_blocks(self) -> int:
        return self.n // self.d


@dataclass
class EntityTable:
    """Per-entity n x m matrices and scalar biases (mutated by the optimizers)."""

    matrices: DenseMatrix
    biases: DenseMatrix

    def __post_init__(self) -> None:
        if self.matrices.ndim != 3 or self.biases.shape != self.matrices.shape[:1]:
            raise ShapeError(
                "entity table needs (V, n, m) matrices and (V,) biases",
                expected="(V, n, m) / (V,)",
                actual=(self.matrices.shape, self.biases.shape),
            )

    @property
    def num_entities(self) -> int:
        return int(self.matrices.shape[0])

    @property
    def n(self) -> int:
        return int(self.matrices.shape[1])

    @property
    def m(self) -> int:
        return int(self.matrices.shape[2])

    def copy(self) -> EntityTable:
        return EntityTable(self.matrices.copy(), self.biases.copy())


@dataclass
class RelationTable:
    """Relation weights of shape (R, n/d, d, d).

    With the riemannian parameterization the weights are the orthogonal blocks
    themselves. With gram_schmidt they are free matrices and the blocks are
    recomputed from them on every forward pass.
    """

    weights: DenseMatrix
    parameterization: Parameterization = "riemannian"

    def __post_init__(self) -> None:
        w = self.weights
        if w.ndim != 4 or w.shape[2] != w.shape[3]:
            raise ShapeError(
                "relation weights need shape (R, n/d, d, d)",
                expected="(R, n/d, d, d)",
                actual=w.shape,
            )

    @property
    def num_relations(self) -> int:
        return int(self.weights.shape[0])

    @property
    def num_blocks(self) -> int:
        return int(self.weights.shape[1])

    @property
    def block_dim(self) -> int:
        return int(self.weights.shape[2])

    @property
    def n(self) -> int:
        return self.num_blocks * self.block_dim

    def blocks_for(self, ids: npt.ArrayLike) -> DenseMatrix:
        raw = self.weights[np.asarray(ids, dtype=np.int64)]
        if self.parameterization == "gram_schmidt":
            return gram_schmidt(raw)
        return raw

    def all_blocks(self) -> DenseMatrix:
        return self.blocks_for(np.arange(self.num_relations))

    def relation(self, r: int) -> BlockDiagOrthogonal:
        _check_index(r, self.num_relations, "relation")
        return BlockDiagOrthogonal(self.blocks_for([r])[0])

    def copy(self) -> RelationTable:
        return RelationTable(self.weights.copy(), self.parameterization)


@dataclass
class GradientBundle:
    """Loss and gradients of one batch, restricted to touched parameters."""

    loss: float
    entity_ids: IntArray
    entity_grads: DenseMatrix
    bias_grads: DenseMatrix
    relation_ids: IntArray
    relation_grads: DenseMatrix


@dataclass
class _ChunkTerms:
    loss: float
    score_weights: DenseMatrix
    grad_heads: DenseMatrix | None = None
    grad_candidates: DenseMatrix | None = None
    grad_blocks: DenseMatrix | None = None


def _check_index(i: int, size: int, what: str) -> None:
    if not 0 <= int(i) < size:
        raise IndexError(f"{what} id {i} out of range [0, {size})")


def _check_compatible(entities: EntityTable, relations: RelationTable) -> None:
    if entities.n != relations.n:
        raise ShapeError(
            "entity rows must equal the relation dimension",
            expected=relations.n,
            actual=entities.n,
        )


def _distances(rotated: DenseMatrix, candidates: DenseMatrix) -> DenseMatrix:
    """Frobenius distance between one rotated head (n, m) and candidates (C, n, m)."""
    diff = (candidates - rotated).reshape(candidates.shape[0], -1)
    return np.asarray(np.sqrt(np.sum(diff * diff, axis=1)), dtype=np.float64)


def score(
    entities: EntityTable, relations: RelationTable, h: int, r: int, t: int
) -> float:
    _check_compatible(entities, relations)
    _check_index(h, entities.num_entities, "head")
    _check_index(t, entities.num_entities, "tail")
    rotated = block_apply(relations.relation(r), entities.matrices[h])
    distance = _distances(rotated, entities.matrices[[t]])[0]
    value = float(-distance + entities.biases[h] + entities.biases[t])
    if not np.isfinite(value):
        raise NumericError(f"score of ({h}, {r}, {t}) is not finite")
    return value


def score_all_tails(
    entities: EntityTable, relations: RelationTable, h: int, r: int
) -> DenseMatrix:
    """Scores of (h, r, e) for every entity e; the rotated head is computed once."""
    _check_compatible(entities, relations)
    _check_index(h, entities.num_entities, "head")
    rotated = block_apply(relations.relation(r), entities.matrices[h])
    distances = _distances(rotated, entities.matrices)
    scores = -distances + entities.biases[h] + entities.biases
    ensure_finite(scores, "tail scores")
    return scores


def rotate_all(
    entities: EntityTable, relations: RelationTable, r: int
) -> DenseMatrix:
    """e_R . e_V for every entity, shape (V, n, m)."""
    blocks = relations.relation(r).blocks
    v, n, m = entities.matrices.shape
    bands = entities.matrices.reshape(v, blocks.shape[0], blocks.shape[1], m)
    return np.einsum("kij,vkjm->vkim", blocks, bands).reshape(v, n, m)


def score_all_heads(
    entities: EntityTable,
    relations: RelationTable,
    r: int,
    t: int,
    rotated_entities: DenseMatrix | None = None,
) -> DenseMatrix:
    """Scores of (e, r, t) for every entity e (head-side pass)."""
    _check_compatible(entities, relations)
    _check_index(t, entities.num_entities, "tail")
    if rotated_entities is None:
        rotated_entities = rotate_all(entities, relations, r)
    distances = _distances(entities.matrices[t], rotated_entities)
    scores = -distances + entities.biases + entities.biases[t]
    ensure_finite(scores, "head scores")
    return scores


def _chunk_terms(
    entities: EntityTable,
    relations: RelationTable,
    heads: IntArray,
    rels: IntArray,
    candidates: IntArray,
    wrt: GradientTarget,
) -> _ChunkTerms:
    """Loss and per-term gradients for a chunk of triples."""
    blocks = relations.blocks_for(rels)
    head_mats = entities.matrices[heads]
    rotated = block_apply_batch(blocks, head_mats)
    cand_mats = entities.matrices[candidates]
    diff = rotated[:, None] - cand_mats
    flat = diff.reshape(diff.shape[0], diff.shape[1], -1)
    delta = np.sqrt(np.sum(flat * flat, axis=-1))
    scores = -delta + entities.biases[heads][:, None] + entities.biases[candidates]

    labels = np.ones_like(scores)
    labels[:, 0] = -1.0
    margins = labels * scores
    loss = float(np.sum(np.logaddexp(0.0, margins)))
    # dL/ds for every sampled tail.
    weights = labels * expit(margins)

    safe = delta >= DISTANCE_EPSILON
    inv_delta = np.divide(1.0, delta, out=np.zeros_like(delta), where=safe)
    # dL/dD = w * ds/dD = -w D / delta
    grad_diff = -(weights * inv_delta)[..., None, None] * diff
    grad_rotated = grad_diff.sum(axis=1)

    terms = _ChunkTerms(loss=loss, score_weights=weights)
    if wrt in ("entities", "both"):
        terms.grad_heads = block_apply_transpose_batch(blocks, grad_rotated)
        terms.grad_candidates = -grad_diff
    if wrt in ("relations", "both"):
        num_blocks, d = blocks.shape[1], blocks.shape[2]
        g_bands = grad_rotated.reshape(grad_rotated.shape[0], num_blocks, d, -1)
        h_bands = head_mats.reshape(head_mats.shape[0], num_blocks, d, -1)
        terms.grad_blocks = np.einsum("bkim,bkjm->bkij", g_bands, h_bands)
    return terms


def loss_and_grads(
    entities: EntityTable,
    relations: RelationTable,
    batch: Batch,
    wrt: GradientTarget = "both",
    chunk_size: int = 64,
    threads: int = 1,
) -> GradientBundle:
    """Summed loss of a batch and its analytic gradients.

    Relation gradients are ambient (Euclidean) gradients with respect to the
    blocks used in the forward pass. For the gram_schmidt parameterization
    these are gradients with respect to the orthonormalized blocks; chaining
    through the orthonormalization is the optimizer's job.
    """
    _check_compatible(entities, relations)
    heads = np.asarray(batch.heads, dtype=np.int64)
    rels = np.asarray(batch.relations, dtype=np.int64)
    candidates = batch.candidates()
    if heads.size == 0:
        return _empty_bundle(entities, relations)

    starts = list(range(0, heads.size, max(1, chunk_size)))
    jobs = (
        delayed(_chunk_terms)(
            entities,
            relations,
            heads[s : s + chunk_size],
            rels[s : s + chunk_size],
            candidates[s : s + chunk_size],
            wrt,
        )
        for s in starts
    )
    if threads > 1 and len(starts) > 1:
        results = Parallel(n_jobs=threads, prefer="threads")(jobs)
    else:
        results = [fn(*args, **kwargs) for fn, args, kwargs in jobs]

    # Ordered reduction: chunk results are concatenated in batch order.
    loss = float(sum(r.loss for r in results))
    if not np.isfinite(loss):
        raise NumericError("batch loss is not finite")

    n, m = entities.n, entities.m
    entity_ids = np.empty(0, dtype=np.int64)
    entity_grads = np.empty((0, n, m))
    bias_grads = np.empty(0)
    if wrt in ("entities", "both"):
        grad_heads = np.concatenate([r.grad_heads for r in results])
        grad_cands = np.concatenate([r.grad_candidates for r in results])
        weights = np.concatenate([r.score_weights for r in results])
        ids = np.concatenate([heads, candidates.reshape(-1)])
        contributions = np.concatenate([grad_heads, grad_cands.reshape(-1, n, m)])
        # ds/db_h = ds/db_t = 1
        bias_contributions = np.concatenate([weights.sum(axis=1), weights.reshape(-1)])
        entity_ids, inverse = np.unique(ids, return_inverse=True)
        entity_grads = np.zeros((entity_ids.size, n, m))
        bias_grads = np.zeros(entity_ids.size)
        np.add.at(entity_grads, inverse, contributions)
        np.add.at(bias_grads, inverse, bias_contributions)

    relation_ids = np.empty(0, dtype=np.int64)
    relation_grads = np.empty(
        (0, relations.num_blocks, relations.block_dim, relations.block_dim)
    )
    if wrt in ("relations", "both"):
        grad_blocks = np.concatenate([r.grad_blocks for r in results])
        relation_ids, inverse = np.unique(rels, return_inverse=True)
        relation_grads = np.zeros((relation_ids.size,) + grad_blocks.shape[1:])
        np.add.at(relation_grads, inverse, grad_blocks)

    return GradientBundle(
        loss=loss,
        entity_ids=entity_ids,
        entity_grads=entity_grads,
        bias_grads=bias_grads,
        relation_ids=relation_ids,
        relation_grads=relation_grads,
    )


def _empty_bundle(entities: EntityTable, relations: RelationTable) -> GradientBundle:
    d = relations.block_dim
    return GradientBundle(
        loss=0.0,
        entity_ids=np.empty(0, dtype=np.int64),
        entity_grads=np.empty((0, entities.n, entities.m)),
        bias_grads=np.empty(0),
        relation_ids=np.empty(0, dtype=np.int64),
        relation_grads=np.empty((0, relations.num_blocks, d, d)),
    )


def batch_loss(
    entities: EntityTable, relations: RelationTable, batch: Batch
) -> float:
    """Loss only; used for diagnostics and gradient checks."""
    return loss_and_grads(entities, relations, batch, wrt="relations").loss


def init_params(
    config: ModelConfig, vocab: Vocabulary, rng: Seed = None
) -> tuple[EntityTable, RelationTable]:
    """Random initial parameters.

    Entity matrices are i.i.d. N(0, 1/n) (standard deviation 1/sqrt(n)) and
    biases are zero. Relation blocks are near-identity rotations with skew std
    ``relation_init_std``, or uniform on SO(d) when ``relation_init`` is
    ``"haar"``. Updates never leave SO(d), so a block that should end at -I
    has to be reachable from its starting angle.
    """
    if config.n % config.d != 0:
        raise ConfigError(f"n={config.n} is not divisible by d={config.d}")
    generator = as_generator(config.seed if rng is None else rng)
    num_entities = vocab.num_entities
    matrices = generator.normal(
        0.0, 1.0 / np.sqrt(config.n), size=(num_entities, config.n, config.m)
    )
    biases = np.zeros(num_entities)
    num_blocks = config.n // config.d
    count = vocab.num_relations * num_blocks
    if config.relation_init == "haar":
        blocks = haar_orthogonal_blocks(count, config.d, generator)
    else:
        blocks = random_orthogonal_blocks(
            count, config.d, generator, config.relation_init_std
        )
    blocks = blocks.reshape(vocab.num_relations, num_blocks, config.d, config.d)
    return (
        EntityTable(matrices, biases),
        RelationTable(blocks, config.relation_optimizer),
    )


def parameter_counts(config: ModelConfig, vocab: Vocabulary) -> tuple[int, int]:
    """(entity parameters in total, free relation parameters per relation).

    Each d x d orthogonal block has d(d-1)/2 degrees of freedom, so a relation
    has (d-1)n/2. Entities carry n*m matrix entries plus one bias each.
    """
    entity_params = vocab.num_entities * (config.n * config.m + 1)
    relation_params = (config.d - 1) * config.n // 2
    return entity_params, relation_params


def reference_rotation_parameters(config: ModelConfig) -> int:
    """Relation parameters of a 2x2-rotation model at entity dimension n*m."""
    return config.n * config.m // 2


def relation_names_to_ids(vocab: Vocabulary, names: Sequence[str]) -> list[int]:
    return [vocab.relation_id(name) for name in names]
