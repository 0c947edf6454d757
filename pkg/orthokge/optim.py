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
"""Update rules for relation blocks and entity parameters.

Relations on the orthogonal manifold use an adaptive-moment method whose step
is retracted with the exponential map; entity matrices and biases use Adagrad.
Training alternates a relation phase and an entity phase on every mini-batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Protocol

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel

from orthokge.exceptions import NumericError, PreconditionError, ShapeError
from orthokge.kg_data import Batch
from orthokge.logging_helper import get_logger
from orthokge.manifold import exp_map_blocks, gram_schmidt_backward, project_tangent
from orthokge.model import (
    EntityTable,
    GradientBundle,
    RelationTable,
    loss_and_grads,
)
from orthokge.tensor_core import (
    ORTHOGONALITY_TOLERANCE,
    DenseMatrix,
    as_square_stack,
    max_orthogonality_residual,
    stabilize,
)

logger = get_logger("Optim")

OptimizerArrays = dict[str, DenseMatrix]


@dataclass
class RiemannianAdamState:
    """Moments for one point on O(d), or for a stack of blocks stepped together."""

    m: DenseMatrix
    v: DenseMatrix
    step_count: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    lr: float = 0.02
    stabilize_every: int = 1000


@dataclass
class AdagradState:
    accum: DenseMatrix
    lr: float = 0.2
    epsilon: float = 1e-10

    @classmethod
    def zeros(
        cls, shape: tuple[int, ...], lr: float, epsilon: float = 1e-10
    ) -> AdagradState:
        return cls(accum=np.zeros(shape), lr=lr, epsilon=epsilon)


def riemannian_adam_step(
    state: RiemannianAdamState, x: npt.ArrayLike, euclid_grad: npt.ArrayLike
) -> DenseMatrix:
    """One Riemannian Adam update; returns the new point and updates ``state``."""
    base = as_square_stack(x, "relation block")
    grad = np.asarray(euclid_grad, dtype=np.float64)
    if grad.shape != base.shape or state.m.shape != base.shape:
        raise ShapeError(
            "gradient and optimizer state must match the block shape",
            expected=base.shape,
            actual=(grad.shape, state.m.shape),
        )
    if not np.all(np.isfinite(grad)):
        raise NumericError("relation gradient contains NaN or Inf entries")
    residual = max_orthogonality_residual(base)
    if residual > ORTHOGONALITY_TOLERANCE:
        raise PreconditionError("relation block is not orthogonal", residual=residual)

    g = project_tangent(base, grad)
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * g
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * (g * g)
    state.step_count += 1
    m_hat = state.m / (1.0 - state.beta1**state.step_count)
    v_hat = state.v / (1.0 - state.beta2**state.step_count)
    direction = m_hat / (np.sqrt(v_hat) + state.epsilon)

    moved = exp_map_blocks(base, -state.lr * project_tangent(base, direction))
    if state.step_count % state.stabilize_every == 0:
        moved = stabilize(moved)
    # Keep the first moment in the tangent space of the new point.
    state.m = project_tangent(moved, state.m)
    return moved


def _adagrad_update(
    accum: DenseMatrix, theta: DenseMatrix, grad: DenseMatrix, lr: float, eps: float
) -> DenseMatrix:
    denom = np.sqrt(accum) + eps
    step = np.divide(grad, denom, out=np.zeros_like(grad), where=denom > 0)
    return theta - lr * step


def adagrad_step(
    state: AdagradState, theta: npt.ArrayLike, grad: npt.ArrayLike
) -> DenseMatrix:
    params = np.asarray(theta, dtype=np.float64)
    g = np.asarray(grad, dtype=np.float64)
    if g.shape != params.shape or state.accum.shape != params.shape:
        raise ShapeError(
            "gradient and accumulator must match the parameter shape",
            expected=params.shape,
            actual=(g.shape, state.accum.shape),
        )
    if not np.all(np.isfinite(g)):
        raise NumericError("entity gradient contains NaN or Inf entries")
    state.accum = state.accum + g * g
    return _adagrad_update(state.accum, params, g, state.lr, state.epsilon)


def adagrad_rows_step(
    state: AdagradState,
    table: DenseMatrix,
    rows: npt.NDArray[np.int64],
    grads: DenseMatrix,
) -> None:
    """Adagrad on the given rows of ``table`` in place; other rows are untouched.

    ``rows`` must not contain duplicates.
    """
    if grads.shape != (rows.shape[0],) + table.shape[1:]:
        raise ShapeError(
            "row gradients must match the selected rows",
            expected=(rows.shape[0],) + table.shape[1:],
            actual=grads.shape,
        )
    if not np.all(np.isfinite(grads)):
        raise NumericError("row gradients contain NaN or Inf entries")
    if rows.size == 0:
        return
    accum = state.accum[rows] + grads * grads
    state.accum[rows] = accum
    table[rows] = _adagrad_update(accum, table[rows], grads, state.lr, state.epsilon)


class RelationOptimizer(Protocol):
    def step(self, bundle: GradientBundle) -> None: ...

    def stabilize_all(self) -> None: ...

    def export_state(self) -> tuple[OptimizerArrays, list[int]]: ...

    def restore_state(
        self, arrays: OptimizerArrays, step_counts: list[int]
    ) -> None: ...


class RiemannianRelationOptimizer:
    """Riemannian Adam per relation; all blocks of a relation step together."""

    def __init__(
        self,
        relations: RelationTable,
        lr: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        stabilize_every: int = 1000,
    ) -> None:
        if relations.parameterization != "riemannian":
            raise ValueError("Riemannian optimizer needs riemannian relation weights")
        self.relations = relations
        shape = relations.weights.shape[1:]
        self.states = [
            RiemannianAdamState(
                m=np.zeros(shape),
                v=np.zeros(shape),
                beta1=beta1,
                beta2=beta2,
                epsilon=epsilon,
                lr=lr,
                stabilize_every=stabilize_every,
            )
            for _ in range(relations.num_relations)
        ]

    def step(self, bundle: GradientBundle) -> None:
        for rid, grad in zip(bundle.relation_ids.tolist(), bundle.relation_grads):
            self.relations.weights[rid] = riemannian_adam_step(
                self.states[rid], self.relations.weights[rid], grad
            )

    def stabilize_all(self) -> None:
        before = max_orthogonality_residual(self.relations.weights)
        self.relations.weights[...] = stabilize(self.relations.weights)
        logger.debug(f"Stabilized relation blocks (max residual was {before:.3e})")

    def export_state(self) -> tuple[OptimizerArrays, list[int]]:
        arrays = {
            "relation_adam_m": np.stack([s.m for s in self.states]),
            "relation_adam_v": np.stack([s.v for s in self.states]),
        }
        return arrays, [s.step_count for s in self.states]

    def restore_state(self, arrays: OptimizerArrays, step_counts: list[int]) -> None:
        if len(step_counts) != len(self.states):
            raise ShapeError(
                "step counts do not match the relation count",
                expected=len(self.states),
                actual=len(step_counts),
            )
        for i, state in enumerate(self.states):
            state.m = arrays["relation_adam_m"][i].copy()
            state.v = arrays["relation_adam_v"][i].copy()
            state.step_count = int(step_counts[i])


class GramSchmidtRelationOptimizer:
    """Adagrad on free relation matrices, chained through Gram-Schmidt."""

    def __init__(
        self, relations: RelationTable, lr: float, epsilon: float = 1e-10
    ) -> None:
        if relations.parameterization != "gram_schmidt":
            raise ValueError(
                "Gram-Schmidt optimizer needs gram_schmidt relation weights"
            )
        self.relations = relations
        self.state = AdagradState.zeros(relations.weights.shape, lr, epsilon)
        self.step_counts = [0] * relations.num_relations

    def step(self, bundle: GradientBundle) -> None:
        ids = bundle.relation_ids
        if ids.size == 0:
            return
        free_grads = gram_schmidt_backward(
            self.relations.weights[ids], bundle.relation_grads
        )
        adagrad_rows_step(self.state, self.relations.weights, ids, free_grads)
        for rid in ids.tolist():
            self.step_counts[rid] += 1

    def stabilize_all(self) -> None:
        # Blocks are orthonormalized on every forward pass.
        return None

    def export_state(self) -> tuple[OptimizerArrays, list[int]]:
        return {"relation_adagrad_accum": self.state.accum.copy()}, list(
            self.step_counts
        )

    def restore_state(self, arrays: OptimizerArrays, step_counts: list[int]) -> None:
        self.state.accum = arrays["relation_adagrad_accum"].copy()
        self.step_counts = [int(c) for c in step_counts]


class EntityOptimizer:
    def __init__(
        self, entities: EntityTable, lr: float, epsilon: float = 1e-10
    ) -> None:
        self.entities = entities
        self.matrix_state = AdagradState.zeros(entities.matrices.shape, lr, epsilon)
        self.bias_state = AdagradState.zeros(entities.biases.shape, lr, epsilon)

    def step(self, bundle: GradientBundle) -> None:
        adagrad_rows_step(
            self.matrix_state,
            self.entities.matrices,
            bundle.entity_ids,
            bundle.entity_grads,
        )
        adagrad_rows_step(
            self.bias_state, self.entities.biases, bundle.entity_ids, bundle.bias_grads
        )

    def export_state(self) -> OptimizerArrays:
        return {
            "entity_adagrad_accum": self.matrix_state.accum.copy(),
            "bias_adagrad_accum": self.bias_state.accum.copy(),
        }

    def restore_state(self, arrays: OptimizerArrays) -> None:
        self.matrix_state.accum = arrays["entity_adagrad_accum"].copy()
        self.bias_state.accum = arrays["bias_adagrad_accum"].copy()


class EpochResult(BaseModel):
    loss: float
    batch_losses: list[float]
    num_batches: int


@dataclass
class _EpochAccumulator:
    losses: list[float] = field(default_factory=list)

    def add(self, loss: float) -> None:
        if not np.isfinite(loss):
            raise NumericError(
                f"training loss became non-finite at batch {len(self.losses)}"
            )
        self.losses.append(loss)

    def result(self) -> EpochResult:
        return EpochResult(
            loss=float(sum(self.losses)),
            batch_losses=self.losses,
            num_batches=len(self.losses),
        )


def alternating_epoch(
    entities: EntityTable,
    relations: RelationTable,
    batches: Iterable[Batch],
    rel_opt: RelationOptimizer,
    ent_opt: EntityOptimizer,
    chunk_size: int = 64,
    threads: int = 1,
) -> EpochResult:
    """Relation phase then entity phase on every batch; parameters change in place.

    The recorded batch loss is the one seen by the relation phase.
    """
    accumulator = _EpochAccumulator()
    for batch in batches:
        relation_grads = loss_and_grads(
            entities, relations, batch, "relations", chunk_size, threads
        )
        accumulator.add(relation_grads.loss)
        rel_opt.step(relation_grads)

        entity_grads = loss_and_grads(
            entities, relations, batch, "entities", chunk_size, threads
        )
        ent_opt.step(entity_grads)
    return accumulator.result()


def joint_epoch(
    entities: EntityTable,
    relations: RelationTable,
    batches: Iterable[Batch],
    rel_opt: RelationOptimizer,
    ent_opt: EntityOptimizer,
    chunk_size: int = 64,
    threads: int = 1,
) -> EpochResult:
    """One gradient evaluation per batch, both parameter groups updated together."""
    accumulator = _EpochAccumulator()
    for batch in batches:
        bundle = loss_and_grads(entities, relations, batch, "both", chunk_size, threads)
        accumulator.add(bundle.loss)
        rel_opt.step(bundle)
        ent_opt.step(bundle)
    return accumulator.result()
