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
"""Geometry of the orthogonal group O(d).

The tangent space at X is {xi : xi X^T + X xi^T = 0}. The Riemannian gradient
of f at X is the projection X skew(X^T grad f), and the retraction used for
every update is the exponential map Exp_X(xi) = X expm(X^T xi).

The Gram-Schmidt functions implement the baseline parameterization: a free
matrix is orthonormalized on every forward pass and gradients flow back through
the exact modified Gram-Schmidt computation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import numpy.typing as npt
from scipy.stats import special_ortho_group

from orthokge.exceptions import DegeneracyError, PreconditionError, ShapeError
from orthokge.tensor_core import (
    ORTHOGONALITY_TOLERANCE,
    DenseMatrix,
    as_square_stack,
    ensure_finite,
    expm,
    max_orthogonality_residual,
    skew,
)

TANGENT_TOLERANCE = 1e-6
DEGENERACY_TOLERANCE = 1e-10
INIT_SKEW_STD = 0.01

Seed = int | np.random.Generator | None


def as_generator(rng: Seed) -> np.random.Generator:
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def tangent_residual(at: DenseMatrix, direction: DenseMatrix) -> float:
    """Norm of xi X^T + X xi^T, scaled by max(1, |xi|)."""
    lhs = direction @ np.swapaxes(at, -1, -2) + at @ np.swapaxes(direction, -1, -2)
    scale = max(1.0, float(np.linalg.norm(direction)))
    return float(np.linalg.norm(lhs)) / scale


@dataclass(frozen=True)
class TangentVector:
    at: DenseMatrix
    dir: DenseMatrix

    def __post_init__(self) -> None:
        if self.at.shape != self.dir.shape:
            raise ShapeError(
                "tangent direction must match its base point",
                expected=self.at.shape,
                actual=self.dir.shape,
            )

    def residual(self) -> float:
        return tangent_residual(self.at, self.dir)

    def scaled(self, factor: float) -> TangentVector:
        return TangentVector(self.at, factor * self.dir)


def _check_orthogonal(x: DenseMatrix, name: str = "base point") -> None:
    residual = max_orthogonality_residual(x)
    if residual > ORTHOGONALITY_TOLERANCE:
        raise PreconditionError(f"{name} is not orthogonal", residual=residual)


def project_tangent(x: DenseMatrix, y: DenseMatrix) -> DenseMatrix:
    """X (X^T Y - Y^T X) / 2 for stacks of blocks, without checks."""
    return x @ skew(np.swapaxes(x, -1, -2) @ y)


def exp_map_blocks(x: DenseMatrix, xi: DenseMatrix) -> DenseMatrix:
    """X expm(X^T xi) for stacks of blocks, without checks.

    X^T xi is skew for tangent xi; it is re-skewed so the exponential is a
    rotation up to roundoff.
    """
    return x @ expm(skew(np.swapaxes(x, -1, -2) @ xi))


def tangent_project(x: npt.ArrayLike, y: npt.ArrayLike) -> TangentVector:
    base = as_square_stack(x, "base point")
    ambient = np.ascontiguousarray(y, dtype=np.float64)
    if base.shape != ambient.shape:
        raise ShapeError(
            "ambient direction must match the base point",
            expected=base.shape,
            actual=ambient.shape,
        )
    ensure_finite(base, "base point")
    ensure_finite(ambient, "ambient direction")
    _check_orthogonal(base)
    return TangentVector(base, project_tangent(base, ambient))


def exp_map(x: npt.ArrayLike, xi: TangentVector) -> DenseMatrix:
    base = as_square_stack(x, "base point")
    if base.shape != xi.at.shape or not np.allclose(
        base, xi.at, rtol=0.0, atol=1e-12
    ):
        raise PreconditionError("tangent vector is attached to a different point")
    ensure_finite(xi.dir, "tangent direction")
    residual = xi.residual()
    if residual > TANGENT_TOLERANCE:
        raise PreconditionError(
            "direction is not in the tangent space", residual=residual
        )
    return exp_map_blocks(base, xi.dir)


def retraction_step(
    x: npt.ArrayLike, euclid_grad: npt.ArrayLike, eta: float
) -> DenseMatrix:
    """One geodesic descent step X <- Exp_X(-eta Grad f(X))."""
    if not eta > 0:
        raise PreconditionError(f"learning rate must be positive, got {eta}")
    direction = tangent_project(x, euclid_grad)
    return exp_map(direction.at, direction.scaled(-eta))


def random_orthogonal(
    d: int, rng: Seed = None, std: float = INIT_SKEW_STD
) -> DenseMatrix:
    """Rotation expm(S) for a random skew S with N(0, std^2) entries."""
    return random_orthogonal_blocks(1, d, rng, std)[0]


def random_orthogonal_blocks(
    count: int, d: int, rng: Seed = None, std: float = INIT_SKEW_STD
) -> DenseMatrix:
    if d < 1 or count < 0:
        raise ShapeError("block size must be positive", expected=">= 1", actual=d)
    generator = as_generator(rng)
    upper = np.triu(generator.normal(0.0, std, size=(count, d, d)), k=1)
    return expm(upper - np.swapaxes(upper, -1, -2))


def haar_orthogonal_blocks(count: int, d: int, rng: Seed = None) -> DenseMatrix:
    """Blocks drawn uniformly from SO(d).

    For d = 2 the rotation angle is uniform on (-pi, pi], so about half of the
    blocks start closer to -I than to I.
    """
    if d < 1 or count < 0:
        raise ShapeError("block size must be positive", expected=">= 1", actual=d)
    if d == 1 or count == 0:
        return np.ones((count, d, d))
    generator = as_generator(rng)
    blocks = special_ortho_group.rvs(d, size=count, random_state=generator)
    return np.asarray(blocks, dtype=np.float64).reshape(count, d, d)


def _gram_schmidt_forward(
    a: DenseMatrix,
) -> tuple[DenseMatrix, list[list[DenseMatrix]], list[DenseMatrix]]:
    d = a.shape[-1]
    q = np.empty_like(a)
    history: list[list[DenseMatrix]] = []
    norms: list[DenseMatrix] = []
    for j in range(d):
        v = a[..., :, j].copy()
        steps = [v]
        for i in range(j):
            qi = q[..., :, i]
            v = v - np.sum(qi * v, axis=-1, keepdims=True) * qi
            steps.append(v)
        norm = np.linalg.norm(v, axis=-1)
        if np.any(norm <= DEGENERACY_TOLERANCE):
            raise DegeneracyError(
                f"column {j} is linearly dependent on the previous columns",
                column=j,
            )
        q[..., :, j] = v / norm[..., None]
        history.append(steps)
        norms.append(norm)
    return q, history, norms


def gram_schmidt(a: npt.ArrayLike) -> DenseMatrix:
    """Modified Gram-Schmidt on the columns of a square matrix (or stack)."""
    arr = as_square_stack(a, "Gram-Schmidt input")
    ensure_finite(arr, "Gram-Schmidt input")
    q, _, _ = _gram_schmidt_forward(arr)
    return q


def gram_schmidt_backward(a: npt.ArrayLike, d_q: npt.ArrayLike) -> DenseMatrix:
    """Reverse-mode derivative of gram_schmidt at ``a`` applied to ``d_q``."""
    arr = as_square_stack(a, "Gram-Schmidt input")
    grad_q = np.array(d_q, dtype=np.float64, copy=True)
    if grad_q.shape != arr.shape:
        raise ShapeError(
            "output gradient must match the input",
            expected=arr.shape,
            actual=grad_q.shape,
        )
    ensure_finite(arr, "Gram-Schmidt input")
    ensure_finite(grad_q, "output gradient")
    q, history, norms = _gram_schmidt_forward(arr)
    grad_a = np.zeros_like(arr)
    for j in reversed(range(arr.shape[-1])):
        qj = q[..., :, j]
        gj = grad_q[..., :, j]
        # q_j = v / |v|
        v_bar = (gj - qj * np.sum(qj * gj, axis=-1, keepdims=True)) / norms[j][
            ..., None
        ]
        for i in reversed(range(j)):
            qi = q[..., :, i]
            v_prev = history[j][i]
            coeff = np.sum(qi * v_prev, axis=-1, keepdims=True)
            coeff_bar = -np.sum(qi * v_bar, axis=-1, keepdims=True)
            grad_q[..., :, i] += coeff_bar * v_prev - coeff * v_bar
            v_bar = v_bar + coeff_bar * qi
        grad_a[..., :, j] = v_bar
    return grad_a
