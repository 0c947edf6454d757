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
"""Dense float64 matrix helpers, block-diagonal application and expm.

Every function here is pure. Stacks of square blocks are handled as arrays
of shape ``(..., d, d)`` so a whole relation (or a whole relation table) is
processed in one vectorized call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Any

import numpy as np
import numpy.typing as npt
import scipy.linalg

from orthokge.exceptions import NumericError, ShapeError

DenseMatrix = npt.NDArray[np.float64]

# Blocks drifting further than this from O(d) get re-orthogonalized.
STABILIZE_TOLERANCE = 1e-8
ORTHOGONALITY_TOLERANCE = 1e-6


def ensure_finite(a: npt.NDArray[Any], name: str = "array") -> None:
    if not np.all(np.isfinite(a)):
        raise NumericError(f"{name} contains NaN or Inf entries")


def as_dense(a: npt.ArrayLike, name: str = "matrix") -> DenseMatrix:
    """Convert to a C-contiguous 2-D float64 array with finite entries."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name} must be 2-D", expected=2, actual=arr.ndim)
    ensure_finite(arr, name)
    return arr


def as_square_stack(a: npt.ArrayLike, name: str) -> DenseMatrix:
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim < 2 or arr.shape[-1] != arr.shape[-2]:
        raise ShapeError(
            f"{name} must be square", expected="(..., d, d)", actual=arr.shape
        )
    return arr


def identity_like(a: DenseMatrix) -> DenseMatrix:
    d = a.shape[-1]
    return np.broadcast_to(np.eye(d), a.shape).copy()


def skew(a: DenseMatrix) -> DenseMatrix:
    return 0.5 * (a - np.swapaxes(a, -1, -2))


def sym(a: DenseMatrix) -> DenseMatrix:
    return 0.5 * (a + np.swapaxes(a, -1, -2))


def matmul(a: npt.ArrayLike, b: npt.ArrayLike) -> DenseMatrix:
    left = as_dense(a, "left operand")
    right = as_dense(b, "right operand")
    if left.shape[1] != right.shape[0]:
        raise ShapeError(
            "inner dimensions differ",
            expected=left.shape[1],
            actual=right.shape[0],
        )
    result: DenseMatrix = left @ right
    ensure_finite(result, "matrix product")
    return result


def expm(a: npt.ArrayLike) -> DenseMatrix:
    """Matrix exponential of a square matrix or a stack of square matrices.

    Uses scipy's scaling-and-squaring Pade approximant. Callers on the
    orthogonal manifold pass skew-symmetric input, for which the result is a
    rotation.
    """
    arr = as_square_stack(a, "expm input")
    ensure_finite(arr, "expm input")
    if arr.shape[-1] == 0:
        return arr.copy()
    try:
        result = np.asarray(scipy.linalg.expm(arr), dtype=np.float64)
    except (ValueError, np.linalg.LinAlgError, OverflowError) as e:
        raise NumericError(f"matrix exponential failed: {e}") from e
    if not np.all(np.isfinite(result)):
        raise NumericError("matrix exponential did not converge to finite values")
    return result


def orthogonality_residual(x: npt.ArrayLike) -> npt.NDArray[np.float64]:
    """Frobenius norm of X X^T - I for every block of a stack."""
    arr = as_square_stack(x, "block")
    gram = arr @ np.swapaxes(arr, -1, -2)
    gram -= np.eye(arr.shape[-1])
    return np.asarray(np.linalg.norm(gram, axis=(-2, -1)), dtype=np.float64)


def max_orthogonality_residual(x: npt.ArrayLike) -> float:
    residual = orthogonality_residual(x)
    return float(np.max(residual)) if residual.size else 0.0


def stabilize(blocks: npt.ArrayLike, tol: float = STABILIZE_TOLERANCE) -> DenseMatrix:
    """Snap drifting blocks back onto O(d).

    Blocks whose residual exceeds ``tol`` are replaced by the orthogonal QR
    factor, with column signs chosen so that the triangular factor has a
    positive diagonal. All other blocks are returned bit-for-bit.
    """
    arr = np.array(as_square_stack(blocks, "blocks"), dtype=np.float64, copy=True)
    if arr.size == 0:
        return arr
    residual = orthogonality_residual(arr)
    drifted = residual > tol
    if not np.any(drifted):
        return arr
    q, r = np.linalg.qr(arr[drifted])
    signs = np.sign(np.diagonal(r, axis1=-2, axis2=-1))
    signs[signs == 0] = 1.0
    arr[drifted] = q * signs[..., None, :]
    return arr


@dataclass(frozen=True)
class BlockDiagOrthogonal:
    """Relation matrix diag(X_1, ..., X_{n/d}) stored as its blocks only."""

    blocks: DenseMatrix

    def __post_init__(self) -> None:
        arr = np.array(self.blocks, dtype=np.float64, order="C", copy=True)
        if arr.ndim != 3 or arr.shape[1] != arr.shape[2] or arr.shape[0] < 1:
            raise ShapeError(
                "blocks must have shape (num_blocks, d, d)",
                expected="(num_blocks, d, d)",
                actual=arr.shape,
            )
        ensure_finite(arr, "relation blocks")
        arr.setflags(write=False)
        object.__setattr__(self, "blocks", arr)

    @classmethod
    def identity(cls, n: int, d: int) -> BlockDiagOrthogonal:
        if n % d:
            raise ShapeError("n must be divisible by d", expected=0, actual=n % d)
        return cls(np.broadcast_to(np.eye(d), (n // d, d, d)).copy())

    @property
    def block_dim(self) -> int:
        return int(self.blocks.shape[1])

    @property
    def num_blocks(self) -> int:
        return int(self.blocks.shape[0])

    @property
    def dim(self) -> int:
        return self.block_dim * self.num_blocks

    def assemble(self) -> DenseMatrix:
        """Materialize the full n x n matrix; meant for checks and small n."""
        return np.asarray(scipy.linalg.block_diag(*self.blocks), dtype=np.float64)

    def residual(self) -> float:
        return max_orthogonality_residual(self.blocks)

    def transpose(self) -> BlockDiagOrthogonal:
        return BlockDiagOrthogonal(np.swapaxes(self.blocks, -1, -2).copy())

    def compose(self, other: BlockDiagOrthogonal) -> BlockDiagOrthogonal:
        """Block-wise product self . other (other applied first)."""
        check_same_layout(self, other)
        return BlockDiagOrthogonal(self.blocks @ other.blocks)

    def stabilized(self, tol: float = STABILIZE_TOLERANCE) -> BlockDiagOrthogonal:
        return BlockDiagOrthogonal(stabilize(self.blocks, tol))


def check_same_layout(*relations: BlockDiagOrthogonal) -> None:
    first = relations[0]
    for other in relations[1:]:
        if other.blocks.shape != first.blocks.shape:
            raise ShapeError(
                "relation matrices have different block layouts",
                expected=first.blocks.shape,
                actual=other.blocks.shape,
            )


def block_apply(r: BlockDiagOrthogonal, h: npt.ArrayLike) -> DenseMatrix:
    """Multiply the block-diagonal matrix of ``r`` with ``h`` in O(n d m)."""
    arr = np.asarray(h, dtype=np.float64)
    if arr.ndim == 1:
        arr = arr[:, None]
    if arr.ndim != 2 or arr.shape[0] != r.dim:
        raise ShapeError(
            "entity rows must match the relation dimension",
            expected=r.dim,
            actual=arr.shape[0] if arr.ndim else arr.shape,
        )
    bands = arr.reshape(r.num_blocks, r.block_dim, arr.shape[1])
    result = np.einsum("kij,kjm->kim", r.blocks, bands).reshape(arr.shape)
    ensure_finite(result, "block product")
    return np.ascontiguousarray(result)


def block_apply_batch(blocks: DenseMatrix, h: DenseMatrix) -> DenseMatrix:
    """Apply per-row relation blocks ``(B, k, d, d)`` to entities ``(B, n, m)``."""
    batch, num_blocks, d, _ = blocks.shape
    bands = h.reshape(batch, num_blocks, d, h.shape[-1])
    out = np.einsum("bkij,bkjm->bkim", blocks, bands)
    return out.reshape(h.shape)


def block_apply_transpose_batch(blocks: DenseMatrix, g: DenseMatrix) -> DenseMatrix:
    """Apply the transposed per-row blocks ``(B, k, d, d)`` to ``(B, n, m)``."""
    batch, num_blocks, d, _ = blocks.shape
    bands = g.reshape(batch, num_blocks, d, g.shape[-1])
    out = np.einsum("bkji,bkjm->bkim", blocks, bands)
    return out.reshape(g.shape)
