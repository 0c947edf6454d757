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
"""Residual matrices certifying relation patterns, and their histograms.

symmetry       R R - I
inversion      R1 R2 - I
composition    R2 R1 - R3   (R1 applied first)

All residuals are computed block by block and assembled into the full n x n
matrix for histogramming. Scalar summaries are Frobenius norms divided by
sqrt(n).
"""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Sequence

import numpy as np
import numpy.typing as npt
import polars as pl
import scipy.linalg
from pydantic import BaseModel, Field

from orthokge.exceptions import ProtocolError
from orthokge.logging_helper import get_logger
from orthokge.tensor_core import BlockDiagOrthogonal, DenseMatrix, check_same_layout

logger = get_logger("Patterns")

PatternKind = Literal[
    "relation",
    "symmetry",
    "antisymmetry",
    "inversion",
    "composition",
    "commutator-gap",
]

ARITY: dict[str, int] = {
    "relation": 1,
    "symmetry": 1,
    "antisymmetry": 1,
    "inversion": 2,
    "composition": 3,
    "commutator-gap": 3,
}

DEFAULT_BINS = 100


class ResidualReport(BaseModel):
    kind: PatternKind = "relation"
    relations: list[str] = Field(default_factory=list)
    residual_norm: float
    swapped_norm: float | None = None
    bin_lower: list[float]
    bin_upper: list[float]
    counts: list[int]

    @property
    def total(self) -> int:
        return sum(self.counts)


class ReportSummary(BaseModel):
    kind: PatternKind
    relations: list[str]
    residual_norm: float
    swapped_norm: float | None = None


def _assemble(blocks: DenseMatrix) -> DenseMatrix:
    return np.asarray(scipy.linalg.block_diag(*blocks), dtype=np.float64)


def normalized_norm(residual: DenseMatrix) -> float:
    """||M||_F / sqrt(n) for an n x n matrix."""
    return float(np.linalg.norm(residual) / np.sqrt(residual.shape[0]))


def symmetry_residual(r: BlockDiagOrthogonal) -> DenseMatrix:
    identity = np.eye(r.block_dim)
    return _assemble(r.blocks @ r.blocks - identity)


def inversion_residual(
    r1: BlockDiagOrthogonal, r2: BlockDiagOrthogonal
) -> DenseMatrix:
    check_same_layout(r1, r2)
    return _assemble(r1.blocks @ r2.blocks - np.eye(r1.block_dim))


def composition_residual(
    r1: BlockDiagOrthogonal, r2: BlockDiagOrthogonal, r3: BlockDiagOrthogonal
) -> DenseMatrix:
    check_same_layout(r1, r2, r3)
    return _assemble(r2.blocks @ r1.blocks - r3.blocks)


def commutator_gap(
    r1: BlockDiagOrthogonal, r2: BlockDiagOrthogonal, r3: BlockDiagOrthogonal
) -> tuple[float, float]:
    """Normalized composition residual in both application orders."""
    check_same_layout(r1, r2, r3)
    scale = np.sqrt(r1.dim)
    forward = np.linalg.norm(r2.blocks @ r1.blocks - r3.blocks)
    swapped = np.linalg.norm(r1.blocks @ r2.blocks - r3.blocks)
    return float(forward / scale), float(swapped / scale)


def histogram(
    entries: npt.ArrayLike, num_bins: int = DEFAULT_BINS
) -> ResidualReport:
    """Equal-width histogram of all entries over [min, max].

    A constant input produces a single bin holding every entry.
    """
    if num_bins < 1:
        raise ValueError(f"num_bins must be at least 1, got {num_bins}")
    values = np.asarray(entries, dtype=np.float64)
    if values.size == 0:
        raise ProtocolError("cannot build a histogram of an empty input")
    flat = values.ravel()
    low, high = float(flat.min()), float(flat.max())
    if low == high:
        counts = np.array([flat.size])
        edges = np.array([low, high])
    else:
        counts, edges = np.histogram(flat, bins=num_bins, range=(low, high))
    norm_rows = values.shape[0] if values.ndim == 2 else flat.size
    return ResidualReport(
        residual_norm=float(np.linalg.norm(flat) / np.sqrt(norm_rows)),
        bin_lower=edges[:-1].tolist(),
        bin_upper=edges[1:].tolist(),
        counts=[int(c) for c in counts],
    )


def analyze(
    kind: PatternKind,
    relations: Sequence[BlockDiagOrthogonal],
    names: Sequence[str],
    num_bins: int = DEFAULT_BINS,
) -> ResidualReport:
    """Residual report for ``kind`` over the given relations (in argument order)."""
    if kind not in ARITY:
        raise ProtocolError(f"unknown pattern kind {kind!r}")
    if len(relations) != ARITY[kind] or len(names) != len(relations):
        raise ProtocolError(
            f"{kind} takes {ARITY[kind]} relation(s), got {len(relations)}"
        )
    swapped: float | None = None
    if kind == "relation":
        matrix = relations[0].assemble()
    elif kind in ("symmetry", "antisymmetry"):
        matrix = symmetry_residual(relations[0])
    elif kind == "inversion":
        matrix = inversion_residual(relations[0], relations[1])
    else:
        matrix = composition_residual(relations[0], relations[1], relations[2])
        if kind == "commutator-gap":
            _, swapped = commutator_gap(relations[0], relations[1], relations[2])

    report = histogram(matrix, num_bins).model_copy(
        update={
            "kind": kind,
            "relations": list(names),
            "residual_norm": normalized_norm(matrix),
            "swapped_norm": swapped,
        }
    )
    logger.info(
        f"{kind} residual for {', '.join(names)}: {report.residual_norm:.6e}"
        + ("" if swapped is None else f" (swapped order {swapped:.6e})")
    )
    return report


def report_stem(report: ResidualReport) -> str:
    safe = [
        "".join(c if c.isalnum() or c in "-_" else "_" for c in name).strip("_")
        for name in report.relations
    ]
    return "__".join([report.kind, *safe])


def write_report(
    report: ResidualReport, out_dir: str | Path, stem: str | None = None
) -> tuple[Path, Path]:
    """Write ``<stem>.csv`` (bin_lower,bin_upper,count) and ``<stem>.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    stem = stem or report_stem(report)
    csv_path = out / f"{stem}.csv"
    json_path = out / f"{stem}.json"
    pl.DataFrame(
        {
            "bin_lower": report.bin_lower,
            "bin_upper": report.bin_upper,
            "count": report.counts,
        },
        schema={"bin_lower": pl.Float64, "bin_upper": pl.Float64, "count": pl.Int64},
    ).write_csv(csv_path)
    summary = ReportSummary(
        kind=report.kind,
        relations=report.relations,
        residual_norm=report.residual_norm,
        swapped_norm=report.swapped_norm,
    )
    json_path.write_text(
        summary.model_dump_json(indent=2, exclude_none=True), encoding="utf-8"
    )
    return csv_path, json_path
