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
import json
import math
from pathlib import Path

import numpy as np
import polars as pl
import pytest
from scipy.stats import special_ortho_group

from orthokge.exceptions import ProtocolError, ShapeError
from orthokge.manifold import random_orthogonal_blocks
from orthokge.patterns import (
    analyze,
    commutator_gap,
    composition_residual,
    histogram,
    inversion_residual,
    normalized_norm,
    report_stem,
    symmetry_residual,
    write_report,
)
from orthokge.tensor_core import BlockDiagOrthogonal

QUARTER_TURN = np.array([[0.0, -1.0], [1.0, 0.0]])


def random_relation(
    n: int, d: int, rng: np.random.Generator
) -> BlockDiagOrthogonal:
    return BlockDiagOrthogonal(random_orthogonal_blocks(n // d, d, rng, std=1.0))


def test_symmetry_residual_examples() -> None:
    identity = BlockDiagOrthogonal.identity(4, 2)
    assert np.array_equal(symmetry_residual(identity), np.zeros((4, 4)))
    half_turn = BlockDiagOrthogonal(np.stack([-np.eye(2), -np.eye(2)]))
    assert np.array_equal(symmetry_residual(half_turn), np.zeros((4, 4)))
    quarter = BlockDiagOrthogonal(QUARTER_TURN[None])
    np.testing.assert_array_equal(symmetry_residual(quarter), -2.0 * np.eye(2))


def test_symmetry_residual_vanishes_only_for_involutions(
    rng: np.random.Generator,
) -> None:
    reflection = np.diag([1.0, -1.0, 1.0])
    involution = BlockDiagOrthogonal(np.stack([reflection, -np.eye(3)]))
    assert normalized_norm(symmetry_residual(involution)) == 0.0
    generic = random_relation(6, 3, rng)
    assert normalized_norm(symmetry_residual(generic)) > 1e-3


def test_inversion_residual_examples(rng: np.random.Generator) -> None:
    r1 = random_relation(6, 3, rng)
    np.testing.assert_allclose(
        inversion_residual(r1, r1.transpose()), 0.0, rtol=0, atol=1e-12
    )
    identity = BlockDiagOrthogonal.identity(6, 3)
    assert np.array_equal(inversion_residual(identity, identity), np.zeros((6, 6)))


def test_inversion_residual_matches_dense_oracle(rng: np.random.Generator) -> None:
    for _ in range(5):
        r1, r2 = random_relation(12, 3, rng), random_relation(12, 3, rng)
        oracle = r1.assemble() @ r2.assemble() - np.eye(12)
        np.testing.assert_allclose(
            inversion_residual(r1, r2), oracle, rtol=0, atol=1e-12
        )


def test_composition_residual_examples(rng: np.random.Generator) -> None:
    identity = BlockDiagOrthogonal.identity(4, 2)
    assert np.array_equal(
        composition_residual(identity, identity, identity), np.zeros((4, 4))
    )
    r1, r2 = random_relation(6, 3, rng), random_relation(6, 3, rng)
    np.testing.assert_allclose(
        composition_residual(r1, r2, r2.compose(r1)), 0.0, rtol=0, atol=1e-12
    )


def test_planar_relations_commute(rng: np.random.Generator) -> None:
    r1, r2 = random_relation(8, 2, rng), random_relation(8, 2, rng)
    swapped = composition_residual(r1, r2, r1.compose(r2))
    assert np.linalg.norm(swapped) < 1e-12


def test_layout_mismatch() -> None:
    with pytest.raises(ShapeError):
        inversion_residual(
            BlockDiagOrthogonal.identity(6, 2), BlockDiagOrthogonal.identity(6, 3)
        )


def test_commutator_gap_examples(rng: np.random.Generator) -> None:
    r1, r2 = random_relation(6, 2, rng), random_relation(6, 2, rng)
    forward, swapped = commutator_gap(r1, r2, r2.compose(r1))
    assert forward == pytest.approx(swapped, abs=1e-12)

    r1, r2 = random_relation(6, 3, rng), random_relation(6, 3, rng)
    forward, swapped = commutator_gap(r1, r2, r2.compose(r1))
    assert forward < 1e-12
    assert swapped > 0.1

    forward, swapped = commutator_gap(r1, r1, r2)
    assert forward == swapped


def test_commutativity_dichotomy() -> None:
    gen = np.random.default_rng(2024)
    planar = 0
    spatial = 0
    for _ in range(100):
        a, b = (
            BlockDiagOrthogonal(random_orthogonal_blocks(1, 2, gen, std=3.0))
            for _ in range(2)
        )
        gap = np.linalg.norm(a.compose(b).blocks - b.compose(a).blocks)
        planar += gap < 1e-10
        x, y = special_ortho_group.rvs(3, size=2, random_state=gen)
        spatial += np.linalg.norm(x @ y - y @ x) > 0.01
    assert planar == 100
    assert spatial >= 95


@pytest.mark.parametrize(
    "entries, num_bins, counts",
    [([0.0, 0.0, 0.0], 5, [3]), ([0.0, 1.0, 2.0, 3.0], 2, [2, 2])],
)
def test_histogram_examples(
    entries: list[float], num_bins: int, counts: list[int]
) -> None:
    assert histogram(entries, num_bins).counts == counts


def test_histogram_conserves_entries(rng: np.random.Generator) -> None:
    report = histogram(rng.normal(size=10_000), 50)
    assert report.total == 10_000
    assert len(report.counts) == 50
    assert report.bin_lower[1:] == report.bin_upper[:-1]


def test_histogram_errors() -> None:
    with pytest.raises(ProtocolError):
        histogram([], 10)
    with pytest.raises(ValueError):
        histogram([1.0], 0)


def test_analyze_reports_normalized_norm() -> None:
    quarter = BlockDiagOrthogonal(np.stack([QUARTER_TURN] * 2))
    report = analyze("symmetry", [quarter], ["turns"], num_bins=4)
    # R R - I = -2 I on a 4 x 4 matrix: ||.||_F = 4, divided by sqrt(4).
    assert report.residual_norm == pytest.approx(2.0)
    assert report.total == 16
    assert report.swapped_norm is None
    assert report.relations == ["turns"]


def test_analyze_commutator_gap_reports_both_orders(
    rng: np.random.Generator,
) -> None:
    r1, r2 = random_relation(6, 3, rng), random_relation(6, 3, rng)
    report = analyze("commutator-gap", [r1, r2, r2.compose(r1)], ["a", "b", "c"])
    assert report.residual_norm < 1e-12
    assert report.swapped_norm is not None and report.swapped_norm > 0.1


def test_analyze_relation_histograms_the_matrix(rng: np.random.Generator) -> None:
    r = random_relation(4, 2, rng)
    report = analyze("relation", [r], ["r"], num_bins=10)
    assert report.residual_norm == pytest.approx(1.0)
    assert report.total == 16


def test_analyze_checks_arity() -> None:
    identity = BlockDiagOrthogonal.identity(4, 2)
    with pytest.raises(ProtocolError):
        analyze("inversion", [identity], ["r"])
    with pytest.raises(ProtocolError):
        analyze("composition", [identity] * 3, ["a", "b"])
    with pytest.raises(ProtocolError):
        analyze("shear", [identity], ["r"])  # type: ignore[arg-type]


def test_write_report(tmp_path: Path) -> None:
    quarter = BlockDiagOrthogonal(QUARTER_TURN[None])
    report = analyze("symmetry", [quarter], ["part of/whole"], num_bins=3)
    assert report_stem(report) == "symmetry__part_of_whole"
    csv_path, json_path = write_report(report, tmp_path / "analysis")
    frame = pl.read_csv(csv_path)
    assert frame.columns == ["bin_lower", "bin_upper", "count"]
    assert frame["count"].sum() == 4
    summary = json.loads(json_path.read_text())
    assert summary["kind"] == "symmetry"
    assert summary["residual_norm"] == pytest.approx(math.sqrt(8) / math.sqrt(2))
    assert "swapped_norm" not in summary
