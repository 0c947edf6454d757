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
from pathlib import Path

import numpy as np
import pytest

from orthokge.exceptions import (
    CompatibilityError,
    ParseError,
    ProtocolError,
    VocabularyError,
)
from orthokge.kg_data import (
    CACHE_MANIFEST_FILE,
    CACHE_PAYLOAD_FILE,
    Batch,
    TripleSet,
    Vocabulary,
    build_filter_index,
    iter_batches,
    load_dataset,
    load_split,
    read_cache,
    sample_negatives,
    write_cache,
)


def write(path: Path, text: str) -> Path:
    path.write_text(text, encoding="utf-8")
    return path


def test_load_split_two_line_file(tmp_path: Path) -> None:
    vocab = Vocabulary()
    triples = load_split(write(tmp_path / "train.txt", "a\tr\tb\nb\tr\ta\n"), vocab)
    assert len(triples) == 2
    assert (vocab.num_entities, vocab.num_relations) == (2, 1)
    assert triples.triples.tolist() == [[0, 0, 1], [1, 0, 0]]


def test_load_split_tolerates_crlf_and_missing_final_newline(tmp_path: Path) -> None:
    vocab = Vocabulary()
    triples = load_split(write(tmp_path / "train.txt", "a\tr\tb\r\nb\tr\tc"), vocab)
    assert triples.triples.tolist() == [[0, 0, 1], [1, 0, 2]]
    assert vocab.entity_names == ["a", "b", "c"]


@pytest.mark.parametrize(
    "text, line_number",
    [
        ("a\tr\tb\na\tr\n", 2),
        ("a\tr\tb\tc\n", 1),
        ("a\t\tb\n", 1),
        ("a\tr\tb\n\nb\tr\ta\n", 2),
        ("a r b\n", 1),
    ],
)
def test_load_split_malformed_lines(
    tmp_path: Path, text: str, line_number: int
) -> None:
    with pytest.raises(ParseError) as info:
        load_split(write(tmp_path / "train.txt", text), Vocabulary())
    assert info.value.line_number == line_number
    assert f"Line {line_number}" in str(info.value)


def test_load_split_duplicate_triple(tmp_path: Path) -> None:
    with pytest.raises(ParseError) as info:
        load_split(
            write(tmp_path / "train.txt", "a\tr\tb\nb\tr\ta\na\tr\tb\n"), Vocabulary()
        )
    assert info.value.line_number == 3
    assert "line 1" in str(info.value)


def test_load_split_unknown_name_outside_train(tmp_path: Path) -> None:
    vocab = Vocabulary(["apple", "banana"], ["likes"])
    with pytest.raises(VocabularyError) as info:
        load_split(
            write(tmp_path / "valid.txt", "apple\tlikes\tbananna\n"), vocab, "valid"
        )
    assert info.value.suggestions == ["banana"]
    assert "did you mean: banana" in str(info.value)
    assert vocab.num_entities == 2


def test_load_split_missing_file(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_split(tmp_path / "nope.txt", Vocabulary())


def test_vocabulary_is_bijective_and_serializable() -> None:
    vocab = Vocabulary(["x", "y", "x", "z"], ["p", "p"])
    assert vocab.entity_names == ["x", "y", "z"]
    assert [vocab.entity_id(name) for name in vocab.entity_names] == [0, 1, 2]
    assert vocab.relation_id("p") == 0
    assert Vocabulary.from_json(vocab.to_json()) == vocab
    with pytest.raises(VocabularyError):
        vocab.relation_id("q")


def test_vocabulary_file_with_duplicates_is_rejected() -> None:
    payload = json.dumps({"entities": ["a", "a"], "relations": ["r"]})
    with pytest.raises(CompatibilityError):
        Vocabulary.from_json(payload)
    with pytest.raises(CompatibilityError):
        Vocabulary.from_json('{"entities": []}')


def test_triple_set_is_read_only() -> None:
    source = np.array([[0, 0, 1]])
    triples = TripleSet("train", source)
    source[0, 0] = 5
    assert triples.heads.tolist() == [0]
    with pytest.raises(ValueError):
        triples.triples[0, 0] = 3


def test_load_dataset_builds_vocab_over_all_splits(toy_kg_dir: Path) -> None:
    dataset = load_dataset(toy_kg_dir)
    assert dataset.name == "toy"
    assert dataset.vocab.entity_names == ["a", "b", "c"]
    assert dataset.vocab.relation_names == ["r", "s"]
    stats = dataset.statistics()
    assert (stats.train, stats.valid, stats.test) == (3, 1, 1)
    assert dataset.valid.triples.tolist() == [[2, 0, 1]]


def test_load_dataset_entities_first_seen_in_test(tmp_path: Path) -> None:
    write(tmp_path / "train.txt", "a\tr\tb\n")
    write(tmp_path / "test.txt", "a\tr\tz\n")
    dataset = load_dataset(tmp_path, name="small")
    assert dataset.vocab.entity_names == ["a", "b", "z"]
    assert len(dataset.valid) == 0
    assert dataset.test.triples.tolist() == [[0, 0, 2]]


def test_load_dataset_needs_train(tmp_path: Path) -> None:
    with pytest.raises(FileNotFoundError):
        load_dataset(tmp_path)


def test_filter_index_toy() -> None:
    train = TripleSet("train", [[0, 0, 1], [0, 0, 2]])
    index = build_filter_index(train, TripleSet.empty("valid"), TripleSet.empty("test"))
    assert index.known_tails(0, 0) == {1, 2}
    assert index.known_heads(0, 2) == {0}
    assert index.known_tails(1, 0) == frozenset()


def test_filter_index_matches_brute_force(rng: np.random.Generator) -> None:
    splits = [
        TripleSet(name, rng.integers(0, [50, 4, 50], size=(size, 3)))
        for name, size in (("train", 150), ("valid", 30), ("test", 30))
    ]
    index = build_filter_index(*splits)
    everything = [tuple(row) for s in splits for row in s.triples.tolist()]
    for h, r, t in everything:
        assert index.known_tails(h, r) == {x[2] for x in everything if x[:2] == (h, r)}
        assert index.known_heads(r, t) == {x[0] for x in everything if x[1:] == (r, t)}


def test_sample_negatives_is_uniform() -> None:
    draws = sample_negatives((0, 0, 1), 1000, 2, np.random.default_rng(5))
    assert draws.shape == (1000,)
    assert 0.45 <= np.mean(draws == 0) <= 0.55


def test_sample_negatives_is_deterministic() -> None:
    first = sample_negatives((0, 0, 1), 300, 40, np.random.default_rng(9))
    second = sample_negatives((0, 0, 1), 300, 40, np.random.default_rng(9))
    assert np.array_equal(first, second)
    assert first.min() >= 0 and first.max() < 40


def test_sample_negatives_needs_two_entities() -> None:
    with pytest.raises(ProtocolError):
        sample_negatives((0, 0, 0), 5, 1, np.random.default_rng(0))


def test_iter_batches_covers_split_once(rng: np.random.Generator) -> None:
    triples = TripleSet("train", [[i, 0, (i + 1) % 7] for i in range(7)])
    batches = list(iter_batches(triples, 3, 4, 7, rng))
    assert [len(b) for b in batches] == [3, 3, 1]
    seen = sorted(h for b in batches for h in b.heads.tolist())
    assert seen == list(range(7))
    for batch in batches:
        assert batch.negatives.shape == (len(batch), 4)
        candidates = batch.candidates()
        assert np.array_equal(candidates[:, 0], batch.tails)


def test_iter_batches_is_deterministic() -> None:
    triples = TripleSet("train", [[i, 0, i] for i in range(10)])
    first = list(iter_batches(triples, 4, 2, 10, np.random.default_rng(1)))
    second = list(iter_batches(triples, 4, 2, 10, np.random.default_rng(1)))
    for a, b in zip(first, second):
        assert np.array_equal(a.heads, b.heads)
        assert np.array_equal(a.negatives, b.negatives)


def test_iter_batches_draws_negatives_with_sample_negatives() -> None:
    triples = TripleSet("train", [[i, 0, (i + 3) % 12] for i in range(12)])
    batches = list(iter_batches(triples, 5, 3, 12, np.random.default_rng(4)))

    expected = np.random.default_rng(4)
    order = expected.permutation(12)
    for start, batch in zip(range(0, 12, 5), batches):
        rows = triples.triples[order[start : start + 5]]
        assert np.array_equal(batch.heads, rows[:, 0])
        negatives = sample_negatives(rows, 3, 12, expected)
        assert negatives.shape == (rows.shape[0], 3)
        assert np.array_equal(batch.negatives, negatives)


def test_iter_batches_without_negatives_allows_one_entity() -> None:
    triples = TripleSet("train", [[0, 0, 0]])
    (batch,) = iter_batches(triples, 4, 0, 1, np.random.default_rng(0))
    assert batch.negatives.shape == (1, 0)
    with pytest.raises(ProtocolError):
        list(iter_batches(triples, 4, 2, 1, np.random.default_rng(0)))


def test_batch_shape_check() -> None:
    with pytest.raises(ValueError):
        Batch(
            np.zeros(2, np.int64),
            np.zeros(2, np.int64),
            np.zeros(3, np.int64),
            np.zeros((2, 1), np.int64),
        )


def test_cache_round_trip(toy_kg_dir: Path, tmp_path: Path) -> None:
    dataset = load_dataset(toy_kg_dir)
    cache = write_cache(dataset, tmp_path / "cache")
    loaded = read_cache(cache)
    assert loaded.name == dataset.name
    assert loaded.vocab == dataset.vocab
    for split in ("train", "valid", "test"):
        assert np.array_equal(loaded.split(split).triples, dataset.split(split).triples)


def test_cache_rejects_truncated_payload(toy_kg_dir: Path, tmp_path: Path) -> None:
    cache = write_cache(load_dataset(toy_kg_dir), tmp_path / "cache")
    payload = (cache / CACHE_PAYLOAD_FILE).read_bytes()
    (cache / CACHE_PAYLOAD_FILE).write_bytes(payload[:-8])
    with pytest.raises(CompatibilityError):
        read_cache(cache)


def test_cache_rejects_other_format_version(toy_kg_dir: Path, tmp_path: Path) -> None:
    cache = write_cache(load_dataset(toy_kg_dir), tmp_path / "cache")
    manifest = json.loads((cache / CACHE_MANIFEST_FILE).read_text())
    manifest["format_version"] = 99
    (cache / CACHE_MANIFEST_FILE).write_text(json.dumps(manifest))
    with pytest.raises(CompatibilityError):
        read_cache(cache)
