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
from __future__ import annotations

import difflib
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Literal

import numpy as np
import numpy.typing as npt
from pydantic import BaseModel, ConfigDict, ValidationError

from orthokge.exceptions import (
    CompatibilityError,
    ParseError,
    ProtocolError,
    VocabularyError,
)
from orthokge.logging_helper import get_logger

logger = get_logger("KGData")

IntArray = npt.NDArray[np.int64]
SplitName = Literal["train", "valid", "test"]
SPLITS: tuple[SplitName, ...] = ("train", "valid", "test")

CACHE_FORMAT_VERSION = 1
VOCAB_FILE = "vocab.json"
CACHE_MANIFEST_FILE = "cache.json"
CACHE_PAYLOAD_FILE = "triples.bin"


class VocabularyFile(BaseModel):
    model_config = ConfigDict(extra="forbid")

    entities: list[str]
    relations: list[str]


class Vocabulary:
    """Bijective name <-> id maps for entities and relations.

    Ids are dense and assigned in first-appearance order.
    """

    def __init__(
        self, entities: Iterable[str] = (), relations: Iterable[str] = ()
    ) -> None:
        self._entity_names: list[str] = []
        self._relation_names: list[str] = []
        self._entity_ids: dict[str, int] = {}
        self._relation_ids: dict[str, int] = {}
        for name in entities:
            self.add_entity(name)
        for name in relations:
            self.add_relation(name)

    def add_entity(self, name: str) -> int:
        if name not in self._entity_ids:
            self._entity_ids[name] = len(self._entity_names)
            self._entity_names.append(name)
        return self._entity_ids[name]

    def add_relation(self, name: str) -> int:
        if name not in self._relation_ids:
            self._relation_ids[name] = len(self._relation_names)
            self._relation_names.append(name)
        return self._relation_ids[name]

    def entity_id(self, name: str) -> int:
        try:
            return self._entity_ids[name]
        except KeyError:
            raise VocabularyError(
                f"unknown entity {name!r}",
                name=name,
                suggestions=difflib.get_close_matches(name, self._entity_names),
            ) from None

    def relation_id(self, name: str) -> int:
        try:
            return self._relation_ids[name]
        except KeyError:
            raise VocabularyError(
                f"unknown relation {name!r}",
                name=name,
                suggestions=difflib.get_close_matches(name, self._relation_names),
            ) from None

    @property
    def entity_names(self) -> list[str]:
        return list(self._entity_names)

    @property
    def relation_names(self) -> list[str]:
        return list(self._relation_names)

    @property
    def num_entities(self) -> int:
        return len(self._entity_names)

    @property
    def num_relations(self) -> int:
        return len(self._relation_names)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return (
            self._entity_names == other._entity_names
            and self._relation_names == other._relation_names
        )

    def __repr__(self) -> str:
        return (
            f"Vocabulary(entities={self.num_entities}, "
            f"relations={self.num_relations})"
        )

    def to_json(self) -> str:
        return VocabularyFile(
            entities=self._entity_names, relations=self._relation_names
        ).model_dump_json(indent=2)

    @classmethod
    def from_json(cls, payload: str | bytes) -> Vocabulary:
        try:
            data = VocabularyFile.model_validate_json(payload)
        except ValidationError as e:
            raise CompatibilityError(f"invalid vocabulary file: {e}") from e
        vocab = cls(data.entities, data.relations)
        if (
            vocab.num_entities != len(data.entities)
            or vocab.num_relations != len(data.relations)
        ):
            raise CompatibilityError("vocabulary file contains duplicate names")
        return vocab


@dataclass(frozen=True)
class TripleSet:
    """Triples of one split as an (N, 3) int64 array of (head, relation, tail)."""

    split: SplitName
    triples: IntArray

    def __post_init__(self) -> None:
        arr = np.array(self.triples, dtype=np.int64, copy=True).reshape(-1, 3)
        arr.setflags(write=False)
        object.__setattr__(self, "triples", arr)

    @classmethod
    def empty(cls, split: SplitName) -> TripleSet:
        return cls(split, np.empty((0, 3), dtype=np.int64))

    def __len__(self) -> int:
        return int(self.triples.shape[0])

    @property
    def heads(self) -> IntArray:
        return self.triples[:, 0]

    @property
    def relations(self) -> IntArray:
        return self.triples[:, 1]

    @property
    def tails(self) -> IntArray:
        return self.triples[:, 2]

    def check_bounds(self, vocab: Vocabulary) -> None:
        if not len(self):
            return
        if self.triples.min() < 0:
            raise ProtocolError(f"{self.split} split contains negative ids")
        if (
            self.heads.max() >= vocab.num_entities
            or self.tails.max() >= vocab.num_entities
        ):
            raise ProtocolError(f"{self.split} split has entity ids out of range")
        if self.relations.max() >= vocab.num_relations:
            raise ProtocolError(f"{self.split} split has relation ids out of range")


def _read_lines(path: Path) -> Iterator[tuple[int, str, str, str]]:
    try:
        text = path.read_text(encoding="utf-8")
    except UnicodeDecodeError as e:
        raise ParseError("file is not valid UTF-8", path=str(path)) from e
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    for line_number, raw in enumerate(lines, start=1):
        line = raw.removesuffix("\r")
        fields = line.split("\t")
        if len(fields) != 3 or not all(fields):
            raise ParseError(
                "expected three non-empty tab-separated fields",
                path=str(path),
                line_number=line_number,
                line=line,
            )
        yield line_number, fields[0], fields[1], fields[2]


def load_split(
    path: str | Path,
    vocab: Vocabulary,
    split: SplitName = "train",
    extend_vocab: bool | None = None,
) -> TripleSet:
    """Read a head<TAB>relation<TAB>tail file.

    The train split extends ``vocab`` with unseen names unless ``extend_vocab``
    says otherwise; valid and test splits must only use known names.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"triple file not found: {path}")
    grow = split == "train" if extend_vocab is None else extend_vocab
    rows: list[tuple[int, int, int]] = []
    seen: dict[tuple[int, int, int], int] = {}
    for line_number, head, relation, tail in _read_lines(path):
        if grow:
            triple = (
                vocab.add_entity(head),
                vocab.add_relation(relation),
                vocab.add_entity(tail),
            )
        else:
            triple = (
                vocab.entity_id(head),
                vocab.relation_id(relation),
                vocab.entity_id(tail),
            )
        if triple in seen:
            raise ParseError(
                f"duplicate triple (first seen on line {seen[triple]})",
                path=str(path),
                line_number=line_number,
                line=f"{head}\t{relation}\t{tail}",
            )
        seen[triple] = line_number
        rows.append(triple)
    logger.debug(f"Loaded {len(rows)} {split} triples from {path}")
    return TripleSet(split, np.asarray(rows, dtype=np.int64).reshape(-1, 3))


class DatasetStatistics(BaseModel):
    name: str
    entities: int
    relations: int
    train: int
    valid: int
    test: int


@dataclass
class KGDataset:
    name: str
    vocab: Vocabulary
    train: TripleSet
    valid: TripleSet = field(default_factory=lambda: TripleSet.empty("valid"))
    test: TripleSet = field(default_factory=lambda: TripleSet.empty("test"))

    def split(self, name: SplitName) -> TripleSet:
        return {"train": self.train, "valid": self.valid, "test": self.test}[name]

    def statistics(self) -> DatasetStatistics:
        return DatasetStatistics(
            name=self.name,
            entities=self.vocab.num_entities,
            relations=self.vocab.num_relations,
            train=len(self.train),
            valid=len(self.valid),
            test=len(self.test),
        )


def load_dataset(data_dir: str | Path, name: str | None = None) -> KGDataset:
    """Load train.txt, valid.txt and test.txt from ``data_dir``.

    The vocabulary is built over all three files in first-appearance order
    (train, then valid, then test) and every split is then resolved against it.
    Missing valid or test files yield empty splits.
    """
    data_dir = Path(data_dir)
    paths = {split: data_dir / f"{split}.txt" for split in SPLITS}
    if not paths["train"].is_file():
        raise FileNotFoundError(f"no train.txt in {data_dir}")

    vocab = Vocabulary()
    for split in SPLITS:
        if paths[split].is_file():
            for _, head, relation, tail in _read_lines(paths[split]):
                vocab.add_entity(head)
                vocab.add_relation(relation)
                vocab.add_entity(tail)

    loaded: dict[SplitName, TripleSet] = {}
    for split in SPLITS:
        if paths[split].is_file():
            loaded[split] = load_split(paths[split], vocab, split, extend_vocab=False)
        else:
            logger.warning(f"{paths[split]} not found, using an empty {split} split")
            loaded[split] = TripleSet.empty(split)

    dataset = KGDataset(
        name=name or data_dir.name,
        vocab=vocab,
        train=loaded["train"],
        valid=loaded["valid"],
        test=loaded["test"],
    )
    stats = dataset.statistics()
    logger.info(
        f"Dataset {stats.name}: {stats.entities} entities, {stats.relations} "
        f"relations, {stats.train}/{stats.valid}/{stats.test} train/valid/test"
    )
    return dataset


@dataclass(frozen=True)
class FilterIndex:
    """Known-true tails per (head, relation) and heads per (relation, tail)."""

    tails: dict[tuple[int, int], frozenset[int]]
    heads: dict[tuple[int, int], frozenset[int]]

    def known_tails(self, head: int, relation: int) -> frozenset[int]:
        return self.tails.get((int(head), int(relation)), frozenset())

    def known_heads(self, relation: int, tail: int) -> frozenset[int]:
        return self.heads.get((int(relation), int(tail)), frozenset())


def build_filter_index(*splits: TripleSet) -> FilterIndex:
    tails: defaultdict[tuple[int, int], set[int]] = defaultdict(set)
    heads: defaultdict[tuple[int, int], set[int]] = defaultdict(set)
    for triple_set in splits:
        for h, r, t in triple_set.triples.tolist():
            tails[(h, r)].add(t)
            heads[(r, t)].add(h)
    return FilterIndex(
        tails={key: frozenset(value) for key, value in tails.items()},
        heads={key: frozenset(value) for key, value in heads.items()},
    )


def sample_negatives(
    triple: tuple[int, int, int] | IntArray,
    k: int,
    num_entities: int,
    rng: np.random.Generator,
) -> IntArray:
    """k corrupted tails drawn uniformly with replacement.

    The true tail is not excluded. Given a (B, 3) array of triples, returns a
    (B, k) array with one row of tails per triple.
    """
    if num_entities < 2:
        raise ProtocolError("negative sampling needs at least two entities")
    if k < 0:
        raise ValueError(f"k must be non-negative, got {k}")
    rows = np.asarray(triple)
    size: int | tuple[int, int] = k if rows.ndim < 2 else (rows.shape[0], k)
    return rng.integers(0, num_entities, size=size, dtype=np.int64)


@dataclass(frozen=True)
class Batch:
    """Mini-batch of positive triples with their sampled tails.

    Candidate column 0 is the true tail, columns 1..K are the negatives.
    """

    heads: IntArray
    relations: IntArray
    tails: IntArray
    negatives: IntArray

    def __post_init__(self) -> None:
        size = self.heads.shape[0]
        if (
            self.relations.shape != (size,)
            or self.tails.shape != (size,)
            or self.negatives.ndim != 2
            or self.negatives.shape[0] != size
        ):
            raise ValueError("batch arrays have inconsistent shapes")

    @classmethod
    def from_triples(
        cls, triples: npt.ArrayLike, negatives: npt.ArrayLike | None = None
    ) -> Batch:
        arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        negs = (
            np.empty((arr.shape[0], 0), dtype=np.int64)
            if negatives is None
            else np.asarray(negatives, dtype=np.int64).reshape(arr.shape[0], -1)
        )
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy(), negs)

    def __len__(self) -> int:
        return int(self.heads.shape[0])

    def candidates(self) -> IntArray:
        return np.column_stack([self.tails, self.negatives]).astype(np.int64)


def iter_batches(
    triples: TripleSet,
    batch_size: int,
    negative_k: int,
    num_entities: int,
    rng: np.random.Generator,
) -> Iterator[Batch]:
    """Shuffle the split and yield batches with uniformly corrupted tails."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if negative_k > 0 and num_entities < 2:
        raise ProtocolError("negative sampling needs at least two entities")
    order = rng.permutation(len(triples))
    for start in range(0, order.size, batch_size):
        rows = triples.triples[order[start : start + batch_size]]
        if negative_k > 0:
            negatives = sample_negatives(rows, negative_k, num_entities, rng)
        else:
            negatives = np.empty((rows.shape[0], 0), dtype=np.int64)
        yield Batch(rows[:, 0].copy(), rows[:, 1].copy(), rows[:, 2].copy(), negatives)


class CacheManifest(BaseModel):
    model_config = ConfigDict(extra="forbid")

    format_version: int
    endianness: Literal["little"] = "little"
    dataset: str
    counts: dict[SplitName, int]


def write_cache(dataset: KGDataset, out_dir: str | Path) -> Path:
    """Write vocab.json, a little-endian int64 triple payload and its manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / VOCAB_FILE).write_text(dataset.vocab.to_json(), encoding="utf-8")
    payload = b"".join(
        dataset.split(split).triples.astype("<i8").tobytes() for split in SPLITS
    )
    (out / CACHE_PAYLOAD_FILE).write_bytes(payload)
    manifest = CacheManifest(
        format_version=CACHE_FORMAT_VERSION,
        dataset=dataset.name,
        counts={split: len(dataset.split(split)) for split in SPLITS},
    )
    (out / CACHE_MANIFEST_FILE).write_text(
        manifest.model_dump_json(indent=2), encoding="utf-8"
    )
    logger.info(f"Wrote triple cache for {dataset.name} to {out}")
    return out


def read_cache(cache_dir: str | Path) -> KGDataset:
    cache = Path(cache_dir)
    try:
        manifest = CacheManifest.model_validate_json(
            (cache / CACHE_MANIFEST_FILE).read_bytes()
        )
    except ValidationError as e:
        raise CompatibilityError(f"invalid cache manifest in {cache}: {e}") from e
    if manifest.format_version != CACHE_FORMAT_VERSION:
        raise CompatibilityError(
            f"cache format {manifest.format_version} is not supported "
            f"(expected {CACHE_FORMAT_VERSION})"
        )
    vocab = Vocabulary.from_json((cache / VOCAB_FILE).read_bytes())
    payload = (cache / CACHE_PAYLOAD_FILE).read_bytes()
    expected_bytes = 3 * 8 * sum(manifest.counts.get(s, 0) for s in SPLITS)
    if len(payload) != expected_bytes:
        raise CompatibilityError(
            f"cache payload has {len(payload)} bytes, expected {expected_bytes}"
        )
    flat = np.frombuffer(payload, dtype="<i8").astype(np.int64)
    splits: dict[SplitName, TripleSet] = {}
    offset = 0
    for split in SPLITS:
        count = manifest.counts.get(split, 0)
        splits[split] = TripleSet(split, flat[offset : offset + 3 * count])
        offset += 3 * count
    dataset = KGDataset(
        manifest.dataset, vocab, splits["train"], splits["valid"], splits["test"]
    )
    for split in SPLITS:
        dataset.split(split).check_bounds(vocab)
    return dataset
