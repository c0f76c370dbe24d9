"""Corpus, label-space and seed-set data model plus their on-disk formats.

Formats:

* corpus: JSONL, one ``{"id", "text", "attrs"?, "label"?}`` object per line
* label space: JSON array of ``{"id", "surface"}``
* seeds: JSONL of ``{"id", "label"}``
* predictions: TSV ``doc_id<TAB>label_id<TAB>confidence`` sorted by doc id
"""

from __future__ import annotations

import json
import os
import re
import unicodedata
from dataclasses import dataclass, field
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping

import numpy as np

_TOKEN_RE = re.compile(r"\w+", re.UNICODE)


class CorpusError(ValueError):
    """Raised for malformed or inconsistent corpus/label/seed inputs."""


def tokenize(text: str) -> list[str]:
    """Lowercase word tokenization shared by every module."""
    return _TOKEN_RE.findall(text.lower())


@dataclass(frozen=True)
class Document:
    id: str
    text: str
    attributes: Mapping[str, str] = field(default_factory=dict)
    gold_label: str | None = None

    def __post_init__(self):
        if not isinstance(self.id, str) or not self.id:
            raise CorpusError("document id must be a non-empty string")
        if not self.text and not self.attributes:
            raise CorpusError(f"document {self.id!r} has neither text nor attributes")
        object.__setattr__(self, "attributes", MappingProxyType(dict(self.attributes)))

    def to_record(self) -> dict:
        rec = {"id": self.id, "text": self.text}
        if self.attributes:
            rec["attrs"] = dict(self.attributes)
        if self.gold_label is not None:
            rec["label"] = self.gold_label
        return rec


class Corpus:
    """Immutable ordered collection of documents with unique ids."""

    def __init__(self, documents: Iterable[Document] = ()):
        self._docs = tuple(documents)
        self._index: dict[str, int] = {}
        for i, doc in enumerate(self._docs):
            if doc.id in self._index:
                raise CorpusError(f"duplicate document id {doc.id!r}")
            self._index[doc.id] = i

    def __len__(self) -> int:
        return len(self._docs)

    def __iter__(self) -> Iterator[Document]:
        return iter(self._docs)

    def __getitem__(self, doc_id: str) -> Document:
        try:
            return self._docs[self._index[doc_id]]
        except KeyError:
            raise KeyError(f"unknown document id {doc_id!r}") from None

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, Corpus) and self._docs == other._docs

    @property
    def documents(self) -> tuple[Document, ...]:
        return self._docs

    @property
    def ids(self) -> list[str]:
        return [d.id for d in self._docs]

    def position(self, doc_id: str) -> int:
        return self._index[doc_id]

    def subset(self, doc_ids: Iterable[str]) -> "Corpus":
        wanted = set(doc_ids)
        return Corpus(d for d in self._docs if d.id in wanted)

    def split(self, test_fraction: float, rng_seed: int) -> tuple["Corpus", "Corpus"]:
        """Random (train, held-out) split; a stratified cut when gold labels exist."""
        rng = np.random.default_rng(rng_seed)
        groups: dict[str | None, list[str]] = {}
        for d in self._docs:
            groups.setdefault(d.gold_label, []).append(d.id)
        held: set[str] = set()
        for key in sorted(groups, key=lambda k: (k is None, k or "")):
            ids = groups[key]
            n_test = int(round(test_fraction * len(ids)))
            held.update(ids[i] for i in rng.permutation(len(ids))[:n_test])
        train = Corpus(d for d in self._docs if d.id not in held)
        test = Corpus(d for d in self._docs if d.id in held)
        return train, test


@dataclass(frozen=True)
class LabelSpace:
    """Ordered (label id, surface name) pairs; the order fixes class indices."""

    labels: tuple[tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "labels", tuple((str(i), str(s)) for i, s in self.labels))
        ids = [i for i, _ in self.labels]
        if len(set(ids)) != len(ids):
            dup = next(i for i in ids if ids.count(i) > 1)
            raise CorpusError(f"duplicate label id {dup!r}")

    def __len__(self) -> int:
        return len(self.labels)

    @property
    def ids(self) -> list[str]:
        return [i for i, _ in self.labels]

    @property
    def surfaces(self) -> list[str]:
        return [s for _, s in self.labels]

    def index(self, label_id: str) -> int:
        for k, (i, _) in enumerate(self.labels):
            if i == label_id:
                return k
        raise CorpusError(f"unknown label {label_id!r}")

    def __contains__(self, label_id: object) -> bool:
        return any(i == label_id for i, _ in self.labels)


@dataclass(frozen=True)
class SeedSet:
    """Labeled seed documents: doc id -> label id."""

    entries: Mapping[str, str]
    per_class_count: int

    def __post_init__(self):
        object.__setattr__(self, "entries", MappingProxyType(dict(self.entries)))

    def __len__(self) -> int:
        return len(self.entries)

    def validate(self, corpus: Corpus, labels: LabelSpace) -> None:
        counts = {lid: 0 for lid in labels.ids}
        for doc_id, label in self.entries.items():
            if doc_id not in corpus:
                raise CorpusError(f"seed document {doc_id!r} not in corpus")
            if label not in counts:
                raise CorpusError(f"seed label {label!r} not in label space")
            counts[label] += 1
        for lid, n in counts.items():
            if not 1 <= n <= self.per_class_count:
                raise CorpusError(
                    f"class {lid!r} has {n} seeds, expected 1..{self.per_class_count}"
                )


def _normalize(s: str) -> str:
    return unicodedata.normalize("NFC", s)


def parse_document(obj: dict, where: str = "") -> Document:
    if not isinstance(obj, dict):
        raise CorpusError(f"{where}expected a JSON object")
    if "id" not in obj or "text" not in obj:
        raise CorpusError(f"{where}record needs 'id' and 'text'")
    attrs = obj.get("attrs") or {}
    if not isinstance(attrs, dict) or not all(
        isinstance(k, str) and isinstance(v, str) for k, v in attrs.items()
    ):
        raise CorpusError(f"{where}'attrs' must map strings to strings")
    label = obj.get("label")
    return Document(
        id=str(obj["id"]),
        text=_normalize(str(obj["text"])),
        attributes={_normalize(k): _normalize(v) for k, v in attrs.items()},
        gold_label=None if label is None else str(label),
    )


def load_corpus(path: str | os.PathLike) -> Corpus:
    docs = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"{path}:{lineno}: malformed JSON ({exc.msg})") from exc
            docs.append(parse_document(obj, where=f"{path}:{lineno}: "))
    return Corpus(docs)


def write_corpus(corpus: Corpus, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc in corpus:
            f.write(json.dumps(doc.to_record(), ensure_ascii=False))
            f.write("\n")


def load_labels(path: str | os.PathLike) -> LabelSpace:
    with open(path, encoding="utf-8") as f:
        try:
            data = json.load(f)
        except json.JSONDecodeError as exc:
            raise CorpusError(f"{path}: malformed JSON ({exc.msg})") from exc
    if not isinstance(data, list):
        raise CorpusError(f"{path}: label space must be a JSON array")
    try:
        return LabelSpace(tuple((item["id"], item["surface"]) for item in data))
    except (KeyError, TypeError) as exc:
        raise CorpusError(f"{path}: each label needs 'id' and 'surface'") from exc


def write_labels(labels: LabelSpace, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        json.dump([{"id": i, "surface": s} for i, s in labels.labels], f, indent=2,
                  ensure_ascii=False)
        f.write("\n")


def check_labels(corpus: Corpus, labels: LabelSpace) -> None:
    """Cross-validate gold labels against the label space."""
    known = set(labels.ids)
    for doc in corpus:
        if doc.gold_label is not None and doc.gold_label not in known:
            raise CorpusError(f"document {doc.id!r} has unknown label {doc.gold_label!r}")


def select_seeds(corpus: Corpus, labels: LabelSpace, n_per_class: int,
                 rng_seed: int) -> SeedSet:
    """Uniformly sample ``n_per_class`` gold-labeled documents per class."""
    if n_per_class < 1:
        raise CorpusError("n_per_class must be >= 1")
    by_class: dict[str, list[str]] = {lid: [] for lid in labels.ids}
    for doc in corpus:
        if doc.gold_label in by_class:
            by_class[doc.gold_label].append(doc.id)
    rng = np.random.default_rng(rng_seed)
    entries = {}
    for lid in labels.ids:
        pool = by_class[lid]
        if len(pool) < n_per_class:
            raise CorpusError(
                f"class {lid!r} has {len(pool)} gold documents, need {n_per_class}"
            )
        for k in rng.choice(len(pool), size=n_per_class, replace=False):
            entries[pool[k]] = lid
    return SeedSet(entries, n_per_class)


def load_seeds(path: str | os.PathLike, per_class_count: int | None = None) -> SeedSet:
    entries: dict[str, str] = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                doc_id, label = str(obj["id"]), str(obj["label"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise CorpusError(f"{path}:{lineno}: bad seed record") from exc
            if doc_id in entries:
                raise CorpusError(f"{path}:{lineno}: duplicate seed {doc_id!r}")
            entries[doc_id] = label
    if per_class_count is None:
        counts: dict[str, int] = {}
        for label in entries.values():
            counts[label] = counts.get(label, 0) + 1
        per_class_count = max(counts.values(), default=0)
    return SeedSet(entries, per_class_count)


def write_seeds(seeds: SeedSet, path: str | os.PathLike) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for doc_id, label in seeds.entries.items():
            f.write(json.dumps({"id": doc_id, "label": label}, ensure_ascii=False))
            f.write("\n")


def write_predictions(assignments: Mapping[str, tuple[str, float]],
                      path: str | os.PathLike,
                      labels: LabelSpace | None = None) -> None:
    if labels is not None:
        for doc_id, (label, _) in assignments.items():
            if label not in labels:
                raise CorpusError(f"prediction for {doc_id!r} uses unknown label {label!r}")
    with open(path, "w", encoding="utf-8") as f:
        for doc_id in sorted(assignments):
            label, conf = assignments[doc_id]
            f.write(f"{doc_id}\t{label}\t{conf:.6f}\n")


def read_predictions(path: str | os.PathLike) -> dict[str, tuple[str, float]]:
    out = {}
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise CorpusError(f"{path}:{lineno}: expected 3 tab-separated fields")
            try:
                out[parts[0]] = (parts[1], float(parts[2]))
            except ValueError as exc:
                raise CorpusError(f"{path}:{lineno}: bad confidence {parts[2]!r}") from exc
    return out
