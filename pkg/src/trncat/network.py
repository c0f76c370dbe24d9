"""Text-rich network construction.

Textual nodes (one per document) are linked to three families of auxiliary
nodes: attribute values (weight 1), mined phrases (TF-IDF weight) and label
surface names (occurrence count).  Node ids are dense integers: textual nodes
first in corpus order, then attributes sorted by (field, value), phrases
sorted lexicographically, and label names in label-space order.
"""

from __future__ import annotations

import hashlib
import math
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus_io import Corpus, CorpusError, LabelSpace, tokenize

TEXTUAL = "textual"
ATTRIBUTE = "attribute"
PHRASE = "phrase"
LABEL_NAME = "label_name"
NODE_KINDS = (TEXTUAL, ATTRIBUTE, PHRASE, LABEL_NAME)

Phrase = tuple[str, ...]


@dataclass(frozen=True)
class PhraseEntry:
    tokens: Phrase
    corpus_freq: int
    doc_freq: int

    @property
    def text(self) -> str:
        return " ".join(self.tokens)


@dataclass(frozen=True)
class PhraseVocabulary:
    phrases: tuple[PhraseEntry, ...]

    def __len__(self) -> int:
        return len(self.phrases)

    def __contains__(self, tokens: object) -> bool:
        return any(p.tokens == tokens for p in self.phrases)

    @property
    def token_tuples(self) -> list[Phrase]:
        return [p.tokens for p in self.phrases]

    @property
    def max_len(self) -> int:
        return max((len(p.tokens) for p in self.phrases), default=0)


def iter_ngrams(tokens: Sequence[str], n: int) -> Iterable[Phrase]:
    for i in range(len(tokens) - n + 1):
        yield tuple(tokens[i:i + n])


def count_occurrences(tokens: Sequence[str], pattern: Sequence[str]) -> int:
    """Number of (possibly overlapping) contiguous matches of ``pattern``."""
    n = len(pattern)
    if n == 0:
        return 0
    pattern = tuple(pattern)
    return sum(1 for i in range(len(tokens) - n + 1) if tuple(tokens[i:i + n]) == pattern)


def mine_phrases(corpus: Corpus, min_count: int = 5, max_len: int = 4) -> PhraseVocabulary:
    """Maximal frequent n-grams.

    Keeps every n-gram (1 <= n <= max_len) occurring in at least ``min_count``
    documents, then drops any n-gram contained in a longer kept candidate with
    the same document frequency.
    """
    if min_count < 1 or max_len < 1:
        raise ValueError("min_count and max_len must be >= 1")
    cf: Counter[Phrase] = Counter()
    df: Counter[Phrase] = Counter()
    for doc in corpus:
        toks = tokenize(doc.text)
        seen: set[Phrase] = set()
        for n in range(1, max_len + 1):
            for g in iter_ngrams(toks, n):
                cf[g] += 1
                seen.add(g)
        df.update(seen)
    candidates = {g for g, c in df.items() if c >= min_count}
    # df(sub) >= df(super), so an equal-df longer superset exists iff an
    # equal-df one-token extension exists among the candidates.
    dropped = set()
    for ext in candidates:
        if len(ext) > 1:
            for g in (ext[:-1], ext[1:]):
                if df[g] == df[ext]:
                    dropped.add(g)
    kept = sorted(candidates - dropped)
    return PhraseVocabulary(tuple(PhraseEntry(g, cf[g], df[g]) for g in kept))


def load_phrases(path: str | os.PathLike, corpus: Corpus) -> PhraseVocabulary:
    """Import an external phrase list (one phrase per line) as a vocabulary."""
    wanted: list[Phrase] = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            toks = tuple(tokenize(line))
            if toks and toks not in wanted:
                wanted.append(toks)
    cf: Counter[Phrase] = Counter()
    df: Counter[Phrase] = Counter()
    for doc in corpus:
        toks = tokenize(doc.text)
        for p in wanted:
            c = count_occurrences(toks, p)
            if c:
                cf[p] += c
                df[p] += 1
    return PhraseVocabulary(tuple(PhraseEntry(p, cf[p], df[p]) for p in sorted(wanted)))


def compute_tfidf(corpus: Corpus, vocab: PhraseVocabulary) -> dict[tuple[str, Phrase], float]:
    """tf(p, d) * (ln((1 + N) / (1 + df(p))) + 1), raw tf, zero-tf entries omitted."""
    n_docs = len(corpus)
    counts: dict[tuple[str, Phrase], int] = {}
    df: Counter[Phrase] = Counter()
    phrases = vocab.token_tuples
    by_len: dict[int, set[Phrase]] = {}
    for p in phrases:
        by_len.setdefault(len(p), set()).add(p)
    for doc in corpus:
        toks = tokenize(doc.text)
        for n, group in by_len.items():
            for g, c in Counter(g for g in iter_ngrams(toks, n) if g in group).items():
                counts[(doc.id, g)] = c
                df[g] += 1
    return {
        key: tf * (math.log((1 + n_docs) / (1 + df[key[1]])) + 1.0)
        for key, tf in counts.items()
    }


@dataclass(frozen=True)
class TextRichNetwork:
    """Bipartite weighted network; every edge is (textual node, auxiliary node, w)."""

    kinds: tuple[str, ...]
    displays: tuple[str, ...]
    edges: tuple[tuple[int, int, float], ...]

    def __post_init__(self):
        if len(self.kinds) != len(self.displays):
            raise CorpusError("kinds and displays differ in length")
        seen = set()
        for u, v, w in self.edges:
            if not (self.kinds[u] == TEXTUAL) ^ (self.kinds[v] == TEXTUAL):
                raise CorpusError(f"edge ({u}, {v}) must join a textual and an auxiliary node")
            if not w > 0:
                raise CorpusError(f"edge ({u}, {v}) has non-positive weight {w}")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise CorpusError(f"duplicate edge ({u}, {v})")
            seen.add(key)

    @property
    def n_nodes(self) -> int:
        return len(self.kinds)

    @property
    def nodes(self) -> list[tuple[int, str, str]]:
        return [(i, k, d) for i, (k, d) in enumerate(zip(self.kinds, self.displays))]

    def textual_ids(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k == TEXTUAL]

    @property
    def textual_content(self) -> dict[int, str]:
        """Textual node id -> document id."""
        return {i: self.displays[i] for i in self.textual_ids()}

    def node_of(self) -> dict[str, int]:
        """Document id -> textual node id."""
        return {d: i for i, d in self.textual_content.items()}

    def is_textual(self) -> np.ndarray:
        return np.array([k == TEXTUAL for k in self.kinds], dtype=bool)

    def digest(self) -> str:
        h = hashlib.sha256()
        for k, d in zip(self.kinds, self.displays):
            h.update(f"{k}\t{d}\n".encode())
        for u, v, w in self.edges:
            h.update(f"{u}\t{v}\t{w!r}\n".encode())
        return h.hexdigest()[:16]


def attribute_display(field: str, value: str) -> str:
    return f"{field}:{value}"


def build_network(corpus: Corpus, vocab: PhraseVocabulary, labels: LabelSpace) -> TextRichNetwork:
    kinds = [TEXTUAL] * len(corpus)
    displays = [d.id for d in corpus]

    attr_keys = sorted({(f, v) for d in corpus for f, v in d.attributes.items()})
    attr_node = {}
    for key in attr_keys:
        attr_node[key] = len(kinds)
        kinds.append(ATTRIBUTE)
        displays.append(attribute_display(*key))

    tfidf = compute_tfidf(corpus, vocab)
    used_phrases = sorted({p for _, p in tfidf})
    phrase_node = {}
    for p in used_phrases:
        phrase_node[p] = len(kinds)
        kinds.append(PHRASE)
        displays.append(" ".join(p))

    doc_phrases: dict[str, list[tuple[Phrase, float]]] = {}
    for (doc_id, p), w in tfidf.items():
        doc_phrases.setdefault(doc_id, []).append((p, w))

    doc_tokens = [tokenize(d.text) for d in corpus]
    label_counts: dict[int, list[tuple[int, int]]] = {}
    for k, surface in enumerate(labels.surfaces):
        pattern = tokenize(surface)
        for i, toks in enumerate(doc_tokens):
            c = count_occurrences(toks, pattern)
            if c:
                label_counts.setdefault(k, []).append((i, c))
    label_node = {}
    for k in sorted(label_counts):
        label_node[k] = len(kinds)
        kinds.append(LABEL_NAME)
        displays.append(labels.surfaces[k])

    edges: list[tuple[int, int, float]] = []
    for i, doc in enumerate(corpus):
        for key in sorted(doc.attributes.items()):
            edges.append((i, attr_node[key], 1.0))
        for p, w in doc_phrases.get(doc.id, ()):
            edges.append((i, phrase_node[p], w))
    for k in sorted(label_counts):
        for i, c in label_counts[k]:
            edges.append((i, label_node[k], float(c)))
    edges.sort(key=lambda e: (e[0], e[1]))
    return TextRichNetwork(tuple(kinds), tuple(displays), tuple(edges))


def save_network(network: TextRichNetwork, directory: str | os.PathLike) -> None:
    os.makedirs(directory, exist_ok=True)
    with open(os.path.join(directory, "nodes.tsv"), "w", encoding="utf-8") as f:
        for i, kind, display in network.nodes:
            f.write(f"{i}\t{kind}\t{_escape(display)}\n")
    with open(os.path.join(directory, "edges.tsv"), "w", encoding="utf-8") as f:
        for u, v, w in network.edges:
            f.write(f"{u}\t{v}\t{w!r}\n")


def load_network(directory: str | os.PathLike) -> TextRichNetwork:
    kinds, displays = [], []
    with open(os.path.join(directory, "nodes.tsv"), encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            i, kind, display = line.rstrip("\n").split("\t")
            if int(i) != len(kinds) or kind not in NODE_KINDS:
                raise CorpusError(f"nodes.tsv:{lineno}: bad node record")
            kinds.append(kind)
            displays.append(_unescape(display))
    edges = []
    with open(os.path.join(directory, "edges.tsv"), encoding="utf-8") as f:
        for line in f:
            u, v, w = line.rstrip("\n").split("\t")
            edges.append((int(u), int(v), float(w)))
    return TextRichNetwork(tuple(kinds), tuple(displays), tuple(edges))


def _escape(s: str) -> str:
    return s.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(s: str) -> str:
    out, i = [], 0
    while i < len(s):
        if s[i] == "\\" and i + 1 < len(s):
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(s[i + 1], s[i + 1]))
            i += 2
        else:
            out.append(s[i])
            i += 1
    return "".join(out)


def network_summary(network: TextRichNetwork) -> Mapping[str, int]:
    counts = Counter(network.kinds)
    return {**{k: counts.get(k, 0) for k in NODE_KINDS}, "edges": len(network.edges)}
