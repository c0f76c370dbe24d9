"""Text-analysis module.

Any classifier that honours :class:`TextModel` can drive co-training.  The
default one is a bag-of-tokens model: a document vector is the mean of its
token embeddings, followed by an affine softmax classifier.  Both the table
and the classifier are trained.  Pre-finetune embeddings come from the frozen
random initial table; post-finetune embeddings from the current table.
"""

from __future__ import annotations

import json
import os
import re
from collections import Counter
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence, runtime_checkable

import numpy as np
import scipy.sparse as sp

from .corpus_io import Corpus, Document, LabelSpace, tokenize
from .gnn import Adam, TrainingError
from .network import PhraseVocabulary

UNK = "<unk>"
PRE_FINETUNE = "pre_finetune"
POST_FINETUNE = "post_finetune"
STAGES = (PRE_FINETUNE, POST_FINETUNE)
CHECKPOINT_VERSION = 1


@runtime_checkable
class TextModel(Protocol):
    labels: LabelSpace

    @property
    def embedding_dim(self) -> int: ...

    def train(self, docs: Sequence[Document], targets: Sequence[str],
              config: "TextTrainConfig") -> None: ...

    def predict_proba(self, docs: Sequence[Document]) -> np.ndarray: ...

    def embed(self, docs: Sequence[Document], stage: str) -> np.ndarray: ...


@dataclass(frozen=True)
class TextTrainConfig:
    epochs: int = 100
    learning_rate: float = 0.05
    batch_size: int = 64
    rng_seed: int = 0


def attribute_token(field: str, value: str) -> str:
    return re.sub(r"\s+", "_", f"{field}={value}".strip().lower())


@dataclass(frozen=True)
class Vocabulary:
    """Token strings; index 0 is UNK, the rest in lexicographic order."""

    tokens: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "_index", {t: i for i, t in enumerate(self.tokens)})
        phrases = [tuple(t.split(" ")) for t in self.tokens if " " in t]
        object.__setattr__(self, "_phrases", frozenset(phrases))
        object.__setattr__(self, "_max_phrase", max((len(p) for p in phrases), default=1))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: object) -> bool:
        return token in self._index

    def index(self, token: str) -> int:
        return self._index.get(token, 0)

    def token_stream(self, doc: Document) -> list[str]:
        """Greedy longest-first phrase matching, then unigrams, then attribute tokens."""
        toks = tokenize(doc.text)
        out: list[str] = []
        i = 0
        while i < len(toks):
            for n in range(min(self._max_phrase, len(toks) - i), 1, -1):
                cand = tuple(toks[i:i + n])
                if cand in self._phrases:
                    out.append(" ".join(cand))
                    i += n
                    break
            else:
                out.append(toks[i])
                i += 1
        out.extend(attribute_token(f, v) for f, v in sorted(doc.attributes.items()))
        return out

    def encode(self, doc: Document) -> list[int]:
        return [self.index(t) for t in self.token_stream(doc)]


def build_vocab(corpus: Corpus, phrases: PhraseVocabulary | None = None,
                min_count: int = 2) -> Vocabulary:
    """Unigrams with corpus frequency >= min_count, every phrase, every attribute token."""
    counts: Counter[str] = Counter()
    attrs: set[str] = set()
    for doc in corpus:
        counts.update(tokenize(doc.text))
        attrs.update(attribute_token(f, v) for f, v in doc.attributes.items())
    entries = {t for t, c in counts.items() if c >= min_count} | attrs
    if phrases is not None:
        entries.update(p.text for p in phrases.phrases)
    entries.discard(UNK)
    return Vocabulary((UNK, *sorted(entries)))


class DefaultTextModel:
    """Mean-of-token-embeddings classifier."""

    def __init__(self, vocab: Vocabulary, labels: LabelSpace, dim: int = 64,
                 rng_seed: int = 0, zero: bool = False):
        self.vocab = vocab
        self.labels = labels
        rng = np.random.default_rng(rng_seed)
        n_classes = len(labels)
        if zero:
            E = np.zeros((len(vocab), dim))
            Wc = np.zeros((dim, n_classes))
        else:
            E = rng.normal(0.0, 1.0, size=(len(vocab), dim))
            bound = np.sqrt(6.0 / (dim + n_classes))
            Wc = rng.uniform(-bound, bound, size=(dim, n_classes))
        self.params = {"E": E, "Wc": Wc, "bc": np.zeros(n_classes)}
        self.initial_embeddings = E.copy()

    @property
    def embedding_dim(self) -> int:
        return self.params["E"].shape[1]

    def bag_matrix(self, docs: Sequence[Document]) -> sp.csr_matrix:
        """Row-normalized token-count matrix (documents x vocabulary)."""
        rows, cols, vals = [], [], []
        for r, doc in enumerate(docs):
            ids = self.vocab.encode(doc)
            if not ids:
                continue
            for c, k in Counter(ids).items():
                rows.append(r)
                cols.append(c)
                vals.append(k / len(ids))
        return sp.csr_matrix((vals, (rows, cols)), shape=(len(docs), len(self.vocab)))

    def _doc_vectors(self, bags: sp.csr_matrix, table: np.ndarray) -> np.ndarray:
        return np.asarray(bags @ table)

    def _probs(self, vecs: np.ndarray) -> np.ndarray:
        logits = vecs @ self.params["Wc"] + self.params["bc"]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def loss_and_grad(self, bags: sp.csr_matrix, y: np.ndarray) -> tuple[float, dict[str, np.ndarray]]:
        B = bags.shape[0]
        vecs = self._doc_vectors(bags, self.params["E"])
        probs = self._probs(vecs)
        loss = float(-np.mean(np.log(np.maximum(probs[np.arange(B), y], 1e-300))))
        dlogits = probs.copy()
        dlogits[np.arange(B), y] -= 1.0
        dlogits /= B
        dvec = dlogits @ self.params["Wc"].T
        return loss, {
            "E": np.asarray(bags.T @ dvec),
            "Wc": vecs.T @ dlogits,
            "bc": dlogits.sum(axis=0),
        }

    def train(self, docs: Sequence[Document], targets: Sequence[str],
              config: TextTrainConfig = TextTrainConfig()) -> None:
        if not docs:
            raise ValueError("empty training set")
        bags = self.bag_matrix(docs)
        y = np.array([self.labels.index(t) for t in targets], dtype=np.int64)
        rng = np.random.default_rng(config.rng_seed)
        opt = Adam(self.params, config.learning_rate)
        for epoch in range(config.epochs):
            order = rng.permutation(len(docs))
            for start in range(0, len(order), config.batch_size):
                sel = order[start:start + config.batch_size]
                loss, grads = self.loss_and_grad(bags[sel], y[sel])
                if not np.isfinite(loss):
                    raise TrainingError(
                        f"non-finite text loss at epoch {epoch}; "
                        f"try a learning rate below {config.learning_rate:g}"
                    )
                opt.step(self.params, grads)

    def predict_proba(self, docs: Sequence[Document]) -> np.ndarray:
        if not docs:
            return np.zeros((0, len(self.labels)))
        return self._probs(self._doc_vectors(self.bag_matrix(docs), self.params["E"]))

    def embed(self, docs: Sequence[Document], stage: str) -> np.ndarray:
        if stage == PRE_FINETUNE:
            table = self.initial_embeddings
        elif stage == POST_FINETUNE:
            table = self.params["E"]
        else:
            raise ValueError(f"unknown embedding stage {stage!r}")
        if not docs:
            return np.zeros((0, self.embedding_dim))
        return self._doc_vectors(self.bag_matrix(docs), table)

    def save(self, path: str | os.PathLike) -> None:
        header = {
            "version": CHECKPOINT_VERSION,
            "kind": "default",
            "dims": {"vocab": len(self.vocab), "dim": self.embedding_dim,
                     "n_classes": len(self.labels)},
            "labels": [list(x) for x in self.labels.labels],
            "vocab": list(self.vocab.tokens),
        }
        with open(path, "wb") as f:
            np.savez(f, header=np.array(json.dumps(header)),
                     E0=self.initial_embeddings, **self.params)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "DefaultTextModel":
        with np.load(path, allow_pickle=False) as data:
            header = json.loads(str(data["header"]))
            if header.get("version") != CHECKPOINT_VERSION or header.get("kind") != "default":
                raise ValueError("unsupported text-model checkpoint")
            model = cls.__new__(cls)
            model.vocab = Vocabulary(tuple(header["vocab"]))
            model.labels = LabelSpace(tuple(tuple(x) for x in header["labels"]))
            model.params = {k: data[k].copy() for k in ("E", "Wc", "bc")}
            model.initial_embeddings = data["E0"].copy()
        return model


class ExternalEmbeddingModel:
    """Adapter for precomputed document vectors: only a softmax classifier is fit."""

    def __init__(self, vectors: Mapping[str, np.ndarray], labels: LabelSpace,
                 rng_seed: int = 0):
        self.vectors = {k: np.asarray(v, dtype=np.float64) for k, v in vectors.items()}
        dims = {v.shape for v in self.vectors.values()}
        if len(dims) > 1:
            raise ValueError("external embeddings have inconsistent dimensions")
        self.labels = labels
        self._dim = next(iter(dims))[0] if dims else 0
        rng = np.random.default_rng(rng_seed)
        bound = np.sqrt(6.0 / (self._dim + len(labels)))
        self.params = {"Wc": rng.uniform(-bound, bound, size=(self._dim, len(labels))),
                       "bc": np.zeros(len(labels))}

    @property
    def embedding_dim(self) -> int:
        return self._dim

    def _rows(self, docs: Sequence[Document]) -> np.ndarray:
        try:
            return np.stack([self.vectors[d.id] for d in docs]) if docs else \
                np.zeros((0, self._dim))
        except KeyError as exc:
            raise KeyError(f"no external embedding for document {exc.args[0]!r}") from None

    def _probs(self, X: np.ndarray) -> np.ndarray:
        logits = X @ self.params["Wc"] + self.params["bc"]
        e = np.exp(logits - logits.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def train(self, docs: Sequence[Document], targets: Sequence[str],
              config: TextTrainConfig = TextTrainConfig()) -> None:
        X = self._rows(docs)
        y = np.array([self.labels.index(t) for t in targets], dtype=np.int64)
        rng = np.random.default_rng(config.rng_seed)
        opt = Adam(self.params, config.learning_rate)
        for _ in range(config.epochs):
            order = rng.permutation(len(docs))
            for start in range(0, len(order), config.batch_size):
                sel = order[start:start + config.batch_size]
                probs = self._probs(X[sel])
                d = probs.copy()
                d[np.arange(len(sel)), y[sel]] -= 1.0
                d /= len(sel)
                opt.step(self.params, {"Wc": X[sel].T @ d, "bc": d.sum(axis=0)})

    def predict_proba(self, docs: Sequence[Document]) -> np.ndarray:
        return self._probs(self._rows(docs))

    def embed(self, docs: Sequence[Document], stage: str) -> np.ndarray:
        if stage not in STAGES:
            raise ValueError(f"unknown embedding stage {stage!r}")
        return self._rows(docs)


def load_embeddings_tsv(path: str | os.PathLike) -> dict[str, np.ndarray]:
    """``doc_id<TAB>v1<TAB>v2...`` rows."""
    out = {}
    with open(path, encoding="utf-8") as f:
        for line in f:
            parts = line.rstrip("\n").split("\t")
            if len(parts) > 1:
                out[parts[0]] = np.array([float(x) for x in parts[1:]])
    return out


def train_text(model: TextModel, corpus: Corpus, labeled: Mapping[str, str],
               config: TextTrainConfig = TextTrainConfig()) -> TextModel:
    """Train ``model`` in place on ``labeled`` (doc id -> label id); returns it."""
    if not labeled:
        raise ValueError("empty training set")
    ids = sorted(labeled)
    model.train([corpus[i] for i in ids], [labeled[i] for i in ids], config)
    return model


def predict_text(model: TextModel, docs: Sequence[Document]) -> dict[str, tuple[str, np.ndarray]]:
    """doc id -> (argmax label id, probability vector)."""
    probs = model.predict_proba(docs)
    ids = model.labels.ids
    return {d.id: (ids[int(np.argmax(row))], row) for d, row in zip(docs, probs)}


def embed_documents(model: TextModel, docs: Sequence[Document], stage: str) -> np.ndarray:
    return model.embed(docs, stage)


def load_text_model(path: str | os.PathLike) -> DefaultTextModel:
    return DefaultTextModel.load(path)
