"""Planted-structure synthetic corpora.

Each class owns a private vocabulary and a pool of attribute values.  A
document draws its words mostly from its class vocabulary (some positions are
replaced by shared noise words), takes one in-class attribute value with
probability ``attribute_purity`` (otherwise a value from a random other
class), and mentions its class surface name with probability
``label_name_mention_rate``.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .corpus_io import Corpus, Document, LabelSpace

SURFACE_NAMES = (
    "poetry", "cooking", "travel", "history", "science", "sports", "music", "garden",
    "finance", "health", "comics", "romance", "fantasy", "religion", "crafts", "law",
)

ATTRIBUTE_FIELD = "brand"


@dataclass(frozen=True)
class SynthSpec:
    n_classes: int = 6
    docs_per_class: int = 100
    class_vocab_size: int = 120
    shared_vocab_size: int = 300
    attrs_per_class: int = 6
    attribute_purity: float = 0.9
    label_name_mention_rate: float = 0.3
    noise_token_rate: float = 0.5
    doc_length: int = 20
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("n_classes", "docs_per_class", "class_vocab_size", "shared_vocab_size",
                     "attrs_per_class", "doc_length"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        for name in ("attribute_purity", "label_name_mention_rate", "noise_token_rate"):
            if not 0 <= getattr(self, name) <= 1:
                raise ValueError(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


def surface_name(c: int) -> str:
    base = SURFACE_NAMES[c % len(SURFACE_NAMES)]
    return base if c < len(SURFACE_NAMES) else f"{base} {c // len(SURFACE_NAMES)}"


def class_attribute(c: int, k: int) -> str:
    return f"maker{c}x{k}"


def generate_synthetic(spec: SynthSpec) -> tuple[Corpus, LabelSpace]:
    rng = np.random.default_rng(spec.rng_seed)
    labels = LabelSpace(tuple((f"C{c}", surface_name(c)) for c in range(spec.n_classes)))
    shared = [f"s{j}" for j in range(spec.shared_vocab_size)]
    docs = []
    for c in range(spec.n_classes):
        private = [f"c{c}w{j}" for j in range(spec.class_vocab_size)]
        for k in range(spec.docs_per_class):
            words = []
            for _ in range(spec.doc_length):
                if rng.random() < spec.noise_token_rate:
                    words.append(shared[rng.integers(len(shared))])
                else:
                    words.append(private[rng.integers(len(private))])
            if rng.random() < spec.label_name_mention_rate:
                words.insert(int(rng.integers(len(words) + 1)), labels.surfaces[c])
            if spec.n_classes == 1 or rng.random() < spec.attribute_purity:
                owner = c
            else:
                owner = int(rng.choice([o for o in range(spec.n_classes) if o != c]))
            value = class_attribute(owner, int(rng.integers(spec.attrs_per_class)))
            docs.append(Document(
                id=f"d{c:03d}_{k:04d}",
                text=" ".join(words),
                attributes={ATTRIBUTE_FIELD: value},
                gold_label=labels.ids[c],
            ))
    order = rng.permutation(len(docs))
    return Corpus(docs[i] for i in order), labels


def attribute_owner(value: str) -> int:
    """Class index that owns a generated attribute value."""
    return int(value[len("maker"):].split("x")[0])
