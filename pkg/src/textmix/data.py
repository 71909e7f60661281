"""Tokenization, dataset files, subsampling and batching.

Tokenization is a whitespace/punctuation word splitter over a corpus-built
vocabulary (a stand-in for subword schemes, which are out of scope). The
vocabulary reserves a fixed block of special ids: the inert batch filler
(PAD), unknown-word id (UNK), the classification prefix token (CLS), the
separator/suffix token (SEP), and a spare id (UNUSED) offered as an
alternative mixing pad token.

File formats (all line-oriented, documented in the README):
  dataset:  one JSON object per line, {"text": str, "label": int}
  labels:   JSON sidecar {"labels": [name, ...]}
  vocab:    one token per line, line number = id, reserved block first
"""

import json
import re
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .rng import make_stream

RESERVED = ("[PAD]", "[UNK]", "[CLS]", "[SEP]", "[UNUSED]")
_WORD = re.compile(r"\w+")


class Vocab:
    def __init__(self, tokens: Iterable[str]):
        self.tokens = list(tokens)
        if tuple(self.tokens[: len(RESERVED)]) != RESERVED:
            raise ValueError(f"vocab must start with the reserved block {RESERVED}")
        self.token_to_id = {t: i for i, t in enumerate(self.tokens)}
        if len(self.token_to_id) != len(self.tokens):
            raise ValueError("vocab contains duplicate tokens")

    pad_id = 0
    unk_id = 1
    cls_id = 2
    sep_id = 3
    unused_id = 4

    def __len__(self):
        return len(self.tokens)

    @property
    def mix_pad_ids(self) -> dict:
        """Ids of the padding-token options for token-level mixing."""
        return {"sep": self.sep_id, "pad": self.pad_id, "unused": self.unused_id}

    def save(self, path) -> None:
        with open(path, "w") as f:
            for t in self.tokens:
                f.write(t + "\n")

    @classmethod
    def load(cls, path) -> "Vocab":
        with open(path) as f:
            return cls([line.rstrip("\n") for line in f if line != "\n"])


def split_words(text: str) -> list:
    return _WORD.findall(text.lower())


def build_vocab(corpus: Iterable[str], min_count: int = 1) -> Vocab:
    """Frequency-then-lexicographic vocabulary over lowercased word tokens."""
    counts: dict[str, int] = {}
    n_texts = 0
    for text in corpus:
        n_texts += 1
        for tok in split_words(text):
            counts[tok] = counts.get(tok, 0) + 1
    if n_texts == 0:
        raise ValueError("cannot build a vocabulary from an empty corpus")
    kept = sorted((t for t, c in counts.items() if c >= min_count),
                  key=lambda t: (-counts[t], t))
    return Vocab(list(RESERVED) + kept)


def tokenize(text: str, vocab: Vocab, max_seq_len: int) -> list:
    """CLS-prefixed, SEP-terminated id sequence, tail-truncated to fit."""
    ids = [vocab.cls_id]
    ids += [vocab.token_to_id.get(t, vocab.unk_id) for t in split_words(text)]
    ids.append(vocab.sep_id)
    if len(ids) > max_seq_len:
        ids = ids[: max_seq_len - 1] + [vocab.sep_id]
    return ids


def detokenize(ids: Iterable[int], vocab: Vocab) -> str:
    words = [vocab.tokens[i] for i in ids if vocab.tokens[i] not in RESERVED]
    return " ".join(words)


@dataclass
class Dataset:
    examples: list                  # (text, label) pairs
    n_classes: int
    split: str = "train"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        for text, label in self.examples:
            if not text:
                raise ValueError("dataset contains an empty text")
            if not 0 <= label < self.n_classes:
                raise ValueError(f"label {label} outside [0, {self.n_classes})")

    def __len__(self):
        return len(self.examples)

    def label_counts(self) -> list:
        counts = [0] * self.n_classes
        for _, label in self.examples:
            counts[label] += 1
        return counts


def save_dataset(dataset: Dataset, path) -> None:
    with open(path, "w") as f:
        for text, label in dataset.examples:
            f.write(json.dumps({"text": text, "label": int(label)}) + "\n")


def load_dataset(path, n_classes: int, split: str = "train") -> Dataset:
    examples = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            examples.append((rec["text"], int(rec["label"])))
    return Dataset(examples, n_classes, split)


def save_labels(names: list, path) -> None:
    with open(path, "w") as f:
        json.dump({"labels": list(names)}, f)
        f.write("\n")


def load_labels(path) -> list:
    with open(path) as f:
        return list(json.load(f)["labels"])


def subsample(dataset: Dataset, n: int, seed: int) -> Dataset:
    """Uniform sample without replacement; seed-stable across platforms."""
    if n > len(dataset):
        raise ValueError(f"cannot subsample {n} from {len(dataset)} examples")
    rng = make_stream(seed, "subsample")
    idx = rng.permutation(len(dataset))[:n]
    examples = [dataset.examples[i] for i in idx]
    sub = Dataset(examples, dataset.n_classes, dataset.split,
                  meta=dict(dataset.meta))
    sub.meta.update({"subsample_seed": int(seed), "subsample_n": int(n),
                     "label_counts": sub.label_counts()})
    return sub


@dataclass
class Batch:
    token_ids: np.ndarray           # int64 [B, L], inert PAD fill
    attention_mask: np.ndarray      # bool [B, L], true on real tokens
    one_hot_labels: np.ndarray      # float64 [B, n_classes]
    lengths: np.ndarray             # int64 [B]
    labels: np.ndarray              # int64 [B]
    pad_token_ids: dict             # mixing pad options: name -> id


def encode_dataset(dataset: Dataset, vocab: Vocab, max_seq_len: int) -> list:
    """Tokenize once up front: list of (ids, label)."""
    return [(tokenize(text, vocab, max_seq_len), label)
            for text, label in dataset.examples]


def _batch_from(encoded_slice, n_classes: int, vocab: Vocab) -> Batch:
    B = len(encoded_slice)
    lengths = np.array([len(ids) for ids, _ in encoded_slice], dtype=np.int64)
    L = int(lengths.max())
    token_ids = np.full((B, L), vocab.pad_id, dtype=np.int64)
    mask = np.zeros((B, L), dtype=bool)
    labels = np.zeros(B, dtype=np.int64)
    for i, (ids, label) in enumerate(encoded_slice):
        token_ids[i, : len(ids)] = ids
        mask[i, : len(ids)] = True
        labels[i] = label
    one_hot = np.zeros((B, n_classes))
    one_hot[np.arange(B), labels] = 1.0
    return Batch(token_ids, mask, one_hot, lengths, labels, vocab.mix_pad_ids)


def make_batches(dataset: Dataset, vocab: Vocab, max_seq_len: int, batch_size: int,
                 seed: int = 0, epoch: int = 0, shuffle: bool = True,
                 drop_last: bool = False, encoded: Optional[list] = None) -> list:
    """Batches for one epoch; shuffle order comes from an epoch-indexed
    stream so it is identical across runs and variants at equal seed."""
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    if encoded is None:
        encoded = encode_dataset(dataset, vocab, max_seq_len)
    order = np.arange(len(encoded))
    if shuffle:
        order = make_stream(seed, "shuffle", epoch).permutation(len(encoded))
    batches = []
    for start in range(0, len(encoded), batch_size):
        chunk = [encoded[i] for i in order[start: start + batch_size]]
        if drop_last and len(chunk) < batch_size:
            break
        if chunk:
            batches.append(_batch_from(chunk, dataset.n_classes, vocab))
    return batches


def longest_sequence(encoded: list) -> int:
    """Longest tokenized length in a split; the 'max' padding target."""
    return max(len(ids) for ids, _ in encoded)
