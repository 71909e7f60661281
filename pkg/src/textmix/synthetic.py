"""Desk-scale synthetic tasks.

Two task families probe whether a model needs word identity or word
order:

* content: every token comes from a positive or negative lexicon and the
  label is the majority lexicon, so counting words solves it. Lengths are
  drawn with a long tail to leave room for padding effects.
* syntax: well-nested bracket sequences vs. corrupted reorderings of the
  same multiset of tokens. Each corrupted example is a permutation of its
  well-nested twin, so unigram statistics are label-independent by
  construction and only token order carries the label.

A frozen bag-of-words logistic probe is included as the audit: it must
score high on content and near chance on syntax.
"""

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset, Vocab, build_vocab, split_words
from .rng import make_stream


@dataclass(frozen=True)
class ContentSpec:
    n_pos: int = 20
    n_neg: int = 20
    min_len: int = 5
    max_len: int = 12
    long_len: int = 18
    long_prob: float = 0.1
    dominance: float = 0.75


@dataclass(frozen=True)
class SyntaxSpec:
    n_types: int = 2
    min_pairs: int = 2
    max_pairs: int = 6
    max_depth: int = 3
    subtle_prob: float = 0.5


@dataclass
class SyntheticTask:
    kind: str
    train: Dataset
    dev: Dataset
    test: Dataset
    vocab: Vocab
    meta: dict


def content_lexicons(spec: ContentSpec) -> tuple:
    pos = [f"good{i:02d}" for i in range(spec.n_pos)]
    neg = [f"bad{i:02d}" for i in range(spec.n_neg)]
    return pos, neg


def content_label(tokens, pos_lexicon, neg_lexicon) -> Optional[int]:
    """Majority lexicon: 1 if positive words outnumber negative, 0 if the
    reverse, None on a tie."""
    pos_set, neg_set = set(pos_lexicon), set(neg_lexicon)
    p = sum(t in pos_set for t in tokens)
    n = sum(t in neg_set for t in tokens)
    if p == n:
        return None
    return int(p > n)


def _content_example(rng, spec: ContentSpec, target: int) -> tuple:
    pos, neg = content_lexicons(spec)
    dom, other = (pos, neg) if target == 1 else (neg, pos)
    if rng.random() < spec.long_prob:
        length = int(rng.integers(spec.max_len + 1, spec.long_len + 1))
    else:
        length = int(rng.integers(spec.min_len, spec.max_len + 1))
    n_dom = int(rng.binomial(length, spec.dominance))
    if 2 * n_dom <= length:                     # enforce a strict majority
        n_dom = length - n_dom
        if 2 * n_dom == length:
            n_dom += 1
    tokens = [dom[int(rng.integers(len(dom)))] for _ in range(n_dom)]
    tokens += [other[int(rng.integers(len(other)))] for _ in range(length - n_dom)]
    order = rng.permutation(length)
    tokens = [tokens[i] for i in order]
    label = content_label(tokens, pos, neg)
    assert label == target
    return " ".join(tokens), label


def bracket_tokens(spec: SyntaxSpec) -> list:
    out = []
    for t in range(spec.n_types):
        out += [f"open{t}", f"close{t}"]
    return out


def is_well_nested(tokens) -> bool:
    stack = []
    for t in tokens:
        if t.startswith("open"):
            stack.append(t[4:])
        elif t.startswith("close"):
            if not stack or stack[-1] != t[5:]:
                return False
            stack.pop()
        else:
            return False
    return not stack


def _balanced_sequence(rng, spec: SyntaxSpec) -> list:
    n_pairs = int(rng.integers(spec.min_pairs, spec.max_pairs + 1))
    opens_left = n_pairs
    stack: list[int] = []
    tokens: list[str] = []
    while opens_left or stack:
        can_open = opens_left > 0 and len(stack) < spec.max_depth
        if can_open and (not stack or rng.random() < 0.6):
            t = int(rng.integers(spec.n_types))
            stack.append(t)
            tokens.append(f"open{t}")
            opens_left -= 1
        else:
            tokens.append(f"close{stack.pop()}")
    return tokens


def _corrupt(rng, tokens, spec: SyntaxSpec) -> list:
    tokens = list(tokens)
    if rng.random() < spec.subtle_prob:
        for _ in range(30):                     # a single swap: subtle break
            i, j = rng.integers(len(tokens)), rng.integers(len(tokens))
            if i == j or tokens[i] == tokens[j]:
                continue
            cand = list(tokens)
            cand[i], cand[j] = cand[j], cand[i]
            if not is_well_nested(cand):
                return cand
    for _ in range(30):                         # full reshuffle: gross break
        order = rng.permutation(len(tokens))
        cand = [tokens[i] for i in order]
        if not is_well_nested(cand):
            return cand
    closers = [t for t in tokens if t.startswith("close")]
    rest = [t for t in tokens if not t.startswith("close")]
    return closers[:1] + rest + closers[1:]     # leading closer is never nested


def _split(examples: list, rng) -> tuple:
    order = rng.permutation(len(examples))
    shuffled = [examples[i] for i in order]
    n = len(shuffled)
    n_train = int(round(0.7 * n))
    n_dev = int(round(0.15 * n))
    return (shuffled[:n_train], shuffled[n_train: n_train + n_dev],
            shuffled[n_train + n_dev:])


def synth_task_generate(kind: str, size: int, seed: int,
                        spec=None) -> SyntheticTask:
    """Generate a labeled task with 70/15/15 train/dev/test splits."""
    if size < 2:
        raise ValueError(f"size must be >= 2, got {size}")
    rng = make_stream(seed, "data")
    if kind == "content":
        spec = spec or ContentSpec()
        examples = [_content_example(rng, spec, i % 2) for i in range(size)]
        pos, neg = content_lexicons(spec)
        base_tokens = pos + neg
        labels = ["negative", "positive"]
    elif kind == "syntax":
        spec = spec or SyntaxSpec()
        examples = []
        for _ in range((size + 1) // 2):
            good = _balanced_sequence(rng, spec)
            bad = _corrupt(rng, good, spec)
            examples.append((" ".join(good), 1))
            examples.append((" ".join(bad), 0))
        examples = examples[:size]
        base_tokens = bracket_tokens(spec)
        labels = ["corrupted", "well_nested"]
    else:
        raise ValueError(f"unknown task kind {kind!r}; use 'content' or 'syntax'")

    # seed the vocab with the full lexicon so it is independent of which
    # tokens happen to occur in a small sample
    vocab = build_vocab([" ".join(base_tokens)] + [t for t, _ in examples])
    train, dev, test = _split(examples, rng)
    meta = {"kind": kind, "seed": int(seed), "size": int(size),
            "labels": labels}
    return SyntheticTask(
        kind,
        Dataset(train, 2, "train", dict(meta)),
        Dataset(dev, 2, "dev", dict(meta)),
        Dataset(test, 2, "test", dict(meta)),
        vocab,
        meta,
    )


# -- audit probe -------------------------------------------------------------

def _count_features(dataset: Dataset, vocab: Vocab) -> np.ndarray:
    X = np.zeros((len(dataset), len(vocab)))
    for i, (text, _) in enumerate(dataset.examples):
        for tok in split_words(text):
            j = vocab.token_to_id.get(tok, vocab.unk_id)
            X[i, j] += 1.0
    return X


def bow_probe_accuracy(train: Dataset, eval_ds: Dataset, vocab: Vocab,
                       iters: int = 400, lr: float = 0.5, l2: float = 1e-3) -> float:
    """Dev accuracy of a frozen bag-of-words softmax-regression probe.

    The probe sees token counts only; it calibrates how much of a task is
    solvable without word order.
    """
    Xtr = _count_features(train, vocab)
    ytr = np.array([label for _, label in train.examples])
    Xev = _count_features(eval_ds, vocab)
    yev = np.array([label for _, label in eval_ds.examples])
    scale = max(1.0, Xtr.max())
    Xtr, Xev = Xtr / scale, Xev / scale
    Xtr = np.hstack([Xtr, np.ones((len(Xtr), 1))])
    Xev = np.hstack([Xev, np.ones((len(Xev), 1))])
    C = train.n_classes
    W = np.zeros((Xtr.shape[1], C))
    Y = np.eye(C)[ytr]
    for _ in range(iters):
        z = Xtr @ W
        z -= z.max(axis=1, keepdims=True)
        p = np.exp(z)
        p /= p.sum(axis=1, keepdims=True)
        grad = Xtr.T @ (p - Y) / len(Xtr) + l2 * W
        W -= lr * grad
    pred = (Xev @ W).argmax(axis=1)
    return float((pred == yev).mean())
