"""Corpus handling: vocabulary, encoding, input noising, labeled subsets.

Text is whitespace-tokenized; ids 0..3 are reserved for the special
tokens pad/bos/eos/unk, corpus tokens start at id 4.
"""
from __future__ import annotations

import hashlib
import random
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

PAD_ID = 0
BOS_ID = 1
EOS_ID = 2
UNK_ID = 3
SPECIAL_TOKENS = ("<pad>", "<bos>", "<eos>", "<unk>")


@dataclass(frozen=True)
class Vocabulary:
    """Bidirectional token<->id map with reserved special ids 0..3."""

    token_to_id: dict[str, int]
    id_to_token: tuple[str, ...]

    @property
    def size(self) -> int:
        return len(self.id_to_token)


@dataclass(frozen=True)
class LabeledExample:
    label: int
    ids: tuple[int, ...]


@dataclass(frozen=True)
class NoiseConfig:
    word_drop_rate: float = 0.3
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 <= self.word_drop_rate <= 1.0:
            raise ValueError(f"word_drop_rate must be in [0,1], got {self.word_drop_rate}")


def build_vocabulary(lines: Iterable[str], max_size: int) -> Vocabulary:
    """Build a frequency-ranked vocabulary over whitespace tokens.

    Ties in frequency break lexicographically; at most ``max_size``
    non-special tokens are kept. Raises ValueError on an empty corpus.
    """
    if max_size < 1:
        raise ValueError(f"max_size must be >= 1, got {max_size}")
    counts: Counter[str] = Counter()
    for line in lines:
        for tok in line.split():
            if tok not in SPECIAL_TOKENS:
                counts[tok] += 1
    if not counts:
        raise ValueError("empty corpus")
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    tokens = list(SPECIAL_TOKENS) + [tok for tok, _ in ranked[:max_size]]
    return Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(tokens)},
        id_to_token=tuple(tokens),
    )


def encode_line(vocab: Vocabulary, line: str) -> list[int]:
    """Encode one line as [bos] + token ids (unk for OOV) + [eos]."""
    ids = [BOS_ID]
    for tok in line.split():
        if tok in SPECIAL_TOKENS:
            ids.append(UNK_ID)  # specials never collide with corpus tokens
        else:
            ids.append(vocab.token_to_id.get(tok, UNK_ID))
    ids.append(EOS_ID)
    return ids


def decode_ids(vocab: Vocabulary, ids: Sequence[int]) -> str:
    """Strip specials and join remaining tokens with single spaces."""
    out = []
    for i in ids:
        if not 0 <= i < vocab.size:
            raise ValueError(f"invalid token id {i}")
        if i > UNK_ID:
            out.append(vocab.id_to_token[i])
    return " ".join(out)


def apply_word_dropout(ids: Sequence[int], cfg: NoiseConfig, rng: random.Random) -> list[int]:
    """Independently delete interior non-special tokens with the configured rate.

    bos/eos (and any interior special ids) are always kept; if every
    interior token would be dropped, one interior token is retained
    uniformly at random so the decoder never sees an empty body.
    """
    if len(ids) < 2:
        raise ValueError("sequence must contain at least bos and eos")
    interior = list(ids[1:-1])
    kept = []
    for tok in interior:
        if tok <= UNK_ID or rng.random() >= cfg.word_drop_rate:
            kept.append(tok)
    if not kept and interior:
        kept = [interior[rng.randrange(len(interior))]]
    return [ids[0]] + kept + [ids[-1]]


def sample_labeled_subset(
    examples: Sequence[LabeledExample], per_class: int, seed: int
) -> list[LabeledExample]:
    """Draw exactly ``per_class`` examples per class without replacement.

    Candidates are ordered by (label, ids, original index) before
    sampling, so the result depends only on the input multiset.
    """
    by_label: dict[int, list[tuple[tuple[int, ...], int, LabeledExample]]] = {}
    for idx, ex in enumerate(examples):
        by_label.setdefault(ex.label, []).append((tuple(ex.ids), idx, ex))
    picked: list[LabeledExample] = []
    for label in sorted(by_label):
        members = sorted(by_label[label], key=lambda m: (m[0], m[1]))
        if len(members) < per_class:
            raise ValueError(f"class {label} has {len(members)} < {per_class}")
        rng = random.Random(seed * 1_000_003 + label)
        chosen = rng.sample(range(len(members)), per_class)
        picked.extend(members[i][2] for i in sorted(chosen))
    return picked


def serialize_vocabulary(vocab: Vocabulary) -> str:
    return "\n".join(vocab.id_to_token) + "\n"


def save_vocabulary(vocab: Vocabulary, path: str | Path) -> None:
    Path(path).write_text(serialize_vocabulary(vocab), encoding="utf-8")


def load_vocabulary(path: str | Path) -> Vocabulary:
    tokens = Path(path).read_text(encoding="utf-8").splitlines()
    if tuple(tokens[:4]) != SPECIAL_TOKENS:
        raise ValueError(f"vocabulary file {path} lacks the special-token header")
    return Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(tokens)},
        id_to_token=tuple(tokens),
    )


def vocabulary_hash(vocab: Vocabulary) -> str:
    return hashlib.sha256(serialize_vocabulary(vocab).encode("utf-8")).hexdigest()


def vocabulary_from_tokens(tokens: Sequence[str]) -> Vocabulary:
    """Rebuild a Vocabulary from its non-special tokens in id order."""
    all_tokens = list(SPECIAL_TOKENS) + list(tokens)
    return Vocabulary(
        token_to_id={tok: i for i, tok in enumerate(all_tokens)},
        id_to_token=tuple(all_tokens),
    )


def load_corpus(path: str | Path) -> list[str]:
    """Read a one-sentence-per-line corpus, skipping blank lines."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    return [line for line in p.read_text(encoding="utf-8").splitlines() if line.strip()]


def load_labeled_tsv(path: str | Path) -> list[tuple[int, str]]:
    """Read label<TAB>text pairs."""
    p = Path(path)
    if not p.is_file():
        raise FileNotFoundError(str(p))
    pairs = []
    for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            label, text = line.split("\t", 1)
            pairs.append((int(label), text))
        except ValueError as exc:
            raise ValueError(f"{p}:{lineno}: expected 'label<TAB>text'") from exc
    if not pairs:
        raise ValueError("empty corpus")
    return pairs


def encode_labeled(vocab: Vocabulary, pairs: Iterable[tuple[int, str]]) -> list[LabeledExample]:
    return [LabeledExample(label, tuple(encode_line(vocab, text))) for label, text in pairs]
