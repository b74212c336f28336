"""Controllability, diversity, timing, and latent-structure measurement."""
from __future__ import annotations

import copy
import logging
import random
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .base_ae import pad_batch
from .checkpoint import Checkpoint
from .corpus import PAD_ID, Vocabulary, build_vocabulary, encode_line
from .generation import _local_latent, derive_seed
from .plugin_ae import build_plugin_from_checkpoint

logger = logging.getLogger(__name__)


@dataclass
class MetricsReport:
    accuracy: float | None = None
    macro_f1: float | None = None
    distinct_1: float | None = None
    distinct_2: float | None = None
    base_seconds: float | None = None
    plugin_seconds: float | None = None
    per_class_accuracy: dict[int, float] = field(default_factory=dict)
    per_class_counts: dict[int, int] = field(default_factory=dict)


def distinct_n(sentences: Sequence[Sequence[str]], n: int) -> float:
    """Corpus-wide unique n-gram count divided by the total token count."""
    if n < 1:
        raise ValueError("n must be >= 1")
    total = sum(len(s) for s in sentences)
    if total == 0:
        raise ValueError("empty corpus")
    grams = set()
    for sent in sentences:
        for i in range(len(sent) - n + 1):
            grams.add(tuple(sent[i : i + n]))
    return len(grams) / total


class _ClassifierNet(nn.Module):
    def __init__(self, vocab_size: int, d_embed: int, d_hidden: int, num_classes: int):
        super().__init__()
        self.embedding = nn.Embedding(vocab_size, d_embed, padding_idx=PAD_ID)
        self.encoder = nn.LSTM(d_embed, d_hidden, batch_first=True, bidirectional=True)
        self.head = nn.Linear(2 * d_hidden, num_classes)

    def forward(self, padded: torch.Tensor, lengths: torch.Tensor) -> torch.Tensor:
        packed = nn.utils.rnn.pack_padded_sequence(
            self.embedding(padded), lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        _, (h_n, _) = self.encoder(packed)
        return self.head(torch.cat([h_n[0], h_n[1]], dim=-1))


@dataclass
class ClassifierModel:
    """Attribute classifier plus the evaluation vocabulary it was trained with."""

    net: _ClassifierNet
    vocab: Vocabulary
    num_classes: int

    def predict(self, texts: Sequence[str], batch_size: int = 128) -> list[int]:
        self.net.eval()
        preds: list[int] = []
        with torch.no_grad():
            for i in range(0, len(texts), batch_size):
                seqs = [encode_line(self.vocab, t) for t in texts[i : i + batch_size]]
                padded, lengths = pad_batch(seqs)
                preds.extend(int(t) for t in self.net(padded, lengths).argmax(dim=-1))
        return preds

    def predict_proba(self, texts: Sequence[str]) -> np.ndarray:
        self.net.eval()
        seqs = [encode_line(self.vocab, t) for t in texts]
        padded, lengths = pad_batch(seqs)
        with torch.no_grad():
            return torch.softmax(self.net(padded, lengths), dim=-1).numpy()


def train_attribute_classifier(
    labeled: Sequence[tuple[int, str]],
    lr: float = 0.01,
    epochs: int = 10,
    seed: int = 0,
    d_embed: int = 128,
    d_hidden: int = 256,
    batch_size: int = 50,
    max_vocab: int = 10_000,
) -> ClassifierModel:
    """SGD-train a bidirectional recurrent classifier on (label, text) pairs.

    Keeps the parameter snapshot with the best accuracy on a held-out
    10% validation split; deterministic given seed.
    """
    labels = sorted({label for label, _ in labeled})
    if len(labels) < 2:
        raise ValueError("need at least two classes")
    num_classes = max(labels) + 1
    vocab = build_vocabulary([text for _, text in labeled], max_vocab)

    torch.manual_seed(seed)
    rng = random.Random(seed)
    net = _ClassifierNet(vocab.size, d_embed, d_hidden, num_classes)
    opt = torch.optim.SGD(net.parameters(), lr=lr)

    encoded = [(label, encode_line(vocab, text)) for label, text in labeled]
    order = list(range(len(encoded)))
    rng.shuffle(order)
    n_val = max(1, len(encoded) // 10)
    val_idx, train_idx = order[:n_val], order[n_val:]
    if not train_idx:
        train_idx = val_idx

    def val_accuracy() -> float:
        net.eval()
        correct = 0
        with torch.no_grad():
            for i in range(0, len(val_idx), batch_size):
                chunk = [encoded[j] for j in val_idx[i : i + batch_size]]
                padded, lengths = pad_batch([ids for _, ids in chunk])
                preds = net(padded, lengths).argmax(dim=-1)
                correct += sum(int(p) == label for p, (label, _) in zip(preds, chunk))
        return correct / len(val_idx)

    best_state = copy.deepcopy(net.state_dict())
    best_acc = val_accuracy()
    for epoch in range(epochs):
        net.train()
        rng.shuffle(train_idx)
        for i in range(0, len(train_idx), batch_size):
            chunk = [encoded[j] for j in train_idx[i : i + batch_size]]
            padded, lengths = pad_batch([ids for _, ids in chunk])
            targets = torch.tensor([label for label, _ in chunk], dtype=torch.long)
            loss = F.cross_entropy(net(padded, lengths), targets)
            opt.zero_grad()
            loss.backward()
            opt.step()
        acc = val_accuracy()
        if acc > best_acc:
            best_acc = acc
            best_state = copy.deepcopy(net.state_dict())
        logger.info("classifier epoch %d/%d val acc %.3f", epoch + 1, epochs, acc)
    net.load_state_dict(best_state)
    net.eval()
    return ClassifierModel(net=net, vocab=vocab, num_classes=num_classes)


def confusion_matrix(
    intended: Sequence[int], predicted: Sequence[int], num_classes: int
) -> np.ndarray:
    matrix = np.zeros((num_classes, num_classes), dtype=np.int64)
    for truth, pred in zip(intended, predicted):
        if not 0 <= truth < num_classes:
            raise ValueError(f"intended label {truth} outside [0, {num_classes})")
        if 0 <= pred < num_classes:
            matrix[truth, pred] += 1
    return matrix


def macro_f1_from_confusion(matrix: np.ndarray) -> float:
    """Unweighted mean per-class F1; classes with no predictions score 0."""
    scores = []
    for c in range(matrix.shape[0]):
        tp = matrix[c, c]
        predicted = matrix[:, c].sum()
        actual = matrix[c, :].sum()
        if predicted == 0 or actual == 0 or tp == 0:
            scores.append(0.0)
            continue
        precision = tp / predicted
        recall = tp / actual
        scores.append(2 * precision * recall / (precision + recall))
    return float(np.mean(scores))


def control_metrics(
    classifier: ClassifierModel, generated: Sequence[tuple[int, str]]
) -> tuple[float, float]:
    """(accuracy, macro-F1) of the classifier against the intended labels."""
    if not generated:
        raise ValueError("no generated examples")
    intended = [label for label, _ in generated]
    predicted = classifier.predict([text for _, text in generated])
    matrix = confusion_matrix(intended, predicted, classifier.num_classes)
    accuracy = float(np.trace(matrix)) / len(generated)
    return accuracy, macro_f1_from_confusion(matrix)


def evaluate_generated(
    classifier: ClassifierModel, generated: Sequence[tuple[int, str]]
) -> MetricsReport:
    """Full controllability + diversity report for generated (label, text) pairs."""
    if not generated:
        raise ValueError("no generated examples")
    intended = [label for label, _ in generated]
    predicted = classifier.predict([text for _, text in generated])
    matrix = confusion_matrix(intended, predicted, classifier.num_classes)
    accuracy = float(np.trace(matrix)) / len(generated)
    macro_f1 = macro_f1_from_confusion(matrix)
    per_class_acc: dict[int, float] = {}
    per_class_counts: dict[int, int] = {}
    for c in sorted(set(intended)):
        idx = [i for i, t in enumerate(intended) if t == c]
        per_class_counts[c] = len(idx)
        per_class_acc[c] = sum(predicted[i] == c for i in idx) / len(idx)
    tokenized = [text.split() for _, text in generated]
    return MetricsReport(
        accuracy=accuracy,
        macro_f1=macro_f1,
        distinct_1=distinct_n(tokenized, 1),
        distinct_2=distinct_n(tokenized, 2),
        per_class_accuracy=per_class_acc,
        per_class_counts=per_class_counts,
    )


def export_local_latents(
    plugin_ckpt: Checkpoint, per_class: int, seed: int
) -> list[tuple[int, np.ndarray]]:
    """Per label: broadcast ``per_class`` prior draws to local latents."""
    if per_class < 1:
        raise ValueError("per_class must be >= 1")
    model, _, plugin, base_cfg, plugin_cfg, _ = build_plugin_from_checkpoint(plugin_ckpt)
    model.eval()
    plugin.eval()
    rows: list[tuple[int, np.ndarray]] = []
    with torch.no_grad():
        for label in range(plugin_cfg.num_classes):
            for i in range(per_class):
                rng = torch.Generator()
                rng.manual_seed(derive_seed(seed, label * per_class + i))
                z_l = _local_latent(model, plugin, base_cfg, label, rng)
                rows.append((label, z_l.numpy().astype(np.float64)))
    return rows


def pca_project_2d(vectors: Sequence[Sequence[float]] | np.ndarray) -> np.ndarray:
    """Mean-centred projection onto the top-2 principal directions.

    Deterministic: the sign of each component is fixed so its
    largest-magnitude loading is positive.
    """
    data = np.asarray(vectors, dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 3:
        raise ValueError("need at least 3 vectors")
    if data.shape[1] < 2:
        raise ValueError("need dimension >= 2")
    centred = data - data.mean(axis=0)
    cov = centred.T @ centred / (data.shape[0] - 1)
    if np.trace(cov) <= 1e-12:
        raise ValueError("rank-0 input: all vectors identical")
    eigvals, eigvecs = np.linalg.eigh(cov)
    components = eigvecs[:, np.argsort(eigvals)[::-1][:2]]
    for j in range(2):
        col = components[:, j]
        if col[int(np.argmax(np.abs(col)))] < 0:
            components[:, j] = -col
    return centred @ components


def record_timing(phase: str, seconds: float, report: MetricsReport) -> MetricsReport:
    """Store a measured wall-clock duration; re-recording overwrites."""
    if phase not in ("base", "plugin"):
        raise ValueError(f"phase must be 'base' or 'plugin', got {phase!r}")
    if seconds < 0:
        raise ValueError("seconds must be >= 0")
    if phase == "base":
        return replace(report, base_seconds=seconds)
    return replace(report, plugin_seconds=seconds)


def _fmt(x: float | None) -> str:
    return "NA" if x is None else f"{x:.6f}"


def report_text(report: MetricsReport) -> str:
    lines = [
        f"accuracy: {_fmt(report.accuracy)}",
        f"macro_f1: {_fmt(report.macro_f1)}",
        f"distinct_1: {_fmt(report.distinct_1)}",
        f"distinct_2: {_fmt(report.distinct_2)}",
        f"base_seconds: {_fmt(report.base_seconds)}",
        f"plugin_seconds: {_fmt(report.plugin_seconds)}",
    ]
    for c in sorted(report.per_class_accuracy):
        lines.append(
            f"class_{c}: accuracy {_fmt(report.per_class_accuracy[c])} "
            f"count {report.per_class_counts.get(c, 0)}"
        )
    return "\n".join(lines) + "\n"


def report_tsv(report: MetricsReport) -> str:
    header = ["accuracy", "macro_f1", "distinct_1", "distinct_2", "base_seconds", "plugin_seconds"]
    row = [
        _fmt(report.accuracy),
        _fmt(report.macro_f1),
        _fmt(report.distinct_1),
        _fmt(report.distinct_2),
        _fmt(report.base_seconds),
        _fmt(report.plugin_seconds),
    ]
    for c in sorted(report.per_class_accuracy):
        header.append(f"acc_{c}")
        row.append(_fmt(report.per_class_accuracy[c]))
    return "\t".join(header) + "\n" + "\t".join(row) + "\n"


def keyword_oracle_predict(text: str, class_keywords: Sequence[Iterable[str]]) -> int:
    """Class with the most keyword hits; -1 on zero hits or ties."""
    tokens = text.split()
    hits = [sum(tok in set(kws) for tok in tokens) for kws in class_keywords]
    best = max(hits)
    if best == 0 or hits.count(best) > 1:
        return -1
    return hits.index(best)


def keyword_oracle_accuracy(
    generated: Sequence[tuple[int, str]], class_keywords: Sequence[Iterable[str]]
) -> float:
    """Fraction of generated pairs whose text matches its intended class."""
    if not generated:
        raise ValueError("no generated examples")
    correct = sum(
        keyword_oracle_predict(text, class_keywords) == label for label, text in generated
    )
    return correct / len(generated)
