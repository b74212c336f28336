"""Unconditional base auto-encoder over token sequences.

A bidirectional LSTM encoder maps a sentence to a global latent vector;
a single-layer LSTM decoder is conditioned on that vector through a
learned initial-state map plus concatenation of the latent to every
input embedding. The latent space is regularized adversarially (AAE
mode) or with a free-bits KL penalty under cyclic annealing (VAE mode).
"""
from __future__ import annotations

import logging
import math
import random
import time
from dataclasses import dataclass, fields, replace
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .checkpoint import Checkpoint
from .corpus import (
    PAD_ID,
    NoiseConfig,
    Vocabulary,
    apply_word_dropout,
    vocabulary_from_tokens,
    vocabulary_hash,
)

logger = logging.getLogger(__name__)

MODE_AAE = "AAE"
MODE_VAE = "VAE"

# Parameters the plug-in stage keeps frozen vs fine-tunes, by tensor name
# prefix. The encoder-side z heads belong to the encoder and stay frozen;
# the latent-to-decoder map and output projection are fine-tuned.
FROZEN_PREFIXES = ("embedding.", "encoder.", "z_proj.", "mu_proj.", "logvar_proj.")
ACTIVE_PREFIXES = (
    "decoder.",
    "z_to_state.",
    "out_proj.",
    "disc.",
    "label_embed.",
    "broadcast.",
    "local_head.",
)


@dataclass
class BaseConfig:
    """Hyperparameters for base pre-training.

    Dimension defaults are desk-scale (the reference-scale values are
    d_embed=512, d_hidden=1024, d_z=128, d_disc=512 with lr 5e-4 and
    batch 256).
    """

    mode: str = MODE_AAE
    d_embed: int = 128
    d_hidden: int = 256
    d_z: int = 32
    vocab_size: int = 0
    d_disc: int = 128
    lambda_adv: float = 10.0
    word_drop_rate: float = 0.3
    free_kl_threshold: float = 0.1
    anneal_cycles: int = 4
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in (MODE_AAE, MODE_VAE):
            raise ValueError(f"mode must be AAE or VAE, got {self.mode!r}")
        for name in ("d_embed", "d_hidden", "d_z", "d_disc", "batch_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.mode == MODE_AAE and self.lambda_adv <= 0:
            raise ValueError("lambda_adv must be > 0 in AAE mode")
        if self.free_kl_threshold < 0:
            raise ValueError("free_kl_threshold must be >= 0")
        if self.anneal_cycles < 1:
            raise ValueError("anneal_cycles must be >= 1")
        if not 0.0 <= self.word_drop_rate <= 1.0:
            raise ValueError("word_drop_rate must be in [0,1]")


@dataclass
class GlobalLatent:
    """Latent code of one sentence; mu/logvar/eps are set in VAE mode."""

    z: torch.Tensor
    mu: torch.Tensor | None = None
    logvar: torch.Tensor | None = None
    eps: torch.Tensor | None = None


class LatentDiscriminator(nn.Module):
    """Two-layer MLP scoring latent vectors; sigmoid output in (0,1)."""

    def __init__(self, d_z: int, d_disc: int):
        super().__init__()
        self.hidden = nn.Linear(d_z, d_disc)
        self.out = nn.Linear(d_disc, 1)

    def logit(self, z: torch.Tensor) -> torch.Tensor:
        return self.out(torch.tanh(self.hidden(z))).squeeze(-1)

    def forward(self, z: torch.Tensor) -> torch.Tensor:
        return torch.sigmoid(self.logit(z))


class BaseAE(nn.Module):
    def __init__(self, cfg: BaseConfig):
        super().__init__()
        if cfg.vocab_size < 5:
            raise ValueError("vocab_size must cover the 4 specials plus content")
        self.cfg = cfg
        self.embedding = nn.Embedding(cfg.vocab_size, cfg.d_embed, padding_idx=PAD_ID)
        self.encoder = nn.LSTM(
            cfg.d_embed, cfg.d_hidden, batch_first=True, bidirectional=True
        )
        if cfg.mode == MODE_AAE:
            self.z_proj = nn.Linear(2 * cfg.d_hidden, cfg.d_z)
        else:
            self.mu_proj = nn.Linear(2 * cfg.d_hidden, cfg.d_z)
            self.logvar_proj = nn.Linear(2 * cfg.d_hidden, cfg.d_z)
        self.z_to_state = nn.Linear(cfg.d_z, 2 * cfg.d_hidden)
        self.decoder = nn.LSTM(cfg.d_embed + cfg.d_z, cfg.d_hidden, batch_first=True)
        self.out_proj = nn.Linear(cfg.d_hidden, cfg.vocab_size)

    def encode_batch(
        self,
        padded: torch.Tensor,
        lengths: torch.Tensor,
        generator: torch.Generator | None = None,
    ) -> tuple[torch.Tensor, torch.Tensor | None, torch.Tensor | None, torch.Tensor | None]:
        emb = self.embedding(padded)
        packed = nn.utils.rnn.pack_padded_sequence(
            emb, lengths.cpu(), batch_first=True, enforce_sorted=False
        )
        _, (h_n, _) = self.encoder(packed)
        h_cat = torch.cat([h_n[0], h_n[1]], dim=-1)
        if self.cfg.mode == MODE_AAE:
            return self.z_proj(h_cat), None, None, None
        mu = self.mu_proj(h_cat)
        logvar = torch.clamp(self.logvar_proj(h_cat), -20.0, 20.0)
        eps = torch.randn(mu.shape, generator=generator, dtype=mu.dtype)
        return reparameterize(mu, logvar, eps), mu, logvar, eps

    def init_state(self, z: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        h0, c0 = self.z_to_state(z).chunk(2, dim=-1)
        return h0.unsqueeze(0).contiguous(), c0.unsqueeze(0).contiguous()

    def decode_logits(self, z: torch.Tensor, padded_in: torch.Tensor) -> torch.Tensor:
        """Teacher-forced logits [B, T, vocab] with z concatenated at every step."""
        emb = self.embedding(padded_in)
        z_steps = z.unsqueeze(1).expand(-1, emb.size(1), -1)
        out, _ = self.decoder(torch.cat([emb, z_steps], dim=-1), self.init_state(z))
        return self.out_proj(out)

    def decode_step(
        self,
        z: torch.Tensor,
        tokens: torch.Tensor,
        state: tuple[torch.Tensor, torch.Tensor],
    ) -> tuple[torch.Tensor, tuple[torch.Tensor, torch.Tensor]]:
        emb = self.embedding(tokens).unsqueeze(1)
        x = torch.cat([emb, z.unsqueeze(1)], dim=-1)
        out, state = self.decoder(x, state)
        return self.out_proj(out.squeeze(1)), state


def reparameterize(mu: torch.Tensor, logvar: torch.Tensor, eps: torch.Tensor) -> torch.Tensor:
    return mu + torch.exp(0.5 * logvar) * eps


def pad_batch(seqs: Sequence[Sequence[int]]) -> tuple[torch.Tensor, torch.Tensor]:
    lengths = torch.tensor([len(s) for s in seqs], dtype=torch.long)
    padded = torch.full((len(seqs), int(lengths.max())), PAD_ID, dtype=torch.long)
    for i, s in enumerate(seqs):
        padded[i, : len(s)] = torch.tensor(list(s), dtype=torch.long)
    return padded, lengths


def encode(
    model: BaseAE, ids: Sequence[int], generator: torch.Generator | None = None
) -> GlobalLatent:
    """Encode one token sequence to its global latent."""
    if len(ids) < 2:
        raise ValueError("sequence must contain at least bos and eos")
    padded, lengths = pad_batch([list(ids)])
    z, mu, logvar, eps = model.encode_batch(padded, lengths, generator=generator)
    if mu is None:
        return GlobalLatent(z=z[0])
    return GlobalLatent(z=z[0], mu=mu[0], logvar=logvar[0], eps=eps[0])


def teacher_forced_logits(
    model: BaseAE, z: torch.Tensor, ids: Sequence[int]
) -> torch.Tensor:
    """Next-token scores [len-1, vocab]: row t scores position t+1."""
    if z.dim() != 1 or z.shape[0] != model.cfg.d_z:
        raise ValueError(f"z must be a vector of length {model.cfg.d_z}")
    inputs = torch.tensor([list(ids[:-1])], dtype=torch.long)
    return model.decode_logits(z.unsqueeze(0), inputs)[0]


def reconstruction_loss(logits: torch.Tensor, target_ids: torch.Tensor) -> torch.Tensor:
    """Mean negative log-softmax of the true token over non-pad positions."""
    if not torch.is_tensor(target_ids):
        target_ids = torch.tensor(target_ids, dtype=torch.long)
    flat_logits = logits.reshape(-1, logits.shape[-1])
    flat_targets = target_ids.reshape(-1)
    if flat_logits.shape[0] != flat_targets.shape[0]:
        raise ValueError(
            f"logit rows {flat_logits.shape[0]} != target positions {flat_targets.shape[0]}"
        )
    return F.cross_entropy(flat_logits, flat_targets, ignore_index=PAD_ID)


def discriminator_forward(disc: LatentDiscriminator, z: torch.Tensor) -> torch.Tensor:
    return disc(z)


def aae_discriminator_loss(
    disc: LatentDiscriminator, z_prior: torch.Tensor, z_post: torch.Tensor
) -> torch.Tensor:
    """-log D(prior) - log(1 - D(posterior)), prior samples as the real class."""
    if z_prior.numel() == 0 or z_post.numel() == 0:
        raise ValueError("batches must be non-empty")
    return F.softplus(-disc.logit(z_prior)).mean() + F.softplus(disc.logit(z_post)).mean()


def aae_encoder_adversarial_loss(
    disc: LatentDiscriminator, z_post: torch.Tensor
) -> torch.Tensor:
    """Non-saturating fooling objective -log D(posterior)."""
    if z_post.numel() == 0:
        raise ValueError("batch must be non-empty")
    return F.softplus(-disc.logit(z_post)).mean()


def gaussian_kl(
    mu: torch.Tensor, logvar: torch.Tensor, free_threshold: float = 0.0
) -> torch.Tensor:
    """KL(N(mu, e^logvar) || N(0, I)) with per-dimension free-bits masking.

    Dimensions whose KL falls below the threshold contribute neither loss
    nor gradient. Batched inputs are averaged over the batch before
    masking; returns the sum over dimensions.
    """
    if mu.shape != logvar.shape:
        raise ValueError("mu and logvar must have equal shapes")
    if free_threshold < 0:
        raise ValueError("free_threshold must be >= 0")
    kl = 0.5 * (mu.pow(2) + torch.exp(logvar) - 1.0 - logvar)
    if kl.dim() == 2:
        kl = kl.mean(dim=0)
    return torch.where(kl >= free_threshold, kl, torch.zeros_like(kl)).sum()


def cyclic_anneal_beta(step: int, total_steps: int, cycles: int) -> float:
    """Linear 0->1 ramp over the first half of each cycle, hold 1 after."""
    if cycles < 1:
        raise ValueError("cycles must be >= 1")
    if not 0 <= step < total_steps:
        raise ValueError(f"step {step} outside [0, {total_steps})")
    cycle_len = total_steps / cycles
    pos = (step % cycle_len) / cycle_len
    return min(1.0, 2.0 * pos)


def _float_repr(x: float) -> str:
    return repr(float(x))


def config_to_metadata(cfg: BaseConfig) -> dict[str, str]:
    meta = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        meta[f"config.{f.name}"] = _float_repr(v) if f.type == "float" else str(v)
    return meta


def config_from_metadata(meta: dict[str, str]) -> BaseConfig:
    kwargs = {}
    for f in fields(BaseConfig):
        raw = meta[f"config.{f.name}"]
        kwargs[f.name] = {"int": int, "float": float, "str": str}[f.type](raw)
    return BaseConfig(**kwargs)


def collect_tensors(model: BaseAE, disc: LatentDiscriminator | None) -> dict[str, np.ndarray]:
    items: dict[str, np.ndarray] = {}
    for name, tensor in model.state_dict().items():
        items[name] = tensor.detach().cpu().numpy().astype("<f4")
    if disc is not None:
        for name, tensor in disc.state_dict().items():
            items[f"disc.{name}"] = tensor.detach().cpu().numpy().astype("<f4")
    return dict(sorted(items.items()))


def base_checkpoint(
    model: BaseAE,
    disc: LatentDiscriminator | None,
    cfg: BaseConfig,
    vocab: Vocabulary,
    step: int,
    seconds: float,
    extra: dict[str, str] | None = None,
) -> Checkpoint:
    metadata: dict[str, str] = {"stage": "base", "mode": cfg.mode, "step": str(step)}
    metadata.update(config_to_metadata(cfg))
    metadata["vocab_hash"] = vocabulary_hash(vocab)
    metadata["vocab_tokens"] = " ".join(vocab.id_to_token[4:])
    if extra:
        metadata.update(extra)
    return Checkpoint(metadata=metadata, tensors=collect_tensors(model, disc), seconds=seconds)


def vocabulary_from_checkpoint(ckpt: Checkpoint) -> Vocabulary:
    tokens = ckpt.metadata["vocab_tokens"].split()
    return vocabulary_from_tokens(tokens)


def build_base_from_checkpoint(
    ckpt: Checkpoint,
) -> tuple[BaseAE, LatentDiscriminator | None, BaseConfig, Vocabulary]:
    cfg = config_from_metadata(ckpt.metadata)
    model = BaseAE(cfg)
    model_state = {
        k: torch.from_numpy(v.copy())
        for k, v in ckpt.tensors.items()
        if not k.startswith(("disc.", "label_embed.", "broadcast.", "local_head."))
    }
    model.load_state_dict(model_state)
    disc = None
    if cfg.mode == MODE_AAE:
        disc = LatentDiscriminator(cfg.d_z, cfg.d_disc)
        disc.load_state_dict(
            {
                k[len("disc.") :]: torch.from_numpy(v.copy())
                for k, v in ckpt.tensors.items()
                if k.startswith("disc.")
            }
        )
    return model, disc, cfg, vocabulary_from_checkpoint(ckpt)


def _check_finite(value: torch.Tensor, step: int) -> None:
    if not torch.isfinite(value):
        raise RuntimeError(f"non-finite loss at step {step}")


def train_base(
    config: BaseConfig, corpus_ids: Sequence[Sequence[int]], vocab: Vocabulary
) -> Checkpoint:
    """Pre-train the base auto-encoder; deterministic given config.seed."""
    if not corpus_ids:
        raise ValueError("empty corpus")
    cfg = config
    if cfg.vocab_size == 0:
        cfg = replace(cfg, vocab_size=vocab.size)
    elif cfg.vocab_size != vocab.size:
        raise ValueError(f"config vocab_size {cfg.vocab_size} != vocabulary size {vocab.size}")

    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    model = BaseAE(cfg)
    disc = LatentDiscriminator(cfg.d_z, cfg.d_disc) if cfg.mode == MODE_AAE else None
    opt_g = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    opt_d = (
        torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate) if disc is not None else None
    )
    noise = NoiseConfig(word_drop_rate=cfg.word_drop_rate, seed=cfg.seed)

    n = len(corpus_ids)
    n_batches = math.ceil(n / cfg.batch_size)
    total_steps = max(1, cfg.epochs * n_batches)
    step = 0
    epoch_recon: list[float] = []
    start = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = list(range(n))
        rng.shuffle(order)
        recon_sum = 0.0
        for b in range(n_batches):
            batch = [corpus_ids[i] for i in order[b * cfg.batch_size : (b + 1) * cfg.batch_size]]
            clean, _ = pad_batch(batch)
            dec_in, targets = clean[:, :-1], clean[:, 1:]
            if cfg.mode == MODE_AAE:
                noisy = [apply_word_dropout(s, noise, rng) for s in batch]
                enc_in, enc_len = pad_batch(noisy)
                z, _, _, _ = model.encode_batch(enc_in, enc_len)
                z_prior = torch.randn(len(batch), cfg.d_z)
                d_loss = aae_discriminator_loss(disc, z_prior, z.detach())
                _check_finite(d_loss, step)
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                rec = reconstruction_loss(model.decode_logits(z, dec_in), targets)
                loss = rec
                if cfg.lambda_adv != 0:
                    loss = loss + cfg.lambda_adv * aae_encoder_adversarial_loss(disc, z)
            else:
                enc_in, enc_len = pad_batch(batch)
                z, mu, logvar, _ = model.encode_batch(enc_in, enc_len)
                rec = reconstruction_loss(model.decode_logits(z, dec_in), targets)
                beta = cyclic_anneal_beta(step, total_steps, cfg.anneal_cycles)
                loss = rec + beta * gaussian_kl(mu, logvar, cfg.free_kl_threshold)
            _check_finite(loss, step)
            opt_g.zero_grad()
            loss.backward()
            opt_g.step()
            recon_sum += float(rec.detach())
            step += 1
        epoch_recon.append(recon_sum / n_batches)
        logger.info("base epoch %d/%d recon %.4f", epoch + 1, cfg.epochs, epoch_recon[-1])
    seconds = time.perf_counter() - start
    logger.info("base training finished in %.2fs (%d steps)", seconds, step)

    extra = {}
    if epoch_recon:
        extra["recon_first_epoch"] = f"{epoch_recon[0]:.6f}"
        extra["recon_last_epoch"] = f"{epoch_recon[-1]:.6f}"
    return base_checkpoint(model, disc, cfg, vocab, step, seconds, extra)
