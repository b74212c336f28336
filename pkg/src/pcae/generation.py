"""Conditional sampling: prior latent + class label -> decoded text."""
from __future__ import annotations

from dataclasses import dataclass

import torch

from .base_ae import MODE_VAE, GlobalLatent, reparameterize
from .checkpoint import Checkpoint
from .corpus import BOS_ID, EOS_ID, PAD_ID, decode_ids
from .plugin_ae import build_plugin_from_checkpoint

STRATEGIES = ("greedy", "categorical", "topk_nucleus")


@dataclass
class DecodingConfig:
    strategy: str = "categorical"
    temperature: float = 0.8
    top_k: int = 50
    top_p: float = 1.0
    max_len: int = 30
    seed: int = 0

    def __post_init__(self) -> None:
        if self.strategy not in STRATEGIES:
            raise ValueError(f"strategy must be one of {STRATEGIES}, got {self.strategy!r}")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if self.top_k < 1:
            raise ValueError("top_k must be >= 1")
        if not 0 < self.top_p <= 1:
            raise ValueError("top_p must lie in (0, 1]")
        if self.max_len < 1:
            raise ValueError("max_len must be >= 1")


def derive_seed(seed: int, index: int) -> int:
    """Stable per-sentence seed so generation can be sharded deterministically."""
    return (seed * 1_000_003 + index * 7_919 + 1) % (2**63)


def sample_prior(d_z: int, rng: torch.Generator) -> GlobalLatent:
    """Draw z ~ N(0, I) of length d_z, deterministic given the generator state."""
    if d_z < 1:
        raise ValueError("d_z must be >= 1")
    return GlobalLatent(z=torch.randn(d_z, generator=rng))


def filter_logits(logits: torch.Tensor, cfg: DecodingConfig) -> torch.Tensor:
    """Turn raw next-token logits into the sampling distribution.

    Temperature is applied first. greedy returns a one-hot on the argmax
    (lowest index on ties); categorical the full softmax; topk_nucleus
    keeps the top_k logits, then the smallest descending-probability
    prefix reaching top_p (the crossing token included), renormalized.
    """
    if logits.dim() != 1:
        raise ValueError("logits must be one-dimensional")
    if not torch.isfinite(logits).any():
        raise ValueError("all logits are -inf")
    scaled = logits.double() / cfg.temperature
    if cfg.strategy == "greedy":
        out = torch.zeros_like(scaled)
        top = int(torch.nonzero(scaled == scaled.max(), as_tuple=True)[0][0])
        out[top] = 1.0
        return out
    if cfg.strategy == "categorical":
        return torch.softmax(scaled, dim=0)
    order = torch.argsort(scaled, descending=True, stable=True)
    kept = order[: min(cfg.top_k, scaled.shape[0])]
    probs_kept = torch.softmax(scaled[kept], dim=0)
    cumulative = torch.cumsum(probs_kept, dim=0)
    crossing = torch.nonzero(cumulative >= cfg.top_p - 1e-12, as_tuple=True)[0]
    cut = int(crossing[0]) + 1 if crossing.numel() else probs_kept.shape[0]
    out = torch.zeros_like(scaled)
    out[kept[:cut]] = probs_kept[:cut] / cumulative[cut - 1]
    return out


def _local_latent(model, plugin, base_cfg, label: int, rng: torch.Generator) -> torch.Tensor:
    z_g = sample_prior(base_cfg.d_z, rng).z
    e_label = plugin.label_embed.weight[label]
    h = plugin.broadcast(z_g, e_label)
    if base_cfg.mode == MODE_VAE:
        mu, logvar = plugin.local_posterior(h)
        return reparameterize(mu, logvar, torch.randn(mu.shape, generator=rng))
    return h


def _decode_ids(model, z_l: torch.Tensor, cfg: DecodingConfig, rng: torch.Generator) -> list[int]:
    state = model.init_state(z_l.unsqueeze(0))
    ids = [BOS_ID]
    for _ in range(cfg.max_len):
        logits, state = model.decode_step(
            z_l.unsqueeze(0), torch.tensor([ids[-1]], dtype=torch.long), state
        )
        logits = logits[0]
        # pad and bos are never teacher-forcing targets, so exclude them
        logits[PAD_ID] = float("-inf")
        logits[BOS_ID] = float("-inf")
        probs = filter_logits(logits, cfg)
        if cfg.strategy == "greedy":
            token = int(torch.nonzero(probs, as_tuple=True)[0][0])
        else:
            token = int(torch.multinomial(probs, 1, generator=rng))
        ids.append(token)
        if token == EOS_ID:
            break
    if ids[-1] != EOS_ID:
        ids.append(EOS_ID)
    return ids


def generate_conditional(
    plugin_ckpt: Checkpoint, label: int, count: int, cfg: DecodingConfig
) -> list[str]:
    """Sample ``count`` sentences conditioned on ``label`` from a trained plug-in."""
    if count < 1:
        raise ValueError("count must be >= 1")
    model, _, plugin, base_cfg, plugin_cfg, vocab = build_plugin_from_checkpoint(plugin_ckpt)
    if not 0 <= label < plugin_cfg.num_classes:
        raise ValueError(f"invalid label {label} for {plugin_cfg.num_classes} classes")
    model.eval()
    plugin.eval()
    sentences = []
    with torch.no_grad():
        for i in range(count):
            rng = torch.Generator()
            rng.manual_seed(derive_seed(cfg.seed, i))
            z_l = _local_latent(model, plugin, base_cfg, label, rng)
            ids = _decode_ids(model, z_l, cfg, rng)
            sentences.append(decode_ids(vocab, ids))
    return sentences
