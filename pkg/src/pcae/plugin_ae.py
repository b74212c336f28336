"""Plug-in conditioning stage: label embedding, broadcast label fusion,
latent-regularized objectives, and partially-frozen fine-tuning.

The broadcast net re-concatenates the same label embedding in front of
every layer, steering a global latent vector into a label-specific
local latent that the fine-tuned decoder consumes.
"""
from __future__ import annotations

import logging
import math
import random
import time
from dataclasses import dataclass, fields
from typing import Sequence

import torch
import torch.nn.functional as F
from torch import nn

from .base_ae import (
    ACTIVE_PREFIXES,
    FROZEN_PREFIXES,
    MODE_AAE,
    MODE_VAE,
    BaseAE,
    BaseConfig,
    LatentDiscriminator,
    build_base_from_checkpoint,
    collect_tensors,
    gaussian_kl,
    pad_batch,
    reconstruction_loss,
    reparameterize,
)
from .checkpoint import Checkpoint, checkpoint_hash
from .corpus import LabeledExample, Vocabulary

logger = logging.getLogger(__name__)

INFO_SIGN_PAPER = "paper"
INFO_SIGN_PENALTY = "penalty"


@dataclass
class PluginConfig:
    """Hyperparameters for plug-in training.

    lambda_adv scales the adversarial distance term and lambda_info the
    latent MMD regulator inside the local-latent loss; lambda_zl is the
    outer weight on the whole regularizer.
    """

    num_classes: int
    d_label: int = 8
    n_broadcast: int = 12
    lambda_zl: float = 1.0
    lambda_adv: float = 30.0
    lambda_info: float = 50.0
    learning_rate: float = 1e-4
    batch_size: int = 80
    kernel_bandwidth: float | None = None  # None -> sqrt(d_z / 2)
    info_sign: str = INFO_SIGN_PAPER
    epochs: int = 20
    seed: int = 0

    def __post_init__(self) -> None:
        if self.num_classes < 2:
            raise ValueError("num_classes must be >= 2")
        if self.d_label < 1 or self.n_broadcast < 1 or self.batch_size < 1:
            raise ValueError("d_label, n_broadcast and batch_size must be >= 1")
        for name in ("lambda_zl", "lambda_adv", "lambda_info"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.kernel_bandwidth is not None and self.kernel_bandwidth <= 0:
            raise ValueError("kernel_bandwidth must be > 0")
        if self.info_sign not in (INFO_SIGN_PAPER, INFO_SIGN_PENALTY):
            raise ValueError(f"info_sign must be 'paper' or 'penalty', got {self.info_sign!r}")


@dataclass
class LocalLatent:
    """Label-conditioned latent; source records which side produced it."""

    z_l: torch.Tensor
    source: str | None = None  # "posterior" | "prior"
    label: int | None = None


class BroadcastNet(nn.Module):
    """Stack of linear layers, each fed the running latent concatenated
    with the same label embedding; tanh between layers, final layer linear."""

    def __init__(self, d_z: int, d_label: int, n_layers: int):
        super().__init__()
        if n_layers < 1:
            raise ValueError("n_layers must be >= 1")
        self.t = nn.ModuleList(nn.Linear(d_z + d_label, d_z) for _ in range(n_layers))

    def forward(self, z: torch.Tensor, e_label: torch.Tensor) -> torch.Tensor:
        if z.shape[-1] != self.t[0].in_features - e_label.shape[-1]:
            raise ValueError(
                f"latent width {z.shape[-1]} + label width {e_label.shape[-1]} "
                f"!= layer input {self.t[0].in_features}"
            )
        for i, layer in enumerate(self.t):
            z = layer(torch.cat([z, e_label], dim=-1))
            if i + 1 < len(self.t):
                z = torch.tanh(z)
        return z


class PluginNet(nn.Module):
    """Container for the plug-in tensors (label_embed.*, broadcast.t.*)."""

    def __init__(self, num_classes: int, d_label: int, n_broadcast: int, d_z: int, vae_head: bool):
        super().__init__()
        self.label_embed = nn.Embedding(num_classes, d_label)
        self.broadcast = BroadcastNet(d_z, d_label, n_broadcast)
        self.local_head = nn.Linear(d_z, 2 * d_z) if vae_head else None

    def local_posterior(self, h: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        mu, logvar = self.local_head(h).chunk(2, dim=-1)
        return mu, torch.clamp(logvar, -20.0, 20.0)


def embed_label(table: nn.Embedding | torch.Tensor, label: int) -> torch.Tensor:
    """Row lookup; label must lie in [0, K)."""
    weight = table.weight if isinstance(table, nn.Embedding) else table
    if not 0 <= label < weight.shape[0]:
        raise ValueError(f"label {label} out of range [0, {weight.shape[0]})")
    return weight[label]


def broadcast_forward(
    net: BroadcastNet,
    z_g: torch.Tensor,
    e_label: torch.Tensor,
    source: str | None = None,
    label: int | None = None,
) -> LocalLatent:
    return LocalLatent(z_l=net(z_g, e_label), source=source, label=label)


def gaussian_kernel(z: torch.Tensor, z2: torch.Tensor, bandwidth: float) -> torch.Tensor:
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    if z.shape != z2.shape:
        raise ValueError("kernel inputs must have equal shapes")
    return torch.exp(-torch.sum((z - z2) ** 2) / (2.0 * bandwidth**2))


def _gram(a: torch.Tensor, b: torch.Tensor, bandwidth: float) -> torch.Tensor:
    sq = (a * a).sum(dim=1, keepdim=True) + (b * b).sum(dim=1) - 2.0 * a @ b.T
    return torch.exp(-sq.clamp_min(0.0) / (2.0 * bandwidth**2))


def mmd_biased(
    samples_q: torch.Tensor, samples_p: torch.Tensor, bandwidth: float
) -> torch.Tensor:
    """Biased V-statistic MMD^2 with a Gaussian kernel, diagonals included."""
    if bandwidth <= 0:
        raise ValueError("bandwidth must be > 0")
    if samples_q.numel() == 0 or samples_p.numel() == 0:
        raise ValueError("sample sets must be non-empty")
    k_pp = _gram(samples_p, samples_p, bandwidth).mean()
    k_qp = _gram(samples_q, samples_p, bandwidth).mean()
    k_qq = _gram(samples_q, samples_q, bandwidth).mean()
    return k_pp - 2.0 * k_qp + k_qq


def resolve_bandwidth(cfg: PluginConfig, d_z: int) -> float:
    return cfg.kernel_bandwidth if cfg.kernel_bandwidth is not None else math.sqrt(d_z / 2.0)


def plugin_discriminator_loss(
    disc: LatentDiscriminator, z_l_prior: torch.Tensor, z_post: torch.Tensor
) -> torch.Tensor:
    """-log D(broadcast prior) - log(1 - D(encoder posterior)); updates disc only."""
    if z_l_prior.numel() == 0 or z_post.numel() == 0:
        raise ValueError("batches must be non-empty")
    return F.softplus(-disc.logit(z_l_prior)).mean() + F.softplus(disc.logit(z_post)).mean()


def _require_finite(value: torch.Tensor, term: str) -> None:
    if not torch.isfinite(value):
        raise RuntimeError(f"non-finite {term} term in plugin generator loss")


def plugin_generator_loss(
    mode: str,
    recon: torch.Tensor,
    disc: LatentDiscriminator | None,
    z_l_prior_batch: torch.Tensor | None,
    z_post_batch: torch.Tensor | None,
    z_l_post_batch: torch.Tensor | None,
    mu: torch.Tensor | None,
    logvar: torch.Tensor | None,
    cfg: PluginConfig,
    beta: float = 1.0,
    free_kl_threshold: float = 0.0,
) -> torch.Tensor:
    """Holistic plug-in objective for the generator-side parameters.

    AAE mode: recon + lambda_zl * (lambda_adv * Dist +/- lambda_info * MMD)
    where Dist = mean[-log(1-D(E(Y)))] + mean[-log D(z_l_prior)] and the MMD
    between the posterior- and prior-side local latents enters with the
    sign selected by cfg.info_sign ("paper" subtracts, "penalty" adds).
    VAE mode: recon + beta * free-bits KL on the local latent head.
    """
    _require_finite(recon, "reconstruction")
    if mode == MODE_VAE:
        kl = gaussian_kl(mu, logvar, free_kl_threshold)
        _require_finite(kl, "kl")
        return recon + beta * kl
    dist = (
        F.softplus(disc.logit(z_post_batch)).mean()
        + F.softplus(-disc.logit(z_l_prior_batch)).mean()
    )
    _require_finite(dist, "adversarial distance")
    mmd = mmd_biased(z_l_post_batch, z_l_prior_batch, resolve_bandwidth(cfg, z_l_post_batch.shape[-1]))
    _require_finite(mmd, "mmd")
    sign = -1.0 if cfg.info_sign == INFO_SIGN_PAPER else 1.0
    return recon + cfg.lambda_zl * (cfg.lambda_adv * dist + sign * cfg.lambda_info * mmd)


def partition_parameters(ckpt: Checkpoint) -> tuple[set[str], set[str]]:
    """Split checkpoint tensor names into (active, frozen) for plug-in training."""
    active: set[str] = set()
    frozen: set[str] = set()
    for name in ckpt.tensors:
        if name.startswith(FROZEN_PREFIXES):
            frozen.add(name)
        elif name.startswith(ACTIVE_PREFIXES):
            active.add(name)
        else:
            raise ValueError(f"unknown tensor name {name!r}")
    return active, frozen


_PLUGIN_TENSOR_PREFIXES = ("label_embed.", "broadcast.", "local_head.")


def active_parameter_fraction(ckpt: Checkpoint) -> float:
    """Fraction of base-origin parameters that plug-in training fine-tunes."""
    active, frozen = partition_parameters(ckpt)
    n_active = sum(
        ckpt.tensors[n].size for n in active if not n.startswith(_PLUGIN_TENSOR_PREFIXES)
    )
    n_frozen = sum(ckpt.tensors[n].size for n in frozen)
    return n_active / (n_active + n_frozen)


def plugin_config_to_metadata(cfg: PluginConfig) -> dict[str, str]:
    meta = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        meta[f"plugin.{f.name}"] = "none" if v is None else (repr(float(v)) if f.type == "float" else str(v))
    return meta


def plugin_config_from_metadata(meta: dict[str, str]) -> PluginConfig:
    kwargs = {}
    for f in fields(PluginConfig):
        raw = meta[f"plugin.{f.name}"]
        if f.name == "kernel_bandwidth":
            kwargs[f.name] = None if raw == "none" else float(raw)
        else:
            kwargs[f.name] = {"int": int, "float": float, "str": str}[f.type](raw)
    return PluginConfig(**kwargs)


def build_plugin_from_checkpoint(
    ckpt: Checkpoint,
) -> tuple[BaseAE, LatentDiscriminator | None, PluginNet, BaseConfig, PluginConfig, Vocabulary]:
    if ckpt.metadata.get("stage") != "plugin":
        raise ValueError("checkpoint is not a plug-in checkpoint")
    model, disc, base_cfg, vocab = build_base_from_checkpoint(ckpt)
    plugin_cfg = plugin_config_from_metadata(ckpt.metadata)
    plugin = PluginNet(
        plugin_cfg.num_classes,
        plugin_cfg.d_label,
        plugin_cfg.n_broadcast,
        base_cfg.d_z,
        vae_head=base_cfg.mode == MODE_VAE,
    )
    plugin.load_state_dict(
        {
            k: torch.from_numpy(v.copy())
            for k, v in ckpt.tensors.items()
            if k.startswith(_PLUGIN_TENSOR_PREFIXES)
        }
    )
    return model, disc, plugin, base_cfg, plugin_cfg, vocab


def _freeze_base(model: BaseAE) -> list[nn.Parameter]:
    """Freeze encoder-side tensors; return the fine-tuned base parameters."""
    active = []
    for name, param in model.named_parameters():
        if name.startswith(FROZEN_PREFIXES):
            param.requires_grad_(False)
        else:
            active.append(param)
    return active


def train_plugin(
    base_ckpt: Checkpoint, labeled: Sequence[LabeledExample], cfg: PluginConfig
) -> Checkpoint:
    """Fine-tune decoder-side tensors plus the plug-in nets on labeled data."""
    if not labeled:
        raise ValueError("empty labeled set")
    present = {ex.label for ex in labeled}
    for label in present:
        if not 0 <= label < cfg.num_classes:
            raise ValueError(f"label {label} out of range [0, {cfg.num_classes})")
    for c in range(cfg.num_classes):
        if c not in present:
            raise ValueError(f"no labeled examples for class {c}")

    model, disc, base_cfg, vocab = build_base_from_checkpoint(base_ckpt)
    base_hash = checkpoint_hash(base_ckpt)
    torch.manual_seed(cfg.seed)
    rng = random.Random(cfg.seed)
    plugin = PluginNet(
        cfg.num_classes, cfg.d_label, cfg.n_broadcast, base_cfg.d_z,
        vae_head=base_cfg.mode == MODE_VAE,
    )
    active_base = _freeze_base(model)
    opt_g = torch.optim.Adam(
        active_base + list(plugin.parameters()), lr=cfg.learning_rate
    )
    opt_d = (
        torch.optim.Adam(disc.parameters(), lr=cfg.learning_rate)
        if base_cfg.mode == MODE_AAE
        else None
    )

    n = len(labeled)
    n_batches = math.ceil(n / cfg.batch_size)
    step = 0
    start = time.perf_counter()
    # The frozen AAE encoder is deterministic, so E(Y) never changes across
    # epochs; encode the corpus once. VAE posteriors are resampled per visit.
    z_post_cache: torch.Tensor | None = None
    if base_cfg.mode == MODE_AAE:
        with torch.no_grad():
            chunks = []
            for i in range(0, n, cfg.batch_size):
                padded, lengths = pad_batch([ex.ids for ex in labeled[i : i + cfg.batch_size]])
                chunks.append(model.encode_batch(padded, lengths)[0])
            z_post_cache = torch.cat(chunks, dim=0)
    for epoch in range(cfg.epochs):
        order = list(range(n))
        rng.shuffle(order)
        for b in range(n_batches):
            idx = order[b * cfg.batch_size : (b + 1) * cfg.batch_size]
            batch = [labeled[i] for i in idx]
            clean, lengths = pad_batch([ex.ids for ex in batch])
            labels = torch.tensor([ex.label for ex in batch], dtype=torch.long)
            dec_in, targets = clean[:, :-1], clean[:, 1:]
            if z_post_cache is not None:
                z_post = z_post_cache[torch.tensor(idx, dtype=torch.long)]
            else:
                with torch.no_grad():
                    z_post, _, _, _ = model.encode_batch(clean, lengths)
            e_label = plugin.label_embed(labels)
            if base_cfg.mode == MODE_AAE:
                z_l_prior = plugin.broadcast(torch.randn(len(batch), base_cfg.d_z), e_label)
                d_loss = plugin_discriminator_loss(disc, z_l_prior.detach(), z_post)
                if not torch.isfinite(d_loss):
                    raise RuntimeError(f"non-finite discriminator loss at step {step}")
                opt_d.zero_grad()
                d_loss.backward()
                opt_d.step()
                z_l_post = plugin.broadcast(z_post, e_label)
                recon = reconstruction_loss(model.decode_logits(z_l_post, dec_in), targets)
                loss = plugin_generator_loss(
                    MODE_AAE, recon, disc, z_l_prior, z_post, z_l_post, None, None, cfg
                )
            else:
                mu_l, logvar_l = plugin.local_posterior(plugin.broadcast(z_post, e_label))
                z_l = reparameterize(mu_l, logvar_l, torch.randn(mu_l.shape))
                recon = reconstruction_loss(model.decode_logits(z_l, dec_in), targets)
                loss = plugin_generator_loss(
                    MODE_VAE, recon, None, None, None, None, mu_l, logvar_l, cfg,
                    beta=1.0, free_kl_threshold=base_cfg.free_kl_threshold,
                )
            opt_g.zero_grad()
            loss.backward()
            opt_g.step()
            step += 1
        logger.info("plugin epoch %d/%d loss %.4f", epoch + 1, cfg.epochs, float(loss.detach()))
    seconds = time.perf_counter() - start
    logger.info("plugin training finished in %.2fs (%d steps)", seconds, step)

    metadata = dict(base_ckpt.metadata)
    metadata["stage"] = "plugin"
    metadata["base_step"] = base_ckpt.metadata.get("step", "0")
    metadata["step"] = str(step)
    metadata["base_hash"] = base_hash
    metadata.update(plugin_config_to_metadata(cfg))
    tensors = collect_tensors(model, disc)
    for name, tensor in plugin.state_dict().items():
        tensors[name] = tensor.detach().cpu().numpy().astype("<f4")
    return Checkpoint(metadata=metadata, tensors=dict(sorted(tensors.items())), seconds=seconds)
