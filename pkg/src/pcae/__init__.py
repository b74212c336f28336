"""Semi-supervised controllable text generation with a plug-in
label-conditioned auto-encoder."""

__version__ = "0.1.0"

from .base_ae import (
    BaseAE,
    BaseConfig,
    GlobalLatent,
    LatentDiscriminator,
    aae_discriminator_loss,
    aae_encoder_adversarial_loss,
    cyclic_anneal_beta,
    encode,
    gaussian_kl,
    reconstruction_loss,
    teacher_forced_logits,
    train_base,
)
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import RunConfig, default_run_config, parse_run_config
from .corpus import (
    LabeledExample,
    NoiseConfig,
    Vocabulary,
    apply_word_dropout,
    build_vocabulary,
    decode_ids,
    encode_line,
    sample_labeled_subset,
)
from .evaluation import (
    ClassifierModel,
    MetricsReport,
    control_metrics,
    distinct_n,
    export_local_latents,
    pca_project_2d,
    record_timing,
    train_attribute_classifier,
)
from .generation import DecodingConfig, filter_logits, generate_conditional, sample_prior
from .plugin_ae import (
    BroadcastNet,
    LocalLatent,
    PluginConfig,
    PluginNet,
    broadcast_forward,
    embed_label,
    gaussian_kernel,
    mmd_biased,
    partition_parameters,
    plugin_discriminator_loss,
    plugin_generator_loss,
    train_plugin,
)
