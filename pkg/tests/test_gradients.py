"""Analytic vs central-finite-difference gradients on miniature models."""
import pytest

from pcae.base_ae import BaseConfig, train_base
from pcae.corpus import LabeledExample, build_vocabulary, encode_line
from pcae.plugin_ae import PluginConfig, partition_parameters, train_plugin

from grad_utils import gradient_suite
from synth import labeled_pairs, unlabeled_corpus


@pytest.fixture(scope="module")
def suite_results():
    return gradient_suite()


@pytest.mark.parametrize(
    "check",
    [
        "reconstruction",
        "aae_discriminator",
        "aae_encoder_adversarial",
        "gaussian_kl_free_bits",
        "vae_objective",
        "plugin_generator_paper",
        "plugin_generator_penalty",
        "plugin_generator_vae",
    ],
)
def test_finite_difference_agreement(suite_results, check):
    max_rel, where = suite_results[check]
    assert max_rel < 1e-4, f"{check}: worst {max_rel:.3e} at {where}"


def test_frozen_parameters_receive_zero_updates():
    lines = unlabeled_corpus(2, 48, 0)
    vocab = build_vocabulary(lines, 1000)
    corpus = [encode_line(vocab, line) for line in lines]
    base = train_base(
        BaseConfig(d_embed=6, d_hidden=8, d_z=4, d_disc=5, epochs=1, batch_size=16, seed=0),
        corpus,
        vocab,
    )
    labeled = [
        LabeledExample(label, tuple(encode_line(vocab, text)))
        for label, text in labeled_pairs(2, 10, 1)
    ]
    plugin = train_plugin(
        base,
        labeled,
        PluginConfig(
            num_classes=2, d_label=2, n_broadcast=2, epochs=3, batch_size=8,
            learning_rate=1e-2, lambda_adv=1.0, lambda_info=1.0, seed=2,
        ),
    )
    _, frozen = partition_parameters(plugin)
    assert frozen
    for name in frozen:
        assert plugin.tensors[name].tobytes() == base.tensors[name].tobytes()
