"""Prior sampling, logit filtering, and conditional decoding."""
import pytest
import torch

from pcae.base_ae import BaseConfig, train_base
from pcae.corpus import BOS_ID, EOS_ID, PAD_ID, LabeledExample, build_vocabulary, encode_line
from pcae.generation import (
    DecodingConfig,
    _decode_ids,
    derive_seed,
    filter_logits,
    generate_conditional,
    sample_prior,
)
from pcae.plugin_ae import PluginConfig, build_plugin_from_checkpoint, train_plugin

from synth import labeled_pairs, unlabeled_corpus


@pytest.fixture(scope="module")
def tiny_plugin_ckpt():
    lines = unlabeled_corpus(2, 64, 0)
    vocab = build_vocabulary(lines, 1000)
    corpus = [encode_line(vocab, line) for line in lines]
    base = train_base(
        BaseConfig(d_embed=8, d_hidden=10, d_z=4, d_disc=6, epochs=2, batch_size=16, seed=1),
        corpus,
        vocab,
    )
    labeled = [
        LabeledExample(label, tuple(encode_line(vocab, text)))
        for label, text in labeled_pairs(2, 12, 3)
    ]
    cfg = PluginConfig(
        num_classes=2, d_label=3, n_broadcast=3, epochs=2, batch_size=16,
        learning_rate=1e-3, lambda_adv=1.0, lambda_info=1.0, seed=5,
    )
    return train_plugin(base, labeled, cfg)


class TestSamplePrior:
    def test_standard_normal_statistics(self):
        rng = torch.Generator()
        rng.manual_seed(0)
        draws = torch.stack([sample_prior(32, rng).z for _ in range(10_000)])
        means = draws.mean(dim=0)
        variances = draws.var(dim=0)
        assert means.abs().max() < 0.05
        assert variances.min() > 0.94 and variances.max() < 1.06

    def test_same_state_gives_identical_vector(self):
        a = torch.Generator()
        a.manual_seed(77)
        b = torch.Generator()
        b.manual_seed(77)
        assert torch.equal(sample_prior(16, a).z, sample_prior(16, b).z)

    def test_zero_dimension_rejected(self):
        rng = torch.Generator()
        with pytest.raises(ValueError, match="d_z"):
            sample_prior(0, rng)


class TestFilterLogits:
    def test_greedy_one_hot_on_argmax(self):
        probs = filter_logits(torch.tensor([2.0, 1.0, 0.0]), DecodingConfig(strategy="greedy"))
        assert probs.tolist() == [1.0, 0.0, 0.0]

    def test_greedy_tie_takes_lowest_index(self):
        probs = filter_logits(torch.tensor([1.0, 3.0, 3.0]), DecodingConfig(strategy="greedy"))
        assert probs.tolist() == [0.0, 1.0, 0.0]

    def test_low_temperature_categorical_approaches_greedy(self):
        logits = torch.tensor([2.0, 1.0, 0.5, -1.0], dtype=torch.float64)
        cold = filter_logits(logits, DecodingConfig(strategy="categorical", temperature=1e-3))
        greedy = filter_logits(logits, DecodingConfig(strategy="greedy"))
        assert torch.allclose(cold, greedy, atol=1e-9)

    def test_nucleus_example(self):
        logits = torch.log(torch.tensor([4.0, 2.0, 1.0, 1.0], dtype=torch.float64))
        cfg = DecodingConfig(strategy="topk_nucleus", temperature=1.0, top_k=2, top_p=1.0)
        probs = filter_logits(logits, cfg)
        expected = torch.tensor([2 / 3, 1 / 3, 0.0, 0.0], dtype=torch.float64)
        assert torch.allclose(probs, expected, atol=1e-9)

    def test_nucleus_includes_crossing_token(self):
        logits = torch.log(torch.tensor([0.5, 0.3, 0.2], dtype=torch.float64))
        cfg = DecodingConfig(strategy="topk_nucleus", temperature=1.0, top_k=3, top_p=0.6)
        probs = filter_logits(logits, cfg)
        expected = torch.tensor([0.625, 0.375, 0.0], dtype=torch.float64)
        assert torch.allclose(probs, expected, atol=1e-9)

    def test_full_topk_nucleus_equals_categorical(self):
        torch.manual_seed(1)
        for _ in range(20):
            logits = torch.randn(17, dtype=torch.float64) * 3
            cat = filter_logits(logits, DecodingConfig(strategy="categorical", temperature=0.7))
            nuc = filter_logits(
                logits,
                DecodingConfig(strategy="topk_nucleus", temperature=0.7, top_k=17, top_p=1.0),
            )
            assert torch.allclose(cat, nuc, atol=1e-9)

    def test_output_is_probability_vector(self):
        torch.manual_seed(2)
        for strategy in ("greedy", "categorical", "topk_nucleus"):
            for _ in range(20):
                logits = torch.randn(11) * 5
                probs = filter_logits(
                    logits, DecodingConfig(strategy=strategy, temperature=0.8, top_k=4, top_p=0.7)
                )
                assert (probs >= 0).all()
                assert abs(float(probs.sum()) - 1.0) < 1e-9

    def test_all_negative_infinity_rejected(self):
        logits = torch.full((5,), float("-inf"))
        with pytest.raises(ValueError, match="-inf"):
            filter_logits(logits, DecodingConfig())

    def test_config_validation(self):
        with pytest.raises(ValueError):
            DecodingConfig(strategy="beam")
        with pytest.raises(ValueError):
            DecodingConfig(temperature=0.0)
        with pytest.raises(ValueError):
            DecodingConfig(top_p=0.0)


class TestGenerateConditional:
    def test_returns_requested_count(self, tiny_plugin_ckpt):
        sentences = generate_conditional(tiny_plugin_ckpt, 0, 7, DecodingConfig(seed=3, max_len=10))
        assert len(sentences) == 7
        assert all(isinstance(s, str) for s in sentences)

    def test_invalid_label_rejected(self, tiny_plugin_ckpt):
        with pytest.raises(ValueError, match="invalid label"):
            generate_conditional(tiny_plugin_ckpt, 9, 1, DecodingConfig())

    def test_invalid_count_rejected(self, tiny_plugin_ckpt):
        with pytest.raises(ValueError, match="count"):
            generate_conditional(tiny_plugin_ckpt, 0, 0, DecodingConfig())

    def test_deterministic_given_seed(self, tiny_plugin_ckpt):
        cfg = DecodingConfig(seed=11, max_len=10)
        assert generate_conditional(tiny_plugin_ckpt, 1, 6, cfg) == generate_conditional(
            tiny_plugin_ckpt, 1, 6, cfg
        )

    def test_greedy_repeats_are_identical(self, tiny_plugin_ckpt):
        cfg = DecodingConfig(strategy="greedy", seed=4, max_len=10)
        a = generate_conditional(tiny_plugin_ckpt, 0, 3, cfg)
        b = generate_conditional(tiny_plugin_ckpt, 0, 3, cfg)
        assert a == b

    def test_token_sequences_respect_max_len_and_exclude_pad(self, tiny_plugin_ckpt):
        model, _, plugin, base_cfg, _, _ = build_plugin_from_checkpoint(tiny_plugin_ckpt)
        cfg = DecodingConfig(seed=8, max_len=6)
        with torch.no_grad():
            for i in range(20):
                rng = torch.Generator()
                rng.manual_seed(derive_seed(cfg.seed, i))
                z_g = torch.randn(base_cfg.d_z, generator=rng)
                z_l = plugin.broadcast(z_g, plugin.label_embed.weight[i % 2])
                ids = _decode_ids(model, z_l, cfg, rng)
                assert ids[0] == BOS_ID and ids[-1] == EOS_ID
                assert len(ids) <= cfg.max_len + 2
                assert PAD_ID not in ids
                assert BOS_ID not in ids[1:]

    def test_derive_seed_is_stable_and_spread(self):
        seeds = {derive_seed(42, i) for i in range(1000)}
        assert len(seeds) == 1000
        assert derive_seed(42, 5) == derive_seed(42, 5)


@pytest.fixture(scope="module")
def vae_plugin_ckpt():
    lines = unlabeled_corpus(2, 64, 10)
    vocab = build_vocabulary(lines, 1000)
    corpus = [encode_line(vocab, line) for line in lines]
    base = train_base(
        BaseConfig(
            mode="VAE", d_embed=8, d_hidden=10, d_z=4, epochs=2, batch_size=16,
            seed=11, lambda_adv=1.0,
        ),
        corpus,
        vocab,
    )
    labeled = [
        LabeledExample(label, tuple(encode_line(vocab, text)))
        for label, text in labeled_pairs(2, 12, 12)
    ]
    cfg = PluginConfig(
        num_classes=2, d_label=3, n_broadcast=3, epochs=2, batch_size=16,
        learning_rate=1e-3, seed=13,
    )
    return train_plugin(base, labeled, cfg)


class TestVaeModePipeline:
    def test_generation_samples_local_posterior(self, vae_plugin_ckpt):
        cfg = DecodingConfig(seed=14, max_len=10)
        sentences = generate_conditional(vae_plugin_ckpt, 0, 5, cfg)
        assert len(sentences) == 5
        assert sentences == generate_conditional(vae_plugin_ckpt, 0, 5, cfg)

    def test_latent_export_works_in_vae_mode(self, vae_plugin_ckpt):
        from pcae.evaluation import export_local_latents

        rows = export_local_latents(vae_plugin_ckpt, per_class=8, seed=15)
        assert len(rows) == 16
        assert all(vec.shape == (4,) for _, vec in rows)
