"""CLI contracts: flags, exit codes, file outputs, seed handling."""
import pytest

from pcae.checkpoint import load_checkpoint
from pcae.cli import run_command
from pcae.config import parse_run_config

from synth import labeled_pairs, unlabeled_corpus, write_tsv

CONFIG_TEXT = """\
# desk-scale smoke configuration
[base]
d_embed = 16
d_hidden = 24
d_z = 8
d_disc = 12
epochs = 3
batch_size = 16
learning_rate = 1e-3
max_vocab = 500

[plugin]
d_label = 4
n_broadcast = 4
epochs = 3
batch_size = 16
learning_rate = 1e-3
lambda_adv = 1.0
lambda_info = 1.0

[decoding]
strategy = categorical
temperature = 0.8
max_len = 12

[run]
seed = 42
"""


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "run.cfg").write_text(CONFIG_TEXT)
    (root / "train.txt").write_text("\n".join(unlabeled_corpus(2, 120, 0)) + "\n")
    write_tsv(root / "labeled.tsv", labeled_pairs(2, 20, 1))
    return root


@pytest.fixture(scope="module")
def pipeline(workdir):
    """Run the full pipeline once; individual tests inspect its outputs."""
    cfg = str(workdir / "run.cfg")
    base = str(workdir / "base.ckpt")
    plugin = str(workdir / "plugin.ckpt")
    gen = str(workdir / "gen.tsv")
    report = str(workdir / "report.txt")
    latents = str(workdir / "latents.tsv")
    codes = [
        run_command(["pretrain", "--config", cfg, "--corpus", str(workdir / "train.txt"), "--out", base]),
        run_command(["plugin-train", "--config", cfg, "--base", base, "--labeled", str(workdir / "labeled.tsv"), "--out", plugin]),
        run_command(["generate", "--plugin", plugin, "--label", "1", "--num", "500", "--out", gen, "--tsv"]),
        run_command(["evaluate", "--plugin", plugin, "--labeled", str(workdir / "labeled.tsv"), "--generated", gen, "--report", report]),
        run_command(["export-latents", "--plugin", plugin, "--per-class", "8", "--out", latents]),
    ]
    return workdir, codes


class TestPipeline:
    def test_all_commands_exit_zero(self, pipeline):
        _, codes = pipeline
        assert codes == [0, 0, 0, 0, 0]

    def test_generate_writes_exactly_the_requested_count(self, pipeline):
        workdir, _ = pipeline
        lines = (workdir / "gen.tsv").read_text().splitlines()
        assert len(lines) == 500
        assert all(line.startswith("1\t") for line in lines)

    def test_vocabulary_file_written_with_header(self, pipeline):
        workdir, _ = pipeline
        vocab_lines = (workdir / "base.ckpt.vocab").read_text().splitlines()
        assert vocab_lines[:4] == ["<pad>", "<bos>", "<eos>", "<unk>"]

    def test_report_files_exist(self, pipeline):
        workdir, _ = pipeline
        assert (workdir / "report.txt").is_file()
        assert (workdir / "report.txt.tsv").is_file()
        assert (workdir / "report.txt.png").is_file()
        text = (workdir / "report.txt").read_text()
        assert text.startswith("accuracy: ")

    def test_latent_exports_exist_with_projection(self, pipeline):
        workdir, _ = pipeline
        rows = (workdir / "latents.tsv").read_text().splitlines()
        assert len(rows) == 16  # 2 classes x 8
        assert all(len(r.split("\t")) == 9 for r in rows)  # label + 8 dims
        proj = (workdir / "latents.tsv.2d.tsv").read_text().splitlines()
        assert len(proj) == 16
        assert all(len(r.split("\t")) == 3 for r in proj)
        assert (workdir / "latents.tsv.png").is_file()

    def test_checkpoints_embed_stage_and_hashes(self, pipeline):
        workdir, _ = pipeline
        base = load_checkpoint(workdir / "base.ckpt")
        plugin = load_checkpoint(workdir / "plugin.ckpt")
        assert base.metadata["stage"] == "base"
        assert plugin.metadata["stage"] == "plugin"
        assert plugin.metadata["vocab_hash"] == base.metadata["vocab_hash"]
        assert len(plugin.metadata["base_hash"]) == 64

    def test_generate_is_idempotent(self, pipeline):
        workdir, _ = pipeline
        out = workdir / "gen_again.tsv"
        code = run_command(
            ["generate", "--plugin", str(workdir / "plugin.ckpt"), "--label", "1",
             "--num", "500", "--out", str(out), "--tsv"]
        )
        assert code == 0
        assert out.read_bytes() == (workdir / "gen.tsv").read_bytes()


class TestExitCodes:
    def test_no_arguments_prints_usage(self, capsys):
        assert run_command([]) == 1
        assert "usage" in capsys.readouterr().err.lower()

    def test_unknown_subcommand(self, capsys):
        assert run_command(["frobnicate"]) == 1

    def test_unknown_flag(self, capsys):
        assert run_command(["generate", "--plugin", "x", "--label", "0", "--num", "1", "--frob"]) == 1

    def test_missing_required_flag(self, capsys):
        assert run_command(["pretrain"]) == 1

    def test_missing_checkpoint_file(self, capsys):
        assert run_command(["generate", "--plugin", "absent.ckpt", "--label", "0", "--num", "1"]) == 2
        assert "absent.ckpt" in capsys.readouterr().err

    def test_invalid_label_is_runtime_error(self, pipeline, capsys):
        workdir, _ = pipeline
        code = run_command(
            ["generate", "--plugin", str(workdir / "plugin.ckpt"), "--label", "99", "--num", "1"]
        )
        assert code == 2
        assert "invalid label" in capsys.readouterr().err

    def test_generate_rejects_base_checkpoint(self, pipeline, capsys):
        workdir, _ = pipeline
        code = run_command(
            ["generate", "--plugin", str(workdir / "base.ckpt"), "--label", "0", "--num", "1"]
        )
        assert code == 2

    def test_evaluate_rejects_labels_beyond_classifier(self, pipeline, tmp_path, capsys):
        workdir, _ = pipeline
        bad = tmp_path / "bad_gen.tsv"
        bad.write_text("7\tsome generated text\n")
        code = run_command(
            ["evaluate", "--plugin", str(workdir / "plugin.ckpt"),
             "--labeled", str(workdir / "labeled.tsv"), "--generated", str(bad),
             "--report", str(tmp_path / "rep.txt")]
        )
        assert code == 2
        assert "outside" in capsys.readouterr().err

    def test_vocab_hash_mismatch(self, pipeline, tmp_path, capsys):
        workdir, _ = pipeline
        # overwrite the sidecar vocabulary with a different one
        stale = tmp_path / "stale.ckpt"
        stale.write_bytes((workdir / "base.ckpt").read_bytes())
        (tmp_path / "stale.ckpt.vocab").write_text("<pad>\n<bos>\n<eos>\n<unk>\nzzz\n")
        code = run_command(
            ["plugin-train", "--config", str(workdir / "run.cfg"), "--base", str(stale),
             "--labeled", str(workdir / "labeled.tsv"), "--out", str(tmp_path / "p.ckpt")]
        )
        assert code == 2
        assert "hash mismatch" in capsys.readouterr().err


class TestConfig:
    def test_unknown_key_rejected(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[base]\nd_embedd = 4\n")
        with pytest.raises(ValueError, match="unknown key"):
            parse_run_config(bad)

    def test_unknown_section_rejected(self, tmp_path):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[basement]\nx = 1\n")
        with pytest.raises(ValueError, match="unknown config section"):
            parse_run_config(bad)

    def test_defaults_and_seed_derivation(self, tmp_path):
        cfg_file = tmp_path / "min.cfg"
        cfg_file.write_text("[run]\nseed = 9\n")
        cfg = parse_run_config(cfg_file)
        assert cfg.seed == 9
        assert cfg.base.seed == 9
        assert cfg.plugin.seed == 10
        assert cfg.decoding.seed == 11
        assert cfg.base.d_z == 32  # documented desk default

    def test_comments_and_inline_comments(self, tmp_path):
        cfg_file = tmp_path / "c.cfg"
        cfg_file.write_text("# top comment\n[base]\nd_z = 16  # inline\n")
        assert parse_run_config(cfg_file).base.d_z == 16

    def test_env_seed_override(self, workdir, tmp_path, monkeypatch):
        out_a = tmp_path / "a.ckpt"
        out_b = tmp_path / "b.ckpt"
        monkeypatch.setenv("PCAE_SEED", "7")
        assert run_command(
            ["pretrain", "--config", str(workdir / "run.cfg"),
             "--corpus", str(workdir / "train.txt"), "--out", str(out_a)]
        ) == 0
        monkeypatch.setenv("PCAE_SEED", "8")
        assert run_command(
            ["pretrain", "--config", str(workdir / "run.cfg"),
             "--corpus", str(workdir / "train.txt"), "--out", str(out_b)]
        ) == 0
        assert out_a.read_bytes() != out_b.read_bytes()
        assert load_checkpoint(out_a).metadata["run.seed"] == "7"
