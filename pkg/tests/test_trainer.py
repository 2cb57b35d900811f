import numpy as np
import pytest
import torch

from hmdfill.data import BatchSampler, generate_synthetic_corpus, make_hmd_mask
from hmdfill.errors import CheckpointError, ConfigError, NumericalError
from hmdfill.losses import recon_loss
from hmdfill.networks import composite_output
from hmdfill.trainer import LOSS_KEYS, Trainer, TrainConfig

TINY = dict(
    base_channels=8,
    d_base_channels=8,
    batch_size=1,
    clip_len=2,
    iterations=5,
    extractor_stages=1,
)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    manifest = generate_synthetic_corpus(root, n_clips=3, n_frames=4, height=32, width=32, seed=1)
    return manifest


def make_sampler(manifest, config, seed=None):
    return BatchSampler(
        manifest,
        make_hmd_mask(32, 32),
        clip_len=config.clip_len,
        batch_size=config.batch_size,
        seed=config.seed if seed is None else seed,
    )


class TestConfig:
    def test_defaults_match_training_recipe(self):
        cfg = TrainConfig()
        assert cfg.learning_rate == pytest.approx(9.7e-5)
        assert (cfg.beta1, cfg.beta2) == (0.9, 0.999)
        w = cfg.loss_weights()
        assert (w.adv, w.fer, w.style, w.vgg, w.recon) == (1, 2, 10, 1, 1)

    def test_validation(self):
        with pytest.raises(ConfigError):
            TrainConfig(learning_rate=0)
        with pytest.raises(ConfigError):
            TrainConfig(iterations=0)
        with pytest.raises(ConfigError):
            TrainConfig.from_dict({"not_a_key": 1})

    def test_round_trip_and_hash(self):
        cfg = TrainConfig(**TINY)
        back = TrainConfig.from_dict(cfg.to_dict())
        assert back == cfg
        assert back.config_hash() == cfg.config_hash()
        assert back.config_hash() != TrainConfig(seed=99, **TINY).config_hash()


class TestTrainStep:
    def test_loss_record_contract(self, corpus):
        cfg = TrainConfig(**TINY)
        trainer = Trainer(cfg, make_sampler(corpus, cfg))
        x, gt = trainer.sampler.next_batch()
        record = trainer.train_step(x, gt)
        assert tuple(record) == LOSS_KEYS
        assert all(np.isfinite(v) for v in record.values())
        expect_total = (
            record["adv"] * 1 + record["fer"] * 2 + record["style"] * 10
            + record["vgg"] * 1 + record["recon"] * 1
        )
        assert record["total"] == pytest.approx(expect_total, abs=1e-6)

    def test_recon_only_weights_gradient(self, corpus):
        weights = dict(lambda_adv=0, lambda_fer=0, lambda_style=0, lambda_vgg=0, lambda_recon=1)
        cfg = TrainConfig(**TINY, **weights)
        t1 = Trainer(cfg, make_sampler(corpus, cfg))
        t2 = Trainer(cfg, make_sampler(corpus, cfg))
        x, gt = t1.sampler.next_batch()

        _, _, total = t1.generator_losses(x, gt)
        total.backward()

        masked, mask = t2.split_batch(x)
        comp = composite_output(t2.generator(x), masked, mask)
        recon_loss(comp, gt).backward()

        for p1, p2 in zip(t1.generator.parameters(), t2.generator.parameters()):
            torch.testing.assert_close(p1.grad, p2.grad, atol=1e-12, rtol=0)

    def test_seeded_determinism_ten_steps(self, corpus):
        cfg = TrainConfig(**TINY)
        traces = []
        for _ in range(2):
            trainer = Trainer(cfg, make_sampler(corpus, cfg))
            rows = []
            for _ in range(10):
                x, gt = trainer.sampler.next_batch()
                rows.append(trainer.train_step(x, gt))
            traces.append(rows)
        assert traces[0] == traces[1]

    def test_update_isolation(self, corpus):
        # zeroing one optimizer's learning rate freezes exactly that network
        cfg = TrainConfig(**TINY)
        trainer = Trainer(cfg, make_sampler(corpus, cfg))
        for group in trainer.opt_g.param_groups:
            group["lr"] = 0.0
        g_before = [p.detach().clone() for p in trainer.generator.parameters()]
        d_before = [p.detach().clone() for p in trainer.discriminator.parameters()]
        x, gt = trainer.sampler.next_batch()
        trainer.train_step(x, gt)
        assert all(torch.equal(a, b) for a, b in zip(g_before, trainer.generator.parameters()))
        assert not all(torch.equal(a, b) for a, b in zip(d_before, trainer.discriminator.parameters()))

        trainer2 = Trainer(cfg, make_sampler(corpus, cfg))
        for group in trainer2.opt_d.param_groups:
            group["lr"] = 0.0
        d2_before = [p.detach().clone() for p in trainer2.discriminator.parameters()]
        x, gt = trainer2.sampler.next_batch()
        trainer2.train_step(x, gt)
        assert all(torch.equal(a, b) for a, b in zip(d2_before, trainer2.discriminator.parameters()))

    def test_non_finite_batch_aborts_with_diagnostic(self, corpus):
        cfg = TrainConfig(**TINY)
        trainer = Trainer(cfg, make_sampler(corpus, cfg))
        x, gt = trainer.sampler.next_batch()
        x[0, 0, 0, 0, 0] = float("nan")
        with pytest.raises(NumericalError, match="batch 0"):
            trainer.train_step(x, gt)


class TestCheckpoint:
    def test_save_load_bit_identical(self, corpus, tmp_path):
        cfg = TrainConfig(**TINY)
        trainer = Trainer(cfg, make_sampler(corpus, cfg))
        x, gt = trainer.sampler.next_batch()
        trainer.train_step(x, gt)
        path = trainer.save_checkpoint(tmp_path / "ckpt")
        loaded = Trainer.load_checkpoint(path)
        for a, b in zip(trainer.generator.state_dict().values(), loaded.generator.state_dict().values()):
            assert torch.equal(a, b)
        for a, b in zip(
            trainer.discriminator.state_dict().values(), loaded.discriminator.state_dict().values()
        ):
            assert torch.equal(a, b)
        assert loaded.iteration == trainer.iteration
        assert loaded.loss_history == trainer.loss_history

    def test_resume_equivalence(self, corpus, tmp_path):
        cfg = TrainConfig(**TINY)
        trainer = Trainer(cfg, make_sampler(corpus, cfg))
        for _ in range(3):
            x, gt = trainer.sampler.next_batch()
            trainer.train_step(x, gt)
        path = trainer.save_checkpoint(tmp_path / "mid")

        # uninterrupted continuation
        for _ in range(5):
            x, gt = trainer.sampler.next_batch()
            trainer.train_step(x, gt)

        # resumed continuation with a fresh sampler restored from the checkpoint
        sampler = make_sampler(corpus, cfg, seed=12345)
        resumed = Trainer.load_checkpoint(path, sampler=sampler)
        for _ in range(5):
            x, gt = sampler.next_batch()
            resumed.train_step(x, gt)

        assert resumed.iteration == trainer.iteration
        for a, b in zip(trainer.generator.parameters(), resumed.generator.parameters()):
            assert torch.equal(a, b)
        for a, b in zip(trainer.discriminator.parameters(), resumed.discriminator.parameters()):
            assert torch.equal(a, b)

    def test_corrupt_manifest_clean_error(self, corpus, tmp_path):
        cfg = TrainConfig(**TINY)
        trainer = Trainer(cfg, make_sampler(corpus, cfg))
        path = trainer.save_checkpoint(tmp_path / "ckpt")
        (path / "manifest.txt").write_text("garbage without separator\n")
        with pytest.raises(CheckpointError):
            Trainer.load_checkpoint(path)

    def test_version_mismatch_refused(self, corpus, tmp_path):
        cfg = TrainConfig(**TINY)
        trainer = Trainer(cfg, make_sampler(corpus, cfg))
        path = trainer.save_checkpoint(tmp_path / "ckpt")
        manifest = (path / "manifest.txt").read_text().replace("format_version: 1", "format_version: 99")
        (path / "manifest.txt").write_text(manifest)
        with pytest.raises(CheckpointError, match="version"):
            Trainer.load_checkpoint(path)

    def test_hash_mismatch_refused(self, corpus, tmp_path):
        cfg = TrainConfig(**TINY)
        trainer = Trainer(cfg, make_sampler(corpus, cfg))
        path = trainer.save_checkpoint(tmp_path / "ckpt")
        cfg2 = TrainConfig(seed=77, **TINY)
        (path / "config.json").write_text(__import__("json").dumps(cfg2.to_dict()))
        with pytest.raises(CheckpointError, match="hash"):
            Trainer.load_checkpoint(path)


class TestFit:
    def test_fit_writes_log_and_checkpoints(self, corpus, tmp_path):
        cfg = TrainConfig(**{**TINY, "iterations": 3, "checkpoint_every": 2})
        trainer = Trainer(cfg, make_sampler(corpus, cfg))
        log_path = tmp_path / "loss.log"
        trainer.fit(log_path=log_path, checkpoint_dir=tmp_path / "ckpts")
        lines = log_path.read_text().strip().splitlines()
        assert len(lines) == 3
        for line in lines:
            fields = dict(kv.split("=") for kv in line.split())
            assert set(fields) == {"step", *LOSS_KEYS}
        assert (tmp_path / "ckpts" / "iter_000002").is_dir()
        assert (tmp_path / "ckpts" / "final").is_dir()
        assert trainer.running_average("recon") > 0
