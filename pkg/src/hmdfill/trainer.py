"""Adversarial training loop, run configuration, and checkpointing.

Each step performs one discriminator update (Wasserstein objective on real
vs composited-fake scores, generator detached) followed by one generator
update on the weighted total loss. All stochastic choices flow from seeded
generators captured in checkpoints, so a save/load/resume sequence
reproduces an uninterrupted run bit for bit.

A checkpoint is a directory holding one tensor archive per network, a
trainer-state archive (optimizers, counters, RNG and sampler states, loss
history), the resolved config, and a plain-text manifest carrying the
format version, iteration count, loss weights, and config hash.
"""
from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .data import CH_MASK, CH_RGB, BatchSampler
from .errors import CheckpointError, ConfigError, NumericalError
from .features import make_extractor, make_scorer
from .losses import (
    LossWeights,
    adv_loss_d,
    adv_loss_g,
    fer_loss,
    recon_loss,
    style_loss,
    total_loss,
    vgg_loss,
)
from .networks import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    composite_output,
)
from .temporal_shift import ShiftSpec

log = logging.getLogger(__name__)

CHECKPOINT_FORMAT_VERSION = 1
MANIFEST_NAME = "manifest.txt"


@dataclass
class TrainConfig:
    """Hyperparameters and plumbing knobs of one training run."""

    learning_rate: float = 9.7e-5
    beta1: float = 0.9
    beta2: float = 0.999
    lambda_adv: float = 1.0
    lambda_fer: float = 2.0
    lambda_style: float = 10.0
    lambda_vgg: float = 1.0
    lambda_recon: float = 1.0
    batch_size: int = 2
    clip_len: int = 8
    iterations: int = 200
    seed: int = 0
    device: str = "cpu"
    checkpoint_every: int = 100
    grad_clip: float = 0.0  # 0 disables clipping
    base_channels: int = 32
    d_base_channels: int = 32
    shift_fraction: float = 0.25
    shift_direction: str = "online"
    learnable_shift: bool = True
    negative_slope: float = 0.2
    extractor: str = "random-projection"
    extractor_seed: int = 1234
    extractor_stages: int = 2
    scorer: str = "random-projection"
    scorer_seed: int = 4321
    reference_index: int = 0
    use_landmarks: bool = True

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigError(f"learning rate must be > 0, got {self.learning_rate}")
        if self.iterations < 1:
            raise ConfigError(f"iteration budget must be >= 1, got {self.iterations}")
        if self.batch_size < 1 or self.clip_len < 1:
            raise ConfigError("batch size and clip length must be >= 1")

    def loss_weights(self) -> LossWeights:
        return LossWeights(
            adv=self.lambda_adv,
            fer=self.lambda_fer,
            style=self.lambda_style,
            vgg=self.lambda_vgg,
            recon=self.lambda_recon,
        )

    def generator_config(self) -> GeneratorConfig:
        return GeneratorConfig(
            base_channels=self.base_channels,
            shift=ShiftSpec(self.shift_fraction, self.shift_direction, self.learnable_shift),
            negative_slope=self.negative_slope,
        )

    def discriminator_config(self) -> DiscriminatorConfig:
        return DiscriminatorConfig(
            base_channels=self.d_base_channels,
            negative_slope=self.negative_slope,
        )

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(payload) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**payload)

    def config_hash(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(canon.encode()).hexdigest()[:12]


LOSS_KEYS = ("adv", "fer", "style", "vgg", "recon", "total")


class Trainer:
    """Owns both networks, their optimizers, and the step/checkpoint logic."""

    def __init__(self, config: TrainConfig, sampler: BatchSampler | None = None):
        self.config = config
        self.sampler = sampler
        torch.manual_seed(config.seed)
        self.generator = Generator(config.generator_config())
        self.discriminator = Discriminator(config.discriminator_config())
        self.extractor = make_extractor(config.extractor, config.extractor_seed, config.extractor_stages)
        self.scorer = make_scorer(config.scorer, config.scorer_seed)
        self.weights = config.loss_weights()
        self.opt_g = torch.optim.Adam(
            self.generator.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2)
        )
        self.opt_d = torch.optim.Adam(
            self.discriminator.parameters(), lr=config.learning_rate, betas=(config.beta1, config.beta2)
        )
        self.iteration = 0
        self.loss_history: list[dict] = []

    @staticmethod
    def split_batch(x: torch.Tensor):
        """Masked RGB frames and the mask channel from a generator input batch."""
        masked = x[:, :, CH_RGB]
        mask = x[:, :, CH_MASK : CH_MASK + 1]
        return masked, mask

    def generator_losses(self, x: torch.Tensor, gt: torch.Tensor):
        """Composited output and the five weighted-loss components."""
        masked, mask = self.split_batch(x)
        raw = self.generator(x)
        comp = composite_output(raw, masked, mask)
        scores = self.discriminator(comp, mask)
        parts = {
            "adv": adv_loss_g(scores),
            "fer": fer_loss(gt, comp, self.scorer),
            "style": style_loss(comp, gt, self.extractor),
            "vgg": vgg_loss(comp, gt, self.extractor),
            "recon": recon_loss(comp, gt),
        }
        total = total_loss(parts["adv"], parts["fer"], parts["style"], parts["vgg"], parts["recon"], self.weights)
        return comp, parts, total

    def _clip(self, params) -> None:
        if self.config.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, self.config.grad_clip)

    def train_step(self, x: torch.Tensor, gt: torch.Tensor) -> dict:
        """One discriminator update then one generator update.

        Returns the loss record: the five components plus the total. Raises
        NumericalError (naming the offending iteration) on non-finite losses.
        """
        try:
            d_loss, parts, total = self._step_inner(x, gt)
        except NumericalError as exc:
            raise NumericalError(f"batch {self.iteration}: {exc}") from exc

        record = {k: float(v.detach()) for k, v in parts.items()}
        record["total"] = float(total.detach())
        record["d"] = float(d_loss.detach())
        self.iteration += 1
        self.loss_history.append(record)
        return {k: record[k] for k in LOSS_KEYS}

    def _step_inner(self, x: torch.Tensor, gt: torch.Tensor):
        masked, mask = self.split_batch(x)

        # discriminator update on real vs composited fake, generator detached
        with torch.no_grad():
            fake = composite_output(self.generator(x), masked, mask)
        self.opt_d.zero_grad(set_to_none=True)
        d_loss = adv_loss_d(self.discriminator(gt, mask), self.discriminator(fake, mask))
        d_loss.backward()
        self._clip(self.discriminator.parameters())
        self.opt_d.step()

        # generator update on the weighted total
        self.opt_g.zero_grad(set_to_none=True)
        self.opt_d.zero_grad(set_to_none=True)
        _, parts, total = self.generator_losses(x, gt)
        total.backward()
        self._clip(self.generator.parameters())
        self.opt_g.step()
        return d_loss, parts, total

    def fit(self, log_path=None, checkpoint_dir=None, metrics_path=None, on_step=None) -> None:
        """Run the configured iteration budget with logging and checkpoint cadence.

        ``log_path`` gets one plain-text line per step; ``metrics_path`` (optional)
        gets the same records as JSON lines for machine consumption.
        """
        if self.sampler is None:
            raise ConfigError("fit() needs a batch sampler")
        log_fh = open(log_path, "a", encoding="ascii") if log_path else None
        metrics_fh = open(metrics_path, "a", encoding="ascii") if metrics_path else None
        try:
            while self.iteration < self.config.iterations:
                step = self.iteration
                x, gt = self.sampler.next_batch()
                record = self.train_step(x, gt)
                line = f"step={step} " + " ".join(
                    f"{k}={record[k]:.6f}" for k in LOSS_KEYS
                )
                log.info(line)
                if log_fh:
                    log_fh.write(line + "\n")
                    log_fh.flush()
                if metrics_fh:
                    # full history record, including the discriminator loss
                    metrics_fh.write(json.dumps({"step": step, **self.loss_history[-1]}) + "\n")
                if on_step:
                    on_step(self.iteration, record)
                if checkpoint_dir and self.iteration % self.config.checkpoint_every == 0:
                    self.save_checkpoint(Path(checkpoint_dir) / f"iter_{self.iteration:06d}")
            if checkpoint_dir:
                self.save_checkpoint(Path(checkpoint_dir) / "final")
        finally:
            if log_fh:
                log_fh.close()
            if metrics_fh:
                metrics_fh.close()

    def running_average(self, key: str = "recon", window: int = 10) -> float:
        """Mean of a loss component over the most recent ``window`` steps."""
        tail = [r[key] for r in self.loss_history[-window:]]
        return float(np.mean(tail)) if tail else float("nan")

    def save_checkpoint(self, directory) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        torch.save(self.generator.state_dict(), directory / "generator.pt")
        torch.save(self.discriminator.state_dict(), directory / "discriminator.pt")
        state = {
            "iteration": self.iteration,
            "opt_g": self.opt_g.state_dict(),
            "opt_d": self.opt_d.state_dict(),
            "torch_rng": torch.get_rng_state(),
            "sampler": self.sampler.rng_state() if self.sampler else None,
            "loss_history": self.loss_history,
        }
        torch.save(state, directory / "trainer_state.pt")
        (directory / "config.json").write_text(
            json.dumps(self.config.to_dict(), indent=2) + "\n", encoding="ascii"
        )
        manifest = [
            f"format_version: {CHECKPOINT_FORMAT_VERSION}",
            f"iteration: {self.iteration}",
            f"config_hash: {self.config.config_hash()}",
            f"lambda_adv: {self.weights.adv}",
            f"lambda_fer: {self.weights.fer}",
            f"lambda_style: {self.weights.style}",
            f"lambda_vgg: {self.weights.vgg}",
            f"lambda_recon: {self.weights.recon}",
        ]
        (directory / MANIFEST_NAME).write_text("\n".join(manifest) + "\n", encoding="ascii")
        return directory

    @staticmethod
    def read_manifest(directory) -> dict:
        path = Path(directory) / MANIFEST_NAME
        if not path.exists():
            raise CheckpointError(f"checkpoint manifest missing: {path}")
        fields = {}
        for line in path.read_text(encoding="ascii").splitlines():
            if not line.strip():
                continue
            if ":" not in line:
                raise CheckpointError(f"corrupt checkpoint manifest line: {line!r}")
            key, _, value = line.partition(":")
            fields[key.strip()] = value.strip()
        required = {"format_version", "iteration", "config_hash"}
        missing = required - set(fields)
        if missing:
            raise CheckpointError(f"checkpoint manifest missing fields: {sorted(missing)}")
        if int(fields["format_version"]) != CHECKPOINT_FORMAT_VERSION:
            raise CheckpointError(
                f"checkpoint format version {fields['format_version']} unsupported "
                f"(this build reads version {CHECKPOINT_FORMAT_VERSION})"
            )
        return fields

    @classmethod
    def load_checkpoint(cls, directory, sampler: BatchSampler | None = None) -> "Trainer":
        """Rebuild a trainer from a checkpoint directory; validates first, then loads."""
        directory = Path(directory)
        fields = cls.read_manifest(directory)
        config_path = directory / "config.json"
        if not config_path.exists():
            raise CheckpointError(f"checkpoint config missing: {config_path}")
        config = TrainConfig.from_dict(json.loads(config_path.read_text(encoding="ascii")))
        if config.config_hash() != fields["config_hash"]:
            raise CheckpointError("checkpoint config does not match its manifest hash")
        trainer = cls(config, sampler=sampler)
        trainer.generator.load_state_dict(torch.load(directory / "generator.pt", weights_only=True))
        trainer.discriminator.load_state_dict(
            torch.load(directory / "discriminator.pt", weights_only=True)
        )
        state = torch.load(directory / "trainer_state.pt", weights_only=False)
        trainer.opt_g.load_state_dict(state["opt_g"])
        trainer.opt_d.load_state_dict(state["opt_d"])
        trainer.iteration = state["iteration"]
        if trainer.iteration != int(fields["iteration"]):
            raise CheckpointError("manifest iteration does not match trainer state")
        trainer.loss_history = state["loss_history"]
        torch.set_rng_state(state["torch_rng"])
        if sampler is not None and state["sampler"] is not None:
            sampler.set_rng_state(state["sampler"])
        return trainer
