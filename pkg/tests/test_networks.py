import numpy as np
import pytest
import torch

from hmdfill.errors import ConfigError
from hmdfill.networks import (
    Discriminator,
    DiscriminatorConfig,
    Generator,
    GeneratorConfig,
    composite_output,
    count_parameters,
)
from hmdfill.temporal_shift import ONLINE, ShiftSpec

SMALL = GeneratorConfig(base_channels=8)


def rand_input(n=1, t=2, h=16, w=16, seed=0):
    return torch.rand(n, t, 8, h, w, generator=torch.Generator().manual_seed(seed))


class TestGeneratorStructure:
    def test_layer_counts(self):
        torch.manual_seed(0)
        g = Generator(SMALL)
        assert len(g.gated_layers()) == 13
        assert len(g.attention_layers()) == 2

    def test_parameter_count_golden(self):
        # recorded at first build for the default config; guards accidental
        # architecture drift
        torch.manual_seed(0)
        assert count_parameters(Generator()) == 2398460
        assert count_parameters(Discriminator()) == 462433

    def test_output_shape_and_range(self):
        torch.manual_seed(1)
        g = Generator(SMALL)
        for h, w in [(16, 16), (32, 16), (64, 64)]:
            out = g(rand_input(h=h, w=w))
            assert out.shape == (1, 2, 3, h, w)
            assert out.min() >= 0 and out.max() <= 1

    def test_indivisible_size_rejected(self):
        torch.manual_seed(2)
        g = Generator(SMALL)
        with pytest.raises(ConfigError):
            g(torch.rand(1, 1, 8, 18, 16))

    def test_wrong_channels_rejected(self):
        torch.manual_seed(3)
        g = Generator(SMALL)
        with pytest.raises(ConfigError):
            g(torch.rand(1, 1, 7, 16, 16))


class TestGeneratorBehaviour:
    def test_deterministic_forward(self):
        torch.manual_seed(4)
        g = Generator(SMALL)
        x = rand_input(seed=5)
        assert torch.equal(g(x), g(x))

    def test_single_frame_clip(self):
        torch.manual_seed(5)
        g = Generator(SMALL)
        out = g(rand_input(t=1, seed=6))
        assert out.shape == (1, 1, 3, 16, 16)

    def test_all_layers_receive_gradient(self):
        torch.manual_seed(6)
        g = Generator(SMALL)
        x = rand_input(n=1, t=4, h=64, w=64, seed=7)
        loss = g(x).sum()
        loss.backward()

        def has_grad(module):
            return any(p.grad is not None and p.grad.abs().sum() > 0 for p in module.parameters())

        for i, layer in enumerate(g.gated_layers()):
            assert has_grad(layer), f"gated layer {i} got no gradient"
        for i, attn in enumerate(g.attention_layers()):
            assert has_grad(attn), f"attention layer {i} got no gradient"

    def test_online_causality_bit_identical(self):
        torch.manual_seed(7)
        cfg = GeneratorConfig(base_channels=8, shift=ShiftSpec(0.25, ONLINE, learnable=True))
        g = Generator(cfg)
        x = rand_input(t=5, seed=8)
        with torch.no_grad():
            base = g(x)
            y = x.clone()
            y[:, 3:] = torch.rand_like(y[:, 3:])
            alt = g(y)
        assert torch.equal(base[:, :3], alt[:, :3])


class TestDiscriminator:
    def test_deterministic_in_eval_mode(self):
        torch.manual_seed(8)
        d = Discriminator(DiscriminatorConfig(base_channels=8)).eval()
        frames = torch.rand(1, 2, 3, 32, 32)
        masks = torch.zeros(1, 2, 1, 32, 32)
        with torch.no_grad():
            assert torch.equal(d(frames, masks), d(frames, masks))

    def test_patch_shape_golden(self):
        torch.manual_seed(9)
        d = Discriminator(DiscriminatorConfig(base_channels=8)).eval()
        with torch.no_grad():
            out = d(torch.rand(1, 2, 3, 128, 128), torch.zeros(1, 2, 1, 128, 128))
        assert out.shape == (1, 2, 16, 16)
        assert torch.isfinite(out).all()

    def test_zero_input_zero_bias_gives_zero_map(self):
        torch.manual_seed(10)
        d = Discriminator(DiscriminatorConfig(base_channels=8)).eval()
        with torch.no_grad():
            for conv in d.convs:
                conv.conv.bias.zero_()
            out = d(torch.zeros(1, 2, 3, 32, 32), torch.zeros(1, 2, 1, 32, 32))
        assert torch.all(out == 0)

    def test_shape_validation(self):
        torch.manual_seed(11)
        d = Discriminator(DiscriminatorConfig(base_channels=8))
        with pytest.raises(ConfigError):
            d(torch.rand(1, 2, 3, 32, 32), torch.zeros(1, 2, 2, 32, 32))
        with pytest.raises(ConfigError):
            d(torch.rand(1, 2, 3, 32, 32), torch.zeros(1, 1, 1, 32, 32))


class TestComposite:
    def test_zero_mask_returns_input(self):
        raw = torch.rand(1, 2, 3, 8, 8)
        frames = torch.rand(1, 2, 3, 8, 8)
        out = composite_output(raw, frames, torch.zeros(1, 2, 1, 8, 8))
        assert torch.equal(out, frames)

    def test_full_mask_returns_raw(self):
        raw = torch.rand(1, 2, 3, 8, 8)
        frames = torch.rand(1, 2, 3, 8, 8)
        out = composite_output(raw, frames, torch.ones(1, 2, 1, 8, 8))
        assert torch.equal(out, raw)

    def test_matches_elementwise_oracle(self):
        gen = torch.Generator().manual_seed(12)
        raw = torch.rand(1, 2, 3, 4, 4, generator=gen)
        frames = torch.rand(1, 2, 3, 4, 4, generator=gen)
        mask = (torch.rand(1, 2, 1, 4, 4, generator=gen) > 0.5).float()
        out = composite_output(raw, frames, mask).numpy()
        for idx in np.ndindex(out.shape):
            m = mask[idx[0], idx[1], 0, idx[3], idx[4]].item()
            expect = raw[idx].item() if m == 1.0 else frames[idx].item()
            assert out[idx] == expect

    def test_idempotent(self):
        gen = torch.Generator().manual_seed(13)
        raw = torch.rand(1, 2, 3, 4, 4, generator=gen)
        frames = torch.rand(1, 2, 3, 4, 4, generator=gen)
        mask = (torch.rand(1, 2, 1, 4, 4, generator=gen) > 0.5).float()
        once = composite_output(raw, frames, mask)
        twice = composite_output(once, frames, mask)
        assert torch.equal(once, twice)

    def test_numpy_layout_works_too(self):
        rng = np.random.default_rng(14)
        raw = rng.random((2, 4, 4, 3))
        frames = rng.random((2, 4, 4, 3))
        mask = (rng.random((2, 4, 4, 1)) > 0.5).astype(float)
        out = composite_output(raw, frames, mask)
        np.testing.assert_array_equal(out, mask * raw + (1 - mask) * frames)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            composite_output(torch.rand(1, 2, 3, 4, 4), torch.rand(1, 2, 3, 4, 5), 1.0)
