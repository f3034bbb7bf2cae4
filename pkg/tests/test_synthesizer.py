import math
from dataclasses import replace

import numpy as np
import pytest
import torch

from cyclesem.errors import LossInputError, ModelMismatchError
from cyclesem.models import (
    Generator,
    PatchDiscriminator,
    adversarial_losses,
    discriminator_loss,
    generator_adversarial_loss,
    generator_objective,
    l1_loss,
    synthesize,
    train_synthesizer,
)
from cyclesem.models.base import read_sidecar
from cyclesem.semantic import SemanticIntermediate, SemanticMode


def relative_error(a: torch.Tensor, b: torch.Tensor) -> float:
    return float((a - b).norm() / max(float(a.norm() + b.norm()), 1e-12))


def central_difference(fn, tensor: torch.Tensor, step: float = 1e-3) -> torch.Tensor:
    numeric = torch.zeros_like(tensor)
    flat, out = tensor.view(-1), numeric.view(-1)
    with torch.no_grad():
        for i in range(flat.numel()):
            original = flat[i].item()
            flat[i] = original + step
            f_plus = fn()
            flat[i] = original - step
            f_minus = fn()
            flat[i] = original
            out[i] = (f_plus - f_minus) / (2 * step)
    return numeric


class TestAdversarialLosses:
    def test_equilibrium_is_two_ln2(self):
        half = torch.full((2, 1, 5, 5), 0.5, dtype=torch.float64)
        d_loss, _ = adversarial_losses(half, half)
        assert float(d_loss) == pytest.approx(2 * math.log(2), abs=1e-6)

    def test_perfect_discriminator_limit(self):
        d_loss, g_adv = adversarial_losses(torch.ones(4, dtype=torch.float64), torch.zeros(4, dtype=torch.float64))
        assert float(d_loss) == pytest.approx(0.0, abs=1e-6)
        assert float(g_adv) == pytest.approx(-math.log(1e-7), rel=1e-6)

    def test_generator_loss_at_point_eight(self):
        assert float(generator_adversarial_loss(torch.full((3, 3), 0.8, dtype=torch.float64))) == \
            pytest.approx(0.22314, abs=1e-5)

    def test_non_finite_scores(self):
        with pytest.raises(LossInputError):
            discriminator_loss(torch.tensor([float("nan")]), torch.tensor([0.5]))


class TestL1:
    def test_identity(self):
        x = torch.rand(1, 1, 4, 4)
        assert float(l1_loss(x, x)) == 0.0

    def test_extremes(self):
        assert float(l1_loss(torch.zeros(3, 3), torch.ones(3, 3))) == 1.0

    def test_hand_example(self):
        x = torch.tensor([[0.0, 0.5], [0.5, 1.0]], dtype=torch.float64)
        x_hat = torch.tensor([[0.1, 0.5], [0.3, 1.0]], dtype=torch.float64)
        assert float(l1_loss(x, x_hat)) == pytest.approx(0.075, abs=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(LossInputError):
            l1_loss(torch.zeros(2, 2), torch.zeros(3, 3))


class TestObjective:
    def test_arithmetic(self):
        assert generator_objective(0.2, 0.05, 10) == pytest.approx(0.7)
        assert generator_objective(0.22314, 0.075, 10) == pytest.approx(0.97314)

    def test_lambda_zero_is_pure_adversarial(self):
        assert generator_objective(0.3, 0.9, 0.0) == pytest.approx(0.3)

    @pytest.mark.parametrize("lam", [0.0, 1.0, 10.0])
    def test_linear_in_l1(self, lam):
        a = generator_objective(0.4, 0.1, lam)
        b = generator_objective(0.4, 0.3, lam)
        assert (b - a) / 0.2 == pytest.approx(lam)

    def test_rejects_non_finite(self):
        with pytest.raises(LossInputError):
            generator_objective(float("inf"), 0.1, 10.0)


class TestGradients:
    def test_l1_gradient_away_from_kink(self):
        torch.manual_seed(0)
        x = torch.rand(1, 1, 3, 3, dtype=torch.float64)
        x_hat = torch.rand(1, 1, 3, 3, dtype=torch.float64, requires_grad=True)
        keep = (x - x_hat).abs() >= 1e-4
        (analytic,) = torch.autograd.grad(l1_loss(x, x_hat), x_hat)
        numeric = central_difference(lambda: l1_loss(x, x_hat), x_hat.detach())
        assert relative_error(analytic[keep], numeric[keep]) < 1e-4

    def test_adversarial_gradients_for_tiny_discriminator(self):
        torch.manual_seed(0)
        d = torch.nn.Sequential(torch.nn.Conv2d(1, 1, kernel_size=3), torch.nn.Sigmoid()).double()
        real = torch.rand(2, 1, 5, 5, dtype=torch.float64)
        fake = torch.rand(2, 1, 5, 5, dtype=torch.float64)

        def d_objective():
            return discriminator_loss(d(real), d(fake))

        def g_objective():
            return generator_adversarial_loss(d(fake))

        for objective in (d_objective, g_objective):
            analytic = torch.autograd.grad(objective(), list(d.parameters()))
            for param, grad in zip(d.parameters(), analytic):
                numeric = central_difference(objective, param.data)
                assert relative_error(grad, numeric) < 1e-4


class TestModels:
    def test_generator_output_range_for_arbitrary_inputs(self):
        torch.manual_seed(0)
        g = Generator(gen_channels=4, res_blocks=1, resolution=16)
        semantic = np.random.default_rng(0).normal(0, 5, size=(4, 16, 16)).astype(np.float32)
        out = synthesize(g, semantic)
        assert out.pixels.shape == (16, 16)
        assert out.pixels.min() >= 0.0 and out.pixels.max() <= 1.0

    def test_synthesize_is_deterministic(self):
        torch.manual_seed(0)
        g = Generator(gen_channels=4, res_blocks=1, resolution=16)
        probs = np.full((4, 16, 16), 0.25, dtype=np.float32)
        semantic = SemanticIntermediate(probs, SemanticMode.CONTINUOUS)
        np.testing.assert_array_equal(synthesize(g, semantic).pixels, synthesize(g, semantic).pixels)

    def test_wrong_channel_count(self):
        g = Generator(num_classes=4, gen_channels=4, res_blocks=1, resolution=16)
        with pytest.raises(ModelMismatchError):
            synthesize(g, np.zeros((3, 16, 16), dtype=np.float32))

    def test_patch_discriminator_scores_patches(self):
        d = PatchDiscriminator(disc_channels=4)
        scores = d(torch.rand(2, 1, 32, 32))
        assert scores.shape[0] == 2 and scores.shape[-1] > 1
        assert float(scores.min()) > 0.0 and float(scores.max()) < 1.0
        assert d.receptive_field == 22


class TestTraining:
    def test_l1_decreases(self, train_arrays, tiny_synth):
        cfg = replace(tiny_synth, epochs=4, learning_rate=2e-3)
        result = train_synthesizer(train_arrays, cfg)
        assert result.curve.last("l1") < result.curve.first("l1")
        assert set(result.curve.epochs) == {"d_loss", "g_adv", "l1", "g_total"}

    def test_l1_term_lowers_reconstruction_error(self, train_arrays, tiny_synth):
        cfg = replace(tiny_synth, epochs=4, learning_rate=2e-3)
        with_l1 = train_synthesizer(train_arrays, replace(cfg, lambda_l1=10.0))
        without = train_synthesizer(train_arrays, replace(cfg, lambda_l1=0.0))
        assert with_l1.curve.last("l1") < without.curve.last("l1")

    def test_sidecar_records_lambda(self, train_arrays, tiny_synth, tmp_path):
        train_synthesizer(train_arrays, replace(tiny_synth, epochs=1), checkpoint_dir=tmp_path)
        info = read_sidecar(tmp_path / "generator_epoch001")
        assert info.kind == "generator"
        assert info.extra["lambda_l1"] == tiny_synth.lambda_l1
        assert info.extra["schedule"] == "1:1"
        assert read_sidecar(tmp_path / "discriminator_epoch001").kind == "discriminator"

    def test_zero_epochs(self, train_arrays, tiny_synth):
        result = train_synthesizer(train_arrays, replace(tiny_synth, epochs=0))
        assert len(result.curve) == 0
        assert not result.generator.training
