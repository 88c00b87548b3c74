import json

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from metakernel.kernels import delta_kernel
from metakernel.losses import (LossLog, LossWeights, kernel_pixel_loss,
                               lsgan_discriminator_loss, lsgan_generator_loss,
                               meta_losses, sum_to_one_loss, task_losses)
from metakernel.nets import Generator, init_discriminator, init_generator
from oracles import finite_difference_grad, relative_error


class TestLSGANGenerator:
    def test_perfect_fool(self):
        assert float(lsgan_generator_loss(torch.ones(4, 4))) == 0.0

    def test_fully_rejected(self):
        assert float(lsgan_generator_loss(torch.zeros(4, 4))) == 1.0

    def test_hand_value(self):
        assert float(lsgan_generator_loss(torch.tensor([0.25, 0.75]))) == pytest.approx(0.5)

    def test_empty_map_errors(self):
        with pytest.raises(ValueError):
            lsgan_generator_loss(torch.empty(0))


class TestLSGANDiscriminator:
    def test_perfect_discriminator(self):
        assert float(lsgan_discriminator_loss(torch.ones(3, 3), torch.zeros(3, 3))) == 0.0

    def test_maximally_fooled(self):
        assert float(lsgan_discriminator_loss(torch.zeros(3, 3), torch.ones(3, 3))) == 1.0

    def test_hand_value(self):
        v = lsgan_discriminator_loss(torch.full((2,), 0.5), torch.full((2,), 0.5))
        assert float(v) == pytest.approx(0.5)

    @given(st.integers(0, 10_000))
    @settings(max_examples=30, deadline=None)
    def test_bounded_on_sigmoid_range(self, seed):
        rng = np.random.default_rng(seed)
        d_real = torch.from_numpy(rng.uniform(0, 1, size=(5, 5)))
        d_fake = torch.from_numpy(rng.uniform(0, 1, size=(5, 5)))
        v = float(lsgan_discriminator_loss(d_real, d_fake))
        assert 0.0 <= v <= 1.0


class TestSumToOne:
    def test_normalized_kernel(self):
        k = torch.full((11, 11), 1 / 121, dtype=torch.float64)
        assert float(sum_to_one_loss(k)) == pytest.approx(0.0, abs=1e-12)

    def test_zero_kernel(self):
        assert float(sum_to_one_loss(torch.zeros(11, 11))) == 1.0

    def test_sum_15(self):
        k = torch.full((11, 11), 1.5 / 121)
        assert float(sum_to_one_loss(k)) == pytest.approx(0.5, abs=1e-6)


class TestKernelPixelLoss:
    def test_identical(self):
        k = delta_kernel(11).values
        assert float(kernel_pixel_loss(k, k)) == 0.0

    def test_symmetric(self, rng):
        a = rng.uniform(size=(11, 11))
        b = rng.uniform(size=(11, 11))
        assert float(kernel_pixel_loss(a, b)) == pytest.approx(float(kernel_pixel_loss(b, a)))

    def test_shifted_delta(self):
        a = delta_kernel(11).values
        b = np.zeros((11, 11))
        b[5, 6] = 1.0
        assert float(kernel_pixel_loss(a, b)) == pytest.approx(2.0)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            kernel_pixel_loss(np.zeros((11, 11)), np.zeros((21, 21)))


def _fixed_pairs(rng, n=1, g_size=24, d_size=12):
    return [(rng.uniform(0, 1, (g_size, g_size)), rng.uniform(0, 1, (d_size, d_size)))
            for _ in range(n)]


class TestComposites:
    def setup_method(self):
        torch.manual_seed(0)
        self.gen = init_generator(2, rng_seed=0, hidden_channels=6).double()
        self.disc = init_discriminator(0, hidden_channels=6).double()
        self.pairs = _fixed_pairs(np.random.default_rng(0))

    def test_zero_sto_weight_reduces_to_lsgan(self):
        from metakernel.losses import gan_forward

        loss_g, _ = task_losses(self.gen, self.disc, self.pairs,
                                sum_to_one_weight=0.0, train_mode=False)
        _, d_fake = gan_forward(self.gen, self.disc, self.pairs, train_mode=False)
        assert float(loss_g) == pytest.approx(float(lsgan_generator_loss(d_fake)))

    def test_task_composition(self):
        from metakernel.losses import gan_forward

        loss_g, loss_d = task_losses(self.gen, self.disc, self.pairs,
                                     sum_to_one_weight=0.5, train_mode=False)
        d_real, d_fake = gan_forward(self.gen, self.disc, self.pairs, train_mode=False)
        expected_g = float(lsgan_generator_loss(d_fake)) + 0.5 * float(
            sum_to_one_loss(self.gen.effective_kernel()))
        expected_d = float(lsgan_discriminator_loss(d_real, d_fake))
        assert float(loss_g) == pytest.approx(expected_g)
        assert float(loss_d) == pytest.approx(expected_d)

    def test_meta_zero_weights_vanish(self):
        w = LossWeights(kernel=0.0, adversarial=0.0, sum_to_one=0.0)
        loss_g, _ = meta_losses(self.gen, self.disc, self.pairs, delta_kernel(11),
                                w, train_mode=False)
        assert float(loss_g) == 0.0

    def test_meta_composition_hand_value(self):
        from metakernel.losses import gan_forward

        w = LossWeights(kernel=1.0, adversarial=1.0, sum_to_one=0.5)
        gt = delta_kernel(11)
        loss_g, _ = meta_losses(self.gen, self.disc, self.pairs, gt, w,
                                train_mode=False)
        d_real, d_fake = gan_forward(self.gen, self.disc, self.pairs, train_mode=False)
        k_est = self.gen.effective_kernel()
        expected = (float(kernel_pixel_loss(gt.values, k_est))
                    + float(lsgan_generator_loss(d_fake))
                    + 0.5 * float(sum_to_one_loss(k_est)))
        assert float(loss_g) == pytest.approx(expected)

    def test_all_losses_finite_nonnegative(self):
        loss_g, loss_d = task_losses(self.gen, self.disc, self.pairs, 0.5,
                                     train_mode=False)
        mg, md = meta_losses(self.gen, self.disc, self.pairs, delta_kernel(11),
                             LossWeights(), train_mode=False)
        for v in (loss_g, loss_d, mg, md):
            assert torch.isfinite(v) and float(v) >= 0.0
        assert 0.0 <= float(loss_d) <= 1.0


class TestGradientFidelity:
    """Analytic gradients of the composites vs central finite differences.

    train_mode=False keeps the loss a pure function of the parameters (frozen
    power-iteration vectors and running statistics); in train mode the
    spectral-norm update is a deliberate stop-gradient state mutation that no
    numerical derivative can agree with.
    """

    def _setup(self, seed):
        torch.manual_seed(seed)
        gen = Generator(hidden_channels=6).double()
        disc = init_discriminator(seed, hidden_channels=6).double()
        pairs = _fixed_pairs(np.random.default_rng(seed))
        return gen, disc, pairs

    def _check(self, loss_fn, params, n_coords, seed):
        loss = loss_fn()
        analytic = torch.autograd.grad(loss, params)
        rng = np.random.default_rng(seed)
        sizes = np.array([p.numel() for p in params])
        coords = []
        for _ in range(n_coords):
            pi = int(rng.integers(len(params)))
            coords.append((pi, int(rng.integers(sizes[pi]))))
        fd = finite_difference_grad(loss_fn, params, coords, eps=1e-4)
        an = np.array([analytic[pi].view(-1)[fi].item() for pi, fi in coords])
        assert relative_error(an, fd) < 1e-4

    def test_task_loss_g_full_vector(self):
        gen, disc, pairs = self._setup(0)
        params = list(gen.parameters())

        def loss_fn():
            return task_losses(gen, disc, pairs, 0.5, train_mode=False)[0]

        loss = loss_fn()
        analytic = torch.autograd.grad(loss, params)
        coords = [(pi, fi) for pi, p in enumerate(params) for fi in range(p.numel())]
        fd = finite_difference_grad(loss_fn, params, coords, eps=1e-4)
        an = np.concatenate([g.reshape(-1).numpy() for g in analytic])
        assert relative_error(an, fd) < 1e-4

    def test_task_loss_d_sampled(self):
        gen, disc, pairs = self._setup(1)
        params = [p for p in disc.parameters()]

        def loss_fn():
            return task_losses(gen, disc, pairs, 0.5, train_mode=False)[1]

        self._check(loss_fn, params, 40, seed=1)

    def test_meta_loss_g_sampled(self):
        gen, disc, pairs = self._setup(2)
        params = list(gen.parameters())
        gt = delta_kernel(11)

        def loss_fn():
            return meta_losses(gen, disc, pairs, gt, LossWeights(), train_mode=False)[0]

        self._check(loss_fn, params, 40, seed=2)

    def test_meta_loss_d_sampled(self):
        gen, disc, pairs = self._setup(3)
        params = list(disc.parameters())
        gt = delta_kernel(11)

        def loss_fn():
            return meta_losses(gen, disc, pairs, gt, LossWeights(), train_mode=False)[1]

        self._check(loss_fn, params, 40, seed=3)


class TestLossLog:
    def test_jsonl_records(self, tmp_path):
        log = LossLog(tmp_path / "losses.jsonl")
        log.append(0, "g", 0.5)
        log.append_many(1, {"g": 0.4, "d": 0.3})
        lines = (tmp_path / "losses.jsonl").read_text().strip().splitlines()
        assert len(lines) == 3
        rec = json.loads(lines[1])
        assert rec == {"step": 1, "loss": "g", "value": 0.4}
