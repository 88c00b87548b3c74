import numpy as np
import pytest
import torch

from metakernel.errors import SizingError, UnsupportedScaleError
from metakernel.nets import (Discriminator, Generator, derive_kernel, init_discriminator,
                             init_generator, load_models, models_from_payload,
                             output_size_discriminator, output_size_generator,
                             save_models)
from oracles import composed_convolution_kernel, finite_difference_grad, relative_error


class TestDeriveKernel:
    def test_matches_composed_convolution_oracle(self):
        # The module keystone: the impulse-response decoder equals the explicit
        # sequential full convolution of the layer kernels.
        for seed in range(20):
            torch.manual_seed(seed)
            width = [4, 8, 16][seed % 3]
            gen = Generator(hidden_channels=width)
            dk = derive_kernel(gen).values
            oracle = composed_convolution_kernel(gen)
            assert dk.shape == (11, 11)
            assert np.abs(dk - oracle).max() < 1e-5

    def test_orientation_via_asymmetric_delta(self):
        # An off-center passthrough in layer 1 must shift the kernel the same
        # way in decoder and oracle (catches a global flip). A weight tap at
        # center+(-1,+1) is a convolution kernel tap at center+(+1,-1).
        gen = init_generator(2, rng_seed=0, hidden_channels=4, noise_scale=0.0)
        with torch.no_grad():
            w = gen.convs[0].weight
            w.zero_()
            w[:, :, 2, 4] = 0.25
        dk = derive_kernel(gen).values
        oracle = composed_convolution_kernel(gen)
        assert np.abs(dk - oracle).max() < 1e-7
        assert dk[6, 4] == pytest.approx(1.0, abs=1e-6)

    def test_delta_init_gives_delta_kernel(self):
        gen = init_generator(2, rng_seed=1, hidden_channels=8, noise_scale=0.0)
        dk = derive_kernel(gen).values
        expected = np.zeros((11, 11))
        expected[5, 5] = 1.0
        assert np.abs(dk - expected).max() < 1e-7

    def test_last_layer_scaling_scales_kernel(self):
        gen = init_generator(2, rng_seed=2, hidden_channels=8)
        base = derive_kernel(gen).values
        with torch.no_grad():
            gen.convs[-1].weight.mul_(3.0)
        assert np.allclose(derive_kernel(gen).values, 3.0 * base, rtol=1e-6, atol=1e-9)

    def test_estimated_provenance(self):
        assert derive_kernel(Generator(hidden_channels=4)).provenance == "estimated"


class TestGeneratorForward:
    def test_output_shape_64_to_27(self):
        gen = Generator(hidden_channels=8)
        out = gen(torch.randn(1, 1, 64, 64))
        assert tuple(out.shape) == (1, 1, 27, 27)
        assert output_size_generator(64) == 27

    @pytest.mark.parametrize("size,expected", [(11, 1), (32, 11), (63, 27), (64, 27)])
    def test_shape_formula(self, size, expected):
        gen = Generator(hidden_channels=4)
        out = gen(torch.randn(1, 1, size, size))
        assert out.shape[-1] == expected == output_size_generator(size)

    def test_rejects_small_patch(self):
        with pytest.raises(SizingError):
            Generator(hidden_channels=4)(torch.randn(1, 1, 10, 10))

    def test_linearity(self):
        gen = Generator(hidden_channels=8).double()
        x = torch.randn(1, 1, 32, 32, dtype=torch.float64)
        assert torch.allclose(gen(3.7 * x), 3.7 * gen(x), atol=1e-6)
        y = torch.randn(1, 1, 32, 32, dtype=torch.float64)
        assert torch.allclose(gen(x + y), gen(x) + gen(y), atol=1e-6)

    def test_delta_init_is_strided_subsample(self):
        gen = init_generator(2, rng_seed=0, hidden_channels=8, noise_scale=0.0).double()
        x = torch.randn(1, 1, 33, 33, dtype=torch.float64)
        out = gen(x)
        expected = x[:, :, 5:-5:2, 5:-5:2]
        assert torch.allclose(out, expected, atol=1e-9)

    def test_shift_equivariance_modulo_stride(self):
        gen = Generator(hidden_channels=8).double()
        x = torch.randn(1, 1, 48, 48, dtype=torch.float64)
        shifted_in = gen(x[:, :, 2:, 2:])
        shifted_out = gen(x)[:, :, 1:, 1:]
        assert torch.allclose(shifted_in, shifted_out, atol=1e-9)


class TestInitGenerator:
    def test_reproducible(self):
        a = init_generator(2, rng_seed=42, hidden_channels=8)
        b = init_generator(2, rng_seed=42, hidden_channels=8)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_kernel_sum_near_one_over_seeds(self):
        sums = [derive_kernel(init_generator(2, rng_seed=s)).values.sum()
                for s in range(50)]
        assert np.abs(np.array(sums) - 1.0).max() < 0.1

    def test_rejects_non_2_scale(self):
        with pytest.raises(UnsupportedScaleError):
            init_generator(4, rng_seed=0)


class TestDiscriminator:
    def test_outputs_in_unit_interval(self):
        disc = init_discriminator(0, hidden_channels=8)
        out = disc(torch.randn(1, 1, 32, 32))
        assert bool(((out > 0) & (out < 1)).all())

    def test_output_shape_32_to_26(self):
        disc = init_discriminator(0, hidden_channels=8)
        out = disc(torch.randn(1, 1, 32, 32))
        assert tuple(out.shape) == (1, 1, 26, 26)
        assert output_size_discriminator(32) == 26

    def test_reproducible(self):
        a = init_discriminator(7, hidden_channels=8)
        b = init_discriminator(7, hidden_channels=8)
        for pa, pb in zip(a.state_dict().values(), b.state_dict().values()):
            assert torch.equal(pa, pb)

    def test_eval_mode_is_deterministic(self):
        disc = init_discriminator(1, hidden_channels=8)
        x = torch.randn(1, 1, 16, 16)
        out1 = disc(x, train_mode=False)
        out2 = disc(x, train_mode=False)
        assert torch.equal(out1, out2)

    def test_train_mode_updates_power_iteration_state(self):
        disc = init_discriminator(2, hidden_channels=8)
        u_before = disc.sn_u1.clone()
        disc(torch.randn(1, 1, 16, 16), train_mode=True)
        assert not torch.equal(u_before, disc.sn_u1)
        u_frozen = disc.sn_u1.clone()
        disc(torch.randn(1, 1, 16, 16), train_mode=False)
        assert torch.equal(u_frozen, disc.sn_u1)

    def test_spectral_norm_matches_svd_oracle(self):
        disc = init_discriminator(3, hidden_channels=8)
        with torch.no_grad():  # move weights away from init to exercise re-estimation
            for w in disc.weights:
                w.mul_(torch.rand_like(w) + 0.5)
        x = torch.randn(2, 1, 16, 16)
        for _ in range(60):  # converge the power iterations
            disc(x, train_mode=True)
        for i in range(len(disc.weights)):
            w_sn = disc.spectral_normalized_weight(i, train_mode=False)
            mat = w_sn.detach().numpy().reshape(w_sn.shape[0], -1)
            sigma_max = np.linalg.svd(mat, compute_uv=False)[0]
            assert sigma_max == pytest.approx(1.0, rel=0.05)

    def test_rejects_small_patch(self):
        with pytest.raises(SizingError):
            init_discriminator(0, hidden_channels=4)(torch.randn(1, 1, 6, 6))

    def test_batch_norm_uses_batch_stats_in_train_mode(self):
        disc = init_discriminator(4, hidden_channels=8)
        mean_before = disc.bn_mean0.clone()
        disc(torch.randn(1, 1, 16, 16), train_mode=True)
        assert not torch.equal(mean_before, disc.bn_mean0)


class TestGradientCorrectness:
    def test_kernel_decoder_gradients_match_finite_differences(self):
        # Scalar function of the decoded kernel on a tiny 8-channel variant.
        torch.manual_seed(0)
        gen = Generator(hidden_channels=8).double()
        target = torch.randn(11, 11, dtype=torch.float64)

        def loss_fn():
            return ((gen.effective_kernel() - target) ** 2).sum()

        params = list(gen.parameters())
        loss = loss_fn()
        analytic = torch.autograd.grad(loss, params)
        rng = np.random.default_rng(1)
        coords = []
        for pi, p in enumerate(params):
            for fi in rng.choice(p.numel(), size=min(10, p.numel()), replace=False):
                coords.append((pi, int(fi)))
        fd = finite_difference_grad(loss_fn, params, coords, eps=1e-4)
        an = np.array([analytic[pi].view(-1)[fi].item() for pi, fi in coords])
        assert relative_error(an, fd) < 1e-4


class TestCheckpoints:
    def test_save_load_round_trip(self, tmp_path):
        gen = init_generator(2, rng_seed=5, hidden_channels=8)
        disc = init_discriminator(5, hidden_channels=8)
        disc(torch.randn(1, 1, 16, 16), train_mode=True)  # move buffers off init
        path = tmp_path / "models.pt"
        save_models(path, gen, disc)
        gen2, disc2 = load_models(path)
        for a, b in zip(gen.state_dict().values(), gen2.state_dict().values()):
            assert torch.equal(a, b)
        for a, b in zip(disc.state_dict().values(), disc2.state_dict().values()):
            assert torch.equal(a, b)
        x = torch.randn(1, 1, 16, 16)
        assert torch.equal(disc(x, train_mode=False), disc2(x, train_mode=False))

    def test_version_guard(self):
        with pytest.raises(ValueError, match="version"):
            models_from_payload({"format_version": 999})

    def test_state_dict_contains_buffers(self):
        disc = init_discriminator(0, hidden_channels=8)
        keys = set(disc.state_dict().keys())
        assert "sn_u0" in keys and "sn_v0" in keys
        assert "bn_mean0" in keys and "bn_var0" in keys
