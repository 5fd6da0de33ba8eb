import itertools
import warnings

import numpy as np
import pytest

from r2kac.composition import (
    DeconvConfig,
    ExperimentRecord,
    Method,
    WeightMode,
    approximation_accuracy,
    branch_kernels,
    branch_outputs,
    deconvolve,
    kpac_deconv,
    r2kac_deconv,
    rkac_deconv,
    single_deconv,
    solve_weights,
    sweep_fig1,
)
from r2kac.imagekernel import ParameterError, gaussian_kernel, synth_image
from r2kac.spectral import fft_convolve, pseudo_inverse_kernel


@pytest.fixture(scope="module")
def scene():
    sharp = synth_image("smooth_noise", 64, 64, seed=5)
    return sharp, fft_convolve(sharp, gaussian_kernel(3.0))


def manual(scale_set, weights, **kw):
    return DeconvConfig(scale_set=scale_set, weight_mode="manual", weights=weights, **kw)


class TestConfig:
    def test_defaults(self):
        cfg = DeconvConfig()
        assert cfg.scale_set == (1, 2, 3, 4, 5)
        assert cfg.weight_mode is WeightMode.ORACLE_LSQ

    @pytest.mark.parametrize(
        "kw",
        [
            {"scale_set": ()},
            {"scale_set": (1, 3, 2)},
            {"scale_set": (1, 1)},
            {"scale_set": (0, 1)},
            {"base_sigma": 0},
            {"nsr": -1},
            {"support": 10},
            {"weight_mode": "manual"},
            {"weight_mode": "manual", "weights": (1, 2)},
            {"weight_mode": "softmax"},
        ],
    )
    def test_rejects(self, kw):
        with pytest.raises((ParameterError, ValueError)):
            DeconvConfig(**kw)


class TestBranchKernels:
    def test_unit_scale_is_plain_inverse(self):
        cfg = DeconvConfig(scale_set=(1,))
        (k,) = branch_kernels(cfg)
        ref = pseudo_inverse_kernel(gaussian_kernel(1.0), cfg.nsr, cfg.support)
        np.testing.assert_allclose(k.data, ref.data, rtol=0, atol=1e-12)

    def test_one_per_scale_and_symmetric(self):
        ks = branch_kernels(DeconvConfig())
        assert len(ks) == 5
        for k in ks:
            np.testing.assert_allclose(k.data, k.data.T, atol=1e-9)
            np.testing.assert_allclose(k.data, k.data[::-1, ::-1], atol=1e-9)

    def test_sides_grow_with_scale(self):
        sides = [k.size for k in branch_kernels(DeconvConfig())]
        assert sides == sorted(sides)


class TestOperators:
    def test_kpac_unit_scale_equals_direct_convolution(self, scene):
        sharp, _ = scene
        cfg = manual((1,), (1,), nsr=1e-6)
        inv = pseudo_inverse_kernel(gaussian_kernel(1.0), 1e-6, cfg.support)
        np.testing.assert_allclose(kpac_deconv(sharp, cfg), fft_convolve(sharp, inv), atol=1e-10)

    def test_rkac_equals_kpac_for_single_scale(self, scene):
        _, blurred = scene
        cfg = DeconvConfig(scale_set=(2,))
        sharp = scene[0]
        assert np.array_equal(rkac_deconv(blurred, cfg, sharp), kpac_deconv(blurred, cfg, sharp))

    def test_depth_two_matches_chained_convolution(self, scene):
        _, blurred = scene
        cfg = manual((1, 2), (0, 1))
        k1, k2 = branch_kernels(cfg)
        ref = fft_convolve(fft_convolve(blurred, k1), k2)
        np.testing.assert_allclose(rkac_deconv(blurred, cfg), ref, atol=1e-10)

    def test_residual_step_adds_input(self, scene):
        _, blurred = scene
        cfg = manual((2,), (1,))
        (k,) = branch_kernels(cfg)
        np.testing.assert_allclose(r2kac_deconv(blurred, cfg), fft_convolve(blurred, k) + blurred, atol=1e-12)

    def test_residual_depth_two(self, scene):
        _, blurred = scene
        cfg = manual((1, 2), (0, 1))
        k1, k2 = branch_kernels(cfg)
        y1 = fft_convolve(blurred, k1) + blurred
        ref = fft_convolve(y1, k2) + y1
        np.testing.assert_allclose(r2kac_deconv(blurred, cfg), ref, atol=1e-10)

    @pytest.mark.parametrize("method", ["kpac", "rkac", "r2kac"])
    def test_zero_image_maps_to_zero(self, method):
        out = deconvolve(np.zeros((32, 32)), manual((1, 2, 3), (1, 1, 1)), method).image
        assert np.all(out == 0)

    @pytest.mark.parametrize("method", ["kpac", "rkac", "r2kac"])
    def test_commutes_with_scaling(self, scene, method):
        _, blurred = scene
        cfg = manual((1, 2, 3, 4, 5), (0.3, -0.1, 0.5, 0.2, 0.1))
        a = deconvolve(2.5 * blurred, cfg, method).image
        b = 2.5 * deconvolve(blurred, cfg, method).image
        np.testing.assert_allclose(a, b, atol=1e-10)

    def test_oracle_needs_sharp_image(self, scene):
        with pytest.raises(ParameterError):
            kpac_deconv(scene[1], DeconvConfig())

    def test_single_rejected_as_branch_method(self, scene):
        with pytest.raises(ParameterError):
            branch_outputs(scene[1], DeconvConfig(), "single")


class TestWeights:
    @pytest.mark.parametrize("method", ["kpac", "rkac", "r2kac"])
    def test_oracle_beats_uniform(self, scene, method):
        sharp, blurred = scene
        lsq = deconvolve(blurred, DeconvConfig(), method, sharp).image
        uni = deconvolve(blurred, DeconvConfig(weight_mode="uniform"), method).image
        assert approximation_accuracy(lsq, sharp) >= approximation_accuracy(uni, sharp)

    def test_matching_one_hot_is_best(self):
        sharp = synth_image("smooth_noise", 64, 64, seed=2)
        scales = (1, 2, 3, 4, 5)
        blurred = fft_convolve(sharp, gaussian_kernel(3.0))
        accs = []
        for i in range(len(scales)):
            w = tuple(float(j == i) for j in range(len(scales)))
            accs.append(approximation_accuracy(kpac_deconv(blurred, manual(scales, w, support=None)), sharp))
        assert int(np.argmax(accs)) == scales.index(3)

    def test_lsq_matches_lstsq(self):
        rng = np.random.default_rng(0)
        branches = list(rng.normal(size=(3, 8, 8)))
        target = rng.normal(size=(8, 8))
        w, ridged = solve_weights(branches, target)
        ref = np.linalg.lstsq(np.stack([b.ravel() for b in branches], 1), target.ravel(), rcond=None)[0]
        assert not ridged
        np.testing.assert_allclose(w, ref, atol=1e-10)

    def test_collinear_branches_fall_back_to_ridge(self):
        b = np.random.default_rng(1).normal(size=(8, 8))
        with pytest.warns(RuntimeWarning):
            w, ridged = solve_weights([b, 2 * b], b)
        assert ridged
        assert np.all(np.isfinite(w))


class TestAccuracy:
    def test_identity(self):
        s = np.random.default_rng(0).uniform(size=(8, 8))
        assert approximation_accuracy(s, s) == 1.0

    def test_zero_restoration(self):
        assert approximation_accuracy(np.zeros((4, 4)), np.ones((4, 4))) == 0.0

    def test_scaling(self):
        s = np.random.default_rng(1).uniform(size=(8, 8))
        assert abs(approximation_accuracy(s * (1 + 1e-3), s) - (1 - 1e-3)) < 1e-12

    def test_zero_sharp_rejected(self):
        with pytest.raises(ParameterError):
            approximation_accuracy(np.ones((4, 4)), np.zeros((4, 4)))

    def test_record_range(self):
        with pytest.raises(ParameterError):
            ExperimentRecord(seed=0, s_t=1.0, method=Method.KPAC, accuracy=1.5, psnr_db=0.0)


class TestSweep:
    def test_row_count_and_schema(self, tmp_path):
        recs = sweep_fig1(DeconvConfig(), [1.7, 7.0], [0, 1, 2], tmp_path)
        lines = (tmp_path / "results.csv").read_bytes().split(b"\n")
        assert lines[0] == b"seed,s_t,method,accuracy,psnr_db"
        assert lines[-1] == b""
        assert len(lines) - 2 == len(recs) == 2 * 3 * 4
        assert lines[1] == b"0,1.700000,single," + lines[1].split(b",", 3)[3]
        assert (tmp_path / "images" / "seed0_st7_r2kac.pgm").exists()

    def test_deterministic_across_threads(self, tmp_path):
        cfg = DeconvConfig()
        sweep_fig1(cfg, [2.4, 6.5], [0, 1], tmp_path / "a", threads=1, save_images=False)
        sweep_fig1(cfg, [2.4, 6.5], [0, 1], tmp_path / "b", threads=4, save_images=False)
        assert (tmp_path / "a" / "results.csv").read_bytes() == (tmp_path / "b" / "results.csv").read_bytes()

    def test_unit_target_single_scale_agreement(self):
        # Single, KPAC and RKAC all collapse to one unit-weight convolution.
        # R2KAC adds the identity shortcut on top, so it is checked separately.
        cfg = manual((1,), (1,))
        recs = {r.method: r for r in sweep_fig1(cfg, [1.0], [0], None)}
        base = recs[Method.SINGLE].accuracy
        assert abs(recs[Method.KPAC].accuracy - base) < 1e-9
        assert abs(recs[Method.RKAC].accuracy - base) < 1e-9

    def test_single_uses_exact_scale_kernel(self):
        sharp = synth_image("smooth_noise", 64, 64, seed=0)
        cfg = manual((1,), (1,))
        np.testing.assert_allclose(single_deconv(sharp, cfg, 1.0), kpac_deconv(sharp, cfg), atol=1e-12)

    @pytest.mark.parametrize("kw", [{"targets": []}, {"seeds": []}, {"targets": [-1.0]}, {"threads": 0}])
    def test_rejects(self, kw):
        args = {"targets": [2.0], "seeds": [0], "threads": 1} | kw
        with pytest.raises(ParameterError):
            sweep_fig1(DeconvConfig(), args["targets"], args["seeds"], None, threads=args["threads"])

    def test_large_blur_records_finite(self):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            recs = sweep_fig1(DeconvConfig(), [7.0], [0], None)
        assert len(recs) == 4
        assert all(np.isfinite(r.accuracy) and np.isfinite(r.psnr_db) for r in recs)


def test_one_hot_brute_force_all_choices():
    # The matching one-hot must not lose to any other one-hot on any seed.
    # Full-grid inverses: a cropped unit-scale inverse has a DC gain far from 1.
    scales = (1, 2, 3)
    for seed, s_t in itertools.product(range(3), scales):
        sharp = synth_image("smooth_noise", 64, 64, seed=seed)
        blurred = fft_convolve(sharp, gaussian_kernel(float(s_t)))
        accs = [
            approximation_accuracy(
                kpac_deconv(blurred, manual(scales, tuple(float(j == i) for j in range(3)), support=None)), sharp
            )
            for i in range(3)
        ]
        assert accs[scales.index(s_t)] >= max(accs) - 1e-12
