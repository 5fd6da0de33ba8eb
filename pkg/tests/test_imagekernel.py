import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from r2kac.imagekernel import (
    Kernel,
    KernelRole,
    ParameterError,
    PNMFormatError,
    center_pad,
    disc_kernel,
    encode_pnm,
    gaussian_kernel,
    lanczos_rescale,
    parse_pnm,
    read_pnm,
    synth_image,
    write_pnm,
)


def explicit_gaussian(sigma, radius):
    # independent oracle: double loop over the exp grid
    side = 2 * radius + 1
    out = np.empty((side, side))
    for i in range(side):
        for j in range(side):
            y, x = i - radius, j - radius
            out[i, j] = math.exp(-(x * x + y * y) / (2 * sigma * sigma))
    return out / out.sum()


def rel_l2_padded(a, b):
    n = max(a.shape[0], b.shape[0])
    a, b = center_pad(a, n), center_pad(b, n)
    return np.linalg.norm(a - b) / np.linalg.norm(b)


class TestGaussian:
    def test_tiny_sigma_is_delta(self):
        k = gaussian_kernel(1e-6)
        assert k.data[k.center, k.center] >= 0.999

    def test_sigma_one_matches_explicit_grid(self):
        k = gaussian_kernel(1.0, truncation=4)
        assert k.size == 9
        np.testing.assert_allclose(k.data, explicit_gaussian(1.0, 4), rtol=0, atol=1e-15)

    @given(st.floats(0.05, 6.0))
    @settings(max_examples=40, deadline=None)
    def test_sum_and_fourfold_symmetry(self, sigma):
        k = gaussian_kernel(sigma)
        assert k.size == 2 * math.ceil(4 * sigma) + 1
        assert abs(k.data.sum() - 1) < 1e-9
        assert np.all(k.data >= 0)
        np.testing.assert_allclose(k.data, k.data.T, atol=1e-15)
        np.testing.assert_allclose(k.data, k.data[::-1, :], atol=1e-15)
        np.testing.assert_allclose(k.data, k.data[::-1, ::-1], atol=1e-15)

    @pytest.mark.parametrize("sigma", [0.0, -1.0])
    def test_rejects_non_positive_sigma(self, sigma):
        with pytest.raises(ParameterError):
            gaussian_kernel(sigma)


class TestDisc:
    def test_small_radius_is_delta(self):
        k = disc_kernel(0.4)
        assert abs(k.data[k.center, k.center] - 1) < 1e-9

    def test_interior_taps_equal(self):
        k = disc_kernel(3)
        c = k.center
        yy, xx = np.indices(k.data.shape)
        # pixels whose whole square lies inside the disc
        far = np.hypot(np.abs(yy - c) + 0.5, np.abs(xx - c) + 0.5) <= 3
        interior = k.data[far]
        assert interior.size > 1
        np.testing.assert_allclose(interior, interior[0], rtol=0, atol=1e-15)

    def test_sum_and_symmetry(self):
        k = disc_kernel(3)
        assert abs(k.data.sum() - 1) < 1e-9
        assert np.all(k.data >= 0)
        np.testing.assert_allclose(k.data, k.data[::-1, ::-1], atol=1e-15)

    def test_rejects_non_positive_radius(self):
        with pytest.raises(ParameterError):
            disc_kernel(0)


class TestKernelType:
    def test_even_side_rejected(self):
        with pytest.raises(ParameterError):
            Kernel(np.ones((4, 4)))

    def test_non_finite_rejected(self):
        d = np.zeros((3, 3))
        d[1, 1] = np.nan
        with pytest.raises(ParameterError):
            Kernel(d)

    def test_immutable(self):
        k = gaussian_kernel(1.0)
        with pytest.raises(ValueError):
            k.data[0, 0] = 1.0


class TestLanczos:
    @pytest.mark.parametrize("role", list(KernelRole))
    def test_unit_scale_is_identity(self, role):
        rng = np.random.default_rng(3)
        k = Kernel(rng.normal(size=(11, 11)), role)
        if role is KernelRole.BLUR:
            k = Kernel(np.abs(k.data) / np.abs(k.data).sum(), role)
        out = lanczos_rescale(k, 1.0)
        np.testing.assert_allclose(out.data, k.data, rtol=0, atol=1e-12)

    def test_gaussian_scale_two_matches_direct_gaussian(self):
        up = lanczos_rescale(gaussian_kernel(1.0), 2.0)
        assert rel_l2_padded(up.data, gaussian_kernel(2.0).data) < 0.02

    @given(st.floats(0.5, 5.0))
    @settings(max_examples=60, deadline=None)
    def test_gaussian_scale_equivalence_over_range(self, s):
        # three lobes alias a sigma=1 Gaussian by up to 3.6% for s in (0.6, 1.2)
        up = lanczos_rescale(gaussian_kernel(1.0), s, lobes=6)
        assert rel_l2_padded(up.data, gaussian_kernel(s).data) < 0.02

    @given(st.floats(1.2, 5.0))
    @settings(max_examples=40, deadline=None)
    def test_gaussian_scale_equivalence_default_lobes(self, s):
        up = lanczos_rescale(gaussian_kernel(1.0), s)
        assert rel_l2_padded(up.data, gaussian_kernel(s).data) < 0.02

    def test_half_scale_is_exact_subsampling(self):
        down = lanczos_rescale(gaussian_kernel(1.0), 0.5)
        assert rel_l2_padded(down.data, gaussian_kernel(0.5).data) < 1e-12

    def test_delta_upsampled_is_windowed_sinc(self):
        out = lanczos_rescale(Kernel.delta(1, KernelRole.INVERSE), 3.0).data
        c = out.shape[0] // 2
        assert out.shape == (3, 3)
        assert np.argmax(out) == np.ravel_multi_index((c, c), out.shape)
        wide = lanczos_rescale(Kernel.delta(5, KernelRole.INVERSE), 3.0).data
        c = wide.shape[0] // 2
        assert np.unravel_index(np.argmax(wide), wide.shape) == (c, c)
        assert wide.min() < 0  # sinc side lobes

    def test_blur_sum_preserved_inverse_scaled(self):
        inv = Kernel(gaussian_kernel(1.0).data, KernelRole.INVERSE)
        up = lanczos_rescale(inv, 2.0)
        # Lanczos-3 is not a partition of unity; DC gain droops ~0.6%
        assert abs(up.data.sum() - 1.0) < 1e-2
        assert abs(lanczos_rescale(gaussian_kernel(1.0), 2.5).data.sum() - 1) < 1e-12

    def test_output_side_is_odd(self):
        assert lanczos_rescale(gaussian_kernel(1.0), 2.0).size == 19
        assert lanczos_rescale(gaussian_kernel(1.0), 1.5).size == 15

    def test_too_small_scale_rejected(self):
        with pytest.raises(ParameterError):
            lanczos_rescale(gaussian_kernel(1.0), 0.01)

    def test_bad_lobes_rejected(self):
        with pytest.raises(ParameterError):
            lanczos_rescale(gaussian_kernel(1.0), 2.0, lobes=1)


class TestSynth:
    def test_impulse(self):
        img = synth_image("impulse", 32, 32)
        assert img.shape == (32, 32, 1)
        assert img[16, 16, 0] == 1.0
        assert img.sum() == 1.0

    def test_checkerboard_half_ones(self):
        img = synth_image("checkerboard", 64, 64, cell=8)
        assert np.count_nonzero(img == 1.0) == 64 * 64 // 2

    def test_smooth_noise_deterministic(self):
        a = synth_image("smooth_noise", 64, 48, seed=7)
        b = synth_image("smooth_noise", 64, 48, seed=7)
        assert a.tobytes() == b.tobytes()
        assert a.min() >= 0 and a.max() <= 1

    def test_smooth_noise_is_band_limited(self):
        img = synth_image("smooth_noise", 64, 64, seed=1)[:, :, 0]
        spec = np.abs(np.fft.fft2(img))
        f = np.hypot(np.fft.fftfreq(64)[:, None], np.fft.fftfreq(64)[None, :])
        assert spec[f > 1 / 16 + 1e-9].max() < 1e-9 * spec.max()

    def test_unknown_kind(self):
        with pytest.raises(ParameterError):
            synth_image("stripes", 32, 32)

    def test_too_small(self):
        with pytest.raises(ParameterError):
            synth_image("impulse", 8, 32)


class TestPNM:
    def test_two_pixel_p5(self):
        img = parse_pnm(b"P5\n2 1\n255\n" + bytes([0, 255]))
        assert img.shape == (1, 2, 1)
        assert img.ravel().tolist() == [0.0, 1.0]

    def test_half_at_sixteen_bits(self):
        raw = encode_pnm(np.full((1, 1), 0.5), depth=16)
        value = int.from_bytes(raw[-2:], "big")
        assert abs(value - 32768) <= 1

    @pytest.mark.parametrize("depth", [8, 16])
    def test_file_roundtrip_is_byte_exact(self, tmp_path, depth):
        rng = np.random.default_rng(0)
        maxval = 255 if depth == 8 else 65535
        dtype = np.uint8 if depth == 8 else ">u2"
        raw = rng.integers(0, maxval + 1, size=(5, 7)).astype(dtype).tobytes()
        blob = f"P5\n7 5\n{maxval}\n".encode() + raw
        src = tmp_path / "a.pgm"
        src.write_bytes(blob)
        dst = tmp_path / "b.pgm"
        write_pnm(read_pnm(src), dst, depth=depth)
        assert dst.read_bytes() == blob

    @given(st.integers(1, 9), st.integers(1, 9), st.sampled_from([1, 3]), st.sampled_from([8, 16]), st.integers(0, 2**31))
    @settings(max_examples=40, deadline=None)
    def test_value_roundtrip_within_half_step(self, h, w, c, depth, seed):
        img = np.random.default_rng(seed).uniform(0, 1, size=(h, w, c))
        back = parse_pnm(encode_pnm(img, depth))
        maxval = 255 if depth == 8 else 65535
        assert back.shape == img.shape
        assert np.max(np.abs(back - img)) <= 1 / (2 * maxval) + 1e-15

    def test_clamps_on_write(self):
        back = parse_pnm(encode_pnm(np.array([[-0.5, 1.5]])))
        assert back.ravel().tolist() == [0.0, 1.0]

    def test_color_p6(self):
        img = np.random.default_rng(1).uniform(size=(4, 3, 3))
        blob = encode_pnm(img)
        assert blob.startswith(b"P6")
        assert parse_pnm(blob).shape == (4, 3, 3)

    def test_comments_in_header(self):
        img = parse_pnm(b"P5\n# made by hand\n2 # width\n1\n255\n" + bytes([10, 20]))
        np.testing.assert_allclose(img.ravel(), [10 / 255, 20 / 255])

    def test_truncated_payload_reports_offset(self):
        blob = b"P5\n4 4\n255\n" + bytes(10)
        with pytest.raises(PNMFormatError) as err:
            parse_pnm(blob)
        assert err.value.offset == len(blob)
        assert "byte" in str(err.value)

    @pytest.mark.parametrize(
        "blob, offset",
        [
            (b"P3\n1 1\n255\n0", 0),
            (b"X5\n1 1\n255\n\x00", 0),
            (b"P5\n1 x\n255\n\x00", 5),
            (b"P5\n1 1\n70000\n\x00\x00", 7),
            (b"P5\n1 1", 6),
        ],
    )
    def test_malformed_header(self, blob, offset):
        with pytest.raises(PNMFormatError) as err:
            parse_pnm(blob)
        assert err.value.offset == offset
