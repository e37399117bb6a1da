"""Preprocessing chain: analytic transform, phase speed, crop/downscale."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echosynth.datatypes import AcquisitionConfig, SpeedStream, TraceSeries
from echosynth.sigproc import (
    align_pairs,
    analytic_transform,
    compute_speed_stream,
    crop_downscale,
    extract_patch,
    fermi_weights,
    phase_map,
    phase_speed,
    wrap_degrees,
)

FS = 1e8
F0 = 1e6
LAMBDA_MM = 1.54


class TestFermiWeights:
    def test_negative_frequencies_zeroed(self):
        w = fermi_weights(1024, FS, F0)
        freqs = np.fft.fftfreq(1024, d=1.0 / FS)
        assert np.all(w[freqs < 0] == 0.0)

    def test_dc_weight_exactly_one(self):
        assert fermi_weights(1024, FS, F0)[0] == 1.0

    def test_half_weight_at_cutoff(self):
        # place the cutoff exactly on a frequency bin: 10 MHz on a
        # 1000-sample grid at 100 MHz -> bin 100
        w = fermi_weights(1000, FS, F0)
        assert w[100] == pytest.approx(0.5, abs=1e-12)

    def test_monotone_rolloff_over_positive_frequencies(self):
        w = fermi_weights(1000, FS, F0)
        positive = w[1:500]
        assert np.all(np.diff(positive) <= 1e-15)

    def test_high_frequencies_strongly_attenuated(self):
        w = fermi_weights(1000, FS, F0)
        freqs = np.fft.fftfreq(1000, d=1.0 / FS)
        assert np.all(w[(freqs > 0) & (np.abs(freqs) > 2 * 10 * F0)] < 1e-8)

    def test_invalid_sizes_rejected(self):
        with pytest.raises(ValueError):
            fermi_weights(0, FS, F0)
        with pytest.raises(ValueError):
            fermi_weights(16, FS, 0.0)


class TestAnalyticTransform:
    def test_pure_carrier_becomes_complex_exponential(self):
        # cosine below the cutoff -> analytic signal with constant
        # magnitude and phase advancing 360 f0/fs degrees per sample;
        # n puts f0 on an integer frequency bin (no leakage)
        n = 4000
        t = np.arange(n)
        x = np.cos(2 * np.pi * F0 / FS * t)
        z = analytic_transform(x, FS, F0)
        mag = np.abs(z)[200:-200]
        assert np.all(np.abs(mag - 0.5) < 0.01 * 0.5)
        dphase = wrap_degrees(np.diff(np.degrees(np.angle(z[200:-200]))))
        assert np.allclose(dphase, 360.0 * F0 / FS, atol=1e-3)

    def test_cosine_beyond_cutoff_suppressed(self):
        n = 4096
        t = np.arange(n)
        x = np.cos(2 * np.pi * 20 * F0 / FS * t)
        z = analytic_transform(x, FS, F0)
        assert np.sum(np.abs(z) ** 2) <= 1e-3 * np.sum(x**2)

    def test_zero_vector_maps_to_zero(self):
        z = analytic_transform(np.zeros(64), FS, F0)
        assert np.all(z == 0)

    def test_linearity(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal(256)
        y = rng.standard_normal(256)
        a, b = 2.5, -1.25
        lhs = analytic_transform(a * x + b * y, FS, F0)
        rhs = a * analytic_transform(x, FS, F0) + b * analytic_transform(y, FS, F0)
        assert np.allclose(lhs, rhs, atol=1e-10)

    def test_batch_matches_single(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((5, 128))
        z = analytic_transform(x, FS, F0)
        for i in range(5):
            assert np.allclose(z[i], analytic_transform(x[i], FS, F0), atol=1e-12)

    def test_float32_stays_single_precision(self):
        x = np.zeros((2, 64), dtype=np.float32)
        assert analytic_transform(x, FS, F0).dtype == np.complex64

    def test_odd_length_padded_and_trimmed(self):
        rng = np.random.default_rng(2)
        x = rng.standard_normal(65)
        z = analytic_transform(x, FS, F0)
        assert z.shape == (65,)
        padded = analytic_transform(np.concatenate([x, [0.0]]), FS, F0)
        assert np.allclose(z, padded[:65], atol=1e-12)

    def test_rejects_short_and_nonfinite(self):
        with pytest.raises(ValueError):
            analytic_transform(np.zeros(8), FS, F0)
        bad = np.zeros(64)
        bad[3] = np.nan
        with pytest.raises(ValueError):
            analytic_transform(bad, FS, F0)


class TestWrapDegrees:
    def test_wrap_convention_prev170_now_minus170(self):
        assert wrap_degrees(-170.0 - 170.0) == pytest.approx(20.0)

    def test_range_edges(self):
        assert wrap_degrees(180.0) == -180.0
        assert wrap_degrees(-180.0) == -180.0
        assert wrap_degrees(0.0) == 0.0

    @given(st.floats(min_value=-1e6, max_value=1e6))
    def test_result_in_range(self, x):
        w = wrap_degrees(x)
        assert -180.0 <= w < 180.0

    @given(
        st.floats(min_value=-720, max_value=720),
        st.integers(min_value=-3, max_value=3),
    )
    def test_periodicity(self, x, k):
        assert wrap_degrees(x + 360.0 * k) == pytest.approx(
            wrap_degrees(x), abs=1e-9
        )

    @given(st.floats(min_value=-1e4, max_value=1e4))
    def test_differs_by_multiple_of_360(self, x):
        ratio = (x - wrap_degrees(x)) / 360.0
        assert ratio == pytest.approx(round(ratio), abs=1e-9)


class TestPhaseSpeed:
    def test_stationary_phase_gives_zero(self):
        theta = np.tile(np.linspace(-170, 170, 50), (4, 1))
        v = phase_speed(theta, LAMBDA_MM)
        assert np.all(v == 0)

    def test_uniform_36_degree_shift(self):
        # alpha * dtheta / 2 = (0.5 * 1.54 / 360) * 36 / 2 = 0.0385
        theta = np.vstack([np.zeros(8), np.full(8, 36.0)])
        v = phase_speed(theta, LAMBDA_MM)
        assert np.allclose(v[1], 0.0385, atol=1e-12)
        assert np.all(v[0] == 0)

    def test_wraparound_difference(self):
        theta = np.vstack([np.full(4, 170.0), np.full(4, -170.0)])
        v = phase_speed(theta, LAMBDA_MM)
        expected = (0.5 * LAMBDA_MM / 360.0) * 20.0 / 2.0
        assert np.allclose(v[1], expected, atol=1e-12)

    def test_first_row_zero_single_row_ok(self):
        v = phase_speed(np.full((1, 6), 90.0), LAMBDA_MM)
        assert v.shape == (1, 6)
        assert np.all(v == 0)

    def test_rejects_empty(self):
        with pytest.raises(ValueError):
            phase_speed(np.zeros((0, 4)), LAMBDA_MM)


def brute_force_bins(row: np.ndarray, depth_bins: int) -> np.ndarray:
    """Area-weighted bin means computed sample by sample."""
    length = row.size
    width = length / depth_bins
    out = np.zeros(depth_bins)
    for b in range(depth_bins):
        lo, hi = b * width, (b + 1) * width
        acc = 0.0
        for s in range(int(np.floor(lo)), min(int(np.ceil(hi)), length)):
            overlap = min(hi, s + 1.0) - max(lo, float(s))
            if overlap > 0:
                acc += overlap * row[s]
        out[b] = acc / width
    return out


class TestCropDownscale:
    def test_constant_preserved(self):
        x = np.full(20000, 3.25)
        y = crop_downscale(x, 1000, 8000, 560)
        assert y.shape == (560,)
        assert np.allclose(y, 3.25, atol=1e-12)

    def test_linear_ramp_gives_bin_center_means(self):
        # v(s) = s as a staircase of unit cells; the area-weighted bin
        # mean is (B(hi) - B(lo)) / width with B(x) = integral of
        # floor(u) du = k(k-1)/2 + k(x-k), k = floor(x).
        def stair_integral(x):
            k = np.floor(x)
            return 0.5 * k * (k - 1.0) + k * (x - k)

        x = np.arange(20000, dtype=np.float64)
        y = crop_downscale(x, 1000, 8000, 560)
        width = 7000 / 560
        edges = 1000 + width * np.arange(561)
        expected = np.diff(stair_integral(edges)) / width
        assert np.max(np.abs(y - expected)) < 1e-9

    def test_matches_brute_force_fractional_width(self):
        rng = np.random.default_rng(3)
        x = rng.standard_normal(100)
        y = crop_downscale(x, 0, 100, 8)  # width 12.5, fractional edges
        assert np.allclose(y, brute_force_bins(x, 8), atol=1e-12)

    def test_matches_brute_force_pipeline_geometry(self):
        rng = np.random.default_rng(4)
        x = rng.standard_normal(20000)
        y = crop_downscale(x, 1000, 8000, 560)
        assert np.allclose(y, brute_force_bins(x[1000:8000], 560), atol=1e-10)

    def test_integer_width_equals_reshape_mean(self):
        rng = np.random.default_rng(5)
        x = rng.standard_normal(7000)
        y = crop_downscale(x, 0, 7000, 700)  # width exactly 10
        assert np.allclose(y, x.reshape(700, 10).mean(axis=1), atol=1e-12)

    def test_batch_axis(self):
        rng = np.random.default_rng(6)
        x = rng.standard_normal((3, 50))
        y = crop_downscale(x, 10, 45, 7)
        for i in range(3):
            assert np.allclose(y[i], crop_downscale(x[i], 10, 45, 7), atol=1e-14)

    def test_rejects_bad_windows(self):
        x = np.zeros(100)
        with pytest.raises(ValueError):
            crop_downscale(x, 50, 40, 5)
        with pytest.raises(ValueError):
            crop_downscale(x, 0, 101, 5)
        with pytest.raises(ValueError):
            crop_downscale(x, 0, 100, 101)

    @given(
        st.integers(min_value=2, max_value=40),
        st.integers(min_value=1, max_value=40),
        st.floats(min_value=-100, max_value=100),
    )
    @settings(max_examples=40, deadline=None)
    def test_constant_preserved_any_geometry(self, length, bins, value):
        if bins > length:
            bins = length
        y = crop_downscale(np.full(length, value), 0, length, bins)
        assert np.allclose(y, value, atol=1e-9)


def make_series(data: np.ndarray) -> TraceSeries:
    return TraceSeries(data=data, fs_hz=FS, f0_hz=F0, tr_s=0.01)


class TestComputeSpeedStream:
    def test_static_traces_give_null_speeds(self):
        rng = np.random.default_rng(7)
        one = rng.standard_normal(20000).astype(np.float32)
        series = make_series(np.tile(one, (6, 1)))
        cfg = AcquisitionConfig()
        stream = compute_speed_stream(series, cfg)
        assert stream.data.shape == (560, 6)
        assert np.max(np.abs(stream.data)) < 1e-9

    def test_trace_count_preserved_and_column0_zero(self):
        rng = np.random.default_rng(8)
        series = make_series(rng.standard_normal((9, 20000)).astype(np.float32))
        stream = compute_speed_stream(series, AcquisitionConfig())
        assert stream.n_traces == 9
        assert np.all(stream.data[:, 0] == 0)

    def test_chunking_is_seamless(self):
        rng = np.random.default_rng(9)
        series = make_series(rng.standard_normal((11, 20000)).astype(np.float32))
        cfg = AcquisitionConfig()
        a = compute_speed_stream(series, cfg, chunk_traces=3)
        b = compute_speed_stream(series, cfg, chunk_traces=1000)
        assert np.array_equal(a.data, b.data)

    def test_constant_velocity_scatterer_near_constant_speed(self):
        # a single echo sliding at constant velocity: the speed stream at
        # the echo's depth band should be nearly constant across traces
        from echosynth.phantom import ScattererField, render_trace

        cfg = AcquisitionConfig()
        field = ScattererField(
            depths_mm=(30.0,), reflectivities=(1.0,), motion_gains=(1.0,)
        )
        v_mm_per_tr = 0.02
        disp = v_mm_per_tr * np.arange(12)
        data = np.stack(
            [render_trace(cfg, field, d, snr_db=None) for d in disp]
        )
        stream = compute_speed_stream(make_series(data), cfg)
        # depth bin of the echo: sample 2*30/1540e3*1e8 = 3896 -> bin
        band = int((3896 - cfg.crop_lo) / ((cfg.crop_hi - cfg.crop_lo) / cfg.depth_bins))
        v = stream.data[band - 2 : band + 3, 1:]
        # alpha*dtheta/2 with dtheta = -360*2*dx/lambda: moving away from
        # the transducer lowers the echo phase, and the /2 convention
        # stores half the per-interval displacement
        expected = -v_mm_per_tr / 2.0
        rel = np.abs(v - expected) / np.abs(expected)
        assert np.median(rel) < 0.05

    def test_length_mismatch_rejected(self):
        series = make_series(np.zeros((2, 1024), dtype=np.float32))
        with pytest.raises(ValueError):
            compute_speed_stream(series, AcquisitionConfig())


class TestPatchesAndAlignment:
    def make_stream(self, n=400, d=16):
        rng = np.random.default_rng(10)
        return SpeedStream(
            data=rng.standard_normal((d, n)).astype(np.float32), tr_s=0.01
        )

    def test_first_valid_patch_and_shape(self):
        stream = self.make_stream()
        p = extract_patch(stream, 299, 300)
        assert p.data.shape == (16, 300)
        assert np.array_equal(p.data, stream.data[:, :300])
        assert p.end_trace_index == 299

    def test_shift_property_shares_columns(self):
        stream = self.make_stream()
        a = extract_patch(stream, 310, 300)
        b = extract_patch(stream, 311, 300)
        assert np.array_equal(a.data[:, 1:], b.data[:, :-1])

    def test_insufficient_history_rejected(self):
        stream = self.make_stream()
        with pytest.raises(ValueError):
            extract_patch(stream, 298, 300)
        with pytest.raises(ValueError):
            extract_patch(stream, 400, 300)

    def test_align_pairs_drops_early_images(self):
        from echosynth.datatypes import ImageSeries

        stream = self.make_stream(n=500)
        stamps = np.array([0.5, 3.2, 4.5])  # trace indices 50, 320, 450
        images = ImageSeries(
            data=np.zeros((3, 4, 4), dtype=np.float32), timestamps=stamps
        )
        result = align_pairs(stream, images, patch_len=300)
        assert result.n_dropped == 1
        assert result.dropped_indices == (0,)
        assert [p.image_index for p in result.pairs] == [1, 2]
        assert [p.patch.end_trace_index for p in result.pairs] == [320, 450]

    def test_phase_map_range(self):
        rng = np.random.default_rng(11)
        z = rng.standard_normal(64) + 1j * rng.standard_normal(64)
        theta = phase_map(z)
        assert np.all(theta >= -180.0) and np.all(theta < 180.0)
