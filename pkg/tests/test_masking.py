"""Tests for mask application, mixture consistency, and oracle masking."""

import numpy as np
import pytest

from sepkit.masking import (
    MaskSet,
    apply_masks,
    mixture_consistency,
    oracle_binary_mask,
    separate_oracle,
)
from sepkit.objectives import si_sdr_improvement
from sepkit.signal import SynthSpec, Waveform, synth_source
from sepkit.transforms import (
    LEARNED_KIND,
    STFT_KIND,
    CoeffFrames,
    FrameSpec,
    next_pow2,
    num_frames,
    stft,
)


def toy_spec(window_len=8, hop=4, rate=8000):
    return FrameSpec(window_len, hop, next_pow2(window_len), rate)


def random_coeffs(spec, length, seed, kind=STFT_KIND):
    rng = np.random.default_rng(seed)
    shape = (num_frames(length, spec), spec.n_bins)
    if kind == STFT_KIND:
        data = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    else:
        data = rng.uniform(0, 1, shape)
    return CoeffFrames(data, kind, spec, length)


class TestMaskSet:
    def test_range_validation(self):
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            MaskSet(np.full((2, 3, 4), 1.5))
        with pytest.raises(ValueError, match=r"\[0, 1\]"):
            MaskSet(np.full((2, 3, 4), -0.1))

    def test_shape_validation(self):
        with pytest.raises(ValueError, match="sources"):
            MaskSet(np.zeros((3, 4)))


class TestApplyMasks:
    def test_identity_mask(self):
        coeffs = random_coeffs(toy_spec(), 40, seed=0)
        masks = MaskSet(np.ones((1,) + coeffs.data.shape))
        out = apply_masks(masks, coeffs)
        np.testing.assert_array_equal(out[0].data, coeffs.data)

    def test_zero_mask(self):
        coeffs = random_coeffs(toy_spec(), 40, seed=1)
        masks = MaskSet(np.zeros((2,) + coeffs.data.shape))
        for est in apply_masks(masks, coeffs):
            assert np.all(est.data == 0)

    def test_complementary_masks_sum_to_mixture(self):
        coeffs = random_coeffs(toy_spec(), 40, seed=2)
        m = np.random.default_rng(3).uniform(0, 1, coeffs.data.shape)
        out = apply_masks(MaskSet(np.stack([m, 1 - m])), coeffs)
        np.testing.assert_allclose(out[0].data + out[1].data, coeffs.data,
                                   rtol=0, atol=1e-12)

    def test_learned_coeffs_supported(self):
        coeffs = random_coeffs(toy_spec(), 40, seed=4, kind=LEARNED_KIND)
        m = np.random.default_rng(5).uniform(0, 1, coeffs.data.shape)
        out = apply_masks(MaskSet(m[None]), coeffs)
        assert out[0].kind == LEARNED_KIND
        np.testing.assert_allclose(out[0].data, m * coeffs.data)

    def test_linearity_in_mixture(self):
        spec = toy_spec()
        a = random_coeffs(spec, 40, seed=6)
        b = random_coeffs(spec, 40, seed=7)
        m = np.random.default_rng(8).uniform(0, 1, a.data.shape)
        masks = MaskSet(m[None])
        joint = apply_masks(
            masks, CoeffFrames(a.data + b.data, STFT_KIND, spec, 40))[0].data
        np.testing.assert_allclose(
            joint, apply_masks(masks, a)[0].data + apply_masks(masks, b)[0].data,
            rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        coeffs = random_coeffs(toy_spec(), 40, seed=9)
        with pytest.raises(ValueError, match="shape"):
            apply_masks(MaskSet(np.ones((1, 2, 2))), coeffs)


class TestMixtureConsistency:
    def test_scalar_example(self):
        mixture = Waveform(np.array([2.0]), 8000)
        estimates = [Waveform(np.array([0.5]), 8000), Waveform(np.array([0.5]), 8000)]
        out = mixture_consistency(estimates, mixture)
        np.testing.assert_array_equal(out[0].samples, [1.0])
        np.testing.assert_array_equal(out[1].samples, [1.0])

    def test_fixed_point(self):
        rng = np.random.default_rng(10)
        a, b = rng.standard_normal(32), rng.standard_normal(32)
        mixture = Waveform(a + b, 8000)
        out = mixture_consistency([Waveform(a, 8000), Waveform(b, 8000)], mixture)
        np.testing.assert_allclose(out[0].samples, a, rtol=0, atol=1e-15)
        np.testing.assert_allclose(out[1].samples, b, rtol=0, atol=1e-15)

    def test_sum_matches_mixture(self):
        rng = np.random.default_rng(11)
        mixture = Waveform(rng.standard_normal(64), 8000)
        estimates = [Waveform(rng.standard_normal(64), 8000) for _ in range(3)]
        out = mixture_consistency(estimates, mixture)
        residual = np.abs(mixture.samples - sum(o.samples for o in out)).max()
        assert residual <= 8 * np.finfo(np.float64).eps * np.abs(mixture.samples).max()

    def test_idempotent(self):
        rng = np.random.default_rng(12)
        mixture = Waveform(rng.standard_normal(48), 8000)
        estimates = [Waveform(rng.standard_normal(48), 8000) for _ in range(2)]
        once = mixture_consistency(estimates, mixture)
        twice = mixture_consistency(once, mixture)
        for a, b in zip(once, twice):
            np.testing.assert_allclose(a.samples, b.samples, rtol=0, atol=1e-12)

    def test_matches_constrained_least_squares(self):
        # Independent oracle: solve the KKT system of
        #   minimize sum_k ||v_k - s_k||^2  subject to  sum_k v_k = x
        # numerically and compare.
        rng = np.random.default_rng(13)
        n, k = 16, 3
        x = rng.standard_normal(n)
        sources = [rng.standard_normal(n) for _ in range(k)]
        dim = k * n + n
        system = np.zeros((dim, dim))
        rhs = np.zeros(dim)
        eye = np.eye(n)
        for i in range(k):
            rows = slice(i * n, (i + 1) * n)
            system[rows, rows] = 2 * eye
            system[rows, k * n:] = eye
            system[k * n:, rows] = eye
            rhs[rows] = 2 * sources[i]
        rhs[k * n:] = x
        solution = np.linalg.solve(system, rhs)
        out = mixture_consistency([Waveform(s, 8000) for s in sources],
                                  Waveform(x, 8000))
        for i in range(k):
            np.testing.assert_allclose(out[i].samples, solution[i * n:(i + 1) * n],
                                       rtol=0, atol=1e-9)

    def test_errors(self):
        mixture = Waveform(np.zeros(8), 8000)
        with pytest.raises(ValueError, match="at least one"):
            mixture_consistency([], mixture)
        with pytest.raises(ValueError, match="length"):
            mixture_consistency([Waveform(np.zeros(4), 8000)], mixture)


class TestOracleBinaryMask:
    def test_disjoint_bands_exact_indicator(self):
        spec = toy_spec()
        n_t = num_frames(40, spec)
        split = 3
        low = np.zeros((n_t, spec.n_bins), dtype=complex)
        high = np.zeros((n_t, spec.n_bins), dtype=complex)
        rng = np.random.default_rng(14)
        low[:, :split] = rng.standard_normal((n_t, split)) + 1.0j
        high[:, split:] = rng.standard_normal((n_t, spec.n_bins - split)) + 1.0j
        masks = oracle_binary_mask([
            CoeffFrames(low, STFT_KIND, spec, 40),
            CoeffFrames(high, STFT_KIND, spec, 40),
        ]).masks
        np.testing.assert_array_equal(masks[0, :, :split], 1.0)
        np.testing.assert_array_equal(masks[0, :, split:], 0.0)
        np.testing.assert_array_equal(masks[1], 1.0 - masks[0])

    def test_zero_second_source_gives_all_ones_first(self):
        spec = toy_spec()
        a = random_coeffs(spec, 40, seed=15)
        zero = CoeffFrames(np.zeros_like(a.data), STFT_KIND, spec, 40)
        masks = oracle_binary_mask([a, zero]).masks
        np.testing.assert_array_equal(masks[0], 1.0)
        np.testing.assert_array_equal(masks[1], 0.0)

    def test_binary_and_exclusive(self):
        spec = toy_spec()
        refs = [random_coeffs(spec, 80, seed=s) for s in (16, 17, 18)]
        masks = oracle_binary_mask(refs).masks
        assert np.all((masks == 0) | (masks == 1))
        np.testing.assert_array_equal(masks.sum(axis=0), 1.0)

    def test_tie_goes_to_lowest_index(self):
        spec = toy_spec()
        same = random_coeffs(spec, 40, seed=19)
        twin = CoeffFrames(same.data.copy(), STFT_KIND, spec, 40)
        masks = oracle_binary_mask([same, twin]).masks
        np.testing.assert_array_equal(masks[0], 1.0)

    def test_kind_and_shape_errors(self):
        spec = toy_spec()
        a = random_coeffs(spec, 40, seed=20)
        learned = random_coeffs(spec, 40, seed=21, kind=LEARNED_KIND)
        with pytest.raises(ValueError, match="complex_stft"):
            oracle_binary_mask([a, learned])
        short = random_coeffs(spec, 20, seed=22)
        with pytest.raises(ValueError, match="shapes"):
            oracle_binary_mask([a, short])
        with pytest.raises(ValueError, match="two"):
            oracle_binary_mask([a])


class TestSeparateOracle:
    def test_signal_and_silence(self):
        rng = np.random.default_rng(23)
        x = rng.standard_normal(8000) * 0.3
        mixture = Waveform(x, 16000)
        refs = [Waveform(x, 16000), Waveform(np.zeros_like(x), 16000)]
        spec = FrameSpec.from_window_ms(10.0, 16000)
        out = separate_oracle(mixture, refs, spec)
        assert np.abs(out[0].samples - x).max() < 1e-9
        assert np.abs(out[1].samples).max() < 1e-9

    def test_permutation_symmetry(self):
        rate = 16000
        a = synth_source(SynthSpec("tone", {"freq_hz": 500}), 0.5, rate).samples
        b = synth_source(SynthSpec("band-noise",
                                   {"band_lo_hz": 3000, "band_hi_hz": 5000},
                                   seed=24), 0.5, rate).samples
        mixture = Waveform(a + b, rate)
        spec = FrameSpec.from_window_ms(10.0, rate)
        fwd = separate_oracle(mixture, [Waveform(a, rate), Waveform(b, rate)], spec)
        rev = separate_oracle(mixture, [Waveform(b, rate), Waveform(a, rate)], spec)
        np.testing.assert_array_equal(fwd[0].samples, rev[1].samples)
        np.testing.assert_array_equal(fwd[1].samples, rev[0].samples)

    def test_disjoint_band_improvement(self):
        # Frequency-disjoint sources, 10 ms window / 5 ms hop: the oracle
        # binary mask should buy at least 20 dB of SI-SDR improvement.
        rate = 16000
        low = synth_source(SynthSpec("band-noise",
                                     {"band_lo_hz": 300, "band_hi_hz": 1300},
                                     seed=25), 2.0, rate)
        high = synth_source(SynthSpec("band-noise",
                                      {"band_lo_hz": 2500, "band_hi_hz": 3900},
                                      seed=26), 2.0, rate)
        mixture = Waveform(low.samples + high.samples, rate)
        spec = FrameSpec.from_window_ms(10.0, rate)
        assert (spec.window_len, spec.hop) == (160, 80)
        out = separate_oracle(mixture, [low, high], spec)
        for ref, est in zip((low, high), out):
            assert si_sdr_improvement(ref, est, mixture) >= 20.0

    def test_length_mismatch(self):
        mixture = Waveform(np.zeros(100), 16000)
        with pytest.raises(ValueError, match="length"):
            separate_oracle(mixture, [Waveform(np.zeros(50), 16000),
                                      Waveform(np.zeros(100), 16000)],
                            FrameSpec.from_window_ms(10.0, 16000))
