"""Tests for waveform I/O and synthetic sources."""

import numpy as np
import pytest

from sepkit.signal import (
    EmptyAudioError,
    SynthSpec,
    UnreadableFileError,
    UnsupportedEncodingError,
    Waveform,
    read_wav,
    synth_source,
    write_synthetic_corpus,
    write_wav,
)


class TestWaveform:
    def test_rejects_stereo(self):
        with pytest.raises(ValueError, match="mono"):
            Waveform(np.zeros((10, 2)), 16000)

    def test_rejects_nan(self):
        with pytest.raises(ValueError, match="NaN"):
            Waveform(np.array([0.0, np.nan]), 16000)

    def test_rejects_bad_rate(self):
        with pytest.raises(ValueError, match="sample_rate"):
            Waveform(np.zeros(10), 0)

    def test_duration(self):
        assert Waveform(np.zeros(8000), 16000).duration_s == 0.5


class TestWavRoundTrip:
    def test_float32_bit_exact(self, tmp_path):
        rng = np.random.default_rng(0)
        original = rng.uniform(-1, 1, 1000).astype(np.float32).astype(np.float64)
        write_wav(Waveform(original, 16000), tmp_path / "a.wav", encoding="float32")
        back = read_wav(tmp_path / "a.wav")
        assert back.sample_rate_hz == 16000
        np.testing.assert_array_equal(back.samples, original)

    def test_pcm16_scale(self, tmp_path):
        # 0.5 encodes to code 16384; decoding divides by 32768 exactly.
        wave = Waveform(np.array([0.5, -0.5, 0.0]), 8000)
        write_wav(wave, tmp_path / "a.wav", encoding="pcm16")
        back = read_wav(tmp_path / "a.wav")
        np.testing.assert_array_equal(back.samples, [16384 / 32768, -16384 / 32768, 0.0])

    def test_pcm16_quantization_error_bound(self, tmp_path):
        rng = np.random.default_rng(1)
        original = rng.uniform(-0.99, 0.99, 4000)
        write_wav(Waveform(original, 16000), tmp_path / "a.wav", encoding="pcm16")
        back = read_wav(tmp_path / "a.wav")
        assert np.abs(back.samples - original).max() <= 0.5 / 32768 + 1e-12

    def test_pcm16_out_of_range_raises(self, tmp_path):
        wave = Waveform(np.array([1.5]), 16000)
        with pytest.raises(ValueError, match="clip"):
            write_wav(wave, tmp_path / "a.wav", encoding="pcm16")

    def test_pcm16_clip_saturates(self, tmp_path):
        wave = Waveform(np.array([1.5, -1.5, 0.25]), 16000)
        write_wav(wave, tmp_path / "a.wav", encoding="pcm16", clip=True)
        back = read_wav(tmp_path / "a.wav")
        np.testing.assert_array_equal(
            back.samples, [32767 / 32768, -32768 / 32768, 8192 / 32768])

    def test_multichannel_keeps_first(self, tmp_path):
        from scipy.io import wavfile
        stereo = np.stack([np.full(10, 0.25), np.full(10, -0.5)], axis=1).astype(np.float32)
        wavfile.write(tmp_path / "st.wav", 16000, stereo)
        with pytest.warns(UserWarning, match="channel 0"):
            back = read_wav(tmp_path / "st.wav")
        np.testing.assert_array_equal(back.samples, np.full(10, 0.25))


class TestReadErrors:
    def test_missing_file(self, tmp_path):
        with pytest.raises(UnreadableFileError):
            read_wav(tmp_path / "nope.wav")

    def test_not_riff(self, tmp_path):
        (tmp_path / "junk.wav").write_bytes(b"this is not audio data at all")
        with pytest.raises(UnreadableFileError):
            read_wav(tmp_path / "junk.wav")

    def test_truncated_header(self, tmp_path):
        (tmp_path / "short.wav").write_bytes(b"RIFF")
        with pytest.raises(UnreadableFileError):
            read_wav(tmp_path / "short.wav")

    def test_unsupported_encoding(self, tmp_path):
        from scipy.io import wavfile
        wavfile.write(tmp_path / "i32.wav", 16000, np.zeros(10, dtype=np.int32))
        with pytest.raises(UnsupportedEncodingError):
            read_wav(tmp_path / "i32.wav")

    def test_empty_data(self, tmp_path):
        from scipy.io import wavfile
        wavfile.write(tmp_path / "empty.wav", 16000, np.zeros(0, dtype=np.int16))
        with pytest.raises(EmptyAudioError):
            read_wav(tmp_path / "empty.wav")


class TestSynth:
    def test_unknown_kind(self):
        with pytest.raises(ValueError, match="kind"):
            SynthSpec("square")

    def test_length(self):
        wave = synth_source(SynthSpec("tone", {"freq_hz": 440}), 3.0, 16000)
        assert len(wave) == 48000
        assert wave.sample_rate_hz == 16000

    def test_tone_frequency(self):
        # A 440 Hz tone's FFT energy concentrates at bin 440 for a 1 s clip.
        wave = synth_source(SynthSpec("tone", {"freq_hz": 440.0}), 1.0, 16000)
        spectrum = np.abs(np.fft.rfft(wave.samples))
        assert spectrum.argmax() == 440

    def test_amplitude_bound(self):
        for kind in ("tone", "chirp", "band-noise", "impulse-train"):
            wave = synth_source(SynthSpec(kind, {"amplitude": 0.7}, seed=3), 1.0, 8000)
            assert np.abs(wave.samples).max() <= 0.7 + 1e-12

    def test_band_noise_in_band(self):
        # >= 99% of FFT energy must fall inside the requested band.
        wave = synth_source(
            SynthSpec("band-noise", {"band_lo_hz": 1000, "band_hi_hz": 2000}, seed=7),
            2.0, 16000)
        freqs = np.fft.rfftfreq(len(wave), 1 / 16000)
        power = np.abs(np.fft.rfft(wave.samples)) ** 2
        in_band = power[(freqs >= 999) & (freqs <= 2001)].sum()
        assert in_band / power.sum() > 0.99

    def test_silence_then_burst_onset(self):
        wave = synth_source(
            SynthSpec("silence-then-burst", {"onset_s": 0.5, "freq_hz": 500}), 1.0, 8000)
        assert np.all(wave.samples[:4000] == 0)
        assert np.abs(wave.samples[4000:]).max() > 0.1

    def test_impulse_train_positions(self):
        wave = synth_source(
            SynthSpec("impulse-train", {"period_s": 0.25, "amplitude": 0.8}), 1.0, 8000)
        nonzero = np.flatnonzero(wave.samples)
        np.testing.assert_array_equal(nonzero, [0, 2000, 4000, 6000])

    def test_determinism(self):
        spec = SynthSpec("band-noise", {"band_lo_hz": 500, "band_hi_hz": 900}, seed=11)
        a = synth_source(spec, 1.0, 16000)
        b = synth_source(spec, 1.0, 16000)
        np.testing.assert_array_equal(a.samples, b.samples)

    def test_validation(self):
        with pytest.raises(ValueError):
            synth_source(SynthSpec("tone", {"freq_hz": 9000}), 1.0, 16000)
        with pytest.raises(ValueError):
            synth_source(SynthSpec("band-noise", {"band_lo_hz": 2000, "band_hi_hz": 1000}),
                         1.0, 16000)
        with pytest.raises(ValueError):
            synth_source(SynthSpec("tone"), -1.0, 16000)


class TestCorpus:
    def test_writes_files_and_is_deterministic(self, tmp_path):
        entries = write_synthetic_corpus(tmp_path / "a", 6, seed=5, profile="general",
                                         sample_rate_hz=8000)
        assert len(entries) == 6
        first = read_wav(entries[0]["path"])
        assert first.sample_rate_hz == 8000
        entries2 = write_synthetic_corpus(tmp_path / "b", 6, seed=5, profile="general",
                                          sample_rate_hz=8000)
        for e1, e2 in zip(entries, entries2):
            np.testing.assert_array_equal(read_wav(e1["path"]).samples,
                                          read_wav(e2["path"]).samples)

    def test_two_band_families_disjoint(self, tmp_path):
        # Low-family energy stays below 0.3*Nyquist; high-family above.
        rate = 8000
        entries = write_synthetic_corpus(tmp_path, 8, seed=9, profile="two-band",
                                         sample_rate_hz=rate)
        split_hz = 0.3 * rate / 2
        for entry in entries:
            wave = read_wav(entry["path"])
            freqs = np.fft.rfftfreq(len(wave), 1 / rate)
            power = np.abs(np.fft.rfft(wave.samples)) ** 2
            low_frac = power[freqs <= split_hz].sum() / power.sum()
            if entry["family"] == "low":
                assert low_frac > 0.95, entry
            else:
                assert low_frac < 0.05, entry

    def test_duration_spread_covers_short_files(self, tmp_path):
        entries = write_synthetic_corpus(tmp_path, 12, seed=2, profile="general",
                                         sample_rate_hz=8000)
        durations = [e["duration_s"] for e in entries]
        assert min(durations) < 3.0 < max(durations)
