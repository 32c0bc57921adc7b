"""Time-domain signal types, WAV file I/O, and synthetic test sources.

Everything downstream works on mono float64 sample vectors in [-1, 1].
Files on disk may be PCM16 or IEEE float32; the in-memory representation
is always float64 so that reconstruction and gradient checks have
~1e-10 headroom.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 16000

SYNTH_KINDS = ("tone", "chirp", "band-noise", "impulse-train", "silence-then-burst")


class AudioIOError(Exception):
    """Base class for WAV read/write failures."""


class UnreadableFileError(AudioIOError):
    """File missing, truncated, or not a RIFF/WAVE container."""


class UnsupportedEncodingError(AudioIOError):
    """RIFF file whose sample format is not PCM16 or IEEE float32."""


class EmptyAudioError(AudioIOError):
    """WAV file with a zero-length data chunk."""


@dataclass(frozen=True)
class Waveform:
    """Mono signal: float64 samples (nominal range [-1, 1]) plus sample rate."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1:
            raise ValueError(f"expected mono 1-D samples, got shape {samples.shape}")
        if not np.all(np.isfinite(samples)):
            raise ValueError("samples contain NaN or Inf")
        if int(self.sample_rate_hz) <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "sample_rate_hz", int(self.sample_rate_hz))

    def __len__(self):
        return self.samples.shape[0]

    @property
    def duration_s(self) -> float:
        return len(self) / self.sample_rate_hz


def read_wav(path) -> Waveform:
    """Read a mono waveform from a PCM16 or float32 WAV file.

    PCM16 samples are scaled by 1/32768; float32 samples are kept bit-exact.
    Multi-channel files are reduced to channel 0 with a warning.
    """
    path = Path(path)
    if not path.is_file():
        raise UnreadableFileError(f"cannot read {path}: no such file")
    with open(path, "rb") as fh:
        header = fh.read(12)
    if len(header) < 12 or header[:4] != b"RIFF" or header[8:12] != b"WAVE":
        raise UnreadableFileError(f"{path} is not a RIFF/WAVE file")
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")  # scipy warns on benign chunk oddities
            rate, data = wavfile.read(path)
    except Exception as exc:
        raise UnsupportedEncodingError(f"cannot decode {path}: {exc}") from exc
    if data.size == 0:
        raise EmptyAudioError(f"{path} contains no audio samples")
    if data.ndim == 2:
        warnings.warn(f"{path}: {data.shape[1]} channels, keeping channel 0", stacklevel=2)
        data = data[:, 0]
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.float32:
        samples = data.astype(np.float64)
    elif data.dtype == np.float64:
        samples = data.copy()
    else:
        raise UnsupportedEncodingError(f"{path}: unsupported sample format {data.dtype}")
    return Waveform(samples, int(rate))


def write_wav(waveform: Waveform, path, encoding: str = "float32", clip: bool = False) -> None:
    """Write `waveform` to `path` as PCM16 or IEEE float32.

    PCM16 samples outside [-1, 1] are an error unless `clip` is set, in which
    case they saturate to the nearest representable code.
    """
    path = Path(path)
    samples = waveform.samples
    if encoding == "float32":
        payload = samples.astype(np.float32)
    elif encoding == "pcm16":
        if not clip and (samples.min() < -1.0 or samples.max() > 1.0):
            raise ValueError(
                f"samples outside [-1, 1] (peak {np.abs(samples).max():.4g}); "
                "pass clip=True to saturate"
            )
        clipped = np.clip(samples, -1.0, 1.0)
        payload = np.clip(np.round(clipped * 32768.0), -32768, 32767).astype(np.int16)
    else:
        raise ValueError(f"unknown encoding {encoding!r} (expected 'pcm16' or 'float32')")
    path.parent.mkdir(parents=True, exist_ok=True)
    try:
        wavfile.write(path, waveform.sample_rate_hz, payload)
    except OSError as exc:
        raise AudioIOError(f"cannot write {path}: {exc}") from exc


@dataclass(frozen=True)
class SynthSpec:
    """Recipe for one deterministic synthetic source.

    kind selects the generator; params are kind-specific (frequencies in Hz,
    times in seconds, amplitudes dimensionless). The seed fixes every random
    draw, so (spec, duration, rate) -> samples is a pure function.
    """

    kind: str
    params: dict = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in SYNTH_KINDS:
            raise ValueError(f"unknown synth kind {self.kind!r}; expected one of {SYNTH_KINDS}")


def _check_freq(freq_hz: float, sample_rate_hz: int, name: str) -> float:
    if not 0.0 < freq_hz < sample_rate_hz / 2:
        raise ValueError(f"{name}={freq_hz} Hz must lie in (0, {sample_rate_hz / 2}) Hz")
    return float(freq_hz)


def _band_noise(n: int, sample_rate_hz: int, lo_hz: float, hi_hz: float,
                rng: np.random.Generator) -> np.ndarray:
    # Built in the frequency domain so the band limits are exact over the clip.
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate_hz)
    spectrum = rng.standard_normal(freqs.size) + 1j * rng.standard_normal(freqs.size)
    spectrum[(freqs < lo_hz) | (freqs > hi_hz)] = 0.0
    return np.fft.irfft(spectrum, n)


def synth_source(spec: SynthSpec, duration_s: float, sample_rate_hz: int) -> Waveform:
    """Render a SynthSpec to a waveform with peak amplitude <= 1."""
    if duration_s <= 0:
        raise ValueError(f"duration_s must be positive, got {duration_s}")
    if sample_rate_hz <= 0:
        raise ValueError(f"sample_rate_hz must be positive, got {sample_rate_hz}")
    n = int(round(duration_s * sample_rate_hz))
    t = np.arange(n) / sample_rate_hz
    p = spec.params
    rng = np.random.default_rng(np.random.SeedSequence(spec.seed))
    amplitude = float(p.get("amplitude", 0.9))
    if not 0.0 < amplitude <= 1.0:
        raise ValueError(f"amplitude={amplitude} must be in (0, 1]")

    if spec.kind == "tone":
        freq = _check_freq(p.get("freq_hz", 440.0), sample_rate_hz, "freq_hz")
        samples = amplitude * np.sin(2 * np.pi * freq * t)
    elif spec.kind == "chirp":
        f0 = _check_freq(p.get("freq_start_hz", 200.0), sample_rate_hz, "freq_start_hz")
        f1 = _check_freq(p.get("freq_end_hz", 2000.0), sample_rate_hz, "freq_end_hz")
        phase = 2 * np.pi * (f0 * t + (f1 - f0) * t**2 / (2 * duration_s))
        samples = amplitude * np.sin(phase)
    elif spec.kind == "band-noise":
        lo = _check_freq(p.get("band_lo_hz", 1000.0), sample_rate_hz, "band_lo_hz")
        hi = _check_freq(p.get("band_hi_hz", 3000.0), sample_rate_hz, "band_hi_hz")
        if hi <= lo:
            raise ValueError(f"band_hi_hz={hi} must exceed band_lo_hz={lo}")
        noise = _band_noise(n, sample_rate_hz, lo, hi, rng)
        peak = np.abs(noise).max()
        samples = amplitude * noise / peak if peak > 0 else noise
    elif spec.kind == "impulse-train":
        period_s = float(p.get("period_s", 0.25))
        if period_s <= 0:
            raise ValueError(f"period_s={period_s} must be positive")
        samples = np.zeros(n)
        positions = np.arange(0, n, max(1, int(round(period_s * sample_rate_hz))))
        samples[positions] = amplitude
    elif spec.kind == "silence-then-burst":
        onset_s = float(p.get("onset_s", duration_s / 2))
        if not 0.0 <= onset_s < duration_s:
            raise ValueError(f"onset_s={onset_s} must lie in [0, {duration_s})")
        inner = SynthSpec(p.get("burst_kind", "tone"),
                          {k: v for k, v in p.items()
                           if k not in ("onset_s", "burst_kind")},
                          seed=spec.seed)
        burst = synth_source(inner, duration_s, sample_rate_hz).samples
        onset_n = int(round(onset_s * sample_rate_hz))
        samples = np.zeros(n)
        samples[onset_n:] = burst[: n - onset_n]
    else:  # pragma: no cover - guarded by SynthSpec
        raise ValueError(spec.kind)

    return Waveform(samples, sample_rate_hz)


# ---------------------------------------------------------------------------
# Synthetic stand-in corpus
# ---------------------------------------------------------------------------

#: Corpus profiles. Each entry maps a family name to a callable
#: (rng) -> (SynthSpec params without seed, duration range). Families let the
#: dataset builder pair sources with disjoint spectral content.
def _general_file(rng: np.random.Generator) -> tuple[SynthSpec, float]:
    kind = rng.choice(["tone", "chirp", "band-noise", "impulse-train", "silence-then-burst"])
    params = {"amplitude": float(rng.uniform(0.4, 0.9))}
    if kind == "tone":
        params["freq_hz"] = float(rng.uniform(150, 3500))
    elif kind == "chirp":
        f0 = float(rng.uniform(150, 1500))
        params["freq_start_hz"] = f0
        params["freq_end_hz"] = f0 * float(rng.uniform(1.5, 2.5))
    elif kind == "band-noise":
        lo = float(rng.uniform(200, 2500))
        params["band_lo_hz"] = lo
        params["band_hi_hz"] = lo + float(rng.uniform(300, 1200))
    elif kind == "impulse-train":
        params["period_s"] = float(rng.uniform(0.08, 0.4))
    else:
        params["onset_s"] = float(rng.uniform(0.2, 0.8))
        params["freq_hz"] = float(rng.uniform(200, 3000))
    duration = float(rng.uniform(1.0, 10.0))
    return SynthSpec(kind, params, seed=int(rng.integers(2**62))), duration


def _two_band_file(rng: np.random.Generator, family: str,
                   sample_rate_hz: int) -> tuple[SynthSpec, float]:
    # Family "low": tones/chirps below 0.2*fs. Family "high": band-noise in
    # [0.4, 0.75]*Nyquist. The bands never overlap, so two-source mixtures
    # drawn one-per-family are frequency-disjoint.
    nyquist = sample_rate_hz / 2
    amplitude = float(rng.uniform(0.5, 0.9))
    onset_s = float(rng.uniform(0.1, 0.5))
    if family == "low":
        if rng.random() < 0.5:
            params = {"amplitude": amplitude, "onset_s": onset_s, "burst_kind": "tone",
                      "freq_hz": float(rng.uniform(0.06, 0.20) * nyquist)}
        else:
            f0 = float(rng.uniform(0.06, 0.12) * nyquist)
            params = {"amplitude": amplitude, "onset_s": onset_s, "burst_kind": "chirp",
                      "freq_start_hz": f0, "freq_end_hz": f0 * float(rng.uniform(1.3, 1.7))}
    elif family == "high":
        lo = float(rng.uniform(0.40, 0.55) * nyquist)
        params = {"amplitude": amplitude, "onset_s": onset_s, "burst_kind": "band-noise",
                  "band_lo_hz": lo, "band_hi_hz": lo + float(rng.uniform(0.10, 0.20) * nyquist)}
    else:
        raise ValueError(f"unknown family {family!r}")
    duration = float(rng.uniform(1.5, 6.0))
    return SynthSpec("silence-then-burst", params, seed=int(rng.integers(2**62))), duration


def _tonal_file(rng: np.random.Generator, family: str,
                sample_rate_hz: int) -> tuple[SynthSpec, float]:
    # Sustained tones in two adjacent (non-overlapping) frequency ranges.
    # Neighboring tones stress short STFT windows, so oracle masking quality
    # depends visibly on window size.
    nyquist = sample_rate_hz / 2
    if family == "low":
        freq = float(rng.uniform(0.10, 0.16) * nyquist)
    elif family == "high":
        freq = float(rng.uniform(0.17, 0.25) * nyquist)
    else:
        raise ValueError(f"unknown family {family!r}")
    params = {"amplitude": float(rng.uniform(0.5, 0.9)),
              "onset_s": float(rng.uniform(0.1, 0.5)),
              "burst_kind": "tone", "freq_hz": freq}
    duration = float(rng.uniform(1.5, 6.0))
    return SynthSpec("silence-then-burst", params, seed=int(rng.integers(2**62))), duration


CORPUS_PROFILES = ("general", "two-band", "tonal")


def write_synthetic_corpus(directory, n_files: int, seed: int,
                           profile: str = "general",
                           sample_rate_hz: int = DEFAULT_SAMPLE_RATE) -> list[dict]:
    """Write a directory of synthetic WAV files standing in for a real corpus.

    Returns one entry per file: {"file_id", "path", "family", "duration_s"}.
    File durations span 1-10 s so sources shorter than a clip exercise the
    looping path. Deterministic for a given (seed, profile, n_files, rate).
    """
    if profile not in CORPUS_PROFILES:
        raise ValueError(f"unknown profile {profile!r}; expected one of {CORPUS_PROFILES}")
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    entries = []
    for i in range(n_files):
        if profile == "general":
            spec, duration = _general_file(rng)
            family = "any"
        else:
            family = "low" if i % 2 == 0 else "high"
            maker = _two_band_file if profile == "two-band" else _tonal_file
            spec, duration = maker(rng, family, sample_rate_hz)
        wav = synth_source(spec, duration, sample_rate_hz)
        file_id = f"{profile}_{i:04d}"
        path = directory / f"{file_id}.wav"
        write_wav(wav, path, encoding="float32")
        entries.append({"file_id": file_id, "path": str(path),
                        "family": family, "duration_s": wav.duration_s})
    return entries
