"""Framewise analysis/synthesis transforms.

Two interchangeable coefficient domains:

* STFT pair — square-root periodic Hann window on both sides, FFT length
  the next power of two at or above the window, complex coefficients.
* Learnable real basis pair — analysis is a strided window-length dot
  product per basis row followed by ReLU; synthesis is the transposed
  map overlap-added raw (no window weighting, no envelope division),
  matching a transposed 1-D convolution.

Both share one framing policy: the signal is pre-padded with
``window_len - hop`` zeros and post-padded so the final frame is
complete. With half-overlap this makes interior STFT reconstruction
exact and keeps frame counts identical across the two domains.

The module also exposes the adjoints of the (linear) STFT maps; the
differentiation engine builds on them and the tests pin them down with
inner-product identities.
"""

from __future__ import annotations

import io
import json
import struct
from dataclasses import dataclass

import numpy as np

from .signal import Waveform

STFT_KIND = "complex_stft"
LEARNED_KIND = "real_learned"

#: Window sizes (ms) accepted by the sweep harness and config files.
WINDOW_CHOICES_MS = (2.5, 5.0, 10.0, 25.0, 50.0)

_MAGIC = b"SKCF"
_FORMAT_VERSION = 1


def next_pow2(n: int) -> int:
    """Smallest power of two >= n (n >= 1)."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return 1 << (n - 1).bit_length()


@dataclass(frozen=True)
class FrameSpec:
    """Framing geometry: window and hop in samples, FFT length, sample rate."""

    window_len: int
    hop: int
    fft_len: int
    sample_rate_hz: int

    def __post_init__(self):
        if self.window_len < 2 or self.window_len % 2 != 0:
            raise ValueError(f"window_len must be even and >= 2, got {self.window_len}")
        if not 1 <= self.hop <= self.window_len or self.window_len % self.hop != 0:
            raise ValueError(f"hop={self.hop} must divide window_len={self.window_len}")
        if self.fft_len < self.window_len or self.fft_len & (self.fft_len - 1):
            raise ValueError(
                f"fft_len={self.fft_len} must be a power of two >= window_len")
        if self.sample_rate_hz <= 0:
            raise ValueError(f"sample_rate_hz must be positive, got {self.sample_rate_hz}")

    @classmethod
    def from_window_ms(cls, window_ms: float, sample_rate_hz: int,
                      hop: int | None = None) -> "FrameSpec":
        """Build a spec from a window size in milliseconds; hop defaults to half."""
        window_len = int(round(window_ms * sample_rate_hz / 1000))
        if window_len % 2:
            raise ValueError(
                f"{window_ms} ms at {sample_rate_hz} Hz gives odd window_len={window_len}")
        return cls(window_len, hop if hop is not None else window_len // 2,
                   next_pow2(window_len), sample_rate_hz)

    @property
    def n_bins(self) -> int:
        """STFT bin count: fft_len/2 + 1."""
        return self.fft_len // 2 + 1

    @property
    def pre_pad(self) -> int:
        return self.window_len - self.hop


@dataclass(frozen=True)
class CoeffFrames:
    """Coefficient matrix (frames x bins) plus the geometry that produced it."""

    data: np.ndarray
    kind: str
    spec: FrameSpec
    original_len: int

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2:
            raise ValueError(f"expected frames x bins matrix, got shape {data.shape}")
        if self.kind == STFT_KIND:
            data = np.asarray(data, dtype=np.complex128)
            if data.shape[1] != self.spec.n_bins:
                raise ValueError(
                    f"STFT coeffs need {self.spec.n_bins} bins, got {data.shape[1]}")
        elif self.kind == LEARNED_KIND:
            data = np.asarray(data, dtype=np.float64)
            if data.size and data.min() < 0:
                raise ValueError("learned coefficients must be nonnegative (post-ReLU)")
        else:
            raise ValueError(f"unknown coefficient kind {self.kind!r}")
        expected = num_frames(self.original_len, self.spec)
        if data.shape[0] != expected:
            raise ValueError(
                f"expected {expected} frames for length {self.original_len}, "
                f"got {data.shape[0]}")
        object.__setattr__(self, "data", data)

    @property
    def n_frames(self) -> int:
        return self.data.shape[0]

    @property
    def n_bins(self) -> int:
        return self.data.shape[1]


def sqrt_hann_window(window_len: int) -> np.ndarray:
    """Square root of the periodic Hann window: w[n] = sin(pi n / W).

    Satisfies w^2[n] + w^2[n + W/2] = 1, so analysis+synthesis windowing at
    half-overlap sums to one in steady state.
    """
    if window_len < 2 or window_len % 2 != 0:
        raise ValueError(f"window_len must be even and >= 2, got {window_len}")
    return np.sin(np.pi * np.arange(window_len) / window_len)


def num_frames(length: int, spec: FrameSpec) -> int:
    """Frame count for a signal of `length` samples under the padding policy."""
    if length < 0:
        raise ValueError(f"length must be >= 0, got {length}")
    effective = length + spec.pre_pad
    if effective <= spec.window_len:
        return 1
    return -(-(effective - spec.window_len) // spec.hop) + 1


def padded_len(length: int, spec: FrameSpec) -> int:
    """Length of the padded buffer that the frames tile exactly."""
    return (num_frames(length, spec) - 1) * spec.hop + spec.window_len


def frame_signal(samples: np.ndarray, spec: FrameSpec) -> np.ndarray:
    """Slice a padded copy of `samples` into a (frames, window_len) matrix."""
    samples = np.asarray(samples, dtype=np.float64)
    total = padded_len(samples.shape[0], spec)
    padded = np.zeros(total)
    padded[spec.pre_pad:spec.pre_pad + samples.shape[0]] = samples
    n = num_frames(samples.shape[0], spec)
    starts = np.arange(n) * spec.hop
    return padded[starts[:, None] + np.arange(spec.window_len)]


def overlap_add(frames: np.ndarray, spec: FrameSpec, target_len: int) -> np.ndarray:
    """Sum (frames, window_len) rows at stride `hop` and crop the padding."""
    n, window_len = frames.shape
    if window_len != spec.window_len:
        raise ValueError(f"frame width {window_len} != window_len {spec.window_len}")
    buffer = np.zeros((n - 1) * spec.hop + spec.window_len)
    for t in range(n):
        buffer[t * spec.hop:t * spec.hop + spec.window_len] += frames[t]
    return buffer[spec.pre_pad:spec.pre_pad + target_len]


def ola_envelope(spec: FrameSpec, n_frames: int) -> np.ndarray:
    """Summed squared synthesis window over the padded buffer (the COLA envelope)."""
    window_sq = sqrt_hann_window(spec.window_len) ** 2
    envelope = np.zeros((n_frames - 1) * spec.hop + spec.window_len)
    for t in range(n_frames):
        envelope[t * spec.hop:t * spec.hop + spec.window_len] += window_sq
    return envelope


# ---------------------------------------------------------------------------
# STFT pair
# ---------------------------------------------------------------------------

def stft(waveform: Waveform, spec: FrameSpec) -> CoeffFrames:
    """Windowed real FFT per frame; complex (frames, fft_len/2+1) coefficients."""
    frames = frame_signal(waveform.samples, spec) * sqrt_hann_window(spec.window_len)
    data = np.fft.rfft(frames, n=spec.fft_len, axis=1)
    return CoeffFrames(data, STFT_KIND, spec, len(waveform))


def istft(coeffs: CoeffFrames, target_len: int) -> Waveform:
    """Inverse of `stft`: per-frame inverse FFT, windowing, overlap-add.

    The overlap-added signal is divided by the summed squared synthesis
    window wherever that envelope is nonzero, so edge frames with partial
    coverage come back at full amplitude. Exact round trip for interior
    and edge samples alike.
    """
    if coeffs.kind != STFT_KIND:
        raise ValueError(f"istft needs {STFT_KIND} coefficients, got {coeffs.kind}")
    spec = coeffs.spec
    if num_frames(target_len, spec) != coeffs.n_frames:
        raise ValueError(
            f"target_len={target_len} implies {num_frames(target_len, spec)} frames, "
            f"coefficients have {coeffs.n_frames}")
    window = sqrt_hann_window(spec.window_len)
    frames = np.fft.irfft(coeffs.data, n=spec.fft_len, axis=1)[:, :spec.window_len]
    frames = frames * window
    buffer = np.zeros((coeffs.n_frames - 1) * spec.hop + spec.window_len)
    for t in range(coeffs.n_frames):
        buffer[t * spec.hop:t * spec.hop + spec.window_len] += frames[t]
    envelope = ola_envelope(spec, coeffs.n_frames)
    nonzero = envelope > 1e-12
    buffer[nonzero] /= envelope[nonzero]
    return Waveform(buffer[spec.pre_pad:spec.pre_pad + target_len], spec.sample_rate_hz)


# ---------------------------------------------------------------------------
# Adjoints of the STFT maps
# ---------------------------------------------------------------------------
# Complex coefficient arrays are paired with the real inner product
# <A, B> = sum(Re A * Re B + Im A * Im B); the adjoints below satisfy
#   <stft(x), C>   = <x, stft_adjoint(C)>
#   <istft(C), y>  = <C, istft_adjoint(y)>
# which is exactly what reverse-mode differentiation through the pair needs.

def _rfft_adjoint(spectrum: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of x -> rfft(x, n) under the real pairing. Rows are transforms."""
    weighted = spectrum.astype(np.complex128).copy()
    weighted[..., 1:-1] *= 0.5
    # Im at DC/Nyquist is structurally zero in an rfft, so those cotangent
    # components do not propagate.
    weighted[..., 0] = weighted[..., 0].real
    weighted[..., -1] = weighted[..., -1].real
    return n * np.fft.irfft(weighted, n=n, axis=-1)


def _irfft_adjoint(samples: np.ndarray, n: int) -> np.ndarray:
    """Adjoint of Z -> irfft(Z, n) under the real pairing. Rows are transforms."""
    spectrum = np.fft.rfft(np.asarray(samples, dtype=np.float64), n=n, axis=-1)
    spectrum[..., 1:-1] *= 2.0
    spectrum[..., 0] = spectrum[..., 0].real
    spectrum[..., -1] = spectrum[..., -1].real
    return spectrum / n


def stft_adjoint(cotangent: np.ndarray, spec: FrameSpec, target_len: int) -> np.ndarray:
    """Map a coefficient cotangent (frames x bins complex) back to sample space."""
    cotangent = np.asarray(cotangent, dtype=np.complex128)
    frames = _rfft_adjoint(cotangent, spec.fft_len)[:, :spec.window_len]
    frames = frames * sqrt_hann_window(spec.window_len)
    return overlap_add(frames, spec, target_len)


def istft_adjoint(cotangent: np.ndarray, spec: FrameSpec, target_len: int) -> np.ndarray:
    """Map a sample cotangent back to coefficient space (frames x bins complex)."""
    cotangent = np.asarray(cotangent, dtype=np.float64)
    if cotangent.shape[0] != target_len:
        raise ValueError(f"cotangent length {cotangent.shape[0]} != {target_len}")
    n = num_frames(target_len, spec)
    envelope = ola_envelope(spec, n)
    buffer = np.zeros(envelope.shape[0])
    buffer[spec.pre_pad:spec.pre_pad + target_len] = cotangent
    nonzero = envelope > 1e-12
    buffer[nonzero] /= envelope[nonzero]
    buffer[~nonzero] = 0.0
    starts = np.arange(n) * spec.hop
    frames = buffer[starts[:, None] + np.arange(spec.window_len)]
    frames = frames * sqrt_hann_window(spec.window_len)
    padded = np.zeros((n, spec.fft_len))
    padded[:, :spec.window_len] = frames
    return _irfft_adjoint(padded, spec.fft_len)


# ---------------------------------------------------------------------------
# Learnable basis pair
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LearnedBasis:
    """Paired analysis/synthesis bases, each n_basis x window_len real."""

    analysis: np.ndarray
    synthesis: np.ndarray
    spec: FrameSpec

    def __post_init__(self):
        analysis = np.asarray(self.analysis, dtype=np.float64)
        synthesis = np.asarray(self.synthesis, dtype=np.float64)
        if analysis.ndim != 2 or analysis.shape[1] != self.spec.window_len:
            raise ValueError(
                f"analysis must be n_basis x {self.spec.window_len}, "
                f"got {analysis.shape}")
        if synthesis.shape != analysis.shape:
            raise ValueError(
                f"synthesis shape {synthesis.shape} != analysis shape {analysis.shape}")
        if np.any(np.all(analysis == 0, axis=1)):
            raise ValueError("analysis basis contains an all-zero row")
        object.__setattr__(self, "analysis", analysis)
        object.__setattr__(self, "synthesis", synthesis)

    @property
    def n_basis(self) -> int:
        return self.analysis.shape[0]


def init_learned_basis(n_basis: int, spec: FrameSpec,
                       rng: np.random.Generator) -> LearnedBasis:
    """Random basis pair, entries uniform in +-1/sqrt(window_len)."""
    bound = 1.0 / np.sqrt(spec.window_len)
    shape = (n_basis, spec.window_len)
    return LearnedBasis(rng.uniform(-bound, bound, shape),
                        rng.uniform(-bound, bound, shape), spec)


def learned_analysis(waveform: Waveform, basis: LearnedBasis) -> CoeffFrames:
    """Strided analysis dot products with ReLU: coeffs[t, n] = max(0, <a_n, frame_t>)."""
    frames = frame_signal(waveform.samples, basis.spec)
    data = np.maximum(frames @ basis.analysis.T, 0.0)
    return CoeffFrames(data, LEARNED_KIND, basis.spec, len(waveform))


def learned_synthesis(coeffs: CoeffFrames, basis: LearnedBasis,
                      target_len: int) -> Waveform:
    """Transposed-convolution synthesis: raw overlap-add of synthesis^T @ coeffs[t]."""
    if coeffs.kind != LEARNED_KIND:
        raise ValueError(
            f"learned_synthesis needs {LEARNED_KIND} coefficients, got {coeffs.kind}")
    if coeffs.n_bins != basis.n_basis:
        raise ValueError(
            f"coefficient bins {coeffs.n_bins} != basis count {basis.n_basis}")
    if num_frames(target_len, basis.spec) != coeffs.n_frames:
        raise ValueError(
            f"target_len={target_len} implies "
            f"{num_frames(target_len, basis.spec)} frames, "
            f"coefficients have {coeffs.n_frames}")
    frames = coeffs.data @ basis.synthesis
    return Waveform(overlap_add(frames, basis.spec, target_len),
                    basis.spec.sample_rate_hz)


# ---------------------------------------------------------------------------
# Debug serialization
# ---------------------------------------------------------------------------

def save_coeffs(coeffs: CoeffFrames, path) -> None:
    """Write coefficients to a small self-describing binary container."""
    header = {
        "kind": coeffs.kind,
        "n_frames": coeffs.n_frames,
        "n_bins": coeffs.n_bins,
        "original_len": coeffs.original_len,
        "spec": {
            "window_len": coeffs.spec.window_len,
            "hop": coeffs.spec.hop,
            "fft_len": coeffs.spec.fft_len,
            "sample_rate_hz": coeffs.spec.sample_rate_hz,
        },
    }
    header_bytes = json.dumps(header, sort_keys=True).encode()
    if coeffs.kind == STFT_KIND:
        payload = np.stack([coeffs.data.real, coeffs.data.imag])
    else:
        payload = coeffs.data[None]
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HI", _FORMAT_VERSION, len(header_bytes)))
        fh.write(header_bytes)
        fh.write(np.ascontiguousarray(payload, dtype=np.float64).tobytes())


def load_coeffs(path) -> CoeffFrames:
    """Inverse of `save_coeffs`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    stream = io.BytesIO(blob)
    if stream.read(4) != _MAGIC:
        raise ValueError(f"{path} is not a coefficient container")
    version, header_len = struct.unpack("<HI", stream.read(6))
    if version != _FORMAT_VERSION:
        raise ValueError(f"unsupported container version {version}")
    header = json.loads(stream.read(header_len).decode())
    spec = FrameSpec(**header["spec"])
    planes = 2 if header["kind"] == STFT_KIND else 1
    shape = (planes, header["n_frames"], header["n_bins"])
    payload = np.frombuffer(stream.read(), dtype=np.float64).reshape(shape)
    data = payload[0] + 1j * payload[1] if planes == 2 else payload[0]
    return CoeffFrames(data, header["kind"], spec, header["original_len"])
