"""Mask application, mixture-consistency projection, and oracle binary masks.

The separation mechanics shared by every network and baseline: estimates
are formed by pointwise-scaling mixture coefficients with per-source
masks in [0, 1], then projected in the time domain so they sum exactly
to the mixture.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signal import Waveform
from .transforms import STFT_KIND, CoeffFrames, FrameSpec, istft, stft


@dataclass(frozen=True)
class MaskSet:
    """Per-source masks: (n_sources, frames, bins), all values in [0, 1]."""

    masks: np.ndarray

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=np.float64)
        if masks.ndim != 3:
            raise ValueError(f"expected (sources, frames, bins), got shape {masks.shape}")
        if masks.size and (masks.min() < 0.0 or masks.max() > 1.0):
            raise ValueError(
                f"mask values must lie in [0, 1], got range "
                f"[{masks.min():.4g}, {masks.max():.4g}]")
        object.__setattr__(self, "masks", masks)

    @property
    def n_sources(self) -> int:
        return self.masks.shape[0]


def apply_masks(mask_set: MaskSet, mixture_coeffs: CoeffFrames) -> list[CoeffFrames]:
    """Scale the mixture coefficients by each source's mask.

    Real masks multiply complex STFT values (phase untouched) or real
    learned coefficients alike.
    """
    masks = mask_set.masks
    if masks.shape[1:] != mixture_coeffs.data.shape:
        raise ValueError(
            f"mask shape {masks.shape[1:]} != coefficient shape "
            f"{mixture_coeffs.data.shape}")
    return [
        CoeffFrames(masks[k] * mixture_coeffs.data, mixture_coeffs.kind,
                    mixture_coeffs.spec, mixture_coeffs.original_len)
        for k in range(mask_set.n_sources)
    ]


def mixture_consistency(estimates: list[Waveform], mixture: Waveform) -> list[Waveform]:
    """Project estimates onto the set whose sum is the mixture.

    Each estimate receives an equal 1/K share of the residual
    x - sum(estimates); this is the Euclidean projection with uniform
    weights. Inputs whose residual is already below roundoff are returned
    unchanged, which makes the projection exactly idempotent: one
    application leaves only a sub-roundoff residual, so a second
    application is the identity.
    """
    if not estimates:
        raise ValueError("need at least one estimate")
    for est in estimates:
        if len(est) != len(mixture):
            raise ValueError(
                f"estimate length {len(est)} != mixture length {len(mixture)}")
        if est.sample_rate_hz != mixture.sample_rate_hz:
            raise ValueError("estimate and mixture sample rates differ")
    residual = mixture.samples - np.sum([est.samples for est in estimates], axis=0)
    roundoff = 8 * np.finfo(np.float64).eps * np.abs(mixture.samples).max(initial=0.0)
    if np.abs(residual).max(initial=0.0) <= roundoff:
        return [Waveform(est.samples.copy(), mixture.sample_rate_hz)
                for est in estimates]
    share = residual / len(estimates)
    return [Waveform(est.samples + share, mixture.sample_rate_hz) for est in estimates]


def oracle_binary_mask(reference_coeffs: list[CoeffFrames]) -> MaskSet:
    """Winner-take-all mask from reference magnitudes.

    Each (frame, bin) cell is assigned entirely to the source with the
    largest coefficient magnitude; ties go to the lowest source index, so
    every cell has exactly one 1.
    """
    if len(reference_coeffs) < 2:
        raise ValueError("need at least two reference sources")
    first = reference_coeffs[0]
    for ref in reference_coeffs:
        if ref.kind != STFT_KIND:
            raise ValueError(f"oracle masks need {STFT_KIND} references, got {ref.kind}")
        if ref.data.shape != first.data.shape:
            raise ValueError(
                f"reference shapes differ: {ref.data.shape} vs {first.data.shape}")
    magnitudes = np.stack([np.abs(ref.data) for ref in reference_coeffs])
    # argmax returns the first index on ties, which is the required tie-break.
    winners = magnitudes.argmax(axis=0)
    masks = np.zeros(magnitudes.shape)
    for k in range(len(reference_coeffs)):
        masks[k] = winners == k
    return MaskSet(masks)


def separate_oracle(mixture: Waveform, references: list[Waveform],
                    spec: FrameSpec) -> list[Waveform]:
    """Oracle-binary-mask separation: the STFT upper-bound baseline.

    Masks computed from the references' STFT magnitudes are applied to the
    mixture's STFT, and each masked estimate is synthesized back to the
    mixture's length.
    """
    for ref in references:
        if len(ref) != len(mixture) or ref.sample_rate_hz != mixture.sample_rate_hz:
            raise ValueError("references must match the mixture's length and rate")
    mixture_coeffs = stft(mixture, spec)
    reference_coeffs = [stft(ref, spec) for ref in references]
    mask_set = oracle_binary_mask(reference_coeffs)
    masked = apply_masks(mask_set, mixture_coeffs)
    return [istft(est, len(mixture)) for est in masked]
