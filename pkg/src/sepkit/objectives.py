"""Separation metrics and training losses.

* ``si_sdr`` / ``si_sdr_improvement`` — the scale-invariant evaluation
  metric, reported in dB with exact ``+inf`` / ``-inf`` sentinels for the
  zero-error and orthogonal cases.
* ``neg_snr_loss`` — the negative-SNR training loss, stabilized so it is
  bounded and differentiable everywhere.
* ``pit_loss`` — permutation-invariant wrapper: builds the full pairwise
  loss matrix once and minimizes the assignment sum exhaustively.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .signal import Waveform

#: Default loss stabilizer: bounds neg_snr_loss below by 10*log10(tau) = -80.
DEFAULT_SNR_TAU = 1e-8

#: Exhaustive permutation search is factorial; keep it honest.
MAX_PIT_SOURCES = 4


def _check_lengths(reference: Waveform, estimate: Waveform) -> None:
    if len(reference) != len(estimate):
        raise ValueError(
            f"length mismatch: reference {len(reference)}, estimate {len(estimate)}")


def si_sdr(reference: Waveform, estimate: Waveform) -> float:
    """Scale-invariant signal-to-distortion ratio in dB.

    The estimate is compared against the orthogonal projection of itself
    onto the reference: with a = <s, s_hat>/||s||^2,

        si_sdr = 10 log10(||a s||^2 / ||a s - s_hat||^2).

    Returns +inf when the rescaled error vanishes and -inf when the
    estimate is orthogonal to the reference.
    """
    _check_lengths(reference, estimate)
    s = reference.samples
    s_hat = estimate.samples
    ref_energy = np.dot(s, s)
    if ref_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    alpha = np.dot(s, s_hat) / ref_energy
    target = alpha * s
    target_energy = np.dot(target, target)
    error_energy = np.sum((target - s_hat) ** 2)
    if target_energy == 0.0:
        return -np.inf
    if error_energy == 0.0:
        return np.inf
    return float(10.0 * np.log10(target_energy / error_energy))


def si_sdr_improvement(reference: Waveform, estimate: Waveform,
                       mixture: Waveform) -> float:
    """SI-SDR of the estimate minus SI-SDR of the unprocessed mixture, in dB."""
    return si_sdr(reference, estimate) - si_sdr(reference, mixture)


def neg_snr_loss(reference: Waveform, estimate: Waveform,
                 tau: float = DEFAULT_SNR_TAU) -> float:
    """Negative signal-to-noise ratio with a stabilizing floor.

        loss = -10 log10( sum(y^2) / (sum((y - y_hat)^2) + tau * sum(y^2)) )

    The tau term bounds the loss below by 10*log10(tau) (-80 for the
    default) and keeps it differentiable when the estimate is exact.
    """
    _check_lengths(reference, estimate)
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    y = reference.samples
    signal_energy = np.dot(y, y)
    if signal_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    error_energy = np.sum((y - estimate.samples) ** 2)
    return float(-10.0 * np.log10(signal_energy / (error_energy + tau * signal_energy)))


@dataclass(frozen=True)
class PitResult:
    """Best permutation-invariant alignment of estimates to references.

    ``permutation[i]`` is the reference index assigned to estimate i;
    ``loss`` is the sum of the chosen pairwise losses;
    ``per_pair_losses[i, j]`` is the loss of estimate i against reference j.
    """

    loss: float
    permutation: tuple[int, ...]
    per_pair_losses: np.ndarray

    def __post_init__(self):
        if sorted(self.permutation) != list(range(len(self.permutation))):
            raise ValueError(f"permutation {self.permutation} is not a bijection")


def best_assignment(pair_losses: np.ndarray) -> tuple[float, tuple[int, ...]]:
    """Exhaustively minimize sum_i matrix[i, perm[i]] over bijections perm.

    `pair_losses[i, j]` is the cost of pairing estimate i with reference j.
    Ties resolve to the lexicographically first permutation, so the result
    is deterministic.
    """
    pair_losses = np.asarray(pair_losses, dtype=np.float64)
    n = pair_losses.shape[0]
    if pair_losses.shape != (n, n) or n == 0:
        raise ValueError(f"need a square nonempty matrix, got {pair_losses.shape}")
    if n > MAX_PIT_SOURCES:
        raise ValueError(
            f"exhaustive permutation search supports at most {MAX_PIT_SOURCES} "
            f"sources, got {n}")
    best_perm = None
    best_loss = np.inf
    for perm in itertools.permutations(range(n)):
        total = sum(pair_losses[i, perm[i]] for i in range(n))
        if best_perm is None or total < best_loss:
            best_loss = total
            best_perm = perm
    return float(best_loss), best_perm


def pit_loss(references: Sequence[Waveform], estimates: Sequence[Waveform],
             pairwise_loss: Callable[[Waveform, Waveform], float]) -> PitResult:
    """Minimize the summed pairwise loss over all estimate->reference bijections.

    The K x K pairwise matrix is computed once; the K! assignments reuse
    it. `pairwise_loss` is called as pairwise_loss(reference, estimate).
    """
    n = len(references)
    if n == 0 or len(estimates) != n:
        raise ValueError(
            f"need equal nonzero source counts, got {n} references and "
            f"{len(estimates)} estimates")
    pairs = np.empty((n, n))
    for i, est in enumerate(estimates):
        for j, ref in enumerate(references):
            pairs[i, j] = pairwise_loss(ref, est)
    loss, perm = best_assignment(pairs)
    return PitResult(loss, perm, pairs)
