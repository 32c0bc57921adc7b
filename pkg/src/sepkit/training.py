"""Training loop for separators: batched PIT negative-SNR descent with Adam.

Each step samples a batch of mixtures, builds the full separation graph
per example, attaches a permutation-invariant negative-SNR loss per
stage (iterative models average their stages' losses, each with its own
independently solved permutation), averages over the batch, and takes
one Adam step. Everything is driven by a seeded generator, so a run is
reproducible end to end.

The training log is a CSV with columns ``step,loss,permutation,
wall_time_s``. The permutation cell packs the batch: examples joined by
';', stages within an example by '/', and one stage's assignment written
as digits (estimate i pairs with reference digit[i]) — e.g. for a
two-source iterative model and batch 2: ``01/10;01/01``.
"""

from __future__ import annotations

import csv
import time
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .autograd import AdamState, Tape, Tensor, adam_step, constant, ops
from .nets import Separator, separate_graph
from .objectives import DEFAULT_SNR_TAU, best_assignment


class TrainingDivergedError(RuntimeError):
    """Raised when the loss turns non-finite; message carries the step index."""


@dataclass(frozen=True)
class TrainSettings:
    steps: int
    batch_size: int = 2
    learning_rate: float = 1e-3
    tau: float = DEFAULT_SNR_TAU
    seed: int = 0

    def __post_init__(self):
        if self.steps < 1:
            raise ValueError(f"steps must be >= 1, got {self.steps}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


@dataclass(frozen=True)
class TrainStepRecord:
    step: int
    loss: float
    permutation: str
    wall_time_s: float


@dataclass
class TrainLog:
    records: list[TrainStepRecord] = field(default_factory=list)

    @property
    def losses(self) -> np.ndarray:
        return np.array([r.loss for r in self.records])

    def write_csv(self, path) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["step", "loss", "permutation", "wall_time_s"])
            for r in self.records:
                writer.writerow([r.step, f"{r.loss:.10g}", r.permutation,
                                 f"{r.wall_time_s:.6f}"])

    def permutation_counts(self, stage: int = 0) -> Counter:
        """How often each assignment was chosen for `stage`, over all examples."""
        counts: Counter = Counter()
        for record in self.records:
            for example in record.permutation.split(";"):
                counts[example.split("/")[stage]] += 1
        return counts


def neg_snr_graph(reference: np.ndarray, estimate: Tensor,
                  tau: float = DEFAULT_SNR_TAU) -> Tensor:
    """Differentiable negative SNR of one estimate against a fixed reference.

    Matches objectives.neg_snr_loss:
    -10 log10(sum(y^2) / (sum((y - y_hat)^2) + tau * sum(y^2))).
    """
    reference = np.asarray(reference, dtype=np.float64)
    signal_energy = float(np.dot(reference, reference))
    if signal_energy == 0.0:
        raise ValueError("reference signal has zero energy")
    if tau <= 0:
        raise ValueError(f"tau must be positive, got {tau}")
    diff = ops.sub(constant(reference), estimate)
    error_energy = ops.reduce_sum(ops.mul(diff, diff))
    stabilized = ops.sadd(error_energy, tau * signal_energy)
    return ops.sadd(ops.smul(ops.log10(stabilized), 10.0),
                    -10.0 * np.log10(signal_energy))


def _sum_tensors(tensors: list[Tensor]) -> Tensor:
    total = tensors[0]
    for t in tensors[1:]:
        total = ops.add(total, t)
    return total


def example_loss_graph(separator: Separator, mixture: np.ndarray,
                       references: Sequence[np.ndarray],
                       tau: float = DEFAULT_SNR_TAU
                       ) -> tuple[Tensor, list[tuple[int, ...]]]:
    """PIT negative-SNR loss for one mixture, averaged over stages.

    The K x K pairwise loss nodes are built once per stage; the best
    assignment is then chosen on their values and the loss node is the sum
    of the chosen pair nodes, so gradients flow only through the winning
    assignment. Returns (scalar loss tensor, chosen permutation per stage).
    """
    k = separator.n_sources
    if len(references) != k:
        raise ValueError(f"model separates {k} sources, got {len(references)} "
                         "references")
    stage_estimates = separate_graph(separator, mixture)
    stage_losses: list[Tensor] = []
    permutations: list[tuple[int, ...]] = []
    for estimates in stage_estimates:
        pair_nodes = [[neg_snr_graph(ref, est, tau) for ref in references]
                      for est in estimates]
        pair_values = np.array([[float(node.data) for node in row]
                                for row in pair_nodes])
        _, perm = best_assignment(pair_values)
        permutations.append(perm)
        stage_losses.append(
            _sum_tensors([pair_nodes[i][perm[i]] for i in range(k)]))
    total = ops.smul(_sum_tensors(stage_losses), 1.0 / len(stage_losses))
    return total, permutations


def _format_permutations(batch_perms: list[list[tuple[int, ...]]]) -> str:
    return ";".join(
        "/".join("".join(str(d) for d in perm) for perm in example)
        for example in batch_perms)


def train(separator: Separator,
          examples: Sequence[tuple[np.ndarray, list[np.ndarray]]],
          settings: TrainSettings) -> TrainLog:
    """Run the descent loop in place on the separator's parameters.

    `examples` holds rendered (mixture, references) pairs; batches are
    drawn from it with the settings' seed. Raises TrainingDivergedError
    (with the step index) the moment a loss stops being finite.
    """
    if not examples:
        raise ValueError("need at least one training example")
    params = separator.parameters
    state = AdamState(learning_rate=settings.learning_rate)
    rng = np.random.default_rng(np.random.SeedSequence([settings.seed, 0x7EA1]))
    log = TrainLog()
    for step in range(1, settings.steps + 1):
        started = time.perf_counter()
        picks = rng.choice(len(examples), size=settings.batch_size,
                           replace=len(examples) < settings.batch_size)
        batch_perms: list[list[tuple[int, ...]]] = []
        with Tape() as tape:
            losses = []
            for index in picks:
                mixture, references = examples[index]
                loss, perms = example_loss_graph(separator, mixture,
                                                 references, settings.tau)
                losses.append(loss)
                batch_perms.append(perms)
            total = ops.smul(_sum_tensors(losses), 1.0 / len(losses))
            if not np.isfinite(total.data):
                raise TrainingDivergedError(
                    f"non-finite loss {total.data} at step {step}")
            tape.backward(total, params)
        adam_step(params, state)
        log.records.append(TrainStepRecord(
            step, float(total.data), _format_permutations(batch_perms),
            time.perf_counter() - started))
    return log
