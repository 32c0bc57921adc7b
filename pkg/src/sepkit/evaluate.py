"""Separation quality evaluation over a manifest split.

Estimates are aligned to references by permutation-invariant search on
negated SI-SDR, then reported per source as SI-SDR and SI-SDR
improvement over the raw mixture. Rows where either metric is infinite
(an exact reconstruction, or an estimate orthogonal to its reference)
are kept in the row listing but excluded from the summary statistics
and counted separately, so a single degenerate clip cannot poison or
inflate the averages.

Output is two CSV files: one row per (mixture, source), and a one-row
summary. Rendering of the companion figures lives in `plots`.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .datagen import Manifest, render_split
from .masking import separate_oracle
from .nets import Separator, separate
from .objectives import best_assignment, si_sdr
from .signal import Waveform
from .transforms import FrameSpec

#: `separate_fn(mixture, references) -> estimates`. Model-based functions
#: ignore the references; the oracle baseline is defined by them.
SeparateFn = Callable[[Waveform, Sequence[Waveform]], Sequence[Waveform]]

ROWS_HEADER = ("mixture_id", "source", "si_sdr_db", "si_sdr_improvement_db")
SUMMARY_HEADER = ("n_mixtures", "n_rows", "n_nonfinite",
                  "mean_si_sdr_db", "median_si_sdr_db",
                  "mean_improvement_db", "median_improvement_db")


@dataclass(frozen=True)
class EvalRow:
    mixture_id: str
    source: int
    si_sdr_db: float
    si_sdr_improvement_db: float

    @property
    def is_finite(self) -> bool:
        return math.isfinite(self.si_sdr_db) and \
            math.isfinite(self.si_sdr_improvement_db)


@dataclass(frozen=True)
class EvalSummary:
    n_mixtures: int
    n_rows: int
    n_nonfinite: int
    mean_si_sdr_db: float
    median_si_sdr_db: float
    mean_improvement_db: float
    median_improvement_db: float


def align_estimates(references: Sequence[Waveform],
                    estimates: Sequence[Waveform]) -> tuple[int, ...]:
    """Best estimate->reference assignment under summed negated SI-SDR."""
    n = len(references)
    pair = np.empty((n, n))
    for i, est in enumerate(estimates):
        for j, ref in enumerate(references):
            pair[i, j] = -si_sdr(ref, est)
    _, permutation = best_assignment(pair)
    return permutation


def evaluate_example(mixture_id: str, mixture: Waveform,
                     references: Sequence[Waveform],
                     estimates: Sequence[Waveform]) -> list[EvalRow]:
    """Aligned per-source rows for one mixture, ordered by reference."""
    if len(references) != len(estimates):
        raise ValueError(f"{mixture_id}: {len(references)} references vs "
                         f"{len(estimates)} estimates")
    permutation = align_estimates(references, estimates)
    rows = []
    for i, j in sorted(enumerate(permutation), key=lambda ij: ij[1]):
        ref, est = references[j], estimates[i]
        sdr = si_sdr(ref, est)
        rows.append(EvalRow(mixture_id, j, sdr, sdr - si_sdr(ref, mixture)))
    return rows


def summarize(rows: Sequence[EvalRow]) -> EvalSummary:
    finite = [r for r in rows if r.is_finite]
    if finite:
        sdr = np.array([r.si_sdr_db for r in finite])
        imp = np.array([r.si_sdr_improvement_db for r in finite])
        stats = (sdr.mean(), float(np.median(sdr)),
                 imp.mean(), float(np.median(imp)))
    else:
        stats = (math.nan,) * 4
    return EvalSummary(
        n_mixtures=len({r.mixture_id for r in rows}), n_rows=len(rows),
        n_nonfinite=len(rows) - len(finite),
        mean_si_sdr_db=float(stats[0]), median_si_sdr_db=stats[1],
        mean_improvement_db=float(stats[2]), median_improvement_db=stats[3])


def evaluate_split(separate_fn: SeparateFn, manifest: Manifest, split: str,
                   *, root=None) -> tuple[list[EvalRow], EvalSummary]:
    """Run a separation function over every mixture of a split."""
    rows: list[EvalRow] = []
    for recipe, mixture, references in render_split(manifest, split, root=root):
        estimates = separate_fn(mixture, references)
        rows.extend(evaluate_example(recipe.mixture_id, mixture,
                                     references, estimates))
    return rows, summarize(rows)


def model_separate_fn(separator: Separator) -> SeparateFn:
    return lambda mixture, references: separate(separator, mixture)


def oracle_separate_fn(spec: FrameSpec) -> SeparateFn:
    """Ideal binary masking given the true references — an upper baseline."""
    return lambda mixture, references: separate_oracle(mixture, list(references),
                                                       spec)


def _format(value: float) -> str:
    return f"{value:.6f}" if math.isfinite(value) else str(value)


def write_rows_csv(rows: Sequence[EvalRow], path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(ROWS_HEADER)
        for row in rows:
            writer.writerow([row.mixture_id, row.source,
                             _format(row.si_sdr_db),
                             _format(row.si_sdr_improvement_db)])


def write_summary_csv(summary: EvalSummary, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(SUMMARY_HEADER)
        writer.writerow([summary.n_mixtures, summary.n_rows,
                         summary.n_nonfinite,
                         _format(summary.mean_si_sdr_db),
                         _format(summary.median_si_sdr_db),
                         _format(summary.mean_improvement_db),
                         _format(summary.median_improvement_db)])


def read_rows_csv(path) -> list[EvalRow]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = tuple(next(reader))
        if header != ROWS_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        return [EvalRow(r[0], int(r[1]), float(r[2]), float(r[3]))
                for r in reader]
