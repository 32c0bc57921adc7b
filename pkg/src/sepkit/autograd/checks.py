"""Finite-difference gradient checking against the tape's analytic gradients."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .engine import Tape, Tensor

#: Mixed-criterion offset. Central differences carry absolute roundoff
#: noise of order eps * loss / fd_step (~1e-9 here) regardless of the
#: gradient's size, so a coordinate whose true gradient is tiny would show
#: a huge *relative* error despite a perfect analytic value. Adding this
#: offset to the denominator makes near-zero coordinates effectively
#: absolute-tolerance checks while leaving O(1) gradients fully relative.
ATOL_OFFSET = 1e-3


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / (ATOL_OFFSET + max(abs(analytic), abs(numeric)))


def _run(fn: Callable[[], Tensor]) -> tuple[float, np.ndarray]:
    """Evaluate fn on a kink-tracking tape; return (loss, pre-activation vector)."""
    with Tape(track_kinks=True) as tape:
        loss = fn()
    if loss.shape != ():
        raise ValueError(
            f"grad_check function must return a scalar, got shape {loss.shape}")
    value = float(loss.data)
    if not np.isfinite(value):
        raise FloatingPointError("grad_check: non-finite loss value")
    kinks = (np.concatenate(tape.kink_values)
             if tape.kink_values else np.zeros(0))
    return value, kinks


def grad_check(fn: Callable[[], Tensor], params: Sequence[Tensor],
               fd_step: float = 1e-5, probes: int | None = None,
               seed: int = 0, stats: dict | None = None) -> float:
    """Worst relative error between analytic and central-difference gradients.

    `fn` must be a deterministic, argument-free function of the params'
    current data that builds and returns a scalar loss Tensor. With
    `probes=None` every coordinate is checked; otherwise `probes` random
    unit directions over the concatenated parameter vector are used.

    Kink avoidance: central differences are meaningless across a
    relu/prelu kink, so a coordinate (or probe) is skipped when its
    perturbation pushes any pre-activation to the other side of zero.
    While every pre-activation stays on its side, each relu/prelu acts
    as a fixed linear map over all three evaluations and contributes no
    finite-difference error at all — so coordinates merely *near* a kink
    remain checkable. A parameter sitting exactly at a kink always
    crosses and is always excluded.

    Pass a dict as `stats` to receive {"checked": n, "skipped": n}.
    """
    if fd_step <= 0:
        raise ValueError(f"fd_step must be positive, got {fd_step}")
    with Tape(track_kinks=True) as tape:
        loss = fn()
        if loss.shape != ():
            raise ValueError(f"grad_check function must return a scalar, "
                             f"got shape {loss.shape}")
        tape.backward(loss, params)
    center_kinks = (np.concatenate(tape.kink_values)
                    if tape.kink_values else np.zeros(0))
    analytic = [p.grad.copy() for p in params]

    def fd_pair(perturb: Callable[[float], None]) -> tuple[float, bool]:
        """Central difference along one perturbation; True if kink-safe."""
        perturb(+fd_step)
        plus, kinks_plus = _run(fn)
        perturb(-2.0 * fd_step)
        minus, kinks_minus = _run(fn)
        perturb(+fd_step)
        if center_kinks.size:
            active = center_kinks > 0
            crossed = ((kinks_plus > 0) != active) | ((kinks_minus > 0) != active)
            safe = not bool(np.any(crossed))
        else:
            safe = True
        return (plus - minus) / (2.0 * fd_step), safe

    worst = 0.0
    checked = skipped = 0
    if probes is None:
        for p, grad in zip(params, analytic):
            flat = p.data.reshape(-1)
            for i in range(flat.size):
                def bump(delta, flat=flat, i=i):
                    flat[i] += delta
                numeric, safe = fd_pair(bump)
                if safe:
                    checked += 1
                    worst = max(worst,
                                _relative_error(grad.reshape(-1)[i], numeric))
                else:
                    skipped += 1
    else:
        rng = np.random.default_rng(seed)
        sizes = [p.size for p in params]
        for _ in range(probes):
            direction = rng.standard_normal(sum(sizes))
            direction /= np.linalg.norm(direction)
            pieces = np.split(direction, np.cumsum(sizes)[:-1])
            def bump(delta, pieces=pieces):
                for p, d in zip(params, pieces):
                    p.data += delta * d.reshape(p.shape)
            numeric, safe = fd_pair(bump)
            if safe:
                checked += 1
                directional = sum(float(np.sum(g * d.reshape(g.shape)))
                                  for g, d in zip(analytic, pieces))
                worst = max(worst, _relative_error(directional, numeric))
            else:
                skipped += 1
    if stats is not None:
        stats["checked"] = checked
        stats["skipped"] = skipped
    return worst
