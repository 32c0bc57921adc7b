"""Mask-prediction networks built on the differentiation engine.

The architecture is a dilated temporal convolution stack:

* input features are projected to a bottleneck width,
* repeats of X residual blocks follow, each block being
  dense -> prelu -> feature-norm -> causal dilated depthwise conv ->
  prelu -> feature-norm -> parallel residual/skip dense projections,
  with a learnable scalar after every dense layer,
* block dilations double within a repeat (2^0 .. 2^(X-1)),
* repeat inputs feed forward to all later repeat inputs through
  per-pair dense projections (long-range skip-residual wiring),
* the summed skip outputs pass through prelu -> dense -> sigmoid to
  produce K masks per coefficient bin.

The residual projection of global block L starts scaled by 0.9^L so
early blocks dominate at initialization; every other scale starts at 1.

A ``Separator`` bundles one or two such networks with their transform:
the single-pass model masks the mixture's coefficients once; the
iterative model feeds the first pass's estimates (re-analyzed by the
second stage's own transform) back in as extra input features and
re-predicts the masks. Estimates are always projected to mixture
consistency in the time domain.

Dense layers carry no bias terms: each block normalization directly
follows a dense layer and its beta offsets would absorb any bias, and
the sigmoid head works at zero offset.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .autograd import Tensor, constant, parameter
from .autograd import ops
from .masking import MaskSet
from .signal import Waveform
from .transforms import FrameSpec, padded_len

BASIS_KINDS = ("stft", "learned")
ARCHITECTURES = ("single", "iterative")

#: Offset inside the log-magnitude input features of the stft basis.
LOG_FEATURE_EPS = 1e-5

#: Base of the residual-scale schedule 0.9^L over global block index L.
RESIDUAL_SCALE_BASE = 0.9


@dataclass(frozen=True)
class MaskNetConfig:
    """Sizes for one mask network plus the transform it rides on.

    n_basis is the coefficient bin count the masks cover; input_width is
    the feature dimension entering the network (defaults to n_basis, and
    the iterative model's second stage widens it to (K+1)*n_basis).
    """

    n_basis: int
    bottleneck: int
    conv_channels: int
    skip_channels: int
    kernel_taps: int
    blocks_per_repeat: int
    repeats: int
    n_sources: int
    basis_kind: str
    frame_spec: FrameSpec
    input_width: int | None = None

    def __post_init__(self):
        sizes = {
            "n_basis": self.n_basis, "bottleneck": self.bottleneck,
            "conv_channels": self.conv_channels,
            "skip_channels": self.skip_channels,
            "kernel_taps": self.kernel_taps,
            "blocks_per_repeat": self.blocks_per_repeat,
            "repeats": self.repeats, "n_sources": self.n_sources,
        }
        for name, value in sizes.items():
            if value < 1:
                raise ValueError(f"{name} must be >= 1, got {value}")
        if self.basis_kind not in BASIS_KINDS:
            raise ValueError(
                f"basis_kind must be one of {BASIS_KINDS}, got {self.basis_kind!r}")
        if self.basis_kind == "stft" and self.n_basis != self.frame_spec.n_bins:
            raise ValueError(
                f"stft basis has {self.frame_spec.n_bins} bins, "
                f"config says n_basis={self.n_basis}")
        if self.input_width is not None and self.input_width < 1:
            raise ValueError(f"input_width must be >= 1, got {self.input_width}")

    @property
    def feature_width(self) -> int:
        return self.input_width if self.input_width is not None else self.n_basis

    @property
    def n_blocks(self) -> int:
        return self.repeats * self.blocks_per_repeat

    def second_stage(self) -> "MaskNetConfig":
        """Same network, widened to accept mixture + K estimate features."""
        return replace(self, input_width=(self.n_sources + 1) * self.n_basis)


def _uniform(rng: np.random.Generator, shape: tuple[int, ...],
             fan_in: int) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, shape)


class MaskNetParams:
    """Named parameter tensors for one mask network, in a stable order."""

    def __init__(self, config: MaskNetConfig, tensors: dict[str, Tensor]):
        self.config = config
        self.tensors = tensors

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]

    @property
    def parameters(self) -> list[Tensor]:
        return list(self.tensors.values())

    def as_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data for name, t in self.tensors.items()}


def init_mask_net(config: MaskNetConfig, seed: int) -> MaskNetParams:
    """Deterministic parameter initialization for one mask network."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x7E75]))
    b, h, sc = config.bottleneck, config.conv_channels, config.skip_channels
    tensors: dict[str, Tensor] = {}

    def param(name, data):
        tensors[name] = parameter(np.asarray(data, dtype=np.float64), name=name)

    param("bottleneck.w", _uniform(rng, (b, config.feature_width),
                                   config.feature_width))
    for block in range(config.n_blocks):
        prefix = f"block{block}"
        param(f"{prefix}.dense_in.w", _uniform(rng, (h, b), b))
        param(f"{prefix}.dense_in.scale", 1.0)
        param(f"{prefix}.prelu1.slope", 0.25)
        param(f"{prefix}.norm1.gamma", np.ones(h))
        param(f"{prefix}.norm1.beta", np.zeros(h))
        param(f"{prefix}.dconv.w", _uniform(rng, (h, config.kernel_taps),
                                            config.kernel_taps))
        param(f"{prefix}.prelu2.slope", 0.25)
        param(f"{prefix}.norm2.gamma", np.ones(h))
        param(f"{prefix}.norm2.beta", np.zeros(h))
        param(f"{prefix}.residual.w", _uniform(rng, (b, h), h))
        param(f"{prefix}.residual.scale", RESIDUAL_SCALE_BASE ** block)
        param(f"{prefix}.skip.w", _uniform(rng, (sc, h), h))
        param(f"{prefix}.skip.scale", 1.0)
    for source in range(config.repeats):
        for dest in range(source + 1, config.repeats):
            param(f"longrange.{source}to{dest}.w", _uniform(rng, (b, b), b))
    param("head.prelu.slope", 0.25)
    param("head.w", _uniform(rng, (config.n_sources * config.n_basis, sc), sc))
    return MaskNetParams(config, tensors)


def mask_net_forward(params: MaskNetParams, features: Tensor,
                     frozen_norm_stats: Sequence | None = None,
                     capture_norm_stats: list | None = None) -> Tensor:
    """Features (input_width, frames) -> sigmoid masks (K*n_basis, frames).

    `frozen_norm_stats` / `capture_norm_stats` replay or record the
    feature-norm statistics (in call order); locality probes use them to
    make the network exactly frame-local within its receptive field.
    """
    config = params.config
    if features.ndim != 2 or features.shape[0] != config.feature_width:
        raise ValueError(
            f"features must be ({config.feature_width}, frames), "
            f"got shape {features.shape}")
    frozen_iter = iter(frozen_norm_stats) if frozen_norm_stats is not None else None

    def norm(x, prefix):
        frozen = next(frozen_iter) if frozen_iter is not None else None
        return ops.feature_norm(x, params[f"{prefix}.gamma"],
                                params[f"{prefix}.beta"],
                                frozen_stats=frozen,
                                stats_out=capture_norm_stats)

    repeat_inputs: list[Tensor] = []
    skips: list[Tensor] = []
    current = ops.matmul(params["bottleneck.w"], features)
    for repeat in range(config.repeats):
        for source, src_input in enumerate(repeat_inputs):
            current = ops.add(current, ops.matmul(
                params[f"longrange.{source}to{repeat}.w"], src_input))
        repeat_inputs.append(current)
        for x in range(config.blocks_per_repeat):
            block = repeat * config.blocks_per_repeat + x
            prefix = f"block{block}"
            y = ops.scale(ops.matmul(params[f"{prefix}.dense_in.w"], current),
                          params[f"{prefix}.dense_in.scale"])
            y = ops.prelu(y, params[f"{prefix}.prelu1.slope"])
            y = norm(y, f"{prefix}.norm1")
            y = ops.depthwise_conv1d(y, params[f"{prefix}.dconv.w"],
                                     dilation=2 ** x)
            y = ops.prelu(y, params[f"{prefix}.prelu2.slope"])
            y = norm(y, f"{prefix}.norm2")
            residual = ops.scale(ops.matmul(params[f"{prefix}.residual.w"], y),
                                 params[f"{prefix}.residual.scale"])
            skips.append(ops.scale(ops.matmul(params[f"{prefix}.skip.w"], y),
                                   params[f"{prefix}.skip.scale"]))
            current = ops.add(current, residual)
    total_skip = skips[0]
    for skip in skips[1:]:
        total_skip = ops.add(total_skip, skip)
    head = ops.prelu(total_skip, params["head.prelu.slope"])
    return ops.sigmoid(ops.matmul(params["head.w"], head))


def masks_to_set(mask_tensor: Tensor, config: MaskNetConfig) -> MaskSet:
    """Reshape a (K*n_basis, frames) mask tensor into a (K, frames, bins) set."""
    k, n = config.n_sources, config.n_basis
    stacked = mask_tensor.data.reshape(k, n, -1)
    return MaskSet(np.transpose(stacked, (0, 2, 1)))


# ---------------------------------------------------------------------------
# Separator: network(s) + transform, end to end
# ---------------------------------------------------------------------------

@dataclass
class Stage:
    """One mask network plus its transform parameters.

    `analysis` is (N, 1, window_len) and `synthesis` (N, window_len) for
    the learned basis; both are None for the fixed stft transform.
    """

    net: MaskNetParams
    analysis: Tensor | None = None
    synthesis: Tensor | None = None

    @property
    def parameters(self) -> list[Tensor]:
        extra = [t for t in (self.analysis, self.synthesis) if t is not None]
        return self.net.parameters + extra


@dataclass
class Separator:
    """A full separation model: 'single' (one pass) or 'iterative' (two)."""

    arch: str
    config: MaskNetConfig
    stages: list[Stage]

    def __post_init__(self):
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        expected = 1 if self.arch == "single" else 2
        if len(self.stages) != expected:
            raise ValueError(
                f"{self.arch} separator needs {expected} stage(s), "
                f"got {len(self.stages)}")

    @property
    def parameters(self) -> list[Tensor]:
        return [p for stage in self.stages for p in stage.parameters]

    @property
    def n_sources(self) -> int:
        return self.config.n_sources


def _init_stage(config: MaskNetConfig, seed: int) -> Stage:
    net = init_mask_net(config, seed)
    if config.basis_kind == "stft":
        return Stage(net)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xBA515]))
    window_len = config.frame_spec.window_len
    analysis = parameter(
        _uniform(rng, (config.n_basis, 1, window_len), window_len),
        name="analysis.w")
    synthesis = parameter(
        _uniform(rng, (config.n_basis, window_len), window_len),
        name="synthesis.w")
    return Stage(net, analysis, synthesis)


def init_separator(config: MaskNetConfig, arch: str, seed: int) -> Separator:
    """Deterministic initialization of a single-pass or iterative separator."""
    if arch == "single":
        stages = [_init_stage(config, seed)]
    elif arch == "iterative":
        stages = [_init_stage(config, seed),
                  _init_stage(config.second_stage(), seed + 1)]
    else:
        raise ValueError(f"arch must be one of {ARCHITECTURES}, got {arch!r}")
    return Separator(arch, config, stages)


def _stft_coeff_planes(x: Tensor, spec: FrameSpec) -> Tensor:
    return ops.stft_planes(x, spec)


def _learned_coeffs(x: Tensor, stage: Stage, spec: FrameSpec) -> Tensor:
    """ReLU analysis coefficients (N, frames) of a 1-D signal tensor."""
    length = x.shape[0]
    total = padded_len(length, spec)
    padded = ops.pad1d(x, spec.pre_pad, total - spec.pre_pad - length)
    framed = ops.conv1d(ops.reshape(padded, (1, total)), stage.analysis,
                        stride=spec.hop)
    return ops.relu(framed)


def _stage_features_and_estimates(
        stage: Stage, config: MaskNetConfig, mixture: Tensor,
        extra_signals: Sequence[Tensor] = (),
        frozen_norm_stats: Sequence | None = None,
        capture_norm_stats: list | None = None) -> list[Tensor]:
    """Run one stage: analyze, predict masks, mask the mixture, synthesize.

    `extra_signals` (the previous stage's estimates) are analyzed by this
    stage's transform and concatenated onto the mixture features.
    """
    spec = config.frame_spec
    length = mixture.shape[0]
    n = config.n_basis
    if config.basis_kind == "stft":
        planes = _stft_coeff_planes(mixture, spec)
        feature_blocks = [ops.log(ops.sadd(ops.pair_magnitude(planes),
                                           LOG_FEATURE_EPS))]
        for signal in extra_signals:
            extra_planes = _stft_coeff_planes(signal, spec)
            feature_blocks.append(
                ops.log(ops.sadd(ops.pair_magnitude(extra_planes),
                                 LOG_FEATURE_EPS)))
    else:
        coeffs = _learned_coeffs(mixture, stage, spec)
        feature_blocks = [coeffs]
        for signal in extra_signals:
            feature_blocks.append(_learned_coeffs(signal, stage, spec))
    features = (feature_blocks[0] if len(feature_blocks) == 1
                else ops.concat_rows(feature_blocks))
    masks = mask_net_forward(stage.net, features,
                             frozen_norm_stats=frozen_norm_stats,
                             capture_norm_stats=capture_norm_stats)
    estimates = []
    if config.basis_kind == "stft":
        bins = spec.n_bins
        real = ops.slice_rows(planes, 0, bins)
        imag = ops.slice_rows(planes, bins, 2 * bins)
        for k in range(config.n_sources):
            mask_k = ops.slice_rows(masks, k * n, (k + 1) * n)
            est_planes = ops.concat_rows([ops.mul(mask_k, real),
                                          ops.mul(mask_k, imag)])
            estimates.append(ops.istft_planes(est_planes, spec, length))
    else:
        total = padded_len(length, spec)
        for k in range(config.n_sources):
            mask_k = ops.slice_rows(masks, k * n, (k + 1) * n)
            masked = ops.mul(mask_k, coeffs)
            synth = ops.transposed_conv1d(masked, stage.synthesis, spec.hop)
            estimates.append(ops.slice1d(synth, spec.pre_pad,
                                         spec.pre_pad + length))
    return estimates


def _consistency(estimates: list[Tensor], mixture: Tensor) -> list[Tensor]:
    """In-graph uniform mixture-consistency projection."""
    total = estimates[0]
    for est in estimates[1:]:
        total = ops.add(total, est)
    share = ops.smul(ops.sub(mixture, total), 1.0 / len(estimates))
    return [ops.add(est, share) for est in estimates]


def separate_graph(separator: Separator, mixture_samples: np.ndarray
                   ) -> list[list[Tensor]]:
    """Per-stage consistency-projected estimate tensors for one mixture."""
    mixture = constant(np.asarray(mixture_samples, dtype=np.float64),
                       name="mixture")
    stage_outputs: list[list[Tensor]] = []
    previous: list[Tensor] = []
    for index, stage in enumerate(separator.stages):
        config = separator.config if index == 0 else separator.config.second_stage()
        estimates = _stage_features_and_estimates(stage, config, mixture,
                                                  extra_signals=previous)
        estimates = _consistency(estimates, mixture)
        stage_outputs.append(estimates)
        previous = estimates
    return stage_outputs


def separate(separator: Separator, mixture: Waveform) -> list[Waveform]:
    """Separate a mixture; returns the final stage's K estimates."""
    stages = separate_graph(separator, mixture.samples)
    return [Waveform(est.data, mixture.sample_rate_hz) for est in stages[-1]]


def iterative_separate(separator: Separator, mixture: Waveform
                       ) -> list[list[Waveform]]:
    """All stages' estimates (a single-pass model returns one stage)."""
    stages = separate_graph(separator, mixture.samples)
    return [[Waveform(est.data, mixture.sample_rate_hz) for est in stage]
            for stage in stages]


# ---------------------------------------------------------------------------
# Checkpoint I/O
# ---------------------------------------------------------------------------

def _config_to_dict(config: MaskNetConfig) -> dict:
    spec = config.frame_spec
    return {
        "n_basis": config.n_basis,
        "bottleneck": config.bottleneck,
        "conv_channels": config.conv_channels,
        "skip_channels": config.skip_channels,
        "kernel_taps": config.kernel_taps,
        "blocks_per_repeat": config.blocks_per_repeat,
        "repeats": config.repeats,
        "n_sources": config.n_sources,
        "basis_kind": config.basis_kind,
        "input_width": config.input_width,
        "frame_spec": {
            "window_len": spec.window_len,
            "hop": spec.hop,
            "fft_len": spec.fft_len,
            "sample_rate_hz": spec.sample_rate_hz,
        },
    }


def _config_from_dict(payload: dict) -> MaskNetConfig:
    fields = dict(payload)
    fields["frame_spec"] = FrameSpec(**fields["frame_spec"])
    return MaskNetConfig(**fields)


def save_separator(separator: Separator, path, extra_metadata: dict | None = None
                   ) -> None:
    """Write all stages' parameters plus the config to a checkpoint file."""
    from .autograd import save_tensors
    tensors: dict[str, np.ndarray] = {}
    for index, stage in enumerate(separator.stages):
        prefix = f"stage{index}."
        for name, tensor in stage.net.tensors.items():
            tensors[prefix + name] = tensor.data
        if stage.analysis is not None:
            tensors[prefix + "analysis.w"] = stage.analysis.data
            tensors[prefix + "synthesis.w"] = stage.synthesis.data
    metadata = {
        "kind": "separator",
        "arch": separator.arch,
        "config": _config_to_dict(separator.config),
    }
    if extra_metadata:
        metadata.update(extra_metadata)
    save_tensors(path, tensors, metadata)


def load_separator(path) -> tuple[Separator, dict]:
    """Rebuild a Separator (and its metadata) from `save_separator` output."""
    from .autograd import load_tensors
    tensors, metadata = load_tensors(path)
    if metadata.get("kind") != "separator":
        raise ValueError(f"{path} is not a separator checkpoint")
    config = _config_from_dict(metadata["config"])
    separator = init_separator(config, metadata["arch"], seed=0)
    expected = set()
    for index, stage in enumerate(separator.stages):
        prefix = f"stage{index}."
        targets = dict(stage.net.tensors)
        if stage.analysis is not None:
            targets["analysis.w"] = stage.analysis
            targets["synthesis.w"] = stage.synthesis
        for name, tensor in targets.items():
            key = prefix + name
            expected.add(key)
            if key not in tensors:
                raise ValueError(f"checkpoint missing tensor {key}")
            loaded = tensors[key]
            if loaded.shape != tensor.shape:
                raise ValueError(
                    f"checkpoint tensor {key} has shape {loaded.shape}, "
                    f"expected {tensor.shape}")
            tensor.data = loaded
    stray = set(tensors) - expected
    if stray:
        raise ValueError(f"checkpoint contains unexpected tensors: {sorted(stray)}")
    return separator, metadata
