"""sepkit: mask-based single-channel sound separation toolkit.

Modules
-------
signal      waveform type, WAV I/O, synthetic sources
transforms  STFT analysis/synthesis and learnable conv bases
masking     mask application, mixture consistency, oracle binary masks
objectives  SI-SDR, negative-SNR loss, permutation-invariant alignment
autograd    from-scratch reverse-mode differentiation engine
nets        dilated-convolution mask networks and the two-stage separator
training    optimizer loop, logging, checkpoints
datagen     corpus scan, mixture recipes, deterministic rendering
evaluate    batch scoring against references
config      experiment configuration file round-trip
plots       report figures
cli         command-line entry point
"""

__version__ = "0.1.0"
