"""Command-line interface.

Subcommands cover the full workflow:

* mixgen      — plan (and optionally render) a mixture dataset
* train       — fit a separator on a manifest's training split
* separate    — run a trained model on one WAV file
* evaluate    — score a trained model over a manifest split
* oracle-eval — score the ideal-binary-mask baseline the same way
* sweep       — oracle baseline across analysis window sizes
* grad-check  — verify model gradients against finite differences

Report-producing commands write delimited CSV output plus rendered
figures beside it; ``--no-figures`` skips the figures.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .autograd import grad_check, ops
from .config import ConfigError, RunConfig, default_config, load_config, save_config
from .datagen import (
    SPLITS,
    ManifestError,
    build_manifest,
    load_manifest,
    save_corpus_index,
    save_manifest,
    scan_corpus,
    training_examples,
    write_rendered,
)
from .evaluate import (
    evaluate_split,
    model_separate_fn,
    oracle_separate_fn,
    summarize,
    write_rows_csv,
    write_summary_csv,
)
from .nets import (
    MaskNetConfig,
    init_separator,
    load_separator,
    save_separator,
    separate,
    separate_graph,
)
from .signal import CORPUS_PROFILES, AudioIOError, read_wav, write_synthetic_corpus, write_wav
from .training import TrainingDivergedError, neg_snr_graph, train
from .transforms import WINDOW_CHOICES_MS, FrameSpec


def _load_run_config(args) -> RunConfig:
    return load_config(args.config) if args.config else default_config()


def _say(message: str) -> None:
    print(message)


# ---------------------------------------------------------------------------
# mixgen
# ---------------------------------------------------------------------------

def _cmd_mixgen(args) -> int:
    config = _load_run_config(args)
    data = config.data
    if args.synth_profile:
        corpus_dir = Path(args.corpus_dir)
        entries = write_synthetic_corpus(
            corpus_dir, n_files=args.n_files, seed=data.seed,
            profile=args.synth_profile, sample_rate_hz=data.sample_rate_hz)
        save_corpus_index(entries, corpus_dir)
        _say(f"wrote {len(entries)} synthetic files to {corpus_dir}")
    entries = scan_corpus(args.corpus_dir)
    manifest = build_manifest(
        entries, data.n_mixtures, sample_rate_hz=data.sample_rate_hz,
        seed=data.seed, n_sources=data.n_sources, clip_s=data.clip_s,
        split_fractions=data.split_fractions,
        distinct_families=data.distinct_families)
    save_manifest(manifest, args.manifest)
    for split in SPLITS:
        _say(f"{split}: {len(manifest.recipes_for(split))} mixtures")
    _say(f"manifest: {args.manifest}")
    if args.render_dir:
        for split in SPLITS:
            if manifest.recipes_for(split):
                written = write_rendered(manifest, split,
                                         Path(args.render_dir) / split)
                _say(f"rendered {len(written)} {split} mixtures to "
                     f"{Path(args.render_dir) / split}")
    return 0


# ---------------------------------------------------------------------------
# train
# ---------------------------------------------------------------------------

def _cmd_train(args) -> int:
    config = _load_run_config(args)
    if args.steps is not None:
        config = replace(config, training=replace(config.training,
                                                  steps=args.steps))
    manifest = load_manifest(args.manifest)
    if manifest.sample_rate_hz != config.data.sample_rate_hz:
        raise ConfigError(
            f"manifest rate {manifest.sample_rate_hz} != configured rate "
            f"{config.data.sample_rate_hz}")
    examples = training_examples(manifest, "train", root=args.corpus_root)
    if not examples:
        raise ManifestError(f"{args.manifest} has no training mixtures")
    separator = init_separator(config.mask_net_config(), config.model.arch,
                               config.model.init_seed)
    _say(f"training {config.model.arch}/{config.model.basis} separator on "
         f"{len(examples)} mixtures for {config.training.steps} steps")
    log = train(separator, examples, config.training.settings())
    out_dir = Path(args.out_dir)
    checkpoint = out_dir / "model.ckpt"
    save_separator(separator, checkpoint,
                   extra_metadata={"final_loss": float(log.losses[-1])})
    log_path = out_dir / "train_log.csv"
    log.write_csv(log_path)
    saved_config = out_dir / "run_config.ini"
    save_config(config, saved_config)
    _say(f"final loss {log.losses[-1]:.3f} dB "
         f"(first {log.losses[0]:.3f} dB)")
    _say(f"checkpoint: {checkpoint}")
    _say(f"log: {log_path}")
    if not args.no_figures:
        from .plots import save_training_curve
        figure = save_training_curve([r.step for r in log.records],
                                     log.losses, out_dir / "train_loss.png")
        _say(f"figure: {figure}")
    return 0


# ---------------------------------------------------------------------------
# separate
# ---------------------------------------------------------------------------

def _cmd_separate(args) -> int:
    separator, metadata = load_separator(args.model)
    mixture = read_wav(args.input)
    expected = separator.config.frame_spec.sample_rate_hz
    if mixture.sample_rate_hz != expected:
        raise AudioIOError(
            f"{args.input} has rate {mixture.sample_rate_hz}, model expects "
            f"{expected}")
    estimates = separate(separator, mixture)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = Path(args.input).stem
    for k, estimate in enumerate(estimates):
        path = out_dir / f"{stem}_est{k}.wav"
        write_wav(estimate, path, encoding="float32")
        _say(f"estimate {k}: {path}")
    if not args.no_figures:
        from .plots import save_separation_report
        figure = save_separation_report(mixture, estimates,
                                        separator.config.frame_spec,
                                        out_dir / f"{stem}_report.png")
        _say(f"figure: {figure}")
    return 0


# ---------------------------------------------------------------------------
# evaluate / oracle-eval / sweep
# ---------------------------------------------------------------------------

def _report_eval(rows, summary, out_dir, figure_title, no_figures) -> None:
    out_dir = Path(out_dir)
    write_rows_csv(rows, out_dir / "eval_rows.csv")
    write_summary_csv(summary, out_dir / "eval_summary.csv")
    _say(f"{summary.n_rows} rows over {summary.n_mixtures} mixtures "
         f"({summary.n_nonfinite} non-finite)")
    _say(f"median SI-SDR improvement: {summary.median_improvement_db:.2f} dB "
         f"(mean {summary.mean_improvement_db:.2f} dB)")
    _say(f"rows: {out_dir / 'eval_rows.csv'}")
    _say(f"summary: {out_dir / 'eval_summary.csv'}")
    if not no_figures:
        from .plots import save_improvement_histogram
        figure = save_improvement_histogram(
            [r.si_sdr_improvement_db for r in rows],
            out_dir / "improvement_hist.png", title=figure_title)
        _say(f"figure: {figure}")


def _cmd_evaluate(args) -> int:
    separator, _ = load_separator(args.model)
    manifest = load_manifest(args.manifest)
    rows, summary = evaluate_split(model_separate_fn(separator), manifest,
                                   args.split, root=args.corpus_root)
    _report_eval(rows, summary, args.out_dir,
                 f"Model SI-SDR improvement ({args.split})", args.no_figures)
    return 0


def _cmd_oracle_eval(args) -> int:
    manifest = load_manifest(args.manifest)
    spec = FrameSpec.from_window_ms(args.window_ms, manifest.sample_rate_hz)
    rows, summary = evaluate_split(oracle_separate_fn(spec), manifest,
                                   args.split, root=args.corpus_root)
    _report_eval(rows, summary, args.out_dir,
                 f"Oracle SI-SDR improvement ({args.split}, "
                 f"{args.window_ms:g} ms)", args.no_figures)
    return 0


def _cmd_sweep(args) -> int:
    import csv

    manifest = load_manifest(args.manifest)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for window_ms in sorted(set(args.window_ms)):
        spec = FrameSpec.from_window_ms(window_ms, manifest.sample_rate_hz)
        rows, summary = evaluate_split(oracle_separate_fn(spec), manifest,
                                       args.split, root=args.corpus_root)
        results.append((window_ms, summary))
        _say(f"{window_ms:g} ms: median improvement "
             f"{summary.median_improvement_db:.2f} dB")
    sweep_path = out_dir / "sweep.csv"
    with open(sweep_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window_ms", "median_improvement_db",
                         "mean_improvement_db", "n_rows", "n_nonfinite"])
        for window_ms, summary in results:
            writer.writerow([f"{window_ms:g}",
                             f"{summary.median_improvement_db:.6f}",
                             f"{summary.mean_improvement_db:.6f}",
                             summary.n_rows, summary.n_nonfinite])
    _say(f"sweep table: {sweep_path}")
    if not args.no_figures:
        from .plots import save_sweep_curve
        figure = save_sweep_curve(
            [w for w, _ in results],
            [s.median_improvement_db for _, s in results],
            out_dir / "sweep.png")
        _say(f"figure: {figure}")
    return 0


# ---------------------------------------------------------------------------
# grad-check
# ---------------------------------------------------------------------------

def _tiny_grad_config(basis: str) -> MaskNetConfig:
    if basis == "stft":
        spec = FrameSpec(window_len=8, hop=4, fft_len=16, sample_rate_hz=8000)
        n_basis = spec.n_bins
    else:
        spec = FrameSpec(window_len=8, hop=4, fft_len=8, sample_rate_hz=8000)
        n_basis = 8
    return MaskNetConfig(n_basis=n_basis, bottleneck=4, conv_channels=8,
                         skip_channels=4, kernel_taps=3, blocks_per_repeat=2,
                         repeats=1, n_sources=2, basis_kind=basis,
                         frame_spec=spec)


def _cmd_grad_check(args) -> int:
    separator = init_separator(_tiny_grad_config(args.basis), args.arch,
                               args.seed)
    rng = np.random.default_rng(args.seed)
    references = [rng.standard_normal(128) * 0.3 for _ in range(2)]
    mixture = references[0] + references[1]

    def loss_fn():
        stage_losses = []
        for estimates in separate_graph(separator, mixture):
            total = neg_snr_graph(references[0], estimates[0])
            total = ops.add(total, neg_snr_graph(references[1], estimates[1]))
            stage_losses.append(total)
        mean = stage_losses[0]
        for node in stage_losses[1:]:
            mean = ops.add(mean, node)
        return ops.smul(mean, 1.0 / len(stage_losses))

    stats: dict = {}
    worst = grad_check(loss_fn, separator.parameters, fd_step=args.fd_step,
                       probes=args.probes, seed=args.seed, stats=stats)
    _say(f"checked {stats['checked']} perturbations "
         f"({stats['skipped']} skipped near activation kinks)")
    _say(f"worst relative gradient error: {worst:.3e} "
         f"(tolerance {args.tolerance:.1e})")
    if stats["checked"] == 0:
        _say("FAIL: nothing was checked")
        return 1
    if worst >= args.tolerance:
        _say("FAIL: gradient mismatch")
        return 1
    _say("OK")
    return 0


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sepkit",
        description="Train and evaluate masking-based source separators.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, handler, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.set_defaults(handler=handler)
        return p

    p = add("mixgen", _cmd_mixgen, "Plan a mixture dataset from a corpus.")
    p.add_argument("--config", help="run configuration INI")
    p.add_argument("--corpus-dir", required=True,
                   help="directory of source WAVs (created with --synth-profile)")
    p.add_argument("--manifest", required=True, help="manifest file to write")
    p.add_argument("--synth-profile", choices=CORPUS_PROFILES,
                   help="first synthesize a corpus with this profile")
    p.add_argument("--n-files", type=int, default=40,
                   help="synthetic corpus size (with --synth-profile)")
    p.add_argument("--render-dir",
                   help="also render every split's WAV files here")

    p = add("train", _cmd_train, "Train a separator on a manifest.")
    p.add_argument("--config", help="run configuration INI")
    p.add_argument("--manifest", required=True)
    p.add_argument("--corpus-root",
                   help="base directory for relative manifest paths")
    p.add_argument("--out-dir", required=True,
                   help="directory for checkpoint, log, and figures")
    p.add_argument("--steps", type=int,
                   help="override the configured step count")
    p.add_argument("--no-figures", action="store_true")

    p = add("separate", _cmd_separate, "Separate one mixture WAV.")
    p.add_argument("--model", required=True, help="separator checkpoint")
    p.add_argument("--input", required=True, help="mixture WAV file")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = add("evaluate", _cmd_evaluate, "Score a model over a manifest split.")
    p.add_argument("--model", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--corpus-root")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = add("oracle-eval", _cmd_oracle_eval,
            "Score the ideal-binary-mask baseline over a manifest split.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--window-ms", type=float, default=5.0,
                   choices=WINDOW_CHOICES_MS)
    p.add_argument("--corpus-root")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = add("sweep", _cmd_sweep,
            "Oracle baseline across analysis window sizes.")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=SPLITS, default="val")
    p.add_argument("--window-ms", type=float, nargs="+",
                   default=list(WINDOW_CHOICES_MS), choices=WINDOW_CHOICES_MS)
    p.add_argument("--corpus-root")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--no-figures", action="store_true")

    p = add("grad-check", _cmd_grad_check,
            "Check model gradients against finite differences.")
    p.add_argument("--basis", choices=("stft", "learned"), default="learned")
    p.add_argument("--arch", choices=("single", "iterative"), default="single")
    p.add_argument("--probes", type=int, default=None,
                   help="random probe count (default: every coordinate)")
    p.add_argument("--fd-step", type=float, default=1e-5)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--seed", type=int, default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except (ConfigError, ManifestError, AudioIOError, TrainingDivergedError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
