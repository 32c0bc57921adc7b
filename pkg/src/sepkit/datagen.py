"""Mixture dataset construction: recipes, manifests, and rendering.

A dataset is described *before* any audio is mixed: `build_manifest`
resolves every random choice (file pairing, clip placement, looping
gaps) into a `Manifest` of integer sample offsets, so rendering is a
pure function of the manifest plus the source files. Saving the
manifest twice — or rebuilding it from the same corpus and seed —
produces byte-identical JSON lines, which makes dataset identity
checkable with a plain file checksum.

Clips are anchored on signal activity: a short-time RMS scan finds the
first onset (the first below-mean to above-mean crossing) and the clip
window is centered there, with a small random shift so the network
never sees perfectly aligned onsets. Files shorter than the clip are
looped with random silent gaps instead.

Splits are stratified by source *file* (never by clip), so no file
leaks across train/val/test, and within each family of a multi-family
corpus the files divide in the requested proportions.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .signal import Waveform, read_wav, write_wav

SPLITS = ("train", "val", "test")

#: Short-time RMS geometry for onset detection.
RMS_WINDOW_S = 0.050
RMS_HOP_S = 0.025

#: Largest clip-center shift away from the detected onset.
ONSET_JITTER_S = 0.5

#: Largest silent gap inserted when looping a short file.
LOOP_GAP_MAX_S = 1.0

_MANIFEST_KIND = "mixture-manifest"
_MANIFEST_VERSION = 1


class ManifestError(ValueError):
    """Raised when a manifest file cannot be parsed or is inconsistent."""


# ---------------------------------------------------------------------------
# Corpus scanning
# ---------------------------------------------------------------------------

CORPUS_INDEX_NAME = "corpus_index.json"


def save_corpus_index(entries, directory) -> Path:
    """Record file ids and families next to the WAVs they describe.

    The index lets a later scan recover the family labels, which the
    filenames alone do not carry.
    """
    directory = Path(directory)
    payload = [{"file_id": e["file_id"], "file": Path(e["path"]).name,
                "family": e["family"]} for e in entries]
    path = directory / CORPUS_INDEX_NAME
    path.write_text(json.dumps(payload, sort_keys=True, indent=1) + "\n")
    return path


def scan_corpus(directory) -> list[dict]:
    """Corpus entries for a directory of WAV files.

    Prefers the index written by `save_corpus_index` (families intact);
    without one, every *.wav is listed with family "any". Paths come
    back absolute so the resulting manifest is independent of the
    working directory.
    """
    directory = Path(directory)
    index = directory / CORPUS_INDEX_NAME
    if index.exists():
        try:
            payload = json.loads(index.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{index}: bad corpus index: {exc}") from exc
        return [{"file_id": item["file_id"],
                 "path": str((directory / item["file"]).resolve()),
                 "family": item["family"]} for item in payload]
    entries = []
    for path in sorted(directory.glob("*.wav")):
        entries.append({"file_id": path.stem, "path": str(path.resolve()),
                        "family": "any"})
    if not entries:
        raise ManifestError(f"no WAV files found in {directory}")
    return entries


# ---------------------------------------------------------------------------
# Onset detection
# ---------------------------------------------------------------------------

def rms_envelope(wave: Waveform, window_s: float = RMS_WINDOW_S,
                 hop_s: float = RMS_HOP_S) -> tuple[np.ndarray, int]:
    """Short-time RMS of the waveform; returns (envelope, hop in samples)."""
    window = max(1, int(round(window_s * wave.sample_rate_hz)))
    hop = max(1, int(round(hop_s * wave.sample_rate_hz)))
    samples = wave.samples
    if len(samples) < window:
        return np.array([np.sqrt(np.mean(samples ** 2))]), hop
    n_frames = (len(samples) - window) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(samples, window)[::hop]
    return np.sqrt(np.mean(frames[:n_frames] ** 2, axis=1)), hop


def detect_onset_s(wave: Waveform) -> float:
    """Time of the first RMS rise above the file's mean RMS, in seconds.

    The threshold adapts to the file: frames are compared against the
    mean of the whole envelope, and the onset is the first frame whose
    RMS crosses from at-or-below to above it. Files that start loud (or
    stay flat) have no such crossing and anchor at zero; a flatness
    guard keeps float-level envelope jitter on steady signals from
    counting as a crossing.
    """
    envelope, hop = rms_envelope(wave)
    spread = float(envelope.max() - envelope.min())
    if spread <= 1e-6 * float(envelope.max() + 1e-300):
        return 0.0
    threshold = float(envelope.mean())
    above = envelope > threshold
    for i in range(1, len(envelope)):
        if above[i] and not above[i - 1]:
            return i * hop / wave.sample_rate_hz
    return 0.0


# ---------------------------------------------------------------------------
# Recipes and the manifest
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SourceSlice:
    """How one reference signal is cut from a source file.

    mode "clip" takes clip_len samples starting at `start`; mode "loop"
    repeats the whole file separated by silent `gaps` (in samples) and
    takes the first clip_len samples of the result.
    """

    file_id: str
    path: str
    family: str
    mode: str
    start: int = 0
    gaps: tuple[int, ...] = ()

    def __post_init__(self):
        if self.mode not in ("clip", "loop"):
            raise ValueError(f"mode must be 'clip' or 'loop', got {self.mode!r}")
        if self.start < 0:
            raise ValueError(f"start must be >= 0, got {self.start}")
        object.__setattr__(self, "gaps", tuple(int(g) for g in self.gaps))


@dataclass(frozen=True)
class MixtureRecipe:
    mixture_id: str
    split: str
    sources: tuple[SourceSlice, ...]

    def __post_init__(self):
        if self.split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {self.split!r}")
        object.__setattr__(self, "sources", tuple(self.sources))


@dataclass(frozen=True)
class Manifest:
    sample_rate_hz: int
    clip_len: int
    n_sources: int
    seed: int
    recipes: tuple[MixtureRecipe, ...]

    def __post_init__(self):
        object.__setattr__(self, "recipes", tuple(self.recipes))

    def recipes_for(self, split: str) -> list[MixtureRecipe]:
        if split not in SPLITS:
            raise ValueError(f"split must be one of {SPLITS}, got {split!r}")
        return [r for r in self.recipes if r.split == split]

    @property
    def clip_s(self) -> float:
        return self.clip_len / self.sample_rate_hz


def _split_counts(total: int, fractions: tuple[float, float, float]) -> list[int]:
    """Integer counts per split: rounded val/test, train takes the rest."""
    val = int(round(total * fractions[1]))
    test = int(round(total * fractions[2]))
    train = total - val - test
    if train < 0:
        raise ValueError(f"fractions {fractions} leave no room for train")
    return [train, val, test]


def _partition_files(entries, fractions, rng) -> dict[str, list[dict]]:
    """Assign whole files to splits, stratified by family."""
    by_family: dict[str, list[dict]] = {}
    for entry in entries:
        by_family.setdefault(entry["family"], []).append(entry)
    assigned: dict[str, list[dict]] = {split: [] for split in SPLITS}
    for family in sorted(by_family):
        members = by_family[family]
        order = rng.permutation(len(members))
        counts = _split_counts(len(members), fractions)
        cursor = 0
        for split, count in zip(SPLITS, counts):
            for index in order[cursor:cursor + count]:
                assigned[split].append(members[index])
            cursor += count
    return assigned


def _slice_for(entry: dict, onset_s: float, n_samples: int, clip_len: int,
               sample_rate_hz: int, rng) -> SourceSlice:
    base = dict(file_id=entry["file_id"], path=entry["path"],
                family=entry["family"])
    if n_samples >= clip_len:
        jitter = rng.uniform(0.0, ONSET_JITTER_S)
        center = int(round((onset_s + jitter) * sample_rate_hz))
        start = min(max(center - clip_len // 2, 0), n_samples - clip_len)
        return SourceSlice(mode="clip", start=start, **base)
    total = n_samples
    gaps = []
    while total < clip_len:
        gap = int(rng.integers(0, int(LOOP_GAP_MAX_S * sample_rate_hz) + 1))
        gaps.append(gap)
        total += gap + n_samples
    return SourceSlice(mode="loop", gaps=tuple(gaps), **base)


def build_manifest(entries, n_mixtures: int, *, sample_rate_hz: int,
                   seed: int, n_sources: int = 2, clip_s: float = 3.0,
                   split_fractions: tuple[float, float, float] = (0.7, 0.2, 0.1),
                   distinct_families: bool = False, root=None) -> Manifest:
    """Plan a dataset of mixtures over the given corpus entries.

    Each entry must carry "file_id", "path", "family", and point at a
    readable WAV (resolved against `root` if relative). Every mixture
    draws n_sources *distinct* files from its split — from n_sources
    distinct families when `distinct_families` is set — and sums them at
    unit gain.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("need at least one corpus entry")
    if n_mixtures < 1:
        raise ValueError(f"n_mixtures must be >= 1, got {n_mixtures}")
    if not 1 <= n_sources <= len(entries):
        raise ValueError(f"n_sources={n_sources} needs that many corpus files")
    if clip_s <= 0:
        raise ValueError(f"clip_s must be positive, got {clip_s}")
    fractions = tuple(float(f) for f in split_fractions)
    if len(fractions) != 3 or min(fractions) < 0 or \
            abs(sum(fractions) - 1.0) > 1e-9:
        raise ValueError(
            f"split_fractions must be three nonnegative numbers summing to 1, "
            f"got {split_fractions}")
    seen: set[str] = set()
    for entry in entries:
        if entry["file_id"] in seen:
            raise ValueError(f"duplicate file_id {entry['file_id']!r}")
        seen.add(entry["file_id"])

    clip_len = int(round(clip_s * sample_rate_hz))
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xDA7A]))
    assigned = _partition_files(entries, fractions, rng)

    # One read per file: length check plus onset anchoring.
    onsets: dict[str, float] = {}
    lengths: dict[str, int] = {}
    for entry in entries:
        path = Path(entry["path"])
        if root is not None and not path.is_absolute():
            path = Path(root) / path
        wave = read_wav(path)
        if wave.sample_rate_hz != sample_rate_hz:
            raise ValueError(
                f"{entry['file_id']} has rate {wave.sample_rate_hz}, "
                f"manifest wants {sample_rate_hz}")
        onsets[entry["file_id"]] = detect_onset_s(wave)
        lengths[entry["file_id"]] = len(wave)

    recipes: list[MixtureRecipe] = []
    mixture_counts = _split_counts(n_mixtures, fractions)
    serial = 0
    for split, count in zip(SPLITS, mixture_counts):
        files = assigned[split]
        if count == 0:
            continue
        if distinct_families:
            by_family = {}
            for entry in files:
                by_family.setdefault(entry["family"], []).append(entry)
            families = sorted(by_family)
            if len(families) < n_sources:
                raise ValueError(
                    f"split {split!r} has {len(families)} families, "
                    f"mixtures need {n_sources} distinct ones")
        elif len(files) < n_sources:
            raise ValueError(
                f"split {split!r} has {len(files)} files, "
                f"mixtures need {n_sources} distinct ones")
        for _ in range(count):
            if distinct_families:
                chosen_families = rng.choice(len(families), size=n_sources,
                                             replace=False)
                chosen = [by_family[families[f]][
                    rng.integers(len(by_family[families[f]]))]
                    for f in sorted(chosen_families)]
            else:
                picks = rng.choice(len(files), size=n_sources, replace=False)
                chosen = [files[i] for i in picks]
            sources = tuple(
                _slice_for(entry, onsets[entry["file_id"]],
                           lengths[entry["file_id"]], clip_len,
                           sample_rate_hz, rng)
                for entry in chosen)
            recipes.append(MixtureRecipe(f"mix-{serial:05d}", split, sources))
            serial += 1
    return Manifest(sample_rate_hz, clip_len, n_sources, seed, tuple(recipes))


# ---------------------------------------------------------------------------
# Serialization: JSON lines, sorted keys, no floats => stable bytes
# ---------------------------------------------------------------------------

def _dump(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save_manifest(manifest: Manifest, path) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "kind": _MANIFEST_KIND,
        "version": _MANIFEST_VERSION,
        "sample_rate_hz": manifest.sample_rate_hz,
        "clip_len": manifest.clip_len,
        "n_sources": manifest.n_sources,
        "seed": manifest.seed,
        "n_mixtures": len(manifest.recipes),
    }
    lines = [_dump(header)]
    for recipe in manifest.recipes:
        lines.append(_dump(asdict(recipe)))
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ManifestError(f"{path} is empty")
    try:
        header = json.loads(lines[0])
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: bad header line: {exc}") from exc
    if header.get("kind") != _MANIFEST_KIND:
        raise ManifestError(f"{path} is not a mixture manifest")
    if header.get("version") != _MANIFEST_VERSION:
        raise ManifestError(
            f"{path} has manifest version {header.get('version')}, "
            f"expected {_MANIFEST_VERSION}")
    recipes = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            payload = json.loads(line)
            sources = tuple(SourceSlice(**src) for src in payload["sources"])
            recipes.append(MixtureRecipe(payload["mixture_id"],
                                         payload["split"], sources))
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}:{lineno}: bad recipe line: {exc}") from exc
    if len(recipes) != header.get("n_mixtures"):
        raise ManifestError(
            f"{path} lists {len(recipes)} recipes but the header says "
            f"{header.get('n_mixtures')}")
    return Manifest(header["sample_rate_hz"], header["clip_len"],
                    header["n_sources"], header["seed"], tuple(recipes))


# ---------------------------------------------------------------------------
# Rendering
# ---------------------------------------------------------------------------

class _SourceCache:
    """Read-once cache of source files keyed by path."""

    def __init__(self, root, sample_rate_hz: int):
        self.root = root
        self.sample_rate_hz = sample_rate_hz
        self._waves: dict[str, Waveform] = {}

    def get(self, slice_: SourceSlice) -> Waveform:
        if slice_.path not in self._waves:
            path = Path(slice_.path)
            if self.root is not None and not path.is_absolute():
                path = Path(self.root) / path
            wave = read_wav(path)
            if wave.sample_rate_hz != self.sample_rate_hz:
                raise ValueError(
                    f"{slice_.file_id} has rate {wave.sample_rate_hz}, "
                    f"manifest wants {self.sample_rate_hz}")
            self._waves[slice_.path] = wave
        return self._waves[slice_.path]


def _render_slice(slice_: SourceSlice, cache: _SourceCache,
                  clip_len: int) -> np.ndarray:
    samples = cache.get(slice_).samples
    if slice_.mode == "clip":
        if slice_.start + clip_len > len(samples):
            raise ValueError(
                f"{slice_.file_id}: clip [{slice_.start}, "
                f"{slice_.start + clip_len}) exceeds file length {len(samples)}")
        return samples[slice_.start:slice_.start + clip_len].copy()
    pieces = [samples]
    for gap in slice_.gaps:
        pieces.append(np.zeros(gap))
        pieces.append(samples)
    tiled = np.concatenate(pieces)
    if len(tiled) < clip_len:
        raise ValueError(
            f"{slice_.file_id}: looped length {len(tiled)} < clip {clip_len}")
    return tiled[:clip_len]


def render_recipe(recipe: MixtureRecipe, manifest: Manifest, *, root=None,
                  cache: _SourceCache | None = None
                  ) -> tuple[Waveform, list[Waveform]]:
    """Materialize one (mixture, references) pair from its recipe."""
    cache = cache or _SourceCache(root, manifest.sample_rate_hz)
    references = [
        Waveform(_render_slice(s, cache, manifest.clip_len),
                 manifest.sample_rate_hz)
        for s in recipe.sources]
    mixture = Waveform(np.sum([r.samples for r in references], axis=0),
                       manifest.sample_rate_hz)
    return mixture, references


def render_split(manifest: Manifest, split: str, *, root=None
                 ) -> list[tuple[MixtureRecipe, Waveform, list[Waveform]]]:
    """Render every recipe of a split, reading each source file once."""
    cache = _SourceCache(root, manifest.sample_rate_hz)
    out = []
    for recipe in manifest.recipes_for(split):
        mixture, references = render_recipe(recipe, manifest, cache=cache)
        out.append((recipe, mixture, references))
    return out


def write_rendered(manifest: Manifest, split: str, out_dir, *, root=None
                   ) -> list[dict]:
    """Render a split to WAV files: {id}.wav plus {id}_ref{k}.wav each.

    Returns one entry per mixture with the written paths.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for recipe, mixture, references in render_split(manifest, split, root=root):
        mixture_path = out_dir / f"{recipe.mixture_id}.wav"
        write_wav(mixture, mixture_path, encoding="float32")
        reference_paths = []
        for k, reference in enumerate(references):
            ref_path = out_dir / f"{recipe.mixture_id}_ref{k}.wav"
            write_wav(reference, ref_path, encoding="float32")
            reference_paths.append(str(ref_path))
        written.append({"mixture_id": recipe.mixture_id,
                        "mixture_path": str(mixture_path),
                        "reference_paths": reference_paths})
    return written


def training_examples(manifest: Manifest, split: str = "train", *, root=None
                      ) -> list[tuple[np.ndarray, list[np.ndarray]]]:
    """Rendered (mixture, references) arrays in the training loop's format."""
    return [(mixture.samples, [r.samples for r in references])
            for _, mixture, references in render_split(manifest, split, root=root)]
