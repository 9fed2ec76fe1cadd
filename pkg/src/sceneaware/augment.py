"""Reverberated training data from clean speech, selected AIRs and noise.

Long recordings are cut at long pauses so each segment is reverberated on
its own and no reverberant tail spills into the next utterance. Every random
choice is derived from the master seed and the segment's identity, and is
written to a manifest from which all outputs can be regenerated bit-exactly.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .acoustics import CATALOG_RATE, Air, find_wavs, load_ir
from .audio import (
    NO_NOISE,
    AudioBuffer,
    AudioError,
    convolve,
    fit_noise,
    mix_at_snr,
    write_audio,
)

__all__ = [
    "AugmentationManifest",
    "Segment",
    "SegmentationConfig",
    "augment_utterance",
    "build_training_set",
    "derive_seed",
    "replay_manifest",
    "split_on_silence",
]

log = logging.getLogger(__name__)

DEFAULT_SNR_RANGE = (10.0, 25.0)
PEAK_TARGET = 0.99
MANIFEST_NAME = "manifest.json"


@dataclass(frozen=True)
class SegmentationConfig:
    min_silence: float = 3.0
    frame: float = 0.025
    hop: float = 0.010
    threshold_db: float = -40.0

    def __post_init__(self):
        if not (self.min_silence > self.frame > 0):
            raise ValueError("need min_silence > frame > 0")
        if not (0 < self.hop <= self.frame):
            raise ValueError("need 0 < hop <= frame")


@dataclass(frozen=True)
class Segment:
    start: int
    stop: int
    silent: bool = False

    def __len__(self):
        return self.stop - self.start


def derive_seed(master_seed: int, *parts) -> int:
    """Stable 63-bit sub-seed from the master seed and identifying parts."""
    text = json.dumps([int(master_seed), *[str(p) for p in parts]])
    return int.from_bytes(hashlib.sha256(text.encode()).digest()[:8], "big") >> 1


def _frame_levels(x: np.ndarray, flen: int, hop: int) -> np.ndarray:
    n_frames = 1 + (len(x) - flen) // hop
    frames = np.lib.stride_tricks.sliding_window_view(x, flen)[::hop][:n_frames]
    return np.sqrt(np.mean(frames * frames, axis=1))


def split_on_silence(buffer: AudioBuffer, config: SegmentationConfig = SegmentationConfig()) -> list[Segment]:
    """Cut a recording wherever a silent run lasts at least ``min_silence``.

    Frames quieter than ``threshold_db`` relative to the loudest frame are
    silent. A qualifying run starts a new segment at its first frame. The
    returned segments tile ``[0, len(buffer))``; segments with no voiced
    frame are marked ``silent``.
    """
    fs = buffer.sample_rate
    flen = int(round(config.frame * fs))
    hop = int(round(config.hop * fs))
    x = buffer.samples
    if len(x) < flen:
        raise AudioError(f"buffer shorter than one frame ({len(x)} < {flen} samples)")
    levels = _frame_levels(x, flen, hop)
    peak = levels.max()
    if peak == 0.0:
        return [Segment(0, len(x), True)]
    with np.errstate(divide="ignore"):
        silent = 20.0 * np.log10(levels / peak) < config.threshold_db

    cuts = []
    k = 0
    n_frames = len(silent)
    while k < n_frames:
        if not silent[k]:
            k += 1
            continue
        run_end = k
        while run_end + 1 < n_frames and silent[run_end + 1]:
            run_end += 1
        span = (run_end - k) * hop + flen
        if span >= config.min_silence * fs - 0.5 and k * hop > 0:
            cuts.append(k * hop)
        k = run_end + 1

    bounds = [0, *cuts, len(x)]
    segments = []
    for a, b in zip(bounds[:-1], bounds[1:]):
        first = -(-a // hop)
        last = min((b - flen) // hop, n_frames - 1)
        inside = silent[first : last + 1]
        segments.append(Segment(a, b, bool(inside.size) and bool(np.all(inside))))
    return segments


def _render(speech, air_audio, noise, snr_db, noise_offset, peak_normalize):
    wet = convolve(speech, air_audio)
    out = mix_at_snr(wet, noise, snr_db, offset=noise_offset)
    gain = 1.0
    if peak_normalize:
        peak = float(np.max(np.abs(out.samples)))
        if peak > 0:
            gain = PEAK_TARGET / peak
            out = AudioBuffer(out.samples * gain, out.sample_rate)
    return out, gain


def augment_utterance(
    speech: AudioBuffer,
    air: Air | AudioBuffer,
    noise: AudioBuffer | None = None,
    snr_db: float = NO_NOISE,
    seed: int = 0,
    peak_normalize: bool = False,
) -> AudioBuffer:
    """Reverberate ``speech`` with ``air`` and add ``noise`` at ``snr_db``.

    The SNR is measured against the reverberant speech. Output length is
    ``len(speech) + len(air) - 1``.
    """
    air_audio = air.load_audio() if isinstance(air, Air) else air
    if speech.sample_rate != air_audio.sample_rate:
        raise AudioError(
            f"sample rate mismatch: speech {speech.sample_rate} Hz, AIR {air_audio.sample_rate} Hz"
        )
    if not np.any(speech.samples):
        raise AudioError("speech is silent")
    offset = None
    if noise is not None and snr_db != NO_NOISE:
        _, offset = fit_noise(noise, len(speech) + len(air_audio) - 1, np.random.default_rng(seed))
    return _render(speech, air_audio, noise, snr_db, offset, peak_normalize)[0]


@dataclass
class AugmentationManifest:
    """Record of a training-set build; see :func:`replay_manifest`."""

    entries: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    dropped: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def summary(self) -> dict:
        return {
            "recordings": len({e["clean_path"] for e in self.entries}
                              | {d["clean_path"] for d in self.dropped}),
            "segments": len(self.entries),
            "dropped_silent": len(self.dropped),
            "failures": len(self.failures),
        }

    def to_dict(self) -> dict:
        return {
            "global": self.meta,
            "summary": self.summary,
            "entries": self.entries,
            "dropped": self.dropped,
            "failures": self.failures,
        }

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "AugmentationManifest":
        d = json.loads(Path(path).read_text())
        return cls(d["entries"], d["global"], d.get("dropped", []), d.get("failures", []))


def _rel(path, base) -> str:
    return Path(os.path.relpath(os.path.abspath(path), os.path.abspath(base))).as_posix()


def _load_speech(path) -> AudioBuffer:
    return load_ir(path)  # same normalization: first channel, 16 kHz


class _NoiseBank:
    def __init__(self, files):
        self.files = list(files)
        self._cache = {}

    def __len__(self):
        return len(self.files)

    def get(self, k) -> AudioBuffer:
        if k not in self._cache:
            self._cache[k] = load_ir(self.files[k])
        return self._cache[k]


def _plan_recording(job):
    """Segment one recording and render its segments. Runs in a worker."""
    (clean_file, clean_rel, airs, noise_files, noise_rels, out_root, master_seed,
     config, snr_range, bit_depth, peak_normalize) = job
    entries, dropped = [], []
    speech = _load_speech(clean_file)
    segments = split_on_silence(speech, config)
    noises = _NoiseBank(noise_files)
    air_audio = {}
    stem = Path(clean_rel).stem
    rel_dir = Path(clean_rel).parent
    for idx, seg in enumerate(segments):
        rng_range = [seg.start, seg.stop]
        if seg.silent:
            dropped.append({"clean_path": clean_rel, "segment_index": idx,
                            "segment_range": rng_range, "reason": "silent"})
            continue
        seg_seed = derive_seed(master_seed, clean_rel, idx)
        rng = np.random.default_rng(seg_seed)
        air = airs[int(rng.integers(len(airs)))]
        if air.id not in air_audio:
            air_audio[air.id] = air.load_audio()
        h = air_audio[air.id]
        piece = AudioBuffer(speech.samples[seg.start : seg.stop], speech.sample_rate)
        noise, noise_rel, offset, snr = None, None, None, None
        if noise_files and snr_range is not None:
            k = int(rng.integers(len(noise_files)))
            noise, noise_rel = noises.get(k), noise_rels[k]
            snr = float(rng.uniform(*snr_range))
            _, offset = fit_noise(noise, len(piece) + len(h) - 1, rng)
        out, gain = _render(piece, h, noise, NO_NOISE if snr is None else snr, offset, peak_normalize)
        out_rel = (rel_dir / f"{stem}_seg{idx}.wav").as_posix()
        out_path = Path(out_root) / out_rel
        out_path.parent.mkdir(parents=True, exist_ok=True)
        clipped = write_audio(out, out_path, bit_depth)
        entries.append({
            "clean_path": clean_rel,
            "segment_index": idx,
            "segment_range": rng_range,
            "air_id": air.id,
            "noise_path": noise_rel,
            "noise_offset": offset,
            "snr_db": snr,
            "peak_gain": gain,
            "output_path": out_rel,
            "clipped_samples": clipped,
            "seed": seg_seed,
        })
    return entries, dropped


def build_training_set(
    clean_root,
    selection,
    noise_root,
    out_root,
    master_seed: int,
    config: SegmentationConfig = SegmentationConfig(),
    snr_range=DEFAULT_SNR_RANGE,
    bit_depth: str = "float32",
    peak_normalize: bool = False,
    selection_manifest_ref=None,
    jobs: int = 1,
) -> AugmentationManifest:
    """Segment, reverberate and mix every clean recording under ``clean_root``.

    Each voiced segment draws an AIR uniformly from ``selection``, a noise
    file, an SNR from ``snr_range`` and a noise offset, all from a seed
    hashed from ``(master_seed, clean path, segment index)``. ``noise_root``
    of None or ``snr_range`` of None disables noise. Outputs mirror the
    input layout under ``out_root`` as ``<stem>_seg<idx>.wav``; the manifest
    is written to ``out_root/manifest.json``. Recordings that fail are
    logged and listed in the manifest, not fatal.
    """
    airs = list(selection)
    if not airs:
        raise ValueError("selection is empty")
    clean_root, out_root = Path(clean_root), Path(out_root)
    clean_files = find_wavs(clean_root) if clean_root.is_dir() else []
    if not clean_files:
        raise ValueError(f"no clean recordings under {clean_root}")
    noise_files = []
    if noise_root is not None and snr_range is not None:
        noise_files = find_wavs(noise_root)
        if not noise_files:
            raise ValueError(f"no noise recordings under {noise_root}")
    out_root.mkdir(parents=True, exist_ok=True)
    noise_rels = [f.relative_to(noise_root).as_posix() for f in noise_files]

    jobs_list = [
        (str(f), f.relative_to(clean_root).as_posix(), airs, [str(n) for n in noise_files],
         noise_rels, str(out_root), master_seed, config,
         None if snr_range is None else tuple(snr_range), bit_depth, peak_normalize)
        for f in clean_files
    ]
    manifest = AugmentationManifest()

    def collect(job, result):
        if isinstance(result, Exception):
            manifest.failures.append({"clean_path": job[1], "error": f"{type(result).__name__}: {result}"})
            log.warning("skipping %s: %s", job[0], result)
            return
        entries, dropped = result
        manifest.entries.extend(entries)
        manifest.dropped.extend(dropped)

    if jobs > 1 and len(jobs_list) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = [pool.submit(_plan_recording, j) for j in jobs_list]
            for job, fut in zip(jobs_list, futures):
                try:
                    collect(job, fut.result())
                except (AudioError, ValueError, OSError) as exc:
                    collect(job, exc)
    else:
        for job in jobs_list:
            try:
                collect(job, _plan_recording(job))
            except (AudioError, ValueError, OSError) as exc:
                collect(job, exc)

    manifest.entries.sort(key=lambda e: (e["clean_path"], e["segment_index"]))
    manifest.meta = {
        "master_seed": int(master_seed),
        "selection_manifest_ref": (
            None if selection_manifest_ref is None else _rel(selection_manifest_ref, out_root)
        ),
        "config": {
            "segmentation": asdict(config),
            "snr_range": None if snr_range is None or not noise_files else list(snr_range),
            "bit_depth": bit_depth,
            "peak_normalize": bool(peak_normalize),
            "sample_rate": CATALOG_RATE,
            "clean_root": _rel(clean_root, out_root),
            "noise_root": None if not noise_files else _rel(noise_root, out_root),
        },
        "airs": {a.id: (None if a.path is None else _rel(a.path, out_root)) for a in airs},
    }
    manifest.save(out_root / MANIFEST_NAME)
    s = manifest.summary
    log.info("augment: %d recordings, %d segments, %d dropped silent, %d failures",
             s["recordings"], s["segments"], s["dropped_silent"], s["failures"])
    return manifest


def replay_manifest(manifest_path, out_root=None) -> list[Path]:
    """Regenerate every output listed in a manifest.

    Paths stored in the manifest are relative to the manifest's directory.
    Outputs go to ``out_root`` (default: that same directory).
    """
    manifest_path = Path(manifest_path)
    base = manifest_path.parent
    m = AugmentationManifest.load(manifest_path)
    cfg = m.meta["config"]
    out_root = Path(out_root) if out_root is not None else base
    clean_root = base / cfg["clean_root"]
    noise_root = base / cfg["noise_root"] if cfg.get("noise_root") else None
    air_paths = m.meta["airs"]
    speech_cache, air_cache, noise_cache = {}, {}, {}
    written = []
    for e in m.entries:
        if e["clean_path"] not in speech_cache:
            speech_cache = {e["clean_path"]: _load_speech(clean_root / e["clean_path"])}
        speech = speech_cache[e["clean_path"]]
        if e["air_id"] not in air_cache:
            p = air_paths.get(e["air_id"])
            if p is None:
                raise ValueError(f"manifest has no path for AIR {e['air_id']!r}")
            air_cache[e["air_id"]] = load_ir(base / p)
        noise = None
        if e["noise_path"] is not None:
            if e["noise_path"] not in noise_cache:
                noise_cache[e["noise_path"]] = load_ir(noise_root / e["noise_path"])
            noise = noise_cache[e["noise_path"]]
        a, b = e["segment_range"]
        piece = AudioBuffer(speech.samples[a:b], speech.sample_rate)
        snr = NO_NOISE if e["snr_db"] is None else e["snr_db"]
        out, _ = _render(piece, air_cache[e["air_id"]], noise, snr, e["noise_offset"], cfg["peak_normalize"])
        out_path = out_root / e["output_path"]
        out_path.parent.mkdir(parents=True, exist_ok=True)
        write_audio(out, out_path, cfg["bit_depth"])
        written.append(out_path)
    return written
