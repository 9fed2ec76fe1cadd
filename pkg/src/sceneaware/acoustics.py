"""Sub-band reverberation time of impulse responses.

Octave-band filtering, Schroeder backward integration, T30/T20 regression,
a parametric impulse-response generator with known per-band decay, and the
labeled AIR catalog with its CSV label table.
"""
from __future__ import annotations

import csv
import functools
import hashlib
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import signal as sps

from .audio import AudioBuffer, AudioError, downmix_mono, read_audio, resample

log = logging.getLogger(__name__)

BAND_CENTERS = (125, 250, 500, 1000, 2000, 4000, 8000)
N_BANDS = len(BAND_CENTERS)
CATALOG_RATE = 16000
T60_COLUMNS = tuple(f"t60_{c}" for c in BAND_CENTERS)
CSV_HEADER = ("id", "source", "path", "sha256") + T60_COLUMNS + ("flags",)

#: 60 dB of energy decay expressed in units of the amplitude time constant.
DECAY_60DB = 3.0 * math.log(10.0)  # 6.9078
EDC_FLOOR_DB = -300.0
MAX_T60 = 30.0

FILTER_ORDER = 4
# T30 needs the -35 dB fit bottom to sit this far above the noise floor.
NOISE_HEADROOM_DB = 15.0
T30_RANGE_DB = 35.0
T20_RANGE_DB = 25.0
# Estimates shorter than this multiple of the band filter's own decay are not resolvable.
FILTER_RESOLUTION = 1.5
ENVELOPE_WINDOW = 0.010
NOISE_TAIL_FRACTION = 0.1
NOISE_CROSS_MARGIN_DB = 3.0

FLAG_TOPBAND = "topband_clamped"
FLAG_SEP = ";"
LABEL_DECIMALS = 4


class InsufficientDecayRange(ValueError):
    """The decay curve does not span enough dynamic range for a T60 fit."""


class CatalogError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class SubbandT60:
    """Seven octave-band reverberation times in seconds, low to high band."""

    values: np.ndarray
    flags: tuple[str, ...] = ()

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        if v.shape != (N_BANDS,):
            raise ValueError(f"expected {N_BANDS} T60 values, got {v.size}")
        if not np.all(np.isfinite(v)) or np.any(v <= 0) or np.any(v >= MAX_T60):
            raise ValueError(f"T60 values must be finite and in (0, {MAX_T60}) s: {v}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "flags", tuple(self.flags))

    band_centers = BAND_CENTERS

    def __iter__(self):
        return iter(self.values.tolist())

    def __eq__(self, other):
        if not isinstance(other, SubbandT60):
            return NotImplemented
        return np.array_equal(self.values, other.values) and self.flags == other.flags


@dataclass(frozen=True)
class Air:
    """One impulse response and its sub-band T60 label."""

    id: str
    source_dataset: str
    t60: SubbandT60
    audio: AudioBuffer | None = field(default=None, compare=False, repr=False)
    path: str | None = None
    sha256: str | None = None

    def load_audio(self) -> AudioBuffer:
        if self.audio is not None:
            return self.audio
        if self.path is None:
            raise CatalogError(f"AIR {self.id!r} has neither audio nor a path")
        return load_ir(self.path)


@dataclass
class IngestReport:
    n_files: int = 0
    n_labeled: int = 0
    n_cached: int = 0
    skipped: list = field(default_factory=list)

    def per_source(self, catalog: "AirCatalog") -> dict:
        counts: dict = {}
        for air in catalog:
            counts[air.source_dataset] = counts.get(air.source_dataset, 0) + 1
        return dict(sorted(counts.items()))


@dataclass(frozen=True, eq=False)
class AirCatalog:
    """Ordered, immutable collection of labeled AIRs with unique ids."""

    airs: tuple
    report: IngestReport | None = field(default=None, compare=False, repr=False)

    def __post_init__(self):
        airs = tuple(self.airs)
        if not airs:
            raise CatalogError("catalog must hold at least one AIR")
        ids = [a.id for a in airs]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise CatalogError(f"duplicate AIR ids: {dup[:5]}")
        object.__setattr__(self, "airs", airs)
        object.__setattr__(self, "_index", {a.id: k for k, a in enumerate(airs)})

    def __len__(self):
        return len(self.airs)

    def __iter__(self):
        return iter(self.airs)

    def __getitem__(self, k):
        return self.airs[k]

    @property
    def K(self) -> int:
        return len(self.airs)

    @property
    def ids(self) -> list[str]:
        return [a.id for a in self.airs]

    @property
    def labels(self) -> np.ndarray:
        """K x 7 matrix of T60 labels."""
        return np.vstack([a.t60.values for a in self.airs])

    def get(self, air_id: str) -> Air:
        return self.airs[self._index[air_id]]

    def index_of(self, air_id: str) -> int:
        return self._index[air_id]

    def subset(self, ids) -> "AirCatalog":
        return AirCatalog(tuple(self.get(i) for i in ids))


@dataclass(frozen=True, eq=False)
class DecayCurve:
    """Schroeder energy decay curve.

    ``levels`` are in dB relative to the integrated energy and never
    increase. ``dynamic_range_db`` is the usable range above the noise
    floor, which decides between a T30 and a T20 readout.
    """

    times: np.ndarray
    levels: np.ndarray
    band_center: float | None = None
    dynamic_range_db: float = 0.0


# --------------------------------------------------------------------------
# filtering and decay analysis


def band_edges(center: float, sample_rate: int) -> tuple[float, float | None]:
    """Octave edges ``(center/sqrt2, center*sqrt2)``; upper edge None when clamped."""
    lo, hi = center / math.sqrt(2.0), center * math.sqrt(2.0)
    nyq = sample_rate / 2.0
    if lo >= nyq:
        raise ValueError(f"{center} Hz band lies entirely above Nyquist ({nyq} Hz)")
    return lo, (hi if hi < nyq else None)


@functools.lru_cache(maxsize=64)
def _octave_sos(center: float, sample_rate: int, order: int) -> np.ndarray:
    lo, hi = band_edges(center, sample_rate)
    if hi is None:
        return sps.butter(order, lo, btype="highpass", fs=sample_rate, output="sos")
    return sps.butter(order, [lo, hi], btype="bandpass", fs=sample_rate, output="sos")


def octave_filter(buffer: AudioBuffer, center: float, order: int = FILTER_ORDER) -> AudioBuffer:
    """Zero-phase octave band-pass around ``center``.

    Butterworth sections run forward and backward over a zero-padded copy,
    so the result is exactly shift-equivariant and decay onsets are not
    delayed. Bands whose upper edge reaches Nyquist become a high-pass from
    the lower edge.
    """
    if not buffer.is_mono:
        raise AudioError("octave_filter needs mono input")
    sos = _octave_sos(float(center), buffer.sample_rate, order)
    lo, _ = band_edges(center, buffer.sample_rate)
    pad = int(math.ceil(40.0 * buffer.sample_rate / lo))
    x = np.concatenate([np.zeros(pad), buffer.samples, np.zeros(pad)])
    y = sps.sosfiltfilt(sos, x, padtype=None)
    return AudioBuffer(y[pad : pad + len(buffer)], buffer.sample_rate)


def schroeder_edc(
    band_signal: AudioBuffer, noise_power: float = 0.0, band_center: float | None = None
) -> DecayCurve:
    """Backward-integrated energy decay in dB.

    ``EDC(t) = 10 log10(sum_{tau>=t} x^2 / sum_tau x^2)``. A positive
    ``noise_power`` is subtracted from every squared sample first (noise
    compensation); the curve is then forced non-increasing. Energy that
    has run out is reported at ``EDC_FLOOR_DB``.
    """
    x = band_signal.samples
    if x.ndim != 1 or len(x) == 0:
        raise AudioError("schroeder_edc needs a non-empty mono signal")
    e = x * x
    if noise_power:
        e = e - noise_power
    tail = np.cumsum(e[::-1])[::-1]
    total = tail[0]
    if not total > 0.0:
        raise AudioError("signal has no energy to integrate")
    floor = 10.0 ** (EDC_FLOOR_DB / 10.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        levels = 10.0 * np.log10(np.maximum(tail / total, floor))
    levels = np.minimum.accumulate(levels)
    levels[0] = 0.0
    above = levels[levels > EDC_FLOOR_DB]
    depth = float(-above.min()) if above.size else 0.0
    times = np.arange(len(x)) / band_signal.sample_rate
    return DecayCurve(times, levels, band_center, depth)


def _fit_decay(curve: DecayCurve) -> tuple[float, str]:
    if curve.dynamic_range_db >= T30_RANGE_DB:
        bottom, method = -35.0, "t30"
    elif curve.dynamic_range_db >= T20_RANGE_DB:
        bottom, method = -25.0, "t20"
    else:
        raise InsufficientDecayRange(
            f"insufficient decay range: {curve.dynamic_range_db:.1f} dB usable, "
            f"need {T20_RANGE_DB:.0f} dB"
        )
    lv = curve.levels
    start = int(np.argmax(lv <= -5.0))
    below = lv <= bottom
    if lv[start] > -5.0 or not below.any():
        raise InsufficientDecayRange("insufficient decay range: curve never reaches the fit region")
    stop = int(np.argmax(below))
    if stop - start < 2:
        raise InsufficientDecayRange("insufficient decay range: fewer than 3 samples in fit region")
    slope, _ = np.polyfit(curve.times[start : stop + 1], lv[start : stop + 1], 1)
    if not slope < 0.0:
        raise InsufficientDecayRange("insufficient decay range: non-decaying fit")
    return -60.0 / slope, method


def t60_from_edc(curve: DecayCurve) -> float:
    """T60 from a least-squares line through the EDC.

    The fit spans -5 to -35 dB (T30) when the curve has at least 35 dB of
    usable range, else -5 to -25 dB (T20); either slope is extrapolated to
    60 dB.
    """
    return _fit_decay(curve)[0]


def band_decay_curve(band_signal: AudioBuffer, band_center: float | None = None) -> DecayCurve:
    """Noise-aware EDC of one band signal, starting at its energy peak.

    The noise floor is the mean power of the final tenth of the signal;
    integration stops where the smoothed envelope comes within 3 dB of it and
    the floor is subtracted before integrating.
    """
    x = band_signal.samples
    fs = band_signal.sample_rate
    n_tail = max(1, int(len(x) * NOISE_TAIL_FRACTION))
    noise = float(np.mean(x[-n_tail:] ** 2))
    y = x[int(np.argmax(x * x)) :]
    win = max(1, int(round(ENVELOPE_WINDOW * fs)))
    env = np.convolve(y * y, np.ones(win) / win, mode="valid") if len(y) > win else y * y
    peak = float(env.max())
    if peak <= 0.0:
        raise AudioError("band signal is silent")
    if noise <= 0.0:
        pnr = -EDC_FLOOR_DB
        stop = len(y)
    else:
        pnr = 10.0 * math.log10(peak / noise)
        crossing = np.flatnonzero(env <= noise * 10.0 ** (NOISE_CROSS_MARGIN_DB / 10.0))
        stop = int(crossing[0]) if crossing.size else len(y)
    if pnr - NOISE_HEADROOM_DB < T20_RANGE_DB or stop < 3:
        raise InsufficientDecayRange(
            f"insufficient decay range: peak-to-noise {pnr:.1f} dB at {band_center} Hz"
        )
    curve = schroeder_edc(AudioBuffer(y[:stop], fs), noise_power=noise, band_center=band_center)
    usable = min(pnr - NOISE_HEADROOM_DB, curve.dynamic_range_db)
    return DecayCurve(curve.times, curve.levels, band_center, usable)


@functools.lru_cache(maxsize=32)
def filter_decay_time(center: float, sample_rate: int = CATALOG_RATE) -> float:
    """T60 of the band filter's own impulse response (the resolution limit)."""
    d = np.zeros(sample_rate)
    d[0] = 1.0
    band = octave_filter(AudioBuffer(d, sample_rate), center)
    return t60_from_edc(band_decay_curve(band, center))


def _band_t60(ir: AudioBuffer, center: float) -> tuple[float, str]:
    band = octave_filter(ir, center)
    t60, method = _fit_decay(band_decay_curve(band, center))
    if t60 < FILTER_RESOLUTION * filter_decay_time(center, ir.sample_rate):
        raise InsufficientDecayRange(
            f"insufficient decay range: {t60:.3f} s at {center} Hz is within the filter's own decay"
        )
    if t60 >= MAX_T60:
        raise InsufficientDecayRange(f"implausible T60 {t60:.1f} s at {center} Hz")
    return t60, method


def subband_t60(air_audio: AudioBuffer) -> SubbandT60:
    """Seven octave-band T60s of a mono impulse response.

    A band whose decay cannot be read takes the value of the nearest band
    that can (lower band first on ties); only an IR with no readable band
    raises :class:`InsufficientDecayRange`.
    """
    if not air_audio.is_mono:
        raise AudioError("subband_t60 needs a mono impulse response")
    if air_audio.duration < 0.1:
        raise AudioError(f"impulse response too short ({air_audio.duration:.3f} s < 0.1 s)")
    peak = np.max(np.abs(air_audio.samples))
    if peak == 0.0:
        raise AudioError("impulse response is silent")
    ir = AudioBuffer(air_audio.samples / peak, air_audio.sample_rate)

    values: list = [None] * N_BANDS
    flags = []
    reasons = []
    for b, fc in enumerate(BAND_CENTERS):
        if band_edges(fc, ir.sample_rate)[1] is None:
            flags.append(FLAG_TOPBAND)
        try:
            values[b], method = _band_t60(ir, fc)
        except InsufficientDecayRange as exc:
            reasons.append(str(exc))
            continue
        if method == "t20":
            flags.append(f"t20_fallback_{fc}")
    valid = [b for b in range(N_BANDS) if values[b] is not None]
    if not valid:
        raise InsufficientDecayRange(
            "insufficient decay range in all bands (" + "; ".join(reasons[:2]) + ")"
        )
    for b in range(N_BANDS):
        if values[b] is None:
            src = min(valid, key=lambda v: (abs(v - b), v))
            values[b] = values[src]
            flags.append(f"substituted_{BAND_CENTERS[b]}")
    return SubbandT60(np.array(values), tuple(flags))


# --------------------------------------------------------------------------
# synthetic impulse responses

SYNTH_BANDWIDTH_OCT = 1.0 / 3.0
SYNTH_PROJECTIONS = 4


def _band_noise(rng, n, center, sample_rate, flatten):
    """Unit-RMS noise confined to a third of an octave around ``center``.

    With ``flatten`` the noise is alternately band-limited and pushed to a
    constant Hilbert envelope, which removes most of the random envelope
    fluctuation that otherwise dominates EDC variance in narrow bands.
    """
    f = np.fft.rfftfreq(n, 1.0 / sample_rate)
    half = 2.0 ** (SYNTH_BANDWIDTH_OCT / 2.0)
    outside = (f < center / half) | (f > min(center * half, sample_rate / 2.0))

    def limit(z):
        Z = np.fft.rfft(z)
        Z[outside] = 0.0
        return np.fft.irfft(Z, n)

    z = limit(rng.standard_normal(n))
    if flatten:
        for _ in range(SYNTH_PROJECTIONS):
            a = sps.hilbert(z)
            z = limit(np.real(a / np.maximum(np.abs(a), 1e-300)))
    return z / np.sqrt(np.mean(z * z))


def synth_air(
    per_band_t60,
    duration: float,
    noise_floor_db: float | None = -90.0,
    seed: int = 0,
    sample_rate: int = CATALOG_RATE,
    air_id: str | None = None,
) -> Air:
    """Parametric impulse response with known per-band T60.

    Each band contributes third-octave noise under the envelope
    ``exp(-6.9078 t / T60_band)``; a direct-path impulse sits at t = 0.
    ``noise_floor_db`` adds, per band, stationary band noise at that level
    relative to the band's initial decay level (None disables it). The
    requested T60s are stored as the label.
    """
    target = SubbandT60(per_band_t60)
    if duration < 1.5 * float(target.values.max()):
        raise ValueError(
            f"duration {duration} s is shorter than 1.5 x max T60 ({target.values.max():.3f} s)"
        )
    rng = np.random.default_rng(seed)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    h = np.zeros(n)
    for fc, t60 in zip(BAND_CENTERS, target.values):
        h += _band_noise(rng, n, fc, sample_rate, True) * np.exp(-DECAY_60DB * t / t60)
        if noise_floor_db is not None:
            h += 10.0 ** (noise_floor_db / 20.0) * _band_noise(rng, n, fc, sample_rate, False)
    h[0] = abs(h[0]) + np.max(np.abs(h))
    h *= 0.5 / np.max(np.abs(h))
    return Air(
        id=air_id if air_id is not None else f"synth_{seed}",
        source_dataset="synth",
        t60=target,
        audio=AudioBuffer(h, sample_rate),
    )


# --------------------------------------------------------------------------
# catalog


def load_ir(path, downmix: str = "first") -> AudioBuffer:
    """Read an impulse response as mono at the catalog rate."""
    buf = read_audio(path, keep_channels=True)
    return resample(downmix_mono(buf, downmix), CATALOG_RATE)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _label_file(path: str):
    try:
        return subband_t60(load_ir(path)), None
    except (AudioError, InsufficientDecayRange, ValueError, OSError) as exc:
        return None, f"{type(exc).__name__}: {exc}"


def _format_row(air: Air) -> list[str]:
    return (
        [air.id, air.source_dataset, air.path or "", air.sha256 or ""]
        + [f"{v:.{LABEL_DECIMALS}f}" for v in air.t60.values]
        + [FLAG_SEP.join(air.t60.flags)]
    )


def write_catalog_csv(catalog: AirCatalog, path, relative_to=None) -> None:
    """Write the label table, rows sorted by id."""
    path = Path(path)
    base = Path(relative_to) if relative_to is not None else path.parent
    rows = []
    for air in sorted(catalog, key=lambda a: a.id):
        rel = None
        if air.path is not None:
            rel = Path(os.path.relpath(os.path.abspath(air.path), os.path.abspath(base))).as_posix()
        rows.append(_format_row(Air(air.id, air.source_dataset, air.t60, None, rel, air.sha256)))
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        w.writerows(rows)


def _parse_flags(text: str) -> tuple[str, ...]:
    return tuple(t for t in text.split(FLAG_SEP) if t)


def load_catalog(path) -> AirCatalog:
    """Read a label CSV written by :func:`build_catalog`.

    Relative ``path`` entries are resolved against the CSV's directory.
    """
    path = Path(path)
    airs = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        missing = [c for c in CSV_HEADER if c not in (reader.fieldnames or [])]
        if missing:
            raise CatalogError(f"{path}: missing columns {missing}")
        for row in reader:
            t60 = SubbandT60([float(row[c]) for c in T60_COLUMNS], _parse_flags(row["flags"]))
            p = row["path"] or None
            if p is not None and not os.path.isabs(p):
                p = str(path.parent / p)
            airs.append(Air(row["id"], row["source"], t60, None, p, row["sha256"] or None))
    return AirCatalog(tuple(airs))


def _air_identity(root: Path, f: Path) -> tuple[str, str]:
    rel = f.relative_to(root)
    air_id = rel.with_suffix("").as_posix()
    source = rel.parts[0] if len(rel.parts) > 1 else root.name
    return air_id, source


def find_wavs(root) -> list[Path]:
    root = Path(root)
    return sorted(p for p in root.rglob("*") if p.is_file() and p.suffix.lower() == ".wav")


def build_catalog(root, manifest_out, jobs: int = 1) -> AirCatalog:
    """Label every WAV under ``root`` and persist the label CSV.

    Files whose content hash already appears in an existing ``manifest_out``
    reuse the stored label. Unreadable or unlabelable files are skipped and
    logged. The returned catalog is sorted by id and carries an
    :class:`IngestReport`.
    """
    root = Path(root)
    manifest_out = Path(manifest_out)
    files = find_wavs(root)
    if not files:
        raise CatalogError(f"zero successfully labeled files: no WAV files under {root}")

    cache = {}
    if manifest_out.exists():
        try:
            for air in load_catalog(manifest_out):
                if air.sha256:
                    cache[air.sha256] = air.t60
        except (CatalogError, ValueError, KeyError) as exc:
            log.warning("ignoring unreadable label cache %s: %s", manifest_out, exc)

    report = IngestReport(n_files=len(files))
    hashes = {}
    todo = []
    for f in files:
        try:
            hashes[f] = _sha256(f)
        except OSError as exc:
            report.skipped.append((str(f), f"OSError: {exc}"))
            log.warning("skipping %s: %s", f, exc)
            continue
        if hashes[f] not in cache:
            todo.append(f)

    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = dict(zip(todo, pool.map(_label_file, [str(f) for f in todo])))
    else:
        results = {f: _label_file(str(f)) for f in todo}

    airs = []
    for f in files:
        if f not in hashes:
            continue
        sha = hashes[f]
        if sha in cache:
            t60 = cache[sha]
            report.n_cached += 1
        else:
            t60, reason = results[f]
            if t60 is None:
                report.skipped.append((str(f), reason))
                log.warning("skipping %s: %s", f, reason)
                continue
            # keep exactly what the CSV stores so cached reruns match
            t60 = SubbandT60(np.round(t60.values, LABEL_DECIMALS), t60.flags)
        air_id, source = _air_identity(root, f)
        airs.append(Air(air_id, source, t60, None, str(f), sha))

    report.n_labeled = len(airs)
    if not airs:
        raise CatalogError("zero successfully labeled files")
    airs.sort(key=lambda a: a.id)
    catalog = AirCatalog(tuple(airs), report=report)
    write_catalog_csv(catalog, manifest_out)
    log.info(
        "catalog: %d labeled, %d cached, %d skipped of %d files",
        report.n_labeled, report.n_cached, len(report.skipped), report.n_files,
    )
    return catalog
