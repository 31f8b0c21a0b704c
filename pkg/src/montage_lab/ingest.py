"""EDF ingestion, label files, and the deterministic synthetic-EEG generator.

The EDF reader/writer handles classic EDF only: a 256-byte fixed header,
one 256-byte block of field-major signal headers, and little-endian 16-bit
two's-complement samples grouped by data record.  Annotation signals
("EDF Annotations") are dropped on read.  All parsing is pure; a parsed
:class:`Recording` is immutable and safe to share across threads.
"""

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .errors import (
    DegenerateScaling,
    InconsistentRecordCount,
    InvalidConfig,
    MalformedHeader,
    NegativeSpanError,
    OverlapError,
    RateMismatch,
    UnknownClassError,
)

EDF_HEADER_BYTES = 256
EDF_SIGNAL_HEADER_BYTES = 256
ANNOTATION_LABEL = "EDF Annotations"

# Standard 10-20 electrode order used by the synthetic generator.
TEN_TWENTY_LABELS = (
    "FP1", "FP2", "F3", "F4", "C3", "C4", "P3", "P4", "O1", "O2",
    "F7", "F8", "T3", "T4", "T5", "T6", "FZ", "CZ", "PZ", "A1", "A2",
)


class ReferenceScheme(Enum):
    LE = "LE"
    AR = "AR"
    CV = "CV"
    UNKNOWN = "UNKNOWN"


class EventClass(Enum):
    SEIZ = "SEIZ"
    BCKG = "BCKG"


def _freeze(arr):
    arr = np.array(arr, dtype=np.float64)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True)
class ChannelSignal:
    """One channel of a recording, in physical units (microvolts)."""

    label: str
    samples: np.ndarray
    physical_range: tuple[float, float] = (-1000.0, 1000.0)
    digital_range: tuple[int, int] = (-32768, 32767)

    def __post_init__(self):
        object.__setattr__(self, "samples", _freeze(self.samples))
        if self.digital_range[0] >= self.digital_range[1]:
            raise DegenerateScaling(
                f"channel {self.label!r}: digital range "
                f"{self.digital_range} is not increasing")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError(f"channel {self.label!r} has non-finite samples")

    @property
    def num_samples(self):
        return self.samples.shape[0]


@dataclass(frozen=True)
class Recording:
    """A multichannel sampled signal with per-channel labels.

    All channels share one length and sampling rate; labels are unique.
    """

    id: str
    sample_rate_hz: float
    channels: tuple[ChannelSignal, ...]
    reference_scheme: ReferenceScheme = ReferenceScheme.UNKNOWN
    duration_s: float = 0.0
    patient_id: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "channels", tuple(self.channels))
        if self.sample_rate_hz <= 0:
            raise InvalidConfig(f"sample rate {self.sample_rate_hz} must be positive")
        if not self.channels:
            raise InvalidConfig("recording has no channels")
        lengths = {c.num_samples for c in self.channels}
        if len(lengths) != 1:
            raise InvalidConfig(f"channels disagree in length: {sorted(lengths)}")
        labels = [c.label for c in self.channels]
        if len(set(labels)) != len(labels):
            raise InvalidConfig("channel labels are not unique")
        n = self.channels[0].num_samples
        if self.duration_s == 0.0:
            object.__setattr__(self, "duration_s", n / self.sample_rate_hz)
        elif abs(self.duration_s - n / self.sample_rate_hz) > 1.0 / self.sample_rate_hz:
            raise InvalidConfig(
                f"duration {self.duration_s}s disagrees with "
                f"{n} samples at {self.sample_rate_hz} Hz")

    @property
    def num_samples(self):
        return self.channels[0].num_samples

    @property
    def labels(self):
        return tuple(c.label for c in self.channels)

    def data(self):
        """Channel-major (n_channels, n_samples) sample matrix."""
        return np.stack([c.samples for c in self.channels])


@dataclass(frozen=True)
class LabelEvent:
    start_s: float
    stop_s: float
    event_class: EventClass


@dataclass(frozen=True)
class LabelSet:
    """Non-overlapping, time-sorted class annotations for one recording."""

    recording_id: str
    events: tuple[LabelEvent, ...] = field(default_factory=tuple)

    def __post_init__(self):
        object.__setattr__(self, "events", tuple(self.events))

    def class_at(self, start_s, stop_s):
        """Majority-overlap class of the span [start_s, stop_s), or None."""
        best_class, best_overlap = None, 0.0
        for ev in self.events:
            overlap = min(stop_s, ev.stop_s) - max(start_s, ev.start_s)
            if overlap > best_overlap:
                best_overlap, best_class = overlap, ev.event_class
        if best_overlap * 2 < (stop_s - start_s):
            return None
        return best_class


# --- EDF parsing ------------------------------------------------------------

def _ascii(raw, what):
    try:
        return raw.decode("ascii").strip()
    except UnicodeDecodeError as exc:
        raise MalformedHeader(f"{what} is not ASCII: {raw!r}") from exc


def _ascii_int(raw, what):
    text = _ascii(raw, what)
    try:
        return int(text)
    except ValueError as exc:
        raise MalformedHeader(f"{what} is not an integer: {text!r}") from exc


def _ascii_float(raw, what):
    text = _ascii(raw, what)
    try:
        return float(text)
    except ValueError as exc:
        raise MalformedHeader(f"{what} is not a number: {text!r}") from exc


def _infer_reference_scheme(raw_labels):
    schemes = set()
    for lab in raw_labels:
        u = lab.upper()
        if u.endswith("-LE"):
            schemes.add(ReferenceScheme.LE)
        elif u.endswith("-REF") or u.endswith("-AR"):
            schemes.add(ReferenceScheme.AR)
        else:
            schemes.add(ReferenceScheme.UNKNOWN)
    if len(schemes) == 1:
        return schemes.pop()
    return ReferenceScheme.UNKNOWN


def parse_edf(data: bytes) -> Recording:
    """Parse classic EDF bytes into a :class:`Recording`.

    Physical values are computed as
    ``phys_min + (d - dig_min) * (phys_max - phys_min) / (dig_max - dig_min)``.
    Annotation signals are dropped; the reference scheme is inferred from
    channel-label suffixes ("-LE" -> LE, "-REF"/"-AR" -> AR).
    """
    if len(data) < EDF_HEADER_BYTES:
        raise MalformedHeader(f"file is {len(data)} bytes; EDF header needs 256")
    if data[0:8] != b"0       ":
        raise MalformedHeader(f"version field {data[0:8]!r} != ASCII '0' padded to 8 bytes")

    patient = _ascii(data[8:88], "patient field")
    recording_info = _ascii(data[88:168], "recording field")
    header_bytes = _ascii_int(data[184:192], "header byte count")
    num_records = _ascii_int(data[236:244], "record count")
    record_duration = _ascii_float(data[244:252], "record duration")
    num_signals = _ascii_int(data[252:256], "signal count")

    if num_signals <= 0:
        raise MalformedHeader(f"signal count {num_signals} must be positive")
    if num_records < 0:
        raise MalformedHeader(f"record count {num_records} is negative")
    if record_duration <= 0:
        raise MalformedHeader(f"record duration {record_duration} must be positive")

    expected_header = EDF_HEADER_BYTES + num_signals * EDF_SIGNAL_HEADER_BYTES
    if header_bytes != expected_header:
        raise MalformedHeader(
            f"header byte count {header_bytes} != {expected_header} "
            f"for {num_signals} signals")
    if len(data) < expected_header:
        raise MalformedHeader("file truncated inside the signal headers")

    def signal_field(offset, width, ns=num_signals):
        base = EDF_HEADER_BYTES + offset * ns
        return [data[base + i * width: base + (i + 1) * width] for i in range(ns)]

    # Field-major signal header layout: label(16) transducer(80) dim(8)
    # phys_min(8) phys_max(8) dig_min(8) dig_max(8) prefilter(80)
    # samples_per_record(8) reserved(32).
    labels_raw = [_ascii(b, "signal label") for b in signal_field(0, 16)]
    phys_min = [_ascii_float(b, "physical minimum")
                for b in signal_field(16 + 80 + 8, 8)]
    phys_max = [_ascii_float(b, "physical maximum")
                for b in signal_field(16 + 80 + 16, 8)]
    dig_min = [_ascii_int(b, "digital minimum")
               for b in signal_field(16 + 80 + 24, 8)]
    dig_max = [_ascii_int(b, "digital maximum")
               for b in signal_field(16 + 80 + 32, 8)]
    samples_per_record = [_ascii_int(b, "samples per record")
                          for b in signal_field(16 + 80 + 40 + 80, 8)]

    record_size = 2 * sum(samples_per_record)
    expected_size = expected_header + num_records * record_size
    if len(data) != expected_size:
        raise InconsistentRecordCount(
            f"file is {len(data)} bytes but header implies {expected_size} "
            f"({num_records} records of {record_size} bytes)")

    raw = np.frombuffer(data, dtype="<i2", offset=expected_header)
    raw = raw.reshape(num_records, record_size // 2)

    keep = [i for i, lab in enumerate(labels_raw) if lab != ANNOTATION_LABEL]
    if not keep:
        raise MalformedHeader("recording contains only annotation signals")

    rates = {samples_per_record[i] / record_duration for i in keep}
    if len(rates) != 1:
        raise RateMismatch(f"signals disagree in sampling rate: {sorted(rates)}")
    sample_rate = rates.pop()

    offsets = np.concatenate(([0], np.cumsum(samples_per_record)))
    channels = []
    for i in keep:
        if dig_min[i] == dig_max[i]:
            raise DegenerateScaling(
                f"signal {labels_raw[i]!r}: digital min == max == {dig_min[i]}")
        digital = raw[:, offsets[i]:offsets[i + 1]].reshape(-1).astype(np.float64)
        scale_num = phys_max[i] - phys_min[i]
        scale_den = dig_max[i] - dig_min[i]
        physical = phys_min[i] + (digital - dig_min[i]) * scale_num / scale_den
        channels.append(ChannelSignal(
            label=labels_raw[i],
            samples=physical,
            physical_range=(phys_min[i], phys_max[i]),
            digital_range=(dig_min[i], dig_max[i]),
        ))

    return Recording(
        id=recording_info or patient or "recording",
        sample_rate_hz=sample_rate,
        channels=tuple(channels),
        reference_scheme=_infer_reference_scheme([labels_raw[i] for i in keep]),
        duration_s=num_records * record_duration,
        patient_id=patient or None,
    )


def _fixed(text, width, what):
    encoded = str(text).encode("ascii")
    if len(encoded) > width:
        raise InvalidConfig(f"{what} {text!r} does not fit in {width} bytes")
    return encoded.ljust(width)


def _format_number(value, width, what, exact=True):
    """ASCII-format a number into a fixed-width EDF field.

    With exact=True the text must parse back to the same float (needed for
    the physical/digital ranges so round-trips stay sample-exact).
    """
    best = None
    for precision in range(1, 18):
        text = f"{float(value):.{precision}g}"
        if len(text) > width:
            break
        best = text
        if float(text) == float(value):
            return _fixed(text, width, what)
    if best is None:
        raise InvalidConfig(f"{what} {value!r} does not fit in {width} bytes")
    if exact:
        raise InvalidConfig(
            f"{what} {value!r} has no exact {width}-byte representation")
    return _fixed(best, width, what)


def write_edf(rec: Recording, num_records: int = 1) -> bytes:
    """Serialize a recording to classic EDF bytes.

    Samples are quantized back to the digital grid of each channel's
    declared ranges, so parse -> write -> parse is sample-exact for data
    that originated from an EDF file.
    """
    if num_records < 1:
        raise InvalidConfig(f"num_records {num_records} must be >= 1")
    n = rec.num_samples
    if n % num_records != 0:
        raise InvalidConfig(
            f"{n} samples cannot be split into {num_records} equal records")
    per_record = n // num_records
    record_duration = per_record / rec.sample_rate_hz
    ns = len(rec.channels)

    header = b"".join([
        b"0       ",
        _fixed(rec.patient_id or "", 80, "patient field"),
        _fixed(rec.id, 80, "recording field"),
        _fixed("01.01.00", 8, "start date"),
        _fixed("00.00.00", 8, "start time"),
        _fixed(str(EDF_HEADER_BYTES + ns * EDF_SIGNAL_HEADER_BYTES), 8, "header bytes"),
        _fixed("", 44, "reserved"),
        _fixed(str(num_records), 8, "record count"),
        _format_number(record_duration, 8, "record duration", exact=False),
        _fixed(str(ns), 4, "signal count"),
    ])

    chans = rec.channels
    fields = b"".join([
        b"".join(_fixed(c.label, 16, "signal label") for c in chans),
        b"".join(_fixed("", 80, "transducer") for _ in chans),
        b"".join(_fixed("uV", 8, "dimension") for _ in chans),
        b"".join(_format_number(c.physical_range[0], 8, "physical minimum")
                 for c in chans),
        b"".join(_format_number(c.physical_range[1], 8, "physical maximum")
                 for c in chans),
        b"".join(_fixed(str(c.digital_range[0]), 8, "digital minimum") for c in chans),
        b"".join(_fixed(str(c.digital_range[1]), 8, "digital maximum") for c in chans),
        b"".join(_fixed("", 80, "prefilter") for _ in chans),
        b"".join(_fixed(str(per_record), 8, "samples per record") for _ in chans),
        b"".join(_fixed("", 32, "reserved") for _ in chans),
    ])

    digital_rows = []
    for c in rec.channels:
        pmin, pmax = c.physical_range
        dmin, dmax = c.digital_range
        if pmax == pmin:
            raise DegenerateScaling(
                f"channel {c.label!r}: physical range {c.physical_range} is flat")
        d = np.rint((c.samples - pmin) * (dmax - dmin) / (pmax - pmin)) + dmin
        digital_rows.append(np.clip(d, dmin, dmax).astype("<i2").reshape(num_records, per_record))

    records = np.concatenate(digital_rows, axis=1)
    return header + fields + records.tobytes()


# --- label files ------------------------------------------------------------

def parse_labels(text: str, recording_id: str = "") -> LabelSet:
    """Parse a "start stop CLASS" label file; '#' starts a comment line."""
    events = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        parts = stripped.split()
        if len(parts) != 3:
            raise UnknownClassError(
                f"line {lineno}: expected 'start stop CLASS', got {stripped!r}")
        try:
            start, stop = float(parts[0]), float(parts[1])
        except ValueError as exc:
            raise NegativeSpanError(
                f"line {lineno}: bad numeric span in {stripped!r}") from exc
        try:
            event_class = EventClass(parts[2].upper())
        except ValueError as exc:
            raise UnknownClassError(
                f"line {lineno}: unknown class {parts[2]!r}") from exc
        if start < 0 or stop <= start:
            raise NegativeSpanError(
                f"line {lineno}: span [{start}, {stop}] is empty or negative")
        events.append(LabelEvent(start, stop, event_class))

    events.sort(key=lambda e: (e.start_s, e.stop_s))
    for prev, cur in zip(events, events[1:]):
        if cur.start_s < prev.stop_s:
            raise OverlapError(
                f"events [{prev.start_s}, {prev.stop_s}] and "
                f"[{cur.start_s}, {cur.stop_s}] overlap")
    return LabelSet(recording_id=recording_id, events=tuple(events))


def format_labels(labels: LabelSet) -> str:
    lines = [f"# labels for {labels.recording_id}"] if labels.recording_id else []
    for ev in labels.events:
        lines.append(f"{ev.start_s:.17g} {ev.stop_s:.17g} {ev.event_class.value}")
    return "\n".join(lines) + "\n"


# --- synthetic generator ----------------------------------------------------

@dataclass(frozen=True)
class SynthConfig:
    """Recipe for a synthetic recording.

    SEIZ spans carry a low-frequency oscillation on a pink-noise floor;
    everything else is pink noise plus a beta-band (13-30 Hz) ripple.
    `bias_gain`/`bias_offset` are applied to AR-tagged generations only,
    emulating a systematic between-montage amplitude bias.
    """

    num_channels: int = 4
    sample_rate_hz: float = 100.0
    duration_s: float = 60.0
    reference_scheme: ReferenceScheme = ReferenceScheme.LE
    seizure_spans: tuple[tuple[float, float], ...] = ()
    seizure_freq_hz: float = 3.0
    seizure_amplitude: float = 35.0
    seizure_mod_depth: float = 0.3
    background_band_hz: tuple[float, float] = (13.0, 30.0)
    background_amplitude: float = 8.0
    noise_amplitude: float = 10.0
    bias_gain: float = 1.0
    bias_offset: float = 0.0
    channel_labels: tuple[str, ...] | None = None
    recording_id: str = "synthetic"
    patient_id: str | None = None


def pink_noise(num_samples: int, rng: np.random.Generator, rows: int = 16) -> np.ndarray:
    """Approximate 1/f noise via the Voss-McCartney row-update scheme.

    Row r holds a white sample for 2**r output samples; the sum over rows
    (plus one per-sample white row) has a pink spectrum. Unit-ish variance.
    """
    total = rng.standard_normal(num_samples)
    for r in range(1, rows + 1):
        step = 2 ** r
        values = rng.standard_normal(num_samples // step + 2)
        total += np.repeat(values, step)[:num_samples]
    return total / np.sqrt(rows + 1)


def _span_mask(spans, n, fs):
    mask = np.zeros(n, dtype=bool)
    for start, stop in spans:
        mask[int(round(start * fs)):int(round(stop * fs))] = True
    return mask


def generate_synthetic(config: SynthConfig, seed: int) -> tuple[Recording, LabelSet]:
    """Generate a deterministic synthetic recording plus its labels.

    The output is a pure function of (config, seed): the same pair always
    produces bit-identical samples.
    """
    fs = config.sample_rate_hz
    if fs <= 0 or config.duration_s <= 0:
        raise InvalidConfig("sample rate and duration must be positive")
    if config.num_channels < 1:
        raise InvalidConfig("need at least one channel")

    if config.channel_labels is not None:
        labels = tuple(config.channel_labels)
    elif config.num_channels <= len(TEN_TWENTY_LABELS):
        labels = TEN_TWENTY_LABELS[:config.num_channels]
    else:
        extra = tuple(f"X{i}" for i in range(config.num_channels - len(TEN_TWENTY_LABELS)))
        labels = TEN_TWENTY_LABELS + extra
    if len(labels) != config.num_channels:
        raise InvalidConfig(
            f"{len(labels)} channel labels for {config.num_channels} channels")

    n = int(round(config.duration_s * fs))
    t = np.arange(n) / fs
    seiz_mask = _span_mask(config.seizure_spans, n, fs)
    for start, stop in config.seizure_spans:
        if not (0 <= start < stop <= config.duration_s):
            raise InvalidConfig(f"seizure span [{start}, {stop}] outside recording")

    rng = np.random.default_rng(seed)
    lo, hi = config.background_band_hz
    channels = []
    for label in labels:
        x = config.noise_amplitude * pink_noise(n, rng)
        # Beta-band ripple in background: a few fixed-frequency tones per channel.
        ripple = np.zeros(n)
        for _ in range(4):
            f = rng.uniform(lo, hi)
            phase = rng.uniform(0, 2 * np.pi)
            ripple += np.sin(2 * np.pi * f * t + phase)
        x += config.background_amplitude / 2.0 * ripple * ~seiz_mask
        # Seizure oscillation with a slow amplitude wobble, gated to SEIZ spans.
        phase = rng.uniform(0, 2 * np.pi)
        envelope = 1.0 + config.seizure_mod_depth * np.sin(2 * np.pi * 0.5 * t + phase)
        burst = config.seizure_amplitude * envelope * np.sin(
            2 * np.pi * config.seizure_freq_hz * t + phase)
        x += burst * seiz_mask
        if config.reference_scheme is ReferenceScheme.AR and (
                config.bias_gain != 1.0 or config.bias_offset != 0.0):
            x = config.bias_gain * x + config.bias_offset
        channels.append(ChannelSignal(label=label, samples=x))

    rec = Recording(
        id=config.recording_id,
        sample_rate_hz=fs,
        channels=tuple(channels),
        reference_scheme=config.reference_scheme,
        duration_s=n / fs,
        patient_id=config.patient_id,
    )

    events = [LabelEvent(a, b, EventClass.SEIZ) for a, b in sorted(config.seizure_spans)]
    cursor, background = 0.0, []
    for ev in events:
        if ev.start_s > cursor:
            background.append(LabelEvent(cursor, ev.start_s, EventClass.BCKG))
        cursor = ev.stop_s
    if cursor < rec.duration_s:
        background.append(LabelEvent(cursor, rec.duration_s, EventClass.BCKG))
    all_events = tuple(sorted(events + background, key=lambda e: e.start_s))
    return rec, LabelSet(recording_id=config.recording_id, events=all_events)


def retagged(rec: Recording, scheme: ReferenceScheme) -> Recording:
    """Copy of a recording with only the reference tag changed."""
    return replace(rec, reference_scheme=scheme)
