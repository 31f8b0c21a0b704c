"""Referential re-referencing (LE/AR/Cv) and bipolar montage derivation.

All operations are pure functions over immutable recordings. Electrode
label matching is case-insensitive and tolerant of "EEG " prefixes and
"-LE"/"-REF"/"-AR" suffixes.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyAverageSet, InvalidConfig, MissingElectrode
from .ingest import ChannelSignal, Recording, ReferenceScheme

REF_SENTINEL = "REF"

# Channels never included in the default average-reference set.
NON_EEG_PREFIXES = ("EKG", "ECG", "EMG", "EOG", "PHOTIC", "PULSE", "RESP", "IBI")
EAR_LABELS = ("A1", "A2")


def normalize_electrode_label(label: str) -> str:
    """Canonical electrode name: uppercase, no "EEG " prefix or ref suffix."""
    s = label.strip().upper()
    if s.startswith("EEG "):
        s = s[4:].strip()
    for suffix in ("-LE", "-REF", "-AR"):
        if s.endswith(suffix):
            s = s[: -len(suffix)].strip()
            break
    return s


def _is_eeg(normalized: str) -> bool:
    return not any(normalized.startswith(p) for p in NON_EEG_PREFIXES)


def _electrode_index(rec: Recording) -> dict[str, int]:
    index = {}
    for i, ch in enumerate(rec.channels):
        index.setdefault(normalize_electrode_label(ch.label), i)
    return index


def _derived_range(pos: ChannelSignal, neg: ChannelSignal | None):
    if neg is None:
        return pos.physical_range
    lo = pos.physical_range[0] - neg.physical_range[1]
    hi = pos.physical_range[1] - neg.physical_range[0]
    return (lo, hi)


@dataclass(frozen=True)
class MontageSpec:
    """An ordered list of derived channels (label, positive, negative).

    A negative electrode equal to "REF" passes the raw channel through.
    """

    name: str
    derived_channels: tuple[tuple[str, str, str], ...]

    def __post_init__(self):
        labels = [d[0] for d in self.derived_channels]
        if len(set(labels)) != len(labels):
            raise InvalidConfig(f"montage {self.name!r}: derived labels not unique")


# ACNS temporal-central-parasagittal bipolar montage, 22 pairs.
TCP_PAIRS = (
    ("FP1", "F7"), ("F7", "T3"), ("T3", "T5"), ("T5", "O1"),
    ("FP2", "F8"), ("F8", "T4"), ("T4", "T6"), ("T6", "O2"),
    ("A1", "T3"), ("T3", "C3"), ("C3", "CZ"), ("CZ", "C4"),
    ("C4", "T4"), ("T4", "A2"),
    ("FP1", "F3"), ("F3", "C3"), ("C3", "P3"), ("P3", "O1"),
    ("FP2", "F4"), ("F4", "C4"), ("C4", "P4"), ("P4", "O2"),
)

TCP_MONTAGE = MontageSpec(
    name="tcp",
    derived_channels=tuple((f"{p}-{n}", p, n) for p, n in TCP_PAIRS),
)


def load_montage_spec(text: str, name: str = "custom") -> MontageSpec:
    """Parse a montage spec file: one "LABEL: POS -- NEG" line per channel."""
    derived = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        if ":" not in stripped or "--" not in stripped:
            raise InvalidConfig(
                f"line {lineno}: expected 'LABEL: POS -- NEG', got {stripped!r}")
        label, rest = stripped.split(":", 1)
        pos, neg = rest.split("--", 1)
        derived.append((label.strip(), pos.strip(), neg.strip()))
    if not derived:
        raise InvalidConfig("montage spec file defines no channels")
    return MontageSpec(name=name, derived_channels=tuple(derived))


def format_montage_spec(spec: MontageSpec) -> str:
    lines = [f"# montage {spec.name}"]
    lines += [f"{label}: {pos} -- {neg}" for label, pos, neg in spec.derived_channels]
    return "\n".join(lines) + "\n"


def rereference(
    rec: Recording,
    scheme: ReferenceScheme,
    average_set: tuple[str, ...] | None = None,
    ears: tuple[str, ...] = EAR_LABELS,
) -> Recording:
    """Re-reference every channel to the requested scheme.

    LE subtracts the mean of the available ear electrodes (one is enough),
    AR the mean of `average_set` (default: all EEG channels except the
    ears), and CV the vertex electrode CZ. The reference tag is updated;
    labels, channel count, and sampling rate are preserved.
    """
    index = _electrode_index(rec)

    if scheme is ReferenceScheme.LE:
        found = [index[normalize_electrode_label(e)] for e in ears
                 if normalize_electrode_label(e) in index]
        if not found:
            raise MissingElectrode(
                f"LE reference needs one of {'/'.join(ears)}; "
                f"recording has {list(rec.labels)}")
        reference = np.mean([rec.channels[i].samples for i in found], axis=0)
    elif scheme is ReferenceScheme.AR:
        if average_set is None:
            members = [i for lab, i in index.items()
                       if _is_eeg(lab) and lab not in EAR_LABELS]
        else:
            members = []
            for e in average_set:
                key = normalize_electrode_label(e)
                if key not in index:
                    raise MissingElectrode(f"average set electrode {e!r} not found")
                members.append(index[key])
        if not members:
            raise EmptyAverageSet("average-reference electrode set is empty")
        reference = np.mean([rec.channels[i].samples for i in sorted(set(members))],
                            axis=0)
    elif scheme is ReferenceScheme.CV:
        key = normalize_electrode_label("CZ")
        if key not in index:
            raise MissingElectrode("CV reference needs a CZ channel")
        reference = rec.channels[index[key]].samples
    else:
        raise InvalidConfig(f"cannot re-reference to {scheme}")

    channels = tuple(
        ChannelSignal(
            label=ch.label,
            samples=ch.samples - reference,
            physical_range=_derived_range(ch, ch),
            digital_range=ch.digital_range,
        )
        for ch in rec.channels
    )
    return replace(rec, channels=channels, reference_scheme=scheme)


def apply_montage(rec: Recording, spec: MontageSpec) -> Recording:
    """Derive bipolar channels by sample-wise subtraction of electrode pairs.

    The reference tag is carried through unchanged: it records the
    provenance of the underlying data, which the mismatch experiments key
    on even after differencing.
    """
    index = _electrode_index(rec)

    def resolve(name):
        key = normalize_electrode_label(name)
        if key not in index:
            raise MissingElectrode(
                f"montage {spec.name!r} needs electrode {name!r}; "
                f"recording has {list(rec.labels)}")
        return rec.channels[index[key]]

    channels = []
    for label, pos_name, neg_name in spec.derived_channels:
        pos = resolve(pos_name)
        if normalize_electrode_label(neg_name) == REF_SENTINEL:
            channels.append(ChannelSignal(
                label=label, samples=pos.samples,
                physical_range=pos.physical_range,
                digital_range=pos.digital_range))
        else:
            neg = resolve(neg_name)
            channels.append(ChannelSignal(
                label=label, samples=pos.samples - neg.samples,
                physical_range=_derived_range(pos, neg),
                digital_range=pos.digital_range))
    return replace(rec, channels=tuple(channels))
