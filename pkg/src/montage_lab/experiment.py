"""Reproducible experiment recipes: config parsing, corpus assembly, outputs.

An experiment is described by a single INI-style text file and a seed;
running it twice produces byte-identical report files. The synthetic
corpus emulates the montage-bias setup: LE recordings are unbiased,
AR recordings get a configurable gain/offset applied to every sample.
"""

import configparser
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import InvalidConfig
from .evaluation import CONDITIONS, CorpusSplit, MatrixResult, PipelineConfig, run_matrix
from .features import FeatureConfig
from .hmm import TrainConfig
from .ingest import ReferenceScheme, SynthConfig, generate_synthetic, parse_edf, parse_labels
from .montage import TCP_MONTAGE, load_montage_spec
from .normalize import NormalizationConfig, NormalizationMode


@dataclass(frozen=True)
class SyntheticCorpusConfig:
    train_per_tag: int = 6
    eval_per_tag: int = 3
    base: SynthConfig = SynthConfig()
    bias_gain: float = 1.0
    bias_offset: float = 0.0
    seizures_per_recording: int = 2
    seizure_len_range: tuple[float, float] = (6.0, 14.0)


def _random_spans(rng, duration_s, count, len_range):
    """Non-overlapping spans: one per equal-width slot, jittered within it."""
    spans = []
    slot = duration_s / max(count, 1)
    lo, hi = len_range
    for k in range(count):
        length = float(rng.uniform(lo, min(hi, slot * 0.8)))
        start = float(rng.uniform(slot * k, slot * (k + 1) - length))
        spans.append((round(start, 3), round(start + length, 3)))
    return tuple(spans)


def build_synthetic_corpus(cfg: SyntheticCorpusConfig, seed: int) -> dict:
    """Per-tag corpus splits with unique fabricated patient ids."""
    master = np.random.default_rng(seed)
    splits = {}
    for tag, scheme in (("LE", ReferenceScheme.LE), ("AR", ReferenceScheme.AR)):
        sides = {}
        for side, count in (("train", cfg.train_per_tag), ("eval", cfg.eval_per_tag)):
            items = []
            for i in range(count):
                rec_seed = int(master.integers(0, 2 ** 62))
                spans = _random_spans(master, cfg.base.duration_s,
                                      cfg.seizures_per_recording,
                                      cfg.seizure_len_range)
                name = f"{tag.lower()}_{side}_{i:03d}"
                synth = replace(
                    cfg.base, reference_scheme=scheme, seizure_spans=spans,
                    bias_gain=cfg.bias_gain, bias_offset=cfg.bias_offset,
                    recording_id=name, patient_id=f"patient_{name}")
                items.append(generate_synthetic(synth, rec_seed))
            sides[side] = tuple(items)
        splits[tag] = CorpusSplit(train=sides["train"], eval=sides["eval"])
    return splits


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 0
    corpus_mode: str = "synthetic"
    synthetic: SyntheticCorpusConfig = SyntheticCorpusConfig()
    file_corpus: dict | None = None       # tag -> {"train": [paths], "eval": [paths]}
    labels_suffix: str = ".lbl"
    pipeline: PipelineConfig = PipelineConfig()
    normalize_comparison: bool = False


def _get(parser, section, option, cast, default):
    if parser.has_option(section, option):
        raw = parser.get(section, option)
        try:
            if cast is bool:
                return raw.strip().lower() in ("1", "true", "yes", "on")
            return cast(raw)
        except ValueError as exc:
            raise InvalidConfig(f"[{section}] {option} = {raw!r}: {exc}") from exc
    return default


def _montage_settings(parser, base_dir):
    apply_name = _get(parser, "montage", "apply", str, "none").strip().lower()
    if apply_name in ("", "none"):
        montage = None
    elif apply_name == "tcp":
        montage = TCP_MONTAGE
    else:
        path = (base_dir / apply_name).resolve()
        if not path.exists():
            raise InvalidConfig(f"montage spec file {path} does not exist")
        montage = load_montage_spec(path.read_text(), name=path.stem)
    ref_name = _get(parser, "montage", "rereference", str, "none").strip().lower()
    if ref_name in ("", "none"):
        ref = None
    else:
        try:
            ref = ReferenceScheme(ref_name.upper())
        except ValueError as exc:
            raise InvalidConfig(f"unknown reference scheme {ref_name!r}") from exc
    return montage, ref


def load_experiment_config(path) -> ExperimentConfig:
    """Parse and validate an experiment recipe file."""
    path = Path(path)
    if not path.exists():
        raise InvalidConfig(f"config file {path} does not exist")
    parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
    try:
        parser.read_string(path.read_text())
    except configparser.Error as exc:
        raise InvalidConfig(f"{path}: {exc}") from exc
    base_dir = path.parent

    seed = _get(parser, "experiment", "seed", int, 0)
    comparison = _get(parser, "experiment", "normalize_comparison", bool, False)

    features = FeatureConfig(
        frame_s=_get(parser, "features", "frame_s", float, 0.1),
        window_s=_get(parser, "features", "window_s", float, 0.2),
        num_cepstra=_get(parser, "features", "num_cepstra", int, 7),
        num_filters=_get(parser, "features", "num_filters", int, 8),
        delta_halfwidth=_get(parser, "features", "delta_halfwidth", int, 2),
        diff_energy_halfwidth=_get(parser, "features", "diff_energy_halfwidth", int, 4),
        energy_floor=_get(parser, "features", "energy_floor", float, 1e-10),
    )
    norm_mode = _get(parser, "normalize", "mode", str, "none").strip().lower()
    try:
        normalization = NormalizationConfig(mode=NormalizationMode(norm_mode))
    except ValueError as exc:
        raise InvalidConfig(f"unknown normalization mode {norm_mode!r}") from exc
    training = TrainConfig(
        num_states=_get(parser, "train", "num_states", int, 3),
        num_mixtures=_get(parser, "train", "num_mixtures", int, 2),
        max_iterations=_get(parser, "train", "max_iterations", int, 50),
        tolerance=_get(parser, "train", "tolerance", float, 1e-5),
        min_epochs=_get(parser, "train", "min_epochs", int, 1),
        variance_floor_fraction=_get(parser, "train", "variance_floor_fraction",
                                     float, 1e-3),
    )
    montage, ref = _montage_settings(parser, base_dir)
    pipeline = PipelineConfig(
        features=features, normalization=normalization, training=training,
        epoch_s=_get(parser, "train", "epoch_s", float, 1.0),
        montage=montage, rereference_to=ref)

    mode = _get(parser, "corpus", "mode", str, "synthetic").strip().lower()
    if mode == "synthetic":
        base = SynthConfig(
            num_channels=_get(parser, "synthetic", "num_channels", int, 4),
            sample_rate_hz=_get(parser, "synthetic", "sample_rate_hz", float, 100.0),
            duration_s=_get(parser, "synthetic", "duration_s", float, 60.0),
            seizure_freq_hz=_get(parser, "synthetic", "seizure_freq_hz", float, 3.0),
            seizure_amplitude=_get(parser, "synthetic", "seizure_amplitude",
                                   float, 35.0),
            background_amplitude=_get(parser, "synthetic", "background_amplitude",
                                      float, 8.0),
            noise_amplitude=_get(parser, "synthetic", "noise_amplitude", float, 10.0),
        )
        lens = (_get(parser, "synthetic", "seizure_len_min_s", float, 6.0),
                _get(parser, "synthetic", "seizure_len_max_s", float, 14.0))
        synthetic = SyntheticCorpusConfig(
            train_per_tag=_get(parser, "corpus", "train_per_tag", int, 6),
            eval_per_tag=_get(parser, "corpus", "eval_per_tag", int, 3),
            base=base,
            bias_gain=_get(parser, "synthetic", "bias_gain", float, 1.0),
            bias_offset=_get(parser, "synthetic", "bias_offset", float, 0.0),
            seizures_per_recording=_get(parser, "synthetic",
                                        "seizures_per_recording", int, 2),
            seizure_len_range=lens,
        )
        return ExperimentConfig(seed=seed, corpus_mode="synthetic",
                                synthetic=synthetic, pipeline=pipeline,
                                normalize_comparison=comparison)
    if mode == "files":
        suffix = _get(parser, "corpus", "labels_suffix", str, ".lbl")
        file_corpus = {}
        for tag in ("LE", "AR"):
            sides = {}
            for side in ("train", "eval"):
                raw = _get(parser, "corpus", f"{side}_{tag.lower()}", str, "")
                paths = [str((base_dir / p).resolve()) for p in raw.split()]
                if not paths:
                    raise InvalidConfig(f"corpus option {side}_{tag.lower()} is empty")
                for p in paths:
                    if not Path(p).exists():
                        raise InvalidConfig(f"corpus file {p} does not exist")
                    if not Path(p).with_suffix(suffix).exists():
                        raise InvalidConfig(f"label file for {p} does not exist")
                sides[side] = paths
            file_corpus[tag] = sides
        return ExperimentConfig(seed=seed, corpus_mode="files",
                                file_corpus=file_corpus, labels_suffix=suffix,
                                pipeline=pipeline, normalize_comparison=comparison)
    raise InvalidConfig(f"unknown corpus mode {mode!r}")


def _load_file_corpus(cfg: ExperimentConfig) -> dict:
    splits = {}
    for tag, sides in cfg.file_corpus.items():
        loaded = {}
        for side, paths in sides.items():
            items = []
            for p in paths:
                rec = parse_edf(Path(p).read_bytes())
                labels = parse_labels(
                    Path(p).with_suffix(cfg.labels_suffix).read_text(), rec.id)
                items.append((rec, labels))
            loaded[side] = tuple(items)
        splits[tag] = CorpusSplit(train=loaded["train"], eval=loaded["eval"])
    return splits


def _cell_slug(tag: str) -> str:
    return tag.lower().replace("+", "")


def write_matrix_outputs(result: MatrixResult, outdir: Path, prefix: str):
    outdir.mkdir(parents=True, exist_ok=True)
    (outdir / f"matrix_{prefix}.csv").write_text(result.to_csv())
    (outdir / f"matrix_{prefix}.json").write_text(result.to_json())
    for (train_tag, eval_tag), curve in sorted(result.det.items()):
        name = f"det_{prefix}_{_cell_slug(train_tag)}_{_cell_slug(eval_tag)}.csv"
        (outdir / name).write_text(curve.to_csv())


def run_experiment(cfg: ExperimentConfig, outdir) -> dict:
    """Run the full mismatch experiment and write its report files.

    Returns {"raw": MatrixResult, "normalized": MatrixResult | None}.
    """
    outdir = Path(outdir)
    if cfg.corpus_mode == "synthetic":
        splits = build_synthetic_corpus(cfg.synthetic, cfg.seed)
    else:
        splits = _load_file_corpus(cfg)

    raw_pipeline = replace(cfg.pipeline, normalization=NormalizationConfig(
        mode=NormalizationMode.NONE))
    raw = run_matrix(splits, raw_pipeline)
    write_matrix_outputs(raw, outdir, "raw")

    normalized = None
    if cfg.normalize_comparison or \
            cfg.pipeline.normalization.mode is not NormalizationMode.NONE:
        norm_cfg = cfg.pipeline.normalization
        if norm_cfg.mode is NormalizationMode.NONE:
            norm_cfg = NormalizationConfig(mode=NormalizationMode.CMN)
        normalized = run_matrix(splits, replace(cfg.pipeline, normalization=norm_cfg))
        write_matrix_outputs(normalized, outdir, norm_cfg.mode.value)
        lines = ["train,eval,rate_raw,rate_normalized"]
        for tr in CONDITIONS:
            for ev in CONDITIONS:
                lines.append(f"{tr},{ev},{raw.grid[tr][ev].rate:.17g},"
                             f"{normalized.grid[tr][ev].rate:.17g}")
        (outdir / "comparison.csv").write_text("\n".join(lines) + "\n")
    return {"raw": raw, "normalized": normalized}
