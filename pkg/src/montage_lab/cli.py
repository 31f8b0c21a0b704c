"""montage-lab command line: ingestion through evaluation.

Every command is deterministic given (inputs, config, seed). Exit codes:
0 success, 1 internal error, 2 input/validation error.
"""

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, evaluation, experiment, features, hmm, ingest, montage
from .errors import EmptyCorpus, InputError, InvalidConfig
from .normalize import NormalizationConfig, NormalizationMode, normalize_recording

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_INPUT = 2


def _add_pipeline_flags(sub):
    sub.add_argument("--ref", choices=["none", "le", "ar", "cv"], default="none",
                     help="re-reference before any montage (default none)")
    sub.add_argument("--montage", default="none",
                     help="'none', 'tcp', or a montage spec file")
    sub.add_argument("--normalize", choices=["none", "cmn", "cmvn"], default="none",
                     help="per-recording feature normalization")


def _pipeline_from_args(args, epoch_s=1.0, training=None):
    if args.montage in ("", "none"):
        spec = None
    elif args.montage == "tcp":
        spec = montage.TCP_MONTAGE
    else:
        path = Path(args.montage)
        if not path.exists():
            raise InvalidConfig(f"montage spec file {path} does not exist")
        spec = montage.load_montage_spec(path.read_text(), name=path.stem)
    ref = None if args.ref == "none" else ingest.ReferenceScheme(args.ref.upper())
    return evaluation.PipelineConfig(
        normalization=NormalizationConfig(mode=NormalizationMode(args.normalize)),
        training=training or hmm.TrainConfig(),
        epoch_s=epoch_s, montage=spec, rereference_to=ref)


def _safe_name(label):
    return "".join(c if c.isalnum() or c in "+-" else "_" for c in label)


def _read_recording(path):
    path = Path(path)
    if not path.exists():
        raise InvalidConfig(f"input file {path} does not exist")
    return ingest.parse_edf(path.read_bytes())


def _read_labels_for(path, explicit=None):
    label_path = Path(explicit) if explicit else Path(path).with_suffix(".lbl")
    if not label_path.exists():
        raise InvalidConfig(f"label file {label_path} does not exist")
    return ingest.parse_labels(label_path.read_text(), Path(path).stem)


def _prepared_sequences(rec, pipeline):
    if pipeline.rereference_to is not None:
        rec = montage.rereference(rec, pipeline.rereference_to)
    if pipeline.montage is not None:
        rec = montage.apply_montage(rec, pipeline.montage)
    seqs = features.extract(rec, pipeline.features)
    if pipeline.normalization.mode is not NormalizationMode.NONE:
        seqs = normalize_recording(seqs, pipeline.normalization)
    return rec, seqs


# --- commands ---------------------------------------------------------------

def cmd_synth(args):
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    scheme = ingest.ReferenceScheme(args.tag.upper())
    rng = np.random.default_rng(args.seed or 0)
    for i in range(args.num):
        spans = experiment._random_spans(
            rng, args.duration, args.seizures, (4.0, args.duration / 4.0))
        cfg = ingest.SynthConfig(
            num_channels=args.channels, sample_rate_hz=args.fs,
            duration_s=args.duration, reference_scheme=scheme,
            seizure_spans=spans, bias_gain=args.bias_gain,
            bias_offset=args.bias_offset,
            recording_id=f"{args.tag}_{i:03d}",
            patient_id=f"patient_{args.tag}_{i:03d}")
        rec, labels = ingest.generate_synthetic(cfg, int(rng.integers(0, 2 ** 62)))
        stem = outdir / f"{args.tag}_{i:03d}"
        stem.with_suffix(".edf").write_bytes(ingest.write_edf(rec))
        stem.with_suffix(".lbl").write_text(ingest.format_labels(labels))
        print(f"wrote {stem}.edf ({rec.num_samples} samples, "
              f"{len(labels.events)} events)")
    return EXIT_OK


def _extract_one(path, pipeline, fmt, outdir):
    rec = _read_recording(path)
    _, seqs = _prepared_sequences(rec, pipeline)
    written = []
    for seq in seqs:
        name = f"{Path(path).stem}_{_safe_name(seq.channel_label)}"
        if fmt == "csv":
            out = outdir / f"{name}.csv"
            out.write_text(features.write_features_csv(seq, pipeline.features))
        else:
            out = outdir / f"{name}.feat"
            out.write_bytes(features.write_features_binary(seq))
        written.append(out)
    return written


def cmd_features(args):
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    pipeline = _pipeline_from_args(args)
    jobs = max(1, args.jobs)
    if jobs == 1 or len(args.inputs) == 1:
        results = [_extract_one(p, pipeline, args.format, outdir)
                   for p in args.inputs]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(
                lambda p: _extract_one(p, pipeline, args.format, outdir),
                args.inputs))
    for written in results:
        for out in written:
            print(f"wrote {out}")
    return EXIT_OK


def _load_feature_dir(dirpath):
    dirpath = Path(dirpath)
    if not dirpath.is_dir():
        raise EmptyCorpus(f"{dirpath} is not a directory")
    seqs = []
    for path in sorted(dirpath.iterdir()):
        if path.suffix == ".csv":
            seqs.append(features.read_features_csv(path.read_text(), path.stem))
        elif path.suffix == ".feat":
            seqs.append(features.read_features_binary(path.read_bytes(), path.stem))
    if not seqs:
        raise EmptyCorpus(f"no feature dumps (*.csv, *.feat) under {dirpath}")
    return seqs


def _base_matrix(seqs):
    return np.vstack([s.data[:, :9] for s in seqs])


def cmd_stats(args):
    le = analysis.StatsSummary("LE").add_batch(_base_matrix(_load_feature_dir(args.le)))
    ar = analysis.StatsSummary("AR").add_batch(_base_matrix(_load_feature_dir(args.ar)))
    table = analysis.report_table(le, ar)
    prefix = Path(args.output)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    csv_path = prefix.with_suffix(".csv")
    txt_path = prefix.with_suffix(".txt")
    csv_path.write_text(table.to_csv())
    txt_path.write_text(table.to_text())
    print(f"wrote {csv_path}")
    print(f"wrote {txt_path}")
    return EXIT_OK


def cmd_pca(args):
    decomps = {}
    for tag, dirpath in (("le", args.le), ("ar", args.ar)):
        decomps[tag] = analysis.pca(_base_matrix(_load_feature_dir(dirpath)))
    prefix = Path(args.output)
    prefix.parent.mkdir(parents=True, exist_ok=True)
    for tag, dec in decomps.items():
        lines = ["component,eigenvalue,explained"]
        for i in range(dec.dim):
            lines.append(f"{i + 1},{dec.eigenvalues[i]:.17g},{dec.explained[i]:.17g}")
        out = prefix.parent / f"{prefix.name}_explained_{tag}.csv"
        out.write_text("\n".join(lines) + "\n")
        print(f"wrote {out} (first component explains "
              f"{100 * dec.explained[0]:.2f}%)")
    comparison = analysis.compare_eigenvectors(decomps["le"], decomps["ar"])
    amp = prefix.parent / f"{prefix.name}_amplitudes.dat"
    amp.write_text(comparison.to_gnuplot())
    cos = prefix.parent / f"{prefix.name}_cosine.csv"
    cos.write_text("rank,cosine_similarity\n" + "\n".join(
        f"{i + 1},{c:.17g}" for i, c in enumerate(comparison.cosine_similarity))
        + "\n")
    print(f"wrote {amp}")
    print(f"wrote {cos}")
    return EXIT_OK


def _paired_recordings(data_dir):
    data_dir = Path(data_dir)
    pairs = []
    for edf_path in sorted(data_dir.glob("*.edf")):
        rec = _read_recording(edf_path)
        labels = _read_labels_for(edf_path)
        pairs.append((rec, labels))
    if not pairs:
        raise EmptyCorpus(f"no .edf files under {data_dir}")
    return pairs


def cmd_train(args):
    training = hmm.TrainConfig(
        num_states=args.states, num_mixtures=args.mixtures,
        max_iterations=args.max_iterations, tolerance=args.tolerance)
    pipeline = _pipeline_from_args(args, epoch_s=args.epoch_s, training=training)
    epochs = []
    for rec, labels in _paired_recordings(args.data):
        epochs.extend(evaluation.recording_epochs(rec, labels, pipeline))
    outdir = Path(args.output)
    outdir.mkdir(parents=True, exist_ok=True)
    for cls in (ingest.EventClass.SEIZ, ingest.EventClass.BCKG):
        model = hmm.train(epochs, cls, training)
        stem = outdir / cls.value.lower()
        stem.with_suffix(".hmm").write_bytes(hmm.model_to_bytes(model))
        stem.with_suffix(".json").write_text(hmm.model_to_json(model))
        print(f"wrote {stem}.hmm ({model.num_states} states, "
              f"{model.num_mixtures} mixtures, {model.metadata['num_epochs']} epochs)")
    return EXIT_OK


def _load_models(model_dir):
    model_dir = Path(model_dir)
    models = {}
    for cls in (ingest.EventClass.SEIZ, ingest.EventClass.BCKG):
        path = model_dir / f"{cls.value.lower()}.hmm"
        if not path.exists():
            raise InvalidConfig(f"model file {path} does not exist")
        models[cls] = hmm.model_from_bytes(path.read_bytes())
    return models


def cmd_classify(args):
    models = _load_models(args.models)
    pipeline = _pipeline_from_args(args, epoch_s=args.epoch_s)
    rec = _read_recording(args.input)
    labels = None
    if args.labels or Path(args.input).with_suffix(".lbl").exists():
        labels = _read_labels_for(args.input, args.labels)
    if labels is None:
        span = ingest.LabelEvent(0.0, rec.duration_s, ingest.EventClass.BCKG)
        labels = ingest.LabelSet(rec.id, (span,))
        labeled = False
    else:
        labeled = True
    _, seqs = _prepared_sequences(rec, pipeline)
    lines = ["epoch,channel,start_s,reference,predicted,margin"]
    for seq in seqs:
        for k, ep in enumerate(hmm.epochize(seq, labels, pipeline.epoch_s)):
            pred, margin = hmm.classify(models, ep)
            ref = ep.reference_class.value if labeled else ""
            lines.append(f"{k},{ep.channel_label},{ep.start_s:.17g},"
                         f"{ref},{pred.value},{margin:.17g}")
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text("\n".join(lines) + "\n")
    print(f"wrote {out} ({len(lines) - 1} epochs)")
    return EXIT_OK


def cmd_det(args):
    path = Path(args.scores)
    if not path.exists():
        raise InvalidConfig(f"scores file {path} does not exist")
    scored = []
    lines = path.read_text().splitlines()
    header = lines[0].split(",")
    try:
        ref_col = header.index("reference")
        margin_col = header.index("margin")
    except ValueError as exc:
        raise InvalidConfig("scores CSV needs 'reference' and 'margin' columns") from exc
    for line in lines[1:]:
        parts = line.split(",")
        if not parts[ref_col]:
            raise InvalidConfig("scores CSV has unlabeled epochs; "
                                "classify with a label file to build a DET curve")
        scored.append((ingest.EventClass(parts[ref_col]), float(parts[margin_col])))
    curve = evaluation.det_curve(scored)
    out = Path(args.output)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(curve.to_csv())
    print(f"wrote {out} ({curve.thresholds.shape[0]} points)")
    return EXIT_OK


def cmd_experiment(args):
    config_path = args.config_path or args.config
    if not config_path:
        raise InvalidConfig("experiment needs a config file (positional or --config)")
    cfg = experiment.load_experiment_config(config_path)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    results = experiment.run_experiment(cfg, args.output)
    raw = results["raw"]
    print("detection-rate grid (rows: train, columns: eval)")
    print(raw.to_csv().strip())
    if results["normalized"] is not None:
        print("normalized grid")
        print(results["normalized"].to_csv().strip())
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="montage-lab",
        description="EEG montage analysis pipeline: EDF in, DET curves out.")
    parser.add_argument("--seed", type=int, default=None,
                        help="seed for anything stochastic (default: per-command)")
    parser.add_argument("--jobs", type=int, default=1,
                        help="worker threads for per-file fan-out")
    parser.add_argument("--config", default=None,
                        help="experiment config file (used by 'experiment')")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate synthetic EDF + label files")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--num", type=int, default=1)
    p.add_argument("--tag", choices=["le", "ar"], default="le")
    p.add_argument("--channels", type=int, default=4)
    p.add_argument("--fs", type=float, default=100.0)
    p.add_argument("--duration", type=float, default=60.0)
    p.add_argument("--seizures", type=int, default=2)
    p.add_argument("--bias-gain", type=float, default=1.0)
    p.add_argument("--bias-offset", type=float, default=0.0)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("features", help="extract per-channel feature dumps")
    p.add_argument("inputs", nargs="+", metavar="INPUT.edf")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--format", choices=["csv", "bin"], default="csv")
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("stats", help="per-class descriptive statistics table")
    p.add_argument("--le", required=True, help="feature dump dir for LE")
    p.add_argument("--ar", required=True, help="feature dump dir for AR")
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("pca", help="per-class PCA and eigenvector comparison")
    p.add_argument("--le", required=True)
    p.add_argument("--ar", required=True)
    p.add_argument("-o", "--output", required=True, help="output prefix")
    p.set_defaults(func=cmd_pca)

    p = sub.add_parser("train", help="train SEIZ/BCKG models from paired edf+lbl")
    p.add_argument("--data", required=True, help="directory of *.edf with *.lbl")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--epoch-s", type=float, default=1.0)
    p.add_argument("--states", type=int, default=3)
    p.add_argument("--mixtures", type=int, default=2)
    p.add_argument("--max-iterations", type=int, default=50)
    p.add_argument("--tolerance", type=float, default=1e-5)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="classify epochs of a recording")
    p.add_argument("input", metavar="INPUT.edf")
    p.add_argument("--models", required=True, help="directory with seiz.hmm/bckg.hmm")
    p.add_argument("--labels", default=None)
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--epoch-s", type=float, default=1.0)
    _add_pipeline_flags(p)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("det", help="DET curve from labeled classify output")
    p.add_argument("--scores", required=True)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_det)

    p = sub.add_parser("experiment", help="run a full train/eval matrix recipe")
    p.add_argument("config_path", nargs="?", default=None)
    p.add_argument("-o", "--output", required=True)
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except Exception as exc:  # pragma: no cover - defensive
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
