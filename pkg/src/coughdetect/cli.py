"""Command-line front end: ``coughdetect <command> [options]``.

Artifacts live under ``--output-dir`` (default ``./coughdetect-out``)::

    features/<stem>.npz     short-term features per recording   (extract)
    selection.json/.txt     selected features and report        (select)
    model.bin               trained detector                    (train)
    predictions/<stem>.csv  per-group times, scores, labels     (predict)
    report.json/.txt        metrics, plus report_roc.csv        (evaluate)

Exit codes: 0 success, 2 input error (bad arguments, missing or malformed
files, missing upstream stage, dimension mismatch), 3 internal failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import PipelineConfig
from .dsp import WavFormatError
from .features import FeatureTable
from .pipeline import (
    CoughDetector,
    ManifestEntry,
    build_dataset,
    compare_representations,
    cross_validate,
    extract_entry,
    extract_many,
    read_manifest,
    select_features,
)
from .synth import SynthSpec, generate_corpus

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INTERNAL = 3

log = logging.getLogger("coughdetect")


class InputError(Exception):
    """Problem with user-supplied inputs or missing upstream artifacts."""


def _atomic_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    tmp.replace(path)


# ---------------------------------------------------------------------------
# Artifact helpers


def _features_dir(out: Path) -> Path:
    return out / "features"


def _load_tables(out: Path) -> list[FeatureTable]:
    files = sorted(_features_dir(out).glob("*.npz"))
    if not files:
        raise InputError(f"no feature files in {_features_dir(out)}; run `coughdetect extract` first")
    tables = [FeatureTable.load(f) for f in files]
    unlabeled = [f.name for f, t in zip(files, tables) if t.labels is None]
    if unlabeled:
        raise InputError(f"feature files without annotations: {', '.join(unlabeled)}")
    return tables


def _load_selection(out: Path, tables) -> tuple[list[int], list[str]]:
    path = out / "selection.json"
    if not path.exists():
        raise InputError(f"{path} not found; run `coughdetect select` first")
    names = json.loads(path.read_text())["selected_names"]
    return _columns(tables[0].feature_names, names), names


def _columns(available, names) -> list[int]:
    index = {n: i for i, n in enumerate(available)}
    missing = [n for n in names if n not in index]
    if missing:
        raise InputError(f"features not present in the extracted files: {missing}")
    return [index[n] for n in names]


def _load_model(path: Path) -> CoughDetector:
    if not path.exists():
        raise InputError(f"{path} not found; run `coughdetect train` first")
    return CoughDetector.load(path)


# ---------------------------------------------------------------------------
# Commands


def cmd_synth(args, config: PipelineConfig) -> int:
    target = Path(args.corpus_dir) if args.corpus_dir else args.output_dir / "corpus"
    spec = SynthSpec(n_patients=args.patients, coughs_per_scenario=args.coughs,
                     snr_spread_db=args.snr_spread, babble_share=args.babble, seed=config.seed)
    manifest = generate_corpus(target, spec)
    print(f"wrote {manifest}")
    return EXIT_OK


def cmd_extract(args, config: PipelineConfig) -> int:
    entries = read_manifest(args.manifest)
    if not entries:
        log.warning("manifest %s lists no recordings; nothing to do", args.manifest)
        return EXIT_OK
    fdir = _features_dir(args.output_dir)
    fdir.mkdir(parents=True, exist_ok=True)
    failures = 0
    if args.jobs > 1:
        try:
            tables = extract_many(entries, config, args.jobs)
        except (WavFormatError, ValueError, OSError) as exc:
            log.error("%s", exc)
            return EXIT_INPUT
        results = list(zip(entries, tables))
    else:
        results = []
        for entry in entries:
            try:
                results.append((entry, extract_entry(entry, config)))
            except (WavFormatError, ValueError, OSError) as exc:
                log.error("%s: %s", entry.wav, exc)
                failures += 1
    for entry, table in results:
        table.save(fdir / f"{entry.stem}.npz")
        log.info("%s: %d frames", entry.stem, table.n_frames)
    print(f"extracted {len(results)} recording(s) into {fdir}")
    return EXIT_INPUT if failures else EXIT_OK


def cmd_select(args, config: PipelineConfig) -> int:
    tables = _load_tables(args.output_dir)
    selector = select_features(tables, config)
    names = [str(n) for n in selector.get_feature_names_out()]
    res = selector.result_
    payload = {
        "selected_names": names,
        "selected_indices": [int(i) for i in selector.selected_],
        "provenance": {names[k]: int(res.provenance[i]) for k, i in enumerate(res.selected)},
        "votes": {names[k]: int(res.trial_votes.get(i, 0)) for k, i in enumerate(res.selected)},
        "intrinsic_dimension": selector.intrinsic_dims_,
        "seed": config.seed,
    }
    out = args.output_dir
    _atomic_text(out / "selection.json", json.dumps(payload, indent=2) + "\n")
    _atomic_text(out / "selection.txt", selector.report())
    print(selector.report(), end="")
    print(f"{len(names)} features selected")
    return EXIT_OK


def _detector_overrides(args) -> dict:
    over = {}
    if getattr(args, "mode", None):
        over["mode"] = args.mode
    if getattr(args, "representation", None):
        over["representation"] = args.representation
    return over


def cmd_train(args, config: PipelineConfig) -> int:
    tables = _load_tables(args.output_dir)
    cols, names = _load_selection(args.output_dir, tables)
    data = build_dataset(tables, cols, config)
    det = CoughDetector.from_config(config, **_detector_overrides(args))
    det.fit(data.groups, data.labels, data.scenarios, data.frame_labels, names)
    path = Path(args.model) if args.model else args.output_dir / "model.bin"
    det.save(path)
    print(f"trained {det.mode} {det.representation} model on {len(data)} observations -> {path}")
    return EXIT_OK


def cmd_predict(args, config: PipelineConfig) -> int:
    det = _load_model(Path(args.model) if args.model else args.output_dir / "model.bin")
    if args.manifest:
        entries = read_manifest(args.manifest)
    else:
        entries = [ManifestEntry(Path(w), None, "unknown", args.scenario) for w in args.wav]
    if not entries:
        log.warning("nothing to predict")
        return EXIT_OK
    pdir = args.output_dir / "predictions"
    pdir.mkdir(parents=True, exist_ok=True)
    names = getattr(det, "feature_names_in_", None)
    correct = total = 0
    for entry in entries:
        table = extract_entry(entry, config)
        if names is not None:
            cols = _columns(table.feature_names, list(names))
        else:
            cols = list(range(table.matrix.shape[1]))
        if len(cols) != det.n_features_in_:
            raise InputError(
                f"model expects {det.n_features_in_} features, {entry.wav} provides {len(cols)}"
            )
        data = build_dataset([table], cols, config)
        scores = det.decision_function(data.groups, data.scenarios)
        labels = det.predict(data.groups, data.scenarios)
        path = pdir / f"{entry.stem}.csv"
        tmp = path.with_name(path.name + ".tmp")
        with open(tmp, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["start_seconds", "end_seconds", "score", "label"])
            for a, b, s, lab in zip(data.start_times, data.end_times, scores, labels):
                w.writerow([f"{a:.6f}", f"{b:.6f}", repr(float(s)), "cough" if lab == 1 else "other"])
        tmp.replace(path)
        if entry.annotation is not None:
            correct += int((labels == data.labels).sum())
            total += len(labels)
        log.info("%s: %d observations", entry.stem, len(labels))
    print(f"wrote predictions for {len(entries)} recording(s) to {pdir}")
    if total:
        print(f"accuracy against annotations: {100.0 * correct / total:.2f}%")
    return EXIT_OK


def cmd_evaluate(args, config: PipelineConfig) -> int:
    if args.scheme:
        config.evaluation.scheme = args.scheme
    tables = _load_tables(args.output_dir)
    cols, _ = _load_selection(args.output_dir, tables)
    data = build_dataset(tables, cols, config)
    out = args.output_dir
    if args.compare:
        a, b, tests = compare_representations(data, config, **_detector_overrides(args))
        a.overall.save(out / "report_avgsd")
        b.overall.save(out / "report_boaw")
        rows = {
            part: {row: {"statistic": r.statistic, "p_value": r.p_value, "b": r.b, "c": r.c,
                         "stars": r.stars} for row, r in pair.items()}
            for part, pair in tests.items()
        }
        _atomic_text(out / "mcnemar.json", json.dumps(rows, indent=2) + "\n")
        print(a.overall.to_text("AvgSD"), end="")
        print(b.overall.to_text("BoAW"), end="")
        for part, pair in rows.items():
            print(f"McNemar {part}: SEN p={pair['sen']['p_value']:.4g}{pair['sen']['stars']} "
                  f"SPE p={pair['spe']['p_value']:.4g}{pair['spe']['stars']}")
        return EXIT_OK
    res = cross_validate(data, config, **_detector_overrides(args))
    res.overall.extra["per_scenario"] = {k: v.to_dict() for k, v in res.per_scenario.items()}
    res.overall.extra["scheme"] = res.scheme
    res.overall.extra["n_folds"] = res.n_folds
    res.overall.save(out / "report")
    print(res.overall.to_text(f"{res.scheme} ({res.n_folds} folds)"), end="")
    for part, rep in res.per_scenario.items():
        print(rep.to_text(part), end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# Argument parsing


def _global_flags(suppress: bool) -> argparse.ArgumentParser:
    # subcommands repeat the global flags with suppressed defaults so that
    # a flag given before the subcommand is not reset by the subparser
    def default(value):
        return argparse.SUPPRESS if suppress else value

    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", type=Path, default=default(None),
                   help="JSON pipeline configuration")
    p.add_argument("--seed", type=int, default=default(None),
                   help="override the configured random seed")
    p.add_argument("--jobs", type=int, default=default(1), help="worker processes for extraction")
    p.add_argument("--output-dir", type=Path, default=default(Path("coughdetect-out")),
                   help="artifact directory (default: ./coughdetect-out)")
    p.add_argument("-v", "--verbose", action="store_true", default=default(False),
                   help="log progress")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _global_flags(suppress=True)
    parser = argparse.ArgumentParser(prog="coughdetect", description="Cough detection in audio recordings.",
                                     parents=[_global_flags(suppress=False)])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("corpus_dir", nargs="?", help="target directory (default: OUTPUT_DIR/corpus)")
    p.add_argument("--patients", type=int, default=4)
    p.add_argument("--coughs", type=int, default=200, help="cough bursts per scenario")
    p.add_argument("--snr-spread", type=float, default=6.0, help="per-event SNR jitter in dB")
    p.add_argument("--babble", type=float, default=0.5, help="babble share of the background")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("extract", parents=[common], help="short-term features per recording")
    p.add_argument("manifest", type=Path)
    p.set_defaults(func=cmd_extract)

    p = sub.add_parser("select", parents=[common], help="noise-robust feature selection")
    p.set_defaults(func=cmd_select)

    model_opts = argparse.ArgumentParser(add_help=False)
    model_opts.add_argument("--mode", choices=["ensemble", "single", "per-part"])
    model_opts.add_argument("--representation", choices=["avgsd", "boaw"])

    p = sub.add_parser("train", parents=[common, model_opts], help="train the detector")
    p.add_argument("--model", help="model path (default: OUTPUT_DIR/model.bin)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", parents=[common], help="score recordings")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--manifest", type=Path)
    src.add_argument("--wav", nargs="+")
    p.add_argument("--scenario", default="part1", choices=["part1", "part2", "part3"],
                   help="scenario tag for --wav inputs (used by per-part models)")
    p.add_argument("--model", help="model path (default: OUTPUT_DIR/model.bin)")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", parents=[common, model_opts], help="cross-validated evaluation")
    p.add_argument("--scheme", choices=["block5", "lopo"])
    p.add_argument("--compare", action="store_true",
                   help="AvgSD vs BoAW under the same folds with McNemar's test")
    p.set_defaults(func=cmd_evaluate)
    return parser


def _config(args) -> PipelineConfig:
    config = PipelineConfig.load(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        config.seed = args.seed
    return config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        config = _config(args)
        args.output_dir.mkdir(parents=True, exist_ok=True)
        return args.func(args, config)
    except (InputError, WavFormatError, FileNotFoundError, json.JSONDecodeError) as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except ValueError as exc:
        log.error("%s", exc)
        return EXIT_INPUT
    except Exception:  # pragma: no cover - last-resort guard
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
