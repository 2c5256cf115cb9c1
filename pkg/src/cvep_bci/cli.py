"""
Command-line interface

Every subcommand reads and writes the package's file formats: ``.cvep`` epoch
containers, codebook JSON and model JSON. Exit codes are 0 on success, 2 when
an input is missing, 3 for any other refused operation and 1 for unexpected
failures.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path
from typing import Any, Callable, Sequence

import numpy as np

from cvep_bci.containers import (
    EpochSet,
    RunConfig,
    read_codebook,
    read_epochs,
    read_json,
    write_codebook,
    write_epochs,
    write_json,
)
from cvep_bci.decoder import (
    ONSET_SHIFT_RANGE_MS,
    TemplateBank,
    TrialDecode,
    batch_decode,
    onset_scan,
    sine_templates,
)
from cvep_bci.errors import (
    ArgumentError,
    CvepError,
    FormatError,
    MissingInput,
    WorkspaceConflict,
)
from cvep_bci.metrics import (
    LARGE_TARGET_COUNTS,
    confusion_and_accuracy,
    itr_bpm,
    large_target_sweep,
    selection_time_s,
    snr_spectrum,
)
from cvep_bci.pipeline import (
    CALIBRATION_SWEEP_S,
    DesignConfig,
    bundled_protocol,
    calibration_sweep,
    draw_codebooks,
    fit_subject_trf,
    load_experiment_config,
    make_filterbank,
    run_pipeline,
)
from cvep_bci.preprocess import (
    DEFAULT_NOTCH_Q,
    default_filterbank,
    downsample,
    filterbank,
    notch_50hz,
)
from cvep_bci.stimulus import AnnealSchedule, JfpmSpec, generate_jfpm, generate_wn_pool
from cvep_bci.synth import (
    PopulationSpec,
    VirtualSubject,
    make_population,
    population_from_dict,
    population_to_dict,
    simulate_continuous,
    simulate_epochs,
)
from cvep_bci.tdca import TdcaModel, fit_pooled_tdca, fit_tdca, project, spatial_filter
from cvep_bci.transfer import SourceSubject, build_transfer_templates, fit_weights
from cvep_bci.trf import Trf, build_linear_templates

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
LOG_DATE_FORMAT = "%Y-%m-%d %H:%M:%S"

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_MISSING_INPUT = 2
EXIT_REFUSED = 3


def _require(args: argparse.Namespace, *paths: str | Path | None) -> None:
    for path in paths:
        if path is not None and not Path(path).exists():
            raise MissingInput(args.command, str(path))


def _output(args: argparse.Namespace, path: str | Path) -> Path:
    """Return ``path`` once it is safe to write; parents are created."""
    path = Path(path)
    if path.exists() and not args.force:
        raise WorkspaceConflict(f"{path} exists; pass --force to overwrite it")
    path.parent.mkdir(parents=True, exist_ok=True)
    return path


def run_config(args: argparse.Namespace) -> RunConfig:
    """RunConfig from --config (a run config or an experiment) plus overrides."""
    config = RunConfig()
    if args.config is not None:
        _require(args, args.config)
        payload = read_json(args.config)
        if not isinstance(payload, dict):
            raise FormatError(f"{args.config} must hold a JSON object")
        config = RunConfig.from_dict(payload.get("run", payload))
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    if args.shifts is not None:
        config = dataclasses.replace(config, n_shifts=args.shifts)
    if isinstance(args.fb, int):
        config = dataclasses.replace(config, n_filterbanks=args.fb)
    return config


def _band_count(value: str) -> int | str:
    """Parse --fb: ``default`` keeps the configured bands, an integer sets them."""
    if value == "default":
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected 'default' or a band count, got {value!r}"
        ) from None


def _layout(values: Sequence[str]) -> tuple[int, int]:
    """Grid shape from ``5x8`` or ``5 8``."""
    parts = values[0].lower().split("x") if len(values) == 1 else values
    try:
        rows, cols = (int(part) for part in parts)
    except ValueError:
        raise ArgumentError(
            f"layout must be ROWSxCOLS, got {' '.join(values)!r}"
        ) from None
    return rows, cols


def _either(positional: str | None, flag: str | None, what: str) -> str:
    if positional and flag and positional != flag:
        raise ArgumentError(f"{what} given twice: {positional} and {flag}")
    path = positional or flag
    if path is None:
        raise ArgumentError(f"missing {what}")
    return path


def _load_model(args: argparse.Namespace, path: str) -> TdcaModel:
    _require(args, path)
    return TdcaModel.from_dict(read_json(path))


def _load_epochs(args: argparse.Namespace, path: str) -> EpochSet:
    _require(args, path)
    return read_epochs(path)


def cmd_design(args: argparse.Namespace) -> int:
    config = run_config(args)
    if args.kind == "jfpm":
        spec = JfpmSpec(args.f_start, args.f_step, args.targets)
        codebook = generate_jfpm(spec, args.frames)
        write_codebook(_output(args, args.output), codebook)
        logger.info("Wrote %d JFPM codes to %s", len(codebook), args.output)
        return EXIT_OK

    if args.pool_only:
        pool = generate_wn_pool(args.pool, args.frames, config.seed)
        write_codebook(_output(args, args.output), pool)
        logger.info("Wrote a pool of %d WN codes to %s", len(pool), args.output)
        return EXIT_OK

    if args.calib and not args.calib_output:
        raise ArgumentError("--calib needs --calib-output")
    schedule = AnnealSchedule(iters_per_temp=args.anneal_iters, seed=config.seed)
    layout = _layout(args.layout) if args.layout else None
    design = DesignConfig(
        args.pool, args.frames, max(args.calib, 1), args.select, layout, schedule
    )
    calib, test, summary = draw_codebooks(design, config.seed)
    write_codebook(_output(args, args.output), test)
    if args.calib:
        write_codebook(_output(args, args.calib_output), calib)
    print(
        f"min distance {summary['initial_min_distance']:.3f} -> "
        f"{summary['min_distance']:.3f}"
    )
    return EXIT_OK


def _population(
    args: argparse.Namespace, config: RunConfig
) -> list[VirtualSubject]:
    if args.population is None:
        spec = PopulationSpec(n_subjects=args.subjects, fs_hz=config.fs_hz)
        return make_population(spec, config.seed)
    _require(args, args.population)
    payload = read_json(args.population)
    if "subjects" in payload and isinstance(payload["subjects"], list):
        return population_from_dict(payload)
    return make_population(PopulationSpec.from_dict(payload), config.seed)


def cmd_simulate(args: argparse.Namespace) -> int:
    config = run_config(args)
    _require(args, args.codebook)
    codebook = read_codebook(args.codebook)
    subjects = _population(args, config)
    out = Path(args.output)
    write_json(_output(args, out / "population.json"), population_to_dict(subjects))

    for subject in subjects:
        if args.continuous is None:
            epochs = simulate_epochs(
                subject,
                codebook,
                args.trials,
                args.duration,
                args.snr_db,
                n_jobs=args.jobs,
            )
        else:
            recording = simulate_continuous(
                subject,
                codebook.sequences[args.continuous],
                args.duration,
                args.pre,
                args.post,
                args.snr_db,
            )
            epochs = EpochSet(
                recording.data[None],
                [recording.class_id],
                recording.fs_hz,
                recording.channel_names,
            )
            logger.info(
                "%s: stimulus onset at sample %d",
                subject.subject_id,
                recording.onset_sample,
            )
        write_epochs(_output(args, out / f"{subject.subject_id}.cvep"), epochs)
    logger.info("Simulated %d subjects into %s", len(subjects), out)
    return EXIT_OK


def cmd_preprocess(args: argparse.Namespace) -> int:
    config = run_config(args)
    epochs = _load_epochs(args, args.input)
    if args.notch:
        epochs = notch_50hz(epochs, config.notch_hz, args.quality)
    if args.downsample > 1:
        epochs = downsample(epochs, args.downsample)
    if args.fb is None:
        write_epochs(_output(args, args.output), epochs)
        return EXIT_OK

    # --fb turns the output into a directory of sub-band files
    spec = default_filterbank(config.n_filterbanks, config.filterbank_high_hz)
    out, stem = Path(args.output), Path(args.input).stem
    for band, sub_band in enumerate(filterbank(epochs, spec), start=1):
        write_epochs(_output(args, out / f"{stem}_fb{band}.cvep"), sub_band)
    logger.info("Wrote %d sub-bands of %s to %s", spec.n_bands, args.input, out)
    return EXIT_OK


def cmd_fit_spatial(args: argparse.Namespace) -> int:
    config = run_config(args)
    recordings = [_load_epochs(args, path) for path in args.inputs]
    components = args.components or config.n_spatial_components
    if len(recordings) == 1:
        model = fit_tdca(
            recordings[0], components, config.ridge_eps, config.delay_embedding
        )
    else:
        model = fit_pooled_tdca(
            recordings, components, config.ridge_eps, config.delay_embedding
        )
    write_json(_output(args, args.output), model.to_dict())
    print("eigenvalues: " + " ".join(f"{v:.4g}" for v in model.eigenvalues))
    return EXIT_OK


def cmd_fit_trf(args: argparse.Namespace) -> int:
    config = run_config(args)
    if args.alpha is not None:
        config = dataclasses.replace(config, svd_alpha=args.alpha)
    if args.rule is not None:
        config = dataclasses.replace(config, truncation_rule=args.rule)
    epochs = _load_epochs(args, args.input)
    model = _load_model(args, _either(args.model_path, args.tdca, "TDCA model"))
    codebook = _either(args.codebook_path, args.codebook, "codebook")
    _require(args, codebook)
    trf = fit_subject_trf(epochs, model, read_codebook(codebook), config)
    write_json(_output(args, args.output), trf.to_dict())
    return EXIT_OK


def _source_archive(
    args: argparse.Namespace, directory: str
) -> list[tuple[str, str, str, str]]:
    """(id, calib, test, tdca) for every ``<id>_calib.cvep`` in ``directory``.

    The filter is ``<id>_tdca.json`` next to the recordings, or in a sibling
    ``models`` directory as a pipeline workspace lays it out. The target
    subject is left out.
    """
    _require(args, directory)
    root = Path(directory)
    entries = []
    for calib in sorted(root.glob("*_calib.cvep")):
        subject_id = calib.name.removesuffix("_calib.cvep")
        if subject_id == args.target_id:
            continue
        tdca = root / f"{subject_id}_tdca.json"
        if not tdca.exists():
            tdca = root.parent / "models" / tdca.name
        test = root / f"{subject_id}_test.cvep"
        entries.append((subject_id, str(calib), str(test), str(tdca)))
    if not entries:
        raise MissingInput(args.command, str(root / "*_calib.cvep"))
    return entries


def cmd_fit_transfer(args: argparse.Namespace) -> int:
    config = run_config(args)
    target = _load_epochs(
        args, _either(args.input, args.target, "target calibration epochs")
    )
    entries = list(args.source)
    if args.sources:
        entries += _source_archive(args, args.sources)
    if not entries:
        raise ArgumentError("fit-transfer needs --source or --sources")
    sources = [
        SourceSubject.from_epochs(
            subject_id,
            _load_epochs(args, calib),
            _load_epochs(args, test),
            _load_model(args, tdca),
        )
        for subject_id, calib, test, tdca in entries
    ]
    if args.tdca:
        model = _load_model(args, args.tdca)
    else:
        model = fit_tdca(target, config.n_spatial_components, config.ridge_eps)
    weights = fit_weights(target, model, sources, args.target_id)
    pairs = zip(weights.subject_ids, weights.weights)
    print(" ".join(f"{sid}={w:.4f}" for sid, w in pairs))
    if args.weights_output:
        write_json(_output(args, args.weights_output), weights.to_dict())

    n_classes = args.classes or len(sources[0].test_classes)
    bank = build_transfer_templates(
        weights,
        sources,
        range(n_classes),
        target.fs_hz,
        round(args.duration * target.fs_hz) if args.duration else None,
        make_filterbank(config),
        config.n_shifts,
        config.fb_weight_a,
        config.fb_weight_b,
    )
    write_json(_output(args, args.output), bank.to_dict())
    logger.info("Wrote %d transfer templates to %s", bank.n_classes, args.output)
    return EXIT_OK


def _decode_bank(
    args: argparse.Namespace, config: RunConfig, epochs: EpochSet
) -> TemplateBank:
    bands = make_filterbank(config)
    if args.bank:
        _require(args, args.bank)
        bank = TemplateBank.from_dict(read_json(args.bank))
        if args.shifts is not None:
            bank = bank.with_shifts(args.shifts)
        return bank
    if args.jfpm:
        spec = JfpmSpec(n_targets=args.jfpm)
        return sine_templates(
            spec,
            epochs.fs_hz,
            epochs.duration_s,
            args.harmonics,
            bands,
            config.n_shifts,
            config.fb_weight_a,
            config.fb_weight_b,
        )
    _require(args, args.trf, args.codebook)
    return build_linear_templates(
        Trf.from_dict(read_json(args.trf)),
        read_codebook(args.codebook),
        epochs.fs_hz,
        epochs.duration_s,
        bands,
        config.n_shifts,
        config.fb_weight_a,
        config.fb_weight_b,
    )


def cmd_decode(args: argparse.Namespace) -> int:
    config = run_config(args)
    epochs = _load_epochs(args, args.input)
    if args.duration:
        epochs = epochs.crop(round(args.duration * epochs.fs_hz))
    model = _load_model(args, args.tdca)
    if args.components:
        model = model.leading(args.components)
    bank = _decode_bank(args, config, epochs)
    result = batch_decode(epochs, model, bank, args.jobs)
    write_json(
        _output(args, args.output),
        {
            "config_hash": config.config_hash(),
            "seed": config.seed,
            "input": str(Path(args.input).resolve()),
            "model": str(Path(args.tdca).resolve()),
            "n_classes": bank.n_classes,
            "duration_s": epochs.duration_s,
            "labels": epochs.labels.tolist(),
            "predictions": result.predictions.tolist(),
            "accuracy": result.accuracy,
            "n_failed": result.n_failed,
            "trials": [_trial_record(trial) for trial in result.trials],
        },
    )
    if result.accuracy is None:
        print(f"decoded {epochs.n_trials} trials")
    else:
        print(f"accuracy {100 * result.accuracy:.2f}% over {epochs.n_trials} trials")
    return EXIT_OK


def _trial_record(trial: TrialDecode) -> dict[str, Any]:
    record: dict[str, Any] = {"index": trial.index, "success": trial.success}
    if trial.result is not None:
        record.update(trial.result.to_dict())
    if trial.error is not None:
        record["error"] = str(trial.error)
    return record


def cmd_eval(args: argparse.Namespace) -> int:
    config = run_config(args)
    report: dict[str, Any] = {"config_hash": config.config_hash(), "seed": config.seed}
    # without --itr or --snr every metric the inputs allow is computed
    select_all = not (args.itr or args.snr)
    results: dict[str, Any] = {}
    results_path = args.results_path or args.results
    if results_path:
        _require(args, results_path)
        results = read_json(results_path)
    elif args.itr:
        raise ArgumentError("--itr needs a decode results file")

    if results and (args.itr or select_all):
        matrix, accuracy = confusion_and_accuracy(
            results["labels"], results["predictions"], results["n_classes"]
        )
        selection = selection_time_s(results["duration_s"], config.gaze_shift_s)
        rate = itr_bpm(results["n_classes"], accuracy, selection)
        report.update(accuracy=accuracy, itr_bpm=rate, confusion=matrix.tolist())
        print(f"accuracy {100 * accuracy:.2f}%  ITR {rate:.2f} bpm")

    if args.snr or (select_all and args.data):
        # the decoded recording and its model stand in for --data and --tdca
        data = args.data or results.get("input")
        tdca = args.tdca or results.get("model")
        if data is None or tdca is None:
            raise ArgumentError("--snr needs --data and --tdca, or decode results")
        epochs = spatial_filter(_load_epochs(args, data), _load_model(args, tdca))
        upper = min(args.mi_upper or config.mi_upper_hz, epochs.fs_hz / 2)
        spectra = {}
        for class_id in epochs.classes:
            trials = epochs.select(np.flatnonzero(epochs.labels == class_id))
            spectra[str(class_id)] = snr_spectrum(trials, upper_hz=upper).to_dict()
        report["snr"] = spectra
        for class_id, spectrum in spectra.items():
            print(f"class {class_id}: {spectrum['mutual_info_bits_per_s']} bits/s")
    if args.output:
        write_json(_output(args, args.output), report)
    return EXIT_OK


def cmd_sweep(args: argparse.Namespace) -> int:
    config = run_config(args)
    if args.kind == "calibration":
        _require(args, args.experiment)
        experiment = load_experiment_config(args.experiment)
        if args.seed is not None:
            run = dataclasses.replace(experiment.run, seed=args.seed)
            experiment = dataclasses.replace(experiment, run=run)
        sweep = calibration_sweep(experiment, args.durations, args.jobs)
        write_json(_output(args, args.output), sweep.to_dict())
        print(sweep.table())
        return EXIT_OK

    epochs = spatial_filter(
        _load_epochs(args, args.data), _load_model(args, args.tdca)
    )
    _require(args, args.trf, args.pool)
    pool = read_codebook(args.pool)
    true_indices = args.true_indices or list(range(int(epochs.labels.max()) + 1))
    points = large_target_sweep(
        epochs,
        Trf.from_dict(read_json(args.trf)),
        pool,
        true_indices,
        args.n_list,
        make_filterbank(config),
        config.n_shifts,
        config.gaze_shift_s,
        args.jobs,
        config.fb_weight_a,
        config.fb_weight_b,
    )
    write_json(
        _output(args, args.output),
        {
            "config_hash": config.config_hash(),
            "points": [dataclasses.asdict(point) for point in points],
        },
    )
    for point in points:
        print(
            f"{point.n_templates:>6} {100 * point.accuracy:6.2f}% "
            f"{point.itr_bpm:8.2f} bpm"
        )
    return EXIT_OK


def cmd_onset_scan(args: argparse.Namespace) -> int:
    config = run_config(args)
    recording = _load_epochs(args, args.input)
    _require(args, args.bank)
    bank = TemplateBank.from_dict(read_json(args.bank))
    sources = project(recording.data[args.trial], _load_model(args, args.tdca))
    scan = onset_scan(
        sources,
        bank,
        round(args.onset * recording.fs_hz),
        tuple(args.range),
        args.correction,
    )
    payload = scan.to_dict() | {"config_hash": config.config_hash()}
    write_json(_output(args, args.output), payload)
    print(
        f"onset {scan.detected_onset_ms:+.1f} ms, class {scan.predicted_class}, "
        f"p = {scan.min_error:.3g}"
    )
    return EXIT_OK


def cmd_run(args: argparse.Namespace) -> int:
    path = Path(args.experiment)
    if path.suffix != ".json":
        path = bundled_protocol(args.experiment)
    _require(args, path)
    report = run_pipeline(path, args.force, args.jobs, args.workspace, args.seed)
    for method, durations in report["metrics"]["methods"].items():
        for duration, summary in durations.items():
            print(
                f"{method:>10} {duration:>5} s  "
                f"{100 * summary['accuracy_mean']:6.2f}%  "
                f"{summary['itr_bpm_mean']:7.2f} bpm"
            )
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, help="override the run seed")
    common.add_argument(
        "--config", help="run config JSON, or an experiment config with a 'run' key"
    )
    common.add_argument(
        "--force", action="store_true", help="overwrite existing outputs"
    )
    common.add_argument("--jobs", type=int, default=1, help="parallel workers")
    common.add_argument("--shifts", type=int, help="template shifts each way")
    common.add_argument(
        "--fb",
        type=_band_count,
        help="filter bank: 'default' or a band count",
    )
    common.add_argument(
        "--log-level",
        default="INFO",
        choices=["DEBUG", "INFO", "WARNING", "ERROR"],
    )

    parser = argparse.ArgumentParser(
        prog="cvep", description="Minimal-calibration cVEP/SSVEP decoding toolkit"
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def add(name: str, handler: Callable[[argparse.Namespace], int], summary: str):
        sub = commands.add_parser(name, parents=[common], help=summary)
        sub.set_defaults(handler=handler)
        return sub

    design = add("design", cmd_design, "generate WN or JFPM codebooks")
    design.add_argument("kind", nargs="?", choices=["wn", "jfpm"], default="wn")
    design.add_argument("-o", "--output", required=True)
    design.add_argument("--frames", type=int, default=180)
    design.add_argument("--pool", type=int, default=1000)
    design.add_argument("--select", type=int, default=40)
    design.add_argument("--layout", nargs="+", metavar="RxC", help="e.g. 5x8")
    design.add_argument("--calib", type=int, default=0, help="calibration codes")
    design.add_argument("--calib-output")
    design.add_argument("--pool-only", action="store_true", help="write the raw pool")
    design.add_argument("--anneal-iters", type=int, default=200)
    design.add_argument("--targets", type=int, default=40)
    design.add_argument("--f-start", type=float, default=8.0)
    design.add_argument("--f-step", type=float, default=0.2)

    simulate = add("simulate", cmd_simulate, "simulate virtual subjects")
    simulate.add_argument("--codebook", required=True)
    simulate.add_argument("-o", "--output", required=True, help="output directory")
    simulate.add_argument("--population", help="population spec or subjects JSON")
    simulate.add_argument("--subjects", type=int, default=1)
    simulate.add_argument("--trials", type=int, default=1)
    simulate.add_argument("--duration", type=float, default=3.0)
    simulate.add_argument("--snr-db", type=float)
    simulate.add_argument("--continuous", type=int, metavar="CLASS")
    simulate.add_argument("--pre", type=float, default=0.5)
    simulate.add_argument("--post", type=float, default=0.5)

    preprocess = add("preprocess", cmd_preprocess, "notch, downsample, sub-bands")
    preprocess.add_argument("input")
    preprocess.add_argument(
        "-o", "--output", required=True, help="output file, a directory with --fb"
    )
    preprocess.add_argument("--notch", action="store_true")
    preprocess.add_argument("--quality", type=float, default=DEFAULT_NOTCH_Q)
    preprocess.add_argument("--downsample", type=int, default=1)

    spatial = add("fit-spatial", cmd_fit_spatial, "fit TDCA spatial filters")
    spatial.add_argument("inputs", nargs="+", help="several inputs fit a pooled filter")
    spatial.add_argument("-o", "--output", required=True)
    spatial.add_argument("--components", type=int)

    trf = add("fit-trf", cmd_fit_trf, "fit a TRF on calibration epochs")
    trf.add_argument("input")
    trf.add_argument("model_path", nargs="?", metavar="MODEL")
    trf.add_argument("codebook_path", nargs="?", metavar="CODEBOOK")
    trf.add_argument("--codebook")
    trf.add_argument("--tdca", "--model", dest="tdca")
    trf.add_argument("-o", "--output", required=True)
    trf.add_argument("--alpha", type=float)
    trf.add_argument("--rule", choices=["below_alpha", "reach_alpha"])

    transfer = add("fit-transfer", cmd_fit_transfer, "build transfer templates")
    transfer.add_argument("input", nargs="?", help="target calibration epochs")
    transfer.add_argument("--target", help="target calibration epochs")
    transfer.add_argument(
        "--tdca", "--model", dest="tdca", help="target model, fitted when absent"
    )
    transfer.add_argument(
        "--source",
        nargs=4,
        action="append",
        default=[],
        metavar=("ID", "CALIB", "TEST", "TDCA"),
    )
    transfer.add_argument(
        "--sources",
        metavar="DIR",
        help="directory of <id>_calib.cvep, <id>_test.cvep and <id>_tdca.json",
    )
    transfer.add_argument("--target-id")
    transfer.add_argument("-o", "--output", required=True, help="template bank")
    transfer.add_argument("--weights-output")
    transfer.add_argument("--classes", type=int)
    transfer.add_argument("--duration", type=float)

    decode = add("decode", cmd_decode, "classify epochs against templates")
    decode.add_argument("input")
    decode.add_argument("--tdca", "--model", dest="tdca", required=True)
    templates = decode.add_mutually_exclusive_group(required=True)
    templates.add_argument("--bank")
    templates.add_argument("--trf")
    templates.add_argument("--jfpm", type=int, metavar="N_TARGETS")
    decode.add_argument("--codebook")
    decode.add_argument("--harmonics", type=int, default=1)
    decode.add_argument("--components", type=int)
    decode.add_argument("--duration", type=float)
    decode.add_argument("-o", "--output", required=True)

    evaluate = add("eval", cmd_eval, "accuracy, ITR, SNR and mutual information")
    evaluate.add_argument("results_path", nargs="?", metavar="RESULTS")
    evaluate.add_argument("--results")
    evaluate.add_argument("--itr", action="store_true", help="accuracy and ITR")
    evaluate.add_argument("--snr", action="store_true", help="SNR spectra and MI")
    evaluate.add_argument("--data")
    evaluate.add_argument("--tdca", "--model", dest="tdca")
    evaluate.add_argument(
        "--mi-k", "--mi-upper", dest="mi_upper", type=float, help="MI limit (Hz)"
    )
    evaluate.add_argument("-o", "--output")

    sweep = add("sweep", cmd_sweep, "calibration-time or target-count sweeps")
    sweep.add_argument("kind", choices=["calibration", "targets"])
    sweep.add_argument("-o", "--output", required=True)
    sweep.add_argument("--experiment")
    sweep.add_argument(
        "--durations", type=float, nargs="+", default=list(CALIBRATION_SWEEP_S)
    )
    sweep.add_argument("--data")
    sweep.add_argument("--tdca", "--model", dest="tdca")
    sweep.add_argument("--trf")
    sweep.add_argument("--pool")
    sweep.add_argument("--true-indices", type=int, nargs="+")
    sweep.add_argument(
        "--n-list", type=int, nargs="+", default=list(LARGE_TARGET_COUNTS)
    )

    scan = add("onset-scan", cmd_onset_scan, "locate the stimulus onset")
    scan.add_argument("input")
    scan.add_argument("--tdca", "--model", dest="tdca", required=True)
    scan.add_argument("--bank", required=True)
    scan.add_argument("--onset", type=float, required=True, help="nominal onset (s)")
    scan.add_argument("--trial", type=int, default=0)
    scan.add_argument(
        "--range", type=float, nargs=2, default=list(ONSET_SHIFT_RANGE_MS)
    )
    scan.add_argument("--correction", choices=["sidak", "none"], default="sidak")
    scan.add_argument("-o", "--output", required=True)

    run = add("run", cmd_run, "run an experiment pipeline")
    run.add_argument("experiment", help="experiment JSON or bundled protocol name")
    run.add_argument("--workspace")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level),
        format=LOG_FORMAT,
        datefmt=LOG_DATE_FORMAT,
    )
    try:
        return args.handler(args)
    except MissingInput as exc:
        logger.error("%s", exc)
        return EXIT_MISSING_INPUT
    except CvepError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_REFUSED
    except Exception:
        logger.exception("Unexpected failure in %s", args.command)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
