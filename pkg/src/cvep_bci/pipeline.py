"""
Experiment pipeline

An experiment runs five stages in order: design the codebooks, simulate a
population, calibrate every subject, decode the test runs and report. Each
stage records a content hash of its settings and input files in
``stages.json``. A stage whose hash and outputs are unchanged is skipped;
outputs that came from other inputs are only replaced when ``force`` is set.
"""

from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any, Literal, Sequence

import numpy as np

from cvep_bci.containers import (
    Codebook,
    EpochSet,
    RunConfig,
    canonical_hash,
    read_codebook,
    read_epochs,
    read_json,
    write_codebook,
    write_epochs,
    write_json,
)
from cvep_bci.decoder import TemplateBank, batch_decode
from cvep_bci.errors import (
    ArgumentError,
    FormatError,
    InvariantViolation,
    MissingInput,
    WorkspaceConflict,
)
from cvep_bci.metrics import (
    Performance,
    format_performance_table,
    itr_bpm,
    selection_time_s,
    snr_spectrum,
)
from cvep_bci.preprocess import FilterBankSpec, default_filterbank
from cvep_bci.stimulus import (
    AnnealSchedule,
    anneal_codes,
    generate_wn_pool,
    optimize_layout,
)
from cvep_bci.synth import (
    PopulationSpec,
    VirtualSubject,
    make_population,
    population_from_dict,
    population_to_dict,
    simulate_epochs,
)
from cvep_bci.tdca import TdcaModel, fit_pooled_tdca, fit_tdca, spatial_filter
from cvep_bci.transfer import (
    SourceSubject,
    TransferWeights,
    build_transfer_templates,
    fit_weights,
)
from cvep_bci.trf import Trf, average_trf, build_linear_templates, fit_trf_from_epochs

logger = logging.getLogger(__name__)

STAGES = ("design", "simulate", "calibrate", "decode", "report")
METHODS = ("linear", "transfer", "zero_shot")
STAGE_INDEX = "stages.json"
REPORT_NAME = "report.json"
TABLE_NAME = "report.txt"
REPORT_FORMAT = "cvep-report"
SWEEP_FORMAT = "cvep-calibration-sweep"

# Calibration budgets (seconds) of the calibration-time curve
CALIBRATION_SWEEP_S = (9.0, 18.0, 27.0, 36.0, 45.0, 54.0, 60.0)

Method = Literal["linear", "transfer", "zero_shot"]


@dataclass(frozen=True, slots=True)
class DesignConfig:
    """How the calibration and test codebooks are drawn from a WN pool."""

    pool_size: int = 1000
    n_frames: int = 180
    n_calib_codes: int = 20
    n_test_codes: int = 40
    layout: tuple[int, int] | None = (5, 8)
    anneal: AnnealSchedule = field(default_factory=AnnealSchedule)

    def __post_init__(self) -> None:
        if min(self.n_frames, self.n_calib_codes) < 1 or self.n_test_codes < 2:
            raise InvariantViolation(
                "need frames, calibration codes and two test codes"
            )
        if self.pool_size < self.n_calib_codes + self.n_test_codes:
            raise InvariantViolation(
                f"a pool of {self.pool_size} cannot hold "
                f"{self.n_calib_codes} + {self.n_test_codes} disjoint codes"
            )
        if self.layout is not None:
            rows, cols = self.layout
            if rows * cols != self.n_test_codes:
                raise InvariantViolation(
                    f"{rows}x{cols} layout for {self.n_test_codes} test codes"
                )
            object.__setattr__(self, "layout", (int(rows), int(cols)))

    def to_dict(self) -> dict[str, Any]:
        return {
            "pool_size": self.pool_size,
            "n_frames": self.n_frames,
            "n_calib_codes": self.n_calib_codes,
            "n_test_codes": self.n_test_codes,
            "layout": None if self.layout is None else list(self.layout),
            "anneal": asdict(self.anneal),
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> DesignConfig:
        values = dict(payload)
        if values.get("layout") is not None:
            values["layout"] = tuple(values["layout"])
        if "anneal" in values:
            values["anneal"] = AnnealSchedule(**values["anneal"])
        return cls(**values)


@dataclass(frozen=True, slots=True)
class ProtocolConfig:
    """Trial counts and durations of the calibration and test runs."""

    calib_trials_per_class: int = 4
    calib_duration_s: float = 3.0
    test_trials_per_class: int = 1
    test_duration_s: float = 3.0
    decode_durations_s: tuple[float, ...] = (0.75, 1.0, 2.0, 3.0)
    snr_db: float | None = 0.0
    sweep_decode_s: float = 1.0

    def __post_init__(self) -> None:
        if min(self.calib_trials_per_class, self.test_trials_per_class) < 1:
            raise InvariantViolation("every run needs at least one trial per class")
        if not (self.calib_duration_s > 0 and self.test_duration_s > 0):
            raise InvariantViolation("trial durations must be positive")
        durations = tuple(float(d) for d in self.decode_durations_s)
        if not durations or any(
            not 0 < d <= self.test_duration_s
            for d in (*durations, self.sweep_decode_s)
        ):
            raise InvariantViolation(
                f"decoding windows must lie in (0, {self.test_duration_s}] s"
            )
        object.__setattr__(self, "decode_durations_s", durations)

    def to_dict(self) -> dict[str, Any]:
        values = asdict(self)
        values["decode_durations_s"] = list(self.decode_durations_s)
        return values

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> ProtocolConfig:
        values = dict(payload)
        if "decode_durations_s" in values:
            values["decode_durations_s"] = tuple(values["decode_durations_s"])
        return cls(**values)


@dataclass(frozen=True, slots=True)
class ExperimentConfig:
    """Everything needed to re-derive an experiment report."""

    run: RunConfig = field(default_factory=RunConfig)
    design: DesignConfig = field(default_factory=DesignConfig)
    population: PopulationSpec = field(default_factory=PopulationSpec)
    protocol: ProtocolConfig = field(default_factory=ProtocolConfig)
    methods: tuple[Method, ...] = ("linear", "transfer")
    workspace: str = "workspace"
    calib_codebook: str | None = None
    test_codebook: str | None = None

    def __post_init__(self) -> None:
        methods = tuple(self.methods)
        unknown = sorted(set(methods) - set(METHODS))
        if not methods or unknown:
            raise InvariantViolation(f"methods must be drawn from {METHODS}: {unknown}")
        if self.population.fs_hz != self.run.fs_hz:
            raise InvariantViolation(
                f"population sampled at {self.population.fs_hz} Hz, "
                f"run configured for {self.run.fs_hz} Hz"
            )
        cross_subject = {"transfer", "zero_shot"} & set(methods)
        if cross_subject and self.population.n_subjects < 2:
            raise InvariantViolation(f"{sorted(cross_subject)} need two subjects")
        if "transfer" in methods and self.run.delay_embedding:
            raise InvariantViolation("transfer needs filters without delay embedding")
        if (self.calib_codebook is None) != (self.test_codebook is None):
            raise InvariantViolation("give both codebook paths or neither")
        object.__setattr__(self, "methods", methods)

    def to_dict(self) -> dict[str, Any]:
        return {
            "run": self.run.to_dict(),
            "design": self.design.to_dict(),
            "population": self.population.to_dict(),
            "protocol": self.protocol.to_dict(),
            "methods": list(self.methods),
            "workspace": self.workspace,
            "calib_codebook": self.calib_codebook,
            "test_codebook": self.test_codebook,
        }

    @classmethod
    def from_dict(cls, payload: dict[str, Any]) -> ExperimentConfig:
        known = {
            "run",
            "design",
            "population",
            "protocol",
            "methods",
            "workspace",
            "calib_codebook",
            "test_codebook",
        }
        unknown = set(payload) - known
        if unknown:
            raise InvariantViolation(f"unknown experiment keys: {sorted(unknown)}")
        return cls(
            RunConfig.from_dict(payload.get("run", {})),
            DesignConfig.from_dict(payload.get("design", {})),
            PopulationSpec.from_dict(payload.get("population", {})),
            ProtocolConfig.from_dict(payload.get("protocol", {})),
            tuple(payload.get("methods", ("linear", "transfer"))),
            str(payload.get("workspace", "workspace")),
            payload.get("calib_codebook"),
            payload.get("test_codebook"),
        )

    def config_hash(self) -> str:
        """SHA-256 of the canonical config; the workspace location is left out."""
        payload = self.to_dict()
        del payload["workspace"]
        return canonical_hash(payload)


def load_experiment_config(path: str | Path) -> ExperimentConfig:
    """Load a config, resolving relative paths against the file's directory."""
    path = Path(path)
    if not path.exists():
        raise MissingInput("config", str(path))
    payload = read_json(path)
    if not isinstance(payload, dict):
        raise FormatError(f"{path} must hold a JSON object")
    for key in ("workspace", "calib_codebook", "test_codebook"):
        if payload.get(key) is not None and not Path(payload[key]).is_absolute():
            payload[key] = str(path.parent / payload[key])
    return ExperimentConfig.from_dict(payload)


def file_digest(path: Path) -> str:
    with path.open("rb") as handle:
        return hashlib.file_digest(handle, "sha256").hexdigest()


def _derived_seed(seed: int, stream: int) -> int:
    """Independent seed for one of several runs of a subject."""
    return int(np.random.SeedSequence([seed, stream]).generate_state(1)[0])


def make_filterbank(run: RunConfig) -> FilterBankSpec:
    spec = default_filterbank(run.n_filterbanks, run.filterbank_high_hz)
    spec.check_rate(run.fs_hz)
    return spec


def draw_codebooks(
    design: DesignConfig, seed: int
) -> tuple[Codebook, Codebook, dict[str, Any]]:
    """Anneal test codes out of a seeded WN pool and draw calibration codes.

    The test codes are placed on the speller grid when ``design.layout`` is
    set. Calibration codes come from the part of the pool the test codes left.
    """
    pool = generate_wn_pool(design.pool_size, design.n_frames, seed)
    selection = anneal_codes(pool, design.n_test_codes, design.anneal)
    test = selection.codebook
    if design.layout is not None:
        test = optimize_layout(test, *design.layout, schedule=design.anneal)
    chosen = set(selection.pool_indices)
    remaining = [index for index in range(len(pool)) if index not in chosen]
    rng = np.random.default_rng(_derived_seed(seed, 0))
    calib_indices = sorted(
        int(i) for i in rng.choice(remaining, design.n_calib_codes, replace=False)
    )
    summary = {
        "test_pool_indices": list(selection.pool_indices),
        "calib_pool_indices": calib_indices,
        "min_distance": selection.min_distance,
        "initial_min_distance": selection.initial_min_distance,
    }
    return pool.subset(calib_indices), test, summary


def design_codebooks(
    config: ExperimentConfig,
) -> tuple[Codebook, Codebook, dict[str, Any]]:
    """Return (calibration, test) codebooks and a summary of how they were made.

    Codebook files named in the config are used as they are. Otherwise the
    test codes are annealed out of a seeded WN pool for separability and
    placed on the speller grid, and the calibration codes are drawn from the
    rest of the pool.
    """
    if config.calib_codebook and config.test_codebook:
        for path in (config.calib_codebook, config.test_codebook):
            if not Path(path).exists():
                raise MissingInput("design", path)
        summary = {"calib_codebook": config.calib_codebook}
        summary["test_codebook"] = config.test_codebook
        calib = read_codebook(config.calib_codebook)
        test = read_codebook(config.test_codebook)
    else:
        calib, test, summary = draw_codebooks(config.design, config.run.seed)

    protocol = config.protocol
    for name, codebook, duration in (
        ("calibration", calib, protocol.calib_duration_s),
        ("test", test, protocol.test_duration_s),
    ):
        if codebook.sequences[0].duration_s + 1e-9 < duration:
            raise ArgumentError(
                f"{name} codes last {codebook.sequences[0].duration_s:.3f} s, "
                f"trials last {duration} s"
            )
    return calib, test, summary


def simulate_subject(
    subject: VirtualSubject,
    calib_codes: Codebook,
    test_codes: Codebook,
    protocol: ProtocolConfig,
    n_jobs: int = 1,
) -> tuple[EpochSet, EpochSet]:
    """Calibration and test runs of one subject with independent noise."""
    calib = simulate_epochs(
        subject,
        calib_codes,
        protocol.calib_trials_per_class,
        protocol.calib_duration_s,
        protocol.snr_db,
        seed=_derived_seed(subject.seed, 0),
        n_jobs=n_jobs,
    )
    test = simulate_epochs(
        subject,
        test_codes,
        protocol.test_trials_per_class,
        protocol.test_duration_s,
        protocol.snr_db,
        seed=_derived_seed(subject.seed, 1),
        n_jobs=n_jobs,
    )
    return calib, test


def fit_subject_trf(
    calib: EpochSet, model: TdcaModel, codebook: Codebook, run: RunConfig
) -> Trf:
    return fit_trf_from_epochs(
        spatial_filter(calib, model),
        codebook,
        run.tau_min_s,
        run.tau_max_s,
        run.svd_alpha,
        run.truncation_rule,
    )


def _fit_model(calib: EpochSet, run: RunConfig) -> TdcaModel:
    return fit_tdca(
        calib, run.n_spatial_components, run.ridge_eps, run.delay_embedding
    )


class Pipeline:
    """Runs the stages of one experiment inside its workspace directory."""

    def __init__(
        self, config: ExperimentConfig, force: bool = False, n_jobs: int = 1
    ) -> None:
        self.config = config
        self.workspace = Path(config.workspace)
        self.force = force
        self.n_jobs = n_jobs
        self._index: dict[str, Any] = {}
        self._subject_ids = [
            subject.subject_id
            for subject in make_population(config.population, config.run.seed)
        ]

    def path(self, *parts: str) -> Path:
        return self.workspace.joinpath(*parts)

    def run(self, stages: Sequence[str] = STAGES) -> dict[str, Any]:
        """Run ``stages`` in order and return the report document."""
        unknown = sorted(set(stages) - set(STAGES))
        if unknown:
            raise ArgumentError(f"unknown stages {unknown}; choose from {STAGES}")
        self.workspace.mkdir(parents=True, exist_ok=True)
        self._index = self._load_index()
        for name in STAGES:
            if name in stages:
                self._run_stage(name)
        report = self.path(REPORT_NAME)
        return read_json(report) if report.exists() else {}

    def _load_index(self) -> dict[str, Any]:
        index = self.path(STAGE_INDEX)
        if not index.exists():
            return {}
        payload = read_json(index)
        if not isinstance(payload, dict):
            raise FormatError(f"{index} must hold a JSON object")
        return payload

    def _relative(self, path: Path) -> str:
        try:
            return path.relative_to(self.workspace).as_posix()
        except ValueError:
            return str(path)

    def _stage_inputs(self, name: str) -> list[Path]:
        if name == "design":
            external = (self.config.calib_codebook, self.config.test_codebook)
            if all(external):
                return [Path(path) for path in external if path]
            return []
        previous = STAGES[STAGES.index(name) - 1]
        return self._stage_outputs(previous)

    def _stage_outputs(self, name: str) -> list[Path]:
        ids = self._subject_ids
        methods = self.config.methods
        if name == "design":
            return [self.path("codebooks", f) for f in ("calib.json", "test.json")] + [
                self.path("codebooks", "design.json")
            ]
        if name == "simulate":
            return [self.path("population.json")] + [
                self.path("data", f"{sid}_{run}.cvep")
                for sid in ids
                for run in ("calib", "test")
            ]
        if name == "calibrate":
            suffixes = ["tdca"]
            if "linear" in methods:
                suffixes.append("trf")
            if "transfer" in methods:
                suffixes.append("transfer")
            if "zero_shot" in methods:
                suffixes.extend(["zero_shot_tdca", "zero_shot_trf"])
            return [
                self.path("models", f"{sid}_{suffix}.json")
                for sid in ids
                for suffix in suffixes
            ]
        if name == "decode":
            return [self.path("results.json")]
        return [self.path(REPORT_NAME), self.path(TABLE_NAME)]

    def _stage_settings(self, name: str) -> dict[str, Any]:
        config = self.config.to_dict()
        if name == "design":
            return {
                "seed": self.config.run.seed,
                "design": config["design"],
                "protocol": config["protocol"],
            }
        if name == "simulate":
            return {
                "seed": self.config.run.seed,
                "population": config["population"],
                "protocol": config["protocol"],
            }
        return {
            "run": config["run"],
            "protocol": config["protocol"],
            "methods": config["methods"],
        }

    def _run_stage(self, name: str) -> None:
        inputs = self._stage_inputs(name)
        for path in inputs:
            if not path.exists():
                raise MissingInput(name, str(path))
        key = canonical_hash(
            {
                "stage": name,
                "settings": self._stage_settings(name),
                "inputs": {self._relative(p): file_digest(p) for p in inputs},
            }
        )
        outputs = self._stage_outputs(name)
        record = self._index.get(name)
        if record is not None and record.get("key") == key and self._intact(record):
            logger.info("Stage %s is up to date", name)
            return

        existing = [self._relative(path) for path in outputs if path.exists()]
        if existing and not self.force:
            raise WorkspaceConflict(
                f"stage '{name}' would overwrite {existing[0]} in {self.workspace}, "
                "which came from other inputs; rerun with force to replace it"
            )
        logger.info("Running stage %s", name)
        for directory in {path.parent for path in outputs}:
            directory.mkdir(parents=True, exist_ok=True)
        getattr(self, f"_{name}")()

        self._index[name] = {
            "key": key,
            "outputs": {self._relative(p): file_digest(p) for p in outputs},
        }
        write_json(self.path(STAGE_INDEX), self._index)

    def _intact(self, record: dict[str, Any]) -> bool:
        for relative, digest in record.get("outputs", {}).items():
            path = self.path(relative)
            if not path.exists() or file_digest(path) != digest:
                return False
        return True

    def _codebooks(self) -> tuple[Codebook, Codebook]:
        return (
            read_codebook(self.path("codebooks", "calib.json")),
            read_codebook(self.path("codebooks", "test.json")),
        )

    def _recordings(self, sid: str) -> tuple[EpochSet, EpochSet]:
        return (
            read_epochs(self.path("data", f"{sid}_calib.cvep")),
            read_epochs(self.path("data", f"{sid}_test.cvep")),
        )

    def _model(self, sid: str, name: str = "tdca") -> TdcaModel:
        return TdcaModel.from_dict(read_json(self.path("models", f"{sid}_{name}.json")))

    def _trf(self, sid: str, name: str = "trf") -> Trf:
        return Trf.from_dict(read_json(self.path("models", f"{sid}_{name}.json")))

    def _design(self) -> None:
        calib, test, summary = design_codebooks(self.config)
        write_codebook(self.path("codebooks", "calib.json"), calib)
        write_codebook(self.path("codebooks", "test.json"), test)
        write_json(self.path("codebooks", "design.json"), summary)

    def _simulate(self) -> None:
        calib_codes, test_codes = self._codebooks()
        subjects = make_population(self.config.population, self.config.run.seed)
        write_json(self.path("population.json"), population_to_dict(subjects))
        for subject in subjects:
            calib, test = simulate_subject(
                subject, calib_codes, test_codes, self.config.protocol, self.n_jobs
            )
            write_epochs(self.path("data", f"{subject.subject_id}_calib.cvep"), calib)
            write_epochs(self.path("data", f"{subject.subject_id}_test.cvep"), test)

    def _calibrate(self) -> None:
        run, methods = self.config.run, self.config.methods
        calib_codes, _ = self._codebooks()
        recordings = {sid: self._recordings(sid) for sid in self._subject_ids}
        models = {}
        for sid, (calib, _) in recordings.items():
            models[sid] = _fit_model(calib, run)
            write_json(self.path("models", f"{sid}_tdca.json"), models[sid].to_dict())
            if "linear" in methods:
                trf = fit_subject_trf(calib, models[sid], calib_codes, run)
                write_json(self.path("models", f"{sid}_trf.json"), trf.to_dict())

        for sid, (calib, _) in recordings.items():
            others = [other for other in self._subject_ids if other != sid]
            if "transfer" in methods:
                sources = [
                    SourceSubject.from_epochs(o, *recordings[o], models[o])
                    for o in others
                ]
                weights = fit_weights(calib, models[sid], sources, sid)
                write_json(
                    self.path("models", f"{sid}_transfer.json"), weights.to_dict()
                )
            if "zero_shot" in methods:
                pooled = fit_pooled_tdca(
                    [recordings[o][0] for o in others],
                    run.n_spatial_components,
                    run.ridge_eps,
                    run.delay_embedding,
                )
                trf = average_trf(
                    [
                        fit_subject_trf(recordings[o][0], pooled, calib_codes, run)
                        for o in others
                    ]
                )
                write_json(
                    self.path("models", f"{sid}_zero_shot_tdca.json"), pooled.to_dict()
                )
                write_json(
                    self.path("models", f"{sid}_zero_shot_trf.json"), trf.to_dict()
                )

    def _bank(
        self, sid: str, method: str, test_codes: Codebook, duration_s: float
    ) -> tuple[TdcaModel, TemplateBank]:
        run = self.config.run
        filterbank = make_filterbank(run)
        if method == "transfer":
            others = [other for other in self._subject_ids if other != sid]
            sources = [
                SourceSubject.from_epochs(o, *self._recordings(o), self._model(o))
                for o in others
            ]
            weights = TransferWeights.from_dict(
                read_json(self.path("models", f"{sid}_transfer.json"))
            )
            bank = build_transfer_templates(
                weights,
                sources,
                test_codes.class_ids,
                run.fs_hz,
                round(duration_s * run.fs_hz),
                filterbank,
                run.n_shifts,
                run.fb_weight_a,
                run.fb_weight_b,
            )
            return self._model(sid).leading(1), bank

        if method == "zero_shot":
            model, trf = self._model(sid, "zero_shot_tdca"), self._trf(
                sid, "zero_shot_trf"
            )
        else:
            model, trf = self._model(sid), self._trf(sid)
        bank = build_linear_templates(
            trf,
            test_codes,
            run.fs_hz,
            duration_s,
            filterbank,
            run.n_shifts,
            run.fb_weight_a,
            run.fb_weight_b,
        )
        return model, bank

    def _decode(self) -> None:
        _, test_codes = self._codebooks()
        results: dict[str, Any] = {}
        for sid in self._subject_ids:
            _, test = self._recordings(sid)
            results[sid] = {}
            for method in self.config.methods:
                results[sid][method] = {}
                for duration in self.config.protocol.decode_durations_s:
                    model, bank = self._bank(sid, method, test_codes, duration)
                    trials = test.crop(round(duration * test.fs_hz))
                    decoded = batch_decode(trials, model, bank, self.n_jobs)
                    results[sid][method][f"{duration:g}"] = {
                        "accuracy": decoded.accuracy,
                        "n_failed": decoded.n_failed,
                        "labels": trials.labels.tolist(),
                        "predictions": decoded.predictions.tolist(),
                    }
                    logger.info(
                        "%s %s %.2f s: accuracy %.4f",
                        sid,
                        method,
                        duration,
                        decoded.accuracy,
                    )
        write_json(
            self.path("results.json"),
            {
                "config_hash": self.config.config_hash(),
                "seed": self.config.run.seed,
                "n_classes": len(test_codes),
                "results": results,
            },
        )

    def _mutual_information(self, sid: str) -> float | None:
        calib, _ = self._recordings(sid)
        if self.config.protocol.calib_trials_per_class < 2:
            return None
        sources = spatial_filter(calib, self._model(sid))
        upper = min(self.config.run.mi_upper_hz, calib.fs_hz / 2)
        values = [
            snr_spectrum(
                sources.select(np.flatnonzero(sources.labels == class_id)),
                upper_hz=upper,
            ).mutual_info_bits_per_s
            for class_id in sources.classes
        ]
        return float(np.mean(values))

    def _report(self) -> None:
        run = self.config.run
        results = read_json(self.path("results.json"))
        n_classes = int(results["n_classes"])
        metrics: dict[str, Any] = {"n_classes": n_classes, "methods": {}}
        tables = []
        for duration in self.config.protocol.decode_durations_s:
            label = f"{duration:g}"
            selection = selection_time_s(duration, run.gaze_shift_s)
            rows: dict[str, dict[str, Performance]] = {}
            for sid in self._subject_ids:
                rows[sid] = {}
                for method in self.config.methods:
                    accuracy = float(results["results"][sid][method][label]["accuracy"])
                    rate = itr_bpm(n_classes, accuracy, selection)
                    rows[sid][method] = Performance(accuracy, rate)
            for method in self.config.methods:
                cells = {sid: rows[sid][method] for sid in self._subject_ids}
                values = list(cells.values())
                metrics["methods"].setdefault(method, {})[label] = {
                    "accuracy_mean": float(np.mean([c.accuracy for c in values])),
                    "itr_bpm_mean": float(np.mean([c.itr_bpm for c in values])),
                    "subjects": {sid: cell.to_dict() for sid, cell in cells.items()},
                }
            tables.append(
                format_performance_table(
                    rows,
                    title=f"{duration:g} s stimulation, {selection:g} s per selection",
                )
            )
        metrics["mutual_info_bits_per_s"] = {
            sid: _json_number(self._mutual_information(sid))
            for sid in self._subject_ids
        }

        population = population_from_dict(read_json(self.path("population.json")))
        report = {
            "format": REPORT_FORMAT,
            "config_hash": self.config.config_hash(),
            "seeds": {
                "run": run.seed,
                "anneal": self.config.design.anneal.seed,
                "subjects": {s.subject_id: s.seed for s in population},
            },
            "stages": {
                name: self._index[name]["key"]
                for name in STAGES[:-1]
                if name in self._index
            },
            "metrics": metrics,
        }
        write_json(self.path(REPORT_NAME), report)
        self.path(TABLE_NAME).write_text("\n".join(tables), encoding="utf-8")


def _json_number(value: float | None) -> float | str | None:
    if value is None or math.isfinite(value):
        return value
    return "inf"


def bundled_protocol(name: str = "paper_protocol") -> Path:
    """Path of a protocol shipped inside the package."""
    resource = resources.files("cvep_bci") / "protocols" / f"{name}.json"
    if not resource.is_file():
        raise MissingInput("config", f"bundled protocol {name}")
    return Path(str(resource))


def run_pipeline(
    config_path: str | Path,
    force: bool = False,
    n_jobs: int = 1,
    workspace: str | Path | None = None,
    seed: int | None = None,
) -> dict[str, Any]:
    """Run every stage of the experiment described by ``config_path``.

    ``workspace`` and ``seed`` override the values in the config.
    """
    config = load_experiment_config(config_path)
    if workspace is not None:
        config = replace(config, workspace=str(workspace))
    if seed is not None:
        config = replace(config, run=replace(config.run, seed=seed))
    logger.info(
        "Running experiment %s in %s", config.config_hash()[:12], config.workspace
    )
    return Pipeline(config, force, n_jobs).run()


@dataclass(frozen=True, slots=True)
class CalibrationPoint:
    calibration_s: float
    method: str
    accuracy: float
    itr_bpm: float
    subject_accuracy: dict[str, float]

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


@dataclass(frozen=True, slots=True)
class CalibrationSweep:
    """Accuracy and ITR against calibration time for every method."""

    points: tuple[CalibrationPoint, ...]
    decode_s: float
    config_hash: str

    def curve(self, method: str) -> list[CalibrationPoint]:
        return [point for point in self.points if point.method == method]

    def to_dict(self) -> dict[str, Any]:
        return {
            "format": SWEEP_FORMAT,
            "config_hash": self.config_hash,
            "decode_s": self.decode_s,
            "points": [point.to_dict() for point in self.points],
        }

    def table(self) -> str:
        rows: dict[str, dict[str, Performance]] = {}
        for point in self.points:
            rows.setdefault(f"{point.calibration_s:g} s", {})[point.method] = (
                Performance(point.accuracy, point.itr_bpm)
            )
        return format_performance_table(
            rows,
            title=f"Calibration sweep, {self.decode_s:g} s decoding windows",
            row_label="Calibration",
            summary=False,
        )


def _sweep_subject(
    sid: str,
    subset: EpochSet,
    test: EpochSet,
    methods: Sequence[str],
    sources: Sequence[SourceSubject],
    config: ExperimentConfig,
    calib_codes: Codebook,
    test_codes: Codebook,
) -> dict[str, float]:
    run, decode_s = config.run, config.protocol.sweep_decode_s
    filterbank = make_filterbank(run)
    trials = test.crop(round(decode_s * test.fs_hz))
    model = _fit_model(subset, run)
    accuracies = {}
    if "linear" in methods:
        trf = fit_subject_trf(subset, model, calib_codes, run)
        bank = build_linear_templates(
            trf,
            test_codes,
            run.fs_hz,
            decode_s,
            filterbank,
            run.n_shifts,
            run.fb_weight_a,
            run.fb_weight_b,
        )
        accuracies["linear"] = batch_decode(trials, model, bank).accuracy
    if "transfer" in methods:
        classes = subset.classes.tolist()
        restricted = [source.with_calib_classes(classes) for source in sources]
        weights = fit_weights(subset, model, restricted, sid)
        bank = build_transfer_templates(
            weights,
            restricted,
            test_codes.class_ids,
            run.fs_hz,
            trials.n_samples,
            filterbank,
            run.n_shifts,
            run.fb_weight_a,
            run.fb_weight_b,
        )
        accuracies["transfer"] = batch_decode(trials, model.leading(1), bank).accuracy
    return accuracies


def calibration_sweep(
    config: ExperimentConfig,
    durations_s: Sequence[float] = CALIBRATION_SWEEP_S,
    n_jobs: int = 1,
) -> CalibrationSweep:
    """Accuracy and ITR of every subject as the calibration run is shortened.

    A calibration budget of D seconds keeps the first floor(D / trial length)
    calibration trials, which cycle through the classes in blocks. Transfer
    sources keep their full calibration runs.
    """
    protocol, run = config.protocol, config.run
    methods = [m for m in config.methods if m in ("linear", "transfer")]
    if not methods:
        raise ArgumentError("the sweep compares the linear and transfer methods")
    calib_codes, test_codes, _ = design_codebooks(config)
    available = (
        protocol.calib_trials_per_class * len(calib_codes) * protocol.calib_duration_s
    )
    counts = []
    for duration in durations_s:
        if duration > available + 1e-9:
            raise ArgumentError(
                f"{duration} s of calibration requested, {available:g} s simulated"
            )
        n_trials = math.floor(duration / protocol.calib_duration_s + 1e-9)
        if n_trials < 2:
            raise ArgumentError(
                f"{duration} s holds fewer than two "
                f"{protocol.calib_duration_s} s trials"
            )
        counts.append(n_trials)

    subjects = make_population(config.population, run.seed)
    recordings = {
        s.subject_id: simulate_subject(s, calib_codes, test_codes, protocol, n_jobs)
        for s in subjects
    }
    sources = {}
    if "transfer" in methods:
        sources = {
            sid: SourceSubject.from_epochs(sid, calib, test, _fit_model(calib, run))
            for sid, (calib, test) in recordings.items()
        }

    selection = selection_time_s(protocol.sweep_decode_s, run.gaze_shift_s)
    points = []
    for duration, n_trials in zip(durations_s, counts):
        per_subject: dict[str, dict[str, float]] = {}
        for sid, (calib, test) in recordings.items():
            others = [source for other, source in sources.items() if other != sid]
            per_subject[sid] = _sweep_subject(
                sid,
                calib.select(np.arange(n_trials)),
                test,
                methods,
                others,
                config,
                calib_codes,
                test_codes,
            )
        for method in methods:
            accuracy = {sid: values[method] for sid, values in per_subject.items()}
            rates = [itr_bpm(len(test_codes), a, selection) for a in accuracy.values()]
            points.append(
                CalibrationPoint(
                    float(duration),
                    method,
                    float(np.mean(list(accuracy.values()))),
                    float(np.mean(rates)),
                    accuracy,
                )
            )
        logger.info("Calibration %.0f s done (%d trials)", duration, n_trials)
    return CalibrationSweep(
        tuple(points), protocol.sweep_decode_s, config.config_hash()
    )
