"""End-to-end benchmark: models x downsampling ratios under the dual-cutoff split.

Stages run in a fixed order (generate, ingest, audit, partition, encode,
downsample, fit, evaluate, importance, report). Every Train-fit statistic is
computed in ``encode`` before any Validation or Test row is transformed. A failing
stage raises ``StageError`` after writing ``partial_manifest.json``.
"""

from __future__ import annotations

import json
import logging
from contextlib import contextmanager
from dataclasses import dataclass, field
from decimal import ROUND_HALF_EVEN, Decimal
from pathlib import Path
from typing import Any, Optional, Union

import numpy as np
import pandas as pd
import yaml
from joblib import Parallel, delayed

from config import config as runtime_config
from downsample import DEFAULT_RATIOS, RatioConfig, build_ratio_grid, summarize_grid, write_sample_manifest
from evaluation import (ImportanceReport, auroc, permutation_importance, roc_curve, write_importance_csv,
                        write_roc_csv)
from feature_encoding import FeatureEncoder, FeatureMatrix, Pathway, Zip3Table
from generate_loans import GenSpec, generate, write_generated
from preprocess_loans import IngestResult, SchemaAudit, SchemaPolicy, audit_schema, ingest, load_schema_sidecar
from temporal_split import DEFAULT_CUTOFFS, Cutoffs, PartitionResult, partition_dataset
from train_model import (DEFAULT_LEARNERS, FittedModel, LearnerKind, LearnerSpec, fit_model, load_model,
                         log_to_mlflow, predict_proba, save_model)

logger = logging.getLogger(__name__)

DEFAULT_SCHEMA_PATH = Path(__file__).resolve().parent / "data" / "loan_schema.csv"
METRICS = ("train", "validation", "validation_full", "test")
METRIC_TITLES = {
    "train": "Train AUROC (downsampled)",
    "validation": "Validation AUROC (downsampled)",
    "validation_full": "Validation AUROC (full split)",
    "test": "Test AUROC (full split)",
}
TABLE_FILES = {
    "train": "auroc_train.csv",
    "validation": "auroc_validation.csv",
    "validation_full": "auroc_validation_full.csv",
    "test": "auroc_test.csv",
}


class StageError(RuntimeError):
    """A pipeline stage failed; ``cause`` is the original exception."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {cause}")


@dataclass
class ExperimentConfig:
    data_path: Optional[Path] = None
    schema_path: Optional[Path] = None
    generate: Optional[GenSpec] = None
    delimiter: str = "|"
    header: Optional[bool] = None
    zip3_path: Optional[Path] = None
    cutoffs: Cutoffs = DEFAULT_CUTOFFS
    strict_partition: bool = False
    cardinality_limit: int = 500
    missing_rate_limit: float = 0.5
    ratios: tuple[int, ...] = DEFAULT_RATIOS
    learners: tuple[LearnerSpec, ...] = DEFAULT_LEARNERS
    output_dir: Path = Path("outputs")
    seed: int = 0
    roc_ratio: int = 2
    importance_ratio: int = 2
    importance_model: Optional[str] = None
    importance_repeats: int = 5
    n_jobs: int = 1
    mlflow: bool = False

    def validate(self) -> list[str]:
        """Return a list of problems; empty when the config is runnable."""
        problems = []
        if self.generate is None and self.data_path is None:
            problems.append("data: either a file path or a synthetic generator section is required")
        if self.generate is None and self.data_path is not None and not Path(self.data_path).exists():
            problems.append(f"data file not found: {self.data_path}")
        if self.schema_path is not None and not Path(self.schema_path).exists():
            problems.append(f"schema sidecar not found: {self.schema_path}")
        if self.zip3_path is not None and not Path(self.zip3_path).exists():
            problems.append(f"ZIP3 table not found: {self.zip3_path}")
        if not self.learners:
            problems.append("at least one learner is required")
        names = [spec.name for spec in self.learners]
        if len(set(names)) != len(names):
            problems.append(f"learner names must be unique: {names}")
        if not self.ratios:
            problems.append("at least one downsampling ratio is required")
        if any(int(x) != x or x < 1 for x in self.ratios):
            problems.append(f"ratios must be positive integers: {list(self.ratios)}")
        if self.roc_ratio not in self.ratios:
            problems.append(f"roc_ratio 1:{self.roc_ratio} is not in the ratio grid")
        if self.importance_ratio not in self.ratios:
            problems.append(f"importance_ratio 1:{self.importance_ratio} is not in the ratio grid")
        if self.importance_model is not None and self.importance_model not in names:
            problems.append(f"importance_model {self.importance_model!r} is not a configured learner")
        if self.importance_repeats < 1:
            problems.append("importance_repeats must be >= 1")
        return problems

    def as_dict(self) -> dict[str, Any]:
        return {
            "data_path": str(self.data_path) if self.data_path else None,
            "schema_path": str(self.schema_path) if self.schema_path else None,
            "generate": self.generate.as_dict() if self.generate else None,
            "delimiter": self.delimiter,
            "zip3_path": str(self.zip3_path) if self.zip3_path else None,
            "cutoffs": [str(self.cutoffs.c1), str(self.cutoffs.c2)],
            "strict_partition": self.strict_partition,
            "cardinality_limit": self.cardinality_limit,
            "missing_rate_limit": self.missing_rate_limit,
            "ratios": list(self.ratios),
            "learners": [
                {"name": s.name, "kind": s.kind.value, "pathway": s.resolved_pathway.value,
                 "hyperparams": s.resolved_hyperparams}
                for s in self.learners
            ],
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "roc_ratio": self.roc_ratio,
            "importance_ratio": self.importance_ratio,
            "importance_model": self.importance_model,
            "importance_repeats": self.importance_repeats,
        }


def _resolve(base: Path, value: Optional[str]) -> Optional[Path]:
    if value is None:
        return None
    path = Path(value)
    return path if path.is_absolute() else base / path


def load_experiment_config(path: Union[str, Path], seed: Optional[int] = None,
                           output_dir: Optional[Union[str, Path]] = None) -> ExperimentConfig:
    """Parse a YAML experiment file; relative paths resolve against the file's directory.

    Raises:
        ValueError: listing every problem found by ``ExperimentConfig.validate``.
    """
    path = Path(path)
    with open(path) as fh:
        raw = yaml.safe_load(fh) or {}
    base = path.resolve().parent
    global_seed = int(raw.get("seed", 0) if seed is None else seed)

    data = raw.get("data", {}) or {}
    gen_spec = None
    if data.get("source", "file") == "synthetic":
        gen = dict(data.get("generate", {}) or {})
        gen.setdefault("seed", global_seed)
        gen_spec = GenSpec.from_dict(gen)

    partition = raw.get("partition", {}) or {}
    filters = raw.get("filters", {}) or {}
    report = raw.get("report", {}) or {}
    learners = tuple(
        LearnerSpec(
            name=entry["name"],
            kind=LearnerKind(entry["kind"]),
            hyperparams=dict(entry.get("hyperparams", {}) or {}),
            pathway=Pathway(entry["pathway"]) if entry.get("pathway") else None,
        )
        for entry in raw.get("learners", [])
    ) or DEFAULT_LEARNERS

    out = output_dir if output_dir is not None else _resolve(base, raw.get("output_dir")) or runtime_config.output_dir
    experiment = ExperimentConfig(
        data_path=_resolve(base, data.get("path")),
        schema_path=_resolve(base, data.get("schema")),
        generate=gen_spec,
        delimiter=data.get("delimiter", "|"),
        header=data.get("header"),
        zip3_path=_resolve(base, raw.get("zip3")),
        cutoffs=Cutoffs.from_strings(str(partition.get("c1", "112023")).zfill(6),
                                     str(partition.get("c2", "062024")).zfill(6)),
        strict_partition=bool(partition.get("strict", False)),
        cardinality_limit=int(filters.get("cardinality_limit", 500)),
        missing_rate_limit=float(filters.get("missing_rate_limit", 0.5)),
        ratios=tuple(raw.get("ratios", DEFAULT_RATIOS)),
        learners=learners,
        output_dir=Path(out),
        seed=global_seed,
        roc_ratio=int(report.get("roc_ratio", 2)),
        importance_ratio=int(report.get("importance_ratio", 2)),
        importance_model=report.get("importance_model"),
        importance_repeats=int(report.get("importance_repeats", 5)),
        n_jobs=int(raw.get("n_jobs", runtime_config.n_jobs)),
        mlflow=bool(raw.get("mlflow", runtime_config.enable_mlflow)),
    )
    problems = experiment.validate()
    if problems:
        raise ValueError(f"invalid experiment config {path}: " + "; ".join(problems))
    return experiment


@dataclass
class PreparedData:
    ingest: IngestResult
    policy: SchemaPolicy
    audit: SchemaAudit
    partition: PartitionResult
    zip3: Zip3Table


@dataclass
class ExperimentReport:
    models: list[str]
    ratios: list[int]
    auroc: dict[str, pd.DataFrame]
    stopping: pd.DataFrame
    roc_paths: dict[str, Path] = field(default_factory=dict)
    importance_model: Optional[str] = None
    importance_path: Optional[Path] = None
    importance: Optional[ImportanceReport] = None
    partition_summary: Optional[pd.DataFrame] = None
    grid_summary: Optional[pd.DataFrame] = None
    rejections: dict = field(default_factory=dict)
    files: list[Path] = field(default_factory=list)

    def table(self, metric: str = "test") -> pd.DataFrame:
        return self.auroc[metric]


@dataclass
class RenderedTables:
    csv: dict[str, str]
    markdown: str


def format_auroc(value: float) -> str:
    """Round half-to-even to 4 decimal places."""
    return str(Decimal(repr(float(value))).quantize(Decimal("0.0001"), rounding=ROUND_HALF_EVEN))


def ratio_label(x: int) -> str:
    return f"1:{x}"


def render_tables(report: ExperimentReport) -> RenderedTables:
    """CSV and markdown tables, one row per model and one column per ratio.

    The CSV ends with a ``best`` row naming the column winner; the markdown bolds it.
    Ties go to the model listed first.
    """
    csv_tables: dict[str, str] = {}
    sections = []
    for metric in METRICS:
        table = report.auroc[metric]
        columns = [ratio_label(x) for x in report.ratios]
        best = {col: table.index[int(np.argmax(table[col].to_numpy()))] for col in columns}

        lines = [",".join(["model"] + columns)]
        for model in table.index:
            lines.append(",".join([model] + [format_auroc(table.loc[model, col]) for col in columns]))
        lines.append(",".join(["best"] + [best[col] for col in columns]))
        csv_tables[metric] = "\n".join(lines) + "\n"

        md = [f"### {METRIC_TITLES[metric]}", "", "| model | " + " | ".join(columns) + " |",
              "|---|" + "---|" * len(columns)]
        for model in table.index:
            cells = []
            for col in columns:
                text = format_auroc(table.loc[model, col])
                cells.append(f"**{text}**" if best[col] == model else text)
            md.append(f"| {model} | " + " | ".join(cells) + " |")
        sections.append("\n".join(md))

    gap = report.auroc["train"] - report.auroc["test"]
    columns = [ratio_label(x) for x in report.ratios]
    md = ["### Train-test AUROC gap", "", "| model | " + " | ".join(columns) + " |",
          "|---|" + "---|" * len(columns)]
    for model in gap.index:
        md.append(f"| {model} | " + " | ".join(format_auroc(gap.loc[model, col]) for col in columns) + " |")
    sections.append("\n".join(md))
    return RenderedTables(csv=csv_tables, markdown="\n\n".join(sections) + "\n")


class ExperimentRunner:
    def __init__(self, experiment: ExperimentConfig):
        self.config = experiment
        self.out = Path(experiment.output_dir)
        self.written: list[Path] = []
        self.current_stage: Optional[str] = None

    @contextmanager
    def stage(self, name: str):
        self.current_stage = name
        logger.info("Stage %s", name)
        try:
            yield
        except Exception as e:
            self._write_partial_manifest(name, e)
            raise StageError(name, e) from e

    def _record(self, path: Path) -> Path:
        self.written.append(Path(path))
        return path

    def _write_partial_manifest(self, stage: str, error: BaseException) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        manifest = {
            "failed_stage": stage,
            "error": f"{type(error).__name__}: {error}",
            "config": self.config.as_dict(),
            "outputs": [str(p) for p in self.written],
        }
        with open(self.out / "partial_manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)

    def prepare(self) -> PreparedData:
        """Generate (when synthetic), ingest, audit and partition."""
        cfg = self.config
        data_path, schema_path = cfg.data_path, cfg.schema_path
        if cfg.generate is not None:
            with self.stage("generate"):
                paths = write_generated(generate(cfg.generate, self._zip3()), self.out / "data")
                for p in paths.values():
                    self._record(p)
                data_path = paths["data"]
                schema_path = schema_path or paths["schema"]

        with self.stage("ingest"):
            policy = load_schema_sidecar(schema_path or DEFAULT_SCHEMA_PATH,
                                         cardinality_limit=cfg.cardinality_limit,
                                         missing_rate_limit=cfg.missing_rate_limit)
            ingested = ingest(data_path, policy, delimiter=cfg.delimiter, header=cfg.header)
            if ingested.frame.empty:
                raise ValueError("no rows survived ingest")

        with self.stage("audit"):
            audit = audit_schema(ingested.source_columns, policy)

        with self.stage("partition"):
            partition = partition_dataset(ingested.frame, cfg.cutoffs, strict=cfg.strict_partition,
                                          audit_path=self._record(self.out / "discarded_rows.csv"))
            for split, frame in partition.splits().items():
                if frame.empty or frame["LABEL"].sum() == 0:
                    raise ValueError(f"{split.value} split has no positive rows; adjust cutoffs or data")

        return PreparedData(ingested, policy, audit, partition, self._zip3())

    def _zip3(self) -> Zip3Table:
        return Zip3Table.from_csv(self.config.zip3_path) if self.config.zip3_path else Zip3Table.builtin()

    def run(self) -> ExperimentReport:
        cfg = self.config
        self.out.mkdir(parents=True, exist_ok=True)
        prepared = self.prepare()
        partition = prepared.partition

        with self.stage("encode"):
            encoder = FeatureEncoder.fit(partition.train, prepared.policy, prepared.zip3)
            encoder_path = self._record(self.out / "encoder.json")
            encoder_path.write_text(encoder.to_json())
            audit_schema(prepared.ingest.source_columns, encoder.policy).to_frame().to_csv(
                self._record(self.out / "schema_audit.csv"), index=False)
            pathways = sorted({spec.resolved_pathway for spec in cfg.learners}, key=lambda p: p.value)
            matrices = {
                pathway: {name: encoder.transform(frame, pathway)
                          for name, frame in (("train", partition.train), ("validation", partition.validation),
                                              ("test", partition.test))}
                for pathway in pathways
            }
            if encoder.audit_log[0]["stage"] != "fit":
                raise AssertionError("encoder transformed rows before it was fitted")

        with self.stage("downsample"):
            grid = build_ratio_grid(partition.train, partition.validation, partition.test,
                                    RatioConfig(tuple(cfg.ratios), cfg.seed))
            write_sample_manifest(grid, self._record(self.out / "sample_manifest.csv"))

        cells = [(spec, x) for spec in cfg.learners for x in cfg.ratios]
        with self.stage("fit"):
            jobs = []
            learner_index = {spec.name: i for i, spec in enumerate(cfg.learners)}
            for spec, x in cells:
                m = matrices[spec.resolved_pathway]
                jobs.append(delayed(_fit_cell)(
                    spec.with_seed(cell_seed(cfg.seed, learner_index[spec.name])),
                    m["train"].take(grid[x].train.index),
                    m["validation"].take(grid[x].validation.index),
                ))
            fitted: list[FittedModel] = Parallel(n_jobs=cfg.n_jobs)(jobs)

        with self.stage("evaluate"):
            scores = {metric: pd.DataFrame(index=[s.name for s in cfg.learners],
                                           columns=[ratio_label(x) for x in cfg.ratios], dtype=float)
                      for metric in METRICS}
            stopping, roc_paths = [], {}
            for (spec, x), model in zip(cells, fitted):
                m = matrices[spec.resolved_pathway]
                train_m = m["train"].take(grid[x].train.index)
                val_m = m["validation"].take(grid[x].validation.index)
                col = ratio_label(x)
                evaluated = {"train": train_m, "validation": val_m,
                             "validation_full": m["validation"], "test": m["test"]}
                for metric, matrix in evaluated.items():
                    scores[metric].loc[spec.name, col] = auroc(predict_proba(model, matrix), matrix.labels)
                save_model(model, str(self._record(self.out / "models" / f"{spec.name}_1to{x}.joblib")))
                if x == cfg.roc_ratio:
                    path = self._record(self.out / "roc" / f"{spec.name}_1to{x}.csv")
                    write_roc_csv(roc_curve(predict_proba(model, m["test"]), m["test"].labels), path)
                    roc_paths[spec.name] = path
                stopping.append({
                    "model": spec.name, "ratio": col,
                    "best_iteration": model.metadata.get("best_iteration"),
                    "iterations_run": model.metadata.get("iterations_run"),
                    "epochs": model.metadata.get("epochs"),
                })
                if cfg.mlflow:
                    log_to_mlflow(model, {k: float(scores[k].loc[spec.name, col]) for k in METRICS},
                                  run_name=f"{spec.name}_1to{x}")

        report = ExperimentReport(
            models=[s.name for s in cfg.learners],
            ratios=list(cfg.ratios),
            auroc=scores,
            stopping=pd.DataFrame.from_records(stopping,
                                               columns=["model", "ratio", "best_iteration", "iterations_run", "epochs"]),
            roc_paths=roc_paths,
            partition_summary=partition.summary(),
            grid_summary=summarize_grid(grid),
            rejections=prepared.ingest.rejections.as_dict(),
        )

        with self.stage("importance"):
            target = cfg.importance_model or scores["test"][ratio_label(cfg.importance_ratio)].idxmax()
            index = [i for i, (spec, x) in enumerate(cells) if spec.name == target and x == cfg.importance_ratio][0]
            spec, model = cells[index][0], fitted[index]
            importance = permutation_importance(model, matrices[spec.resolved_pathway]["validation"],
                                                repeats=cfg.importance_repeats, seed=cfg.seed, n_jobs=cfg.n_jobs)
            path = self._record(self.out / f"importance_{target}_1to{cfg.importance_ratio}.csv")
            write_importance_csv(importance, path)
            report.importance_model, report.importance_path, report.importance = target, path, importance

        with self.stage("report"):
            self.write_report(report)
        report.files = list(self.written)
        return report

    def write_report(self, report: ExperimentReport) -> None:
        rendered = render_tables(report)
        for metric, text in rendered.csv.items():
            self._record(self.out / TABLE_FILES[metric]).write_text(text)
        self._record(self.out / "tables.md").write_text(rendered.markdown)
        report.stopping.to_csv(self._record(self.out / "stopping.csv"), index=False)
        report.partition_summary.to_csv(self._record(self.out / "partition_summary.csv"), index=False)
        summary = {
            "config": self.config.as_dict(),
            "auroc": {metric: {model: {col: float(v) for col, v in row.items()}
                               for model, row in table.iterrows()}
                      for metric, table in report.auroc.items()},
            "importance_model": report.importance_model,
            "importance_ratio": ratio_label(self.config.importance_ratio),
            "partition": report.partition_summary.to_dict(orient="records"),
            "downsampling": report.grid_summary.to_dict(orient="records"),
            "rejections": report.rejections,
            "files": sorted(str(p.relative_to(self.out)) for p in self.written if p.is_relative_to(self.out)),
        }
        with open(self._record(self.out / "report.json"), "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True, default=str)


def cell_seed(seed: int, learner_index: int) -> int:
    """Learner seed shared by every ratio of one learner, derived from the global seed."""
    return int(np.random.SeedSequence([seed, 1, learner_index]).generate_state(1)[0])


def _fit_cell(spec: LearnerSpec, train: FeatureMatrix, validation: FeatureMatrix) -> FittedModel:
    return fit_model(spec, train, validation)


def run(experiment: ExperimentConfig) -> ExperimentReport:
    return ExperimentRunner(experiment).run()


def run_split(experiment: ExperimentConfig) -> PreparedData:
    return ExperimentRunner(experiment).prepare()


def run_importance(experiment: ExperimentConfig, model_name: Optional[str] = None,
                   ratio: Optional[int] = None) -> tuple[str, ImportanceReport, Path]:
    """Permutation importance for a model saved by an earlier ``run``."""
    runner = ExperimentRunner(experiment)
    out = runner.out
    ratio = ratio or experiment.importance_ratio
    if model_name is None:
        report_path = out / "report.json"
        if not report_path.exists():
            raise FileNotFoundError(f"{report_path} not found; run the benchmark first or name a model")
        model_name = experiment.importance_model or json.loads(report_path.read_text())["importance_model"]
    model_path = out / "models" / f"{model_name}_1to{ratio}.joblib"
    encoder_path = out / "encoder.json"
    for required in (model_path, encoder_path):
        if not required.exists():
            raise FileNotFoundError(f"{required} not found; run the benchmark first")

    prepared = runner.prepare()
    with runner.stage("importance"):
        model = load_model(str(model_path))
        encoder = FeatureEncoder.from_json(encoder_path.read_text(), prepared.zip3)
        validation = encoder.transform(prepared.partition.validation, Pathway(model.metadata["pathway"]))
        importance = permutation_importance(model, validation, repeats=experiment.importance_repeats,
                                            seed=experiment.seed, n_jobs=experiment.n_jobs)
        path = out / f"importance_{model_name}_1to{ratio}.csv"
        write_importance_csv(importance, path)
    return model_name, importance, path

