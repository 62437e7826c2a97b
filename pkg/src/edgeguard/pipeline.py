"""Training orchestration: split, encode, fit, evaluate, select, refit."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from .dataset import LabeledTable, encode, fit_encoders, split_train_test
from .ml.ensemble import MAX_GBM_ESTIMATORS, ForestConfig, GbmConfig, train_forest, train_gbm
from .ml.metrics import Metrics, evaluate
from .ml.selection import selected_features
from .ml.tree import CartConfig, train_cart
from .schema import MQTT_SCHEMA_HASH, ClassLabel

ALGORITHMS = ("dt", "rf", "gb")


@dataclass(frozen=True)
class TrainOptions:
    algo: str = "dt"
    seed: int = 0
    estimators: int | None = None
    max_depth: int | None = None
    learning_rate: float = 0.1
    n_jobs: int = 1

    def __post_init__(self):
        if self.algo not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algo!r}; choose one of {', '.join(ALGORITHMS)}")
        if self.estimators is not None and self.estimators < 1:
            raise ValueError("estimators must be >= 1")
        if self.algo == "gb" and self.estimators is not None and self.estimators > MAX_GBM_ESTIMATORS:
            raise ValueError(f"gradient boosting allows at most {MAX_GBM_ESTIMATORS} estimators")


def fit_model(table: LabeledTable, opts: TrainOptions = TrainOptions()):
    """Fit encoders on `table` and train the chosen model on it."""
    enc = fit_encoders(table)
    m = encode(table, enc)
    names = list(table.schema)
    common = dict(feature_names=names, schema_hash_=MQTT_SCHEMA_HASH, encoders=enc)
    if opts.algo == "dt":
        return train_cart(m.values, m.labels, CartConfig(max_depth=opts.max_depth, seed=opts.seed), **common)
    if opts.algo == "rf":
        cfg = ForestConfig(
            n_estimators=opts.estimators or 100, max_depth=opts.max_depth, seed=opts.seed, n_jobs=opts.n_jobs
        )
        return train_forest(m.values, m.labels, cfg, **common)
    cfg = GbmConfig(
        n_estimators=opts.estimators or MAX_GBM_ESTIMATORS,
        learning_rate=opts.learning_rate,
        max_depth=opts.max_depth or 3,
        seed=opts.seed,
    )
    return train_gbm(m.values, m.labels, cfg, **common)


def evaluate_table(model, table: LabeledTable, train_time: float | None = None, timing_sample: int = 200) -> Metrics:
    X = model.encoders.transform(table.select_columns(model.feature_names).rows)
    return evaluate(model, X, table.label_array(), train_time=train_time, timing_sample=timing_sample)


@dataclass
class TrainingReport:
    algo: str
    model: object
    train: Metrics
    validation: Metrics | None
    test: Metrics
    selected: list[str]
    selected_model: object | None = None
    selected_test: Metrics | None = None
    sizes: dict[str, int] = field(default_factory=dict)

    @property
    def accuracy_delta(self) -> float | None:
        if self.selected_test is None:
            return None
        return self.selected_test.accuracy - self.test.accuracy


def run_training(
    train: LabeledTable,
    test: LabeledTable,
    opts: TrainOptions = TrainOptions(),
    validation_fraction: float = 0.33,
    select: bool = True,
    timing_sample: int = 200,
) -> TrainingReport:
    """Fit on the training portion (less a validation slice), then score every split.

    With `select`, the model is refit on the columns that carried nonzero
    importance and scored again on the test split.
    """
    if validation_fraction > 0:
        fit, val = split_train_test(train, validation_fraction, opts.seed)
    else:
        fit, val = train, None
    t0 = time.perf_counter()
    model = fit_model(fit, opts)
    train_time = time.perf_counter() - t0
    report = TrainingReport(
        algo=opts.algo,
        model=model,
        train=evaluate_table(model, fit, timing_sample=1),
        validation=evaluate_table(model, val, timing_sample=1) if val is not None and len(val) else None,
        test=evaluate_table(model, test, train_time=train_time, timing_sample=timing_sample),
        selected=[],
        sizes={"fit": len(fit), "validation": len(val) if val is not None else 0, "test": len(test)},
    )
    try:
        report.selected = selected_features(model)
    except ValueError:
        report.selected = list(model.feature_names)
    if select and report.selected and len(report.selected) < len(model.feature_names):
        reduced = fit.select_columns(report.selected)
        t0 = time.perf_counter()
        report.selected_model = fit_model(reduced, opts)
        t = time.perf_counter() - t0
        report.selected_test = evaluate_table(report.selected_model, test, train_time=t, timing_sample=timing_sample)
    elif select:
        report.selected_model, report.selected_test = model, report.test
    return report


def metrics_lines(report: TrainingReport) -> list[tuple[str, str]]:
    """Key/value rows named after the usual evaluation-table rows."""
    rows: list[tuple[str, str]] = [("algorithm", report.algo)]
    for split, m in (("training", report.train), ("validation", report.validation), ("testing", report.test)):
        if m is None:
            continue
        rows += [
            (f"{split}.accuracy", f"{m.accuracy:.6f}"),
            (f"{split}.precision", f"{m.precision:.6f}"),
            (f"{split}.recall", f"{m.recall:.6f}"),
            (f"{split}.f1_score", f"{m.f1:.6f}"),
            (f"{split}.precision_weighted", f"{m.precision_weighted:.6f}"),
            (f"{split}.recall_weighted", f"{m.recall_weighted:.6f}"),
            (f"{split}.f1_score_weighted", f"{m.f1_weighted:.6f}"),
        ]
    t = report.test
    for lab in ClassLabel:
        v = t.auc[lab]
        rows.append((f"auc.{lab.dataset_name}", "undefined" if v is None else f"{v:.6f}"))
    rows += [
        ("train_time_sec", f"{t.train_time:.6f}"),
        ("test_time_sec", f"{t.test_time:.6f}"),
        ("model_size_kb", f"{t.model_size / 1024:.3f}"),
        ("prediction_time_msec", f"{t.prediction_time_per_packet * 1e3:.6f}"),
        ("features.selected_count", str(len(report.selected))),
        ("features.selected", ",".join(report.selected)),
    ]
    if report.selected_test is not None:
        rows += [
            ("selected.testing.accuracy", f"{report.selected_test.accuracy:.6f}"),
            ("selected.accuracy_delta", f"{report.accuracy_delta:+.6f}"),
        ]
    for k, v in report.sizes.items():
        rows.append((f"rows.{k}", str(v)))
    return rows

