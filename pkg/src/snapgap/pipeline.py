"""End-to-end orchestration: train on the early period, evaluate strictly
out-of-time on the late period.

The flow per cohort (pooled, or one per area when stratified):

  1. label each period independently (late-period thresholds are recomputed
     by default, or frozen to early-period cutpoints by config);
  2. for each feature subset x model family, select hyperparameters by
     stratified CV on the early period, fit an isotonic map on the winner's
     out-of-fold predictions, refit on all early rows, and anchor the
     decision threshold to early-period prevalence (or Youden);
  3. score the late period and assemble the metric suite, reliability data,
     ranked flag lists, and residual-based hidden-fragility lists.

Nothing fitted ever sees a late-period row: training consumes only the early
panel, and that separation is asserted by the test suite bit-for-bit.

Every randomized task derives its own generator from (root seed, task label),
so the manifest is byte-identical across runs and parallelism degrees.
"""
from __future__ import annotations

import hashlib
import itertools
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from . import __version__
from .calibration import (
    apply_isotonic,
    classify,
    fit_isotonic,
    prevalence_threshold,
    reliability_curve,
    rule_to_dict,
    youden_threshold,
)
from .errors import (
    CohortError,
    InsufficientCohort,
    PeriodsOverlap,
    SingleClass,
    ValidationError,
)
from .ingest import PREDICTOR_FIELDS, Area, ZipRecord
from .labeling import (
    LabelConfig,
    LabeledPanel,
    LabeledRow,
    apply_thresholds,
    build_labels,
    fit_uptake_ols,
    flag_hidden_fragility,
)
from .metrics import METRIC_AUC, evaluate, permutation_importance
from .models import (
    DEFAULT_GRIDS,
    FAMILIES,
    CalibratedScorer,
    FeatureMatrix,
    cv_grid_search,
    fit_family,
    model_to_dict,
    out_of_fold_proba,
    stratified_folds,
)
from .rng import STREAM_SPLIT, derive_rng, stream_id

AREA_MODE_POOLED = "pooled"
AREA_MODE_STRATIFIED = "stratified"
THRESHOLD_REFIT = "refit"
THRESHOLD_FROZEN = "frozen"
DECISION_PREVALENCE = "prevalence"
DECISION_YOUDEN = "youden"
SELECTION_CV = "cv"
SELECTION_SPLIT = "split70"

POOLED_COHORT = "All"
MODELED_AREAS = (Area.URBAN, Area.RURAL, Area.MIXED)

MANIFEST_FORMAT = "snapgap-manifest/1"

# Fixed hyperparameters for the 70/30 split path, which runs without a grid.
SPLIT_DEFAULT_PARAMS = {
    "logistic": {"c": 1.0},
    "random_forest": {"n_trees": 100, "max_depth": None, "min_leaf": 5},
    "gradient_boosting": {"n_trees": 100, "max_depth": 3, "learning_rate": 0.1},
}


def all_feature_subsets() -> list[tuple[str, ...]]:
    """All 15 nonempty predictor subsets, smallest first, in field order."""
    out: list[tuple[str, ...]] = []
    for k in range(1, len(PREDICTOR_FIELDS) + 1):
        out.extend(itertools.combinations(PREDICTOR_FIELDS, k))
    return out


@dataclass(frozen=True)
class BacktestConfig:
    p1_years: tuple[int, int] = (2014, 2018)
    p2_years: tuple[int, int] = (2019, 2023)
    label: LabelConfig = field(default_factory=LabelConfig)
    feature_subsets: tuple[tuple[str, ...], ...] | None = None  # None: all 15
    families: tuple[str, ...] = FAMILIES
    grids: dict[str, list[dict]] | None = None  # None: defaults per family
    folds: int = 5
    seed: int = 0
    area_mode: str = AREA_MODE_POOLED
    threshold_mode: str = THRESHOLD_REFIT
    decision: str = DECISION_PREVALENCE
    selection: str = SELECTION_CV
    hidden_tail: float = 0.05
    reliability_bins: int = 10
    importance_repeats: int = 10
    n_jobs: int = 1

    def validate(self) -> None:
        a0, a1 = self.p1_years
        b0, b1 = self.p2_years
        if a0 > a1 or b0 > b1:
            raise ValidationError(f"invalid year ranges {self.p1_years}, {self.p2_years}")
        if a1 >= b0:
            raise PeriodsOverlap(
                f"training years {self.p1_years} must end before test years {self.p2_years}"
            )
        if not self.subsets():
            raise ValidationError("need at least one feature subset")
        if not self.families:
            raise ValidationError("need at least one model family")
        for fam in self.families:
            if fam not in FAMILIES:
                raise ValidationError(f"unknown family {fam!r}")
        for subset in self.subsets():
            for name in subset:
                if name not in PREDICTOR_FIELDS:
                    raise ValidationError(f"unknown predictor {name!r}")
        if self.area_mode not in (AREA_MODE_POOLED, AREA_MODE_STRATIFIED):
            raise ValidationError(f"unknown area_mode {self.area_mode!r}")
        if self.threshold_mode not in (THRESHOLD_REFIT, THRESHOLD_FROZEN):
            raise ValidationError(f"unknown threshold_mode {self.threshold_mode!r}")
        if self.decision not in (DECISION_PREVALENCE, DECISION_YOUDEN):
            raise ValidationError(f"unknown decision policy {self.decision!r}")
        if self.selection not in (SELECTION_CV, SELECTION_SPLIT):
            raise ValidationError(f"unknown selection protocol {self.selection!r}")

    def subsets(self) -> list[tuple[str, ...]]:
        if self.feature_subsets is None:
            return all_feature_subsets()
        return [tuple(s) for s in self.feature_subsets]

    def family_grids(self) -> dict[str, list[dict]]:
        grids = DEFAULT_GRIDS if self.grids is None else self.grids
        return {fam: grids[fam] for fam in self.families}

    def to_dict(self) -> dict:
        return {
            "p1_years": list(self.p1_years),
            "p2_years": list(self.p2_years),
            "label": {
                "poverty_floor": self.label.poverty_floor,
                "hi_q": self.label.hi_q,
                "lo_q": self.label.lo_q,
                "stratify_by_area": self.area_mode == AREA_MODE_STRATIFIED,
                "use_capped_uptake": self.label.use_capped_uptake,
            },
            "feature_subsets": [list(s) for s in self.subsets()],
            "families": list(self.families),
            "grids": self.family_grids(),
            "folds": self.folds,
            "seed": self.seed,
            "area_mode": self.area_mode,
            "threshold_mode": self.threshold_mode,
            "decision": self.decision,
            "selection": self.selection,
            "hidden_tail": self.hidden_tail,
            "reliability_bins": self.reliability_bins,
            "importance_repeats": self.importance_repeats,
        }


def canonical_json(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def digest_of(obj) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


@dataclass
class RunManifest:
    body: dict
    scorers: dict[tuple[str, str], CalibratedScorer] = field(default_factory=dict)

    @property
    def digest(self) -> str:
        return self.body["manifest_digest"]

    def to_json(self) -> str:
        return json.dumps(self.body, sort_keys=True, indent=2) + "\n"


def _model_label(family: str, subset: tuple[str, ...]) -> str:
    return f"{family}[{'+'.join(subset)}]"


def _rows_in_years(records: Sequence[ZipRecord], years: tuple[int, int]) -> list[ZipRecord]:
    lo, hi = years
    return [r for r in records if lo <= r.year <= hi]


def _cohort_rows(panel: LabeledPanel, cohort: str) -> list[LabeledRow]:
    """Rows a model may see: labeled, known area, matching the cohort."""
    rows = panel.fit_rows()
    if cohort == POOLED_COHORT:
        return rows
    return [r for r in rows if r.record.area.value == cohort]


def _matrix(rows: list[LabeledRow], subset: tuple[str, ...]) -> FeatureMatrix:
    X = np.array([[getattr(r.record, f) for f in subset] for r in rows], dtype=float)
    y = np.array([r.y for r in rows], dtype=int)
    return FeatureMatrix(X=X, y=y, feature_names=tuple(subset))


def _anomaly_count(panel: LabeledPanel) -> int:
    return sum(1 for r in panel.rows if r.s_raw is not None and r.s_raw > 1.0)


def _panel_summary(panel: LabeledPanel) -> dict:
    return {
        "n_rows": len(panel.rows),
        "n_eligible": panel.n_eligible(),
        "n_positive": panel.n_positive(),
        "prevalence": panel.prevalence,
        "prevalences": dict(sorted(panel.prevalences.items())),
        "thresholds": {
            key: {"tau_hi": th.tau_hi, "tau_lo": th.tau_lo}
            for key, th in sorted(panel.thresholds.items())
        },
        "anomaly_rows": _anomaly_count(panel),
    }


def _cohort_prevalence(panel: LabeledPanel, cohort: str) -> float:
    if cohort == POOLED_COHORT:
        return panel.prevalence
    return panel.prevalences[cohort]


CALIBRATION_MAX_BINS = 50
CALIBRATION_MIN_PER_BIN = 20


def _calibration_pairs(scores: np.ndarray, labels: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pool held-out (score, label) pairs into equal-count score bins before
    the isotonic fit.

    Raw-pair PAV overfits its boundary pools: a few extreme held-out scores
    can pin the top of the map far from the base rate, which shows up as a
    reliability gap in sparse bins. Averaging within quantile bins tames that
    variance; small samples pass through unpooled.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels, dtype=float)
    bins = min(CALIBRATION_MAX_BINS, len(scores) // CALIBRATION_MIN_PER_BIN)
    if bins < 2:
        return scores, labels
    order = np.argsort(scores, kind="stable")
    xs = np.array([c.mean() for c in np.array_split(scores[order], bins)])
    ys = np.array([c.mean() for c in np.array_split(labels[order], bins)])
    return xs, ys


def _stratified_split(y: np.ndarray, train_frac: float, rng) -> tuple[np.ndarray, np.ndarray]:
    train_parts, test_parts = [], []
    for cls in (0, 1):
        idx = np.flatnonzero(y == cls)
        idx = idx[rng.permutation(len(idx))]
        cut = int(round(train_frac * len(idx)))
        train_parts.append(idx[:cut])
        test_parts.append(idx[cut:])
    return np.sort(np.concatenate(train_parts)), np.sort(np.concatenate(test_parts))


def _fit_task(
    cfg: BacktestConfig,
    cohort: str,
    subset: tuple[str, ...],
    family: str,
    p1_rows: list[LabeledRow],
    p1_prevalence: float,
) -> tuple[CalibratedScorer, dict]:
    """Train one (cohort, subset, family) scorer on early-period rows only."""
    label = f"{cohort}/{_model_label(family, subset)}"
    seed = cfg.seed
    fm = _matrix(p1_rows, subset)
    n_pos = int(fm.y.sum())
    if n_pos == 0 or n_pos == fm.n:
        raise InsufficientCohort(
            f"cohort {cohort!r}: training rows hold a single class "
            f"({n_pos} positives of {fm.n})"
        )

    detail: dict = {"family": family, "features": list(subset)}
    if cfg.selection == SELECTION_CV:
        grid = {family: cfg.family_grids()[family]}
        try:
            result = cv_grid_search(fm, grid, folds=cfg.folds, seed=seed)[family]
        except CohortError as exc:
            raise InsufficientCohort(f"cohort {cohort!r}: {exc}") from exc
        winner = result.winner
        oof = result.oof_proba
        detail["winner"] = winner
        detail["cv"] = [
            {"params": e.params, "mean_ap": e.mean_ap, "fold_aps": e.fold_aps}
            for e in result.grid
        ]
        model = fit_family(fm, family, winner, seed)
        iso = fit_isotonic(*_calibration_pairs(oof, fm.y))
        cal_holdout = apply_isotonic(iso, oof)
        holdout_y = fm.y
    else:
        rng = derive_rng(seed, STREAM_SPLIT, stream_id(label))
        train_idx, test_idx = _stratified_split(fm.y, 0.70, rng)
        if fm.y[train_idx].sum() == 0 or fm.y[test_idx].sum() == 0:
            raise InsufficientCohort(
                f"cohort {cohort!r}: 70/30 split leaves a side with no positives"
            )
        params = SPLIT_DEFAULT_PARAMS[family]
        detail["winner"] = params
        detail["cv"] = None
        model = fit_family(fm.subset(train_idx), family, params, seed)
        holdout_scores = model.predict_proba(fm.X[test_idx])
        iso = fit_isotonic(*_calibration_pairs(holdout_scores, fm.y[test_idx]))
        cal_holdout = apply_isotonic(iso, holdout_scores)
        holdout_y = fm.y[test_idx]

    if cfg.decision == DECISION_PREVALENCE:
        rule = prevalence_threshold(p1_prevalence)
    else:
        rule = youden_threshold(np.asarray(cal_holdout), holdout_y)
    detail["rule"] = rule_to_dict(rule)
    detail["isotonic_fitted_on"] = iso.fitted_on
    scorer = CalibratedScorer(model=model, isotonic=iso, rule=rule)
    detail["model_digest"] = digest_of(model_to_dict(model))
    return scorer, detail


def _evaluate_task(
    cfg: BacktestConfig,
    cohort: str,
    subset: tuple[str, ...],
    family: str,
    scorer: CalibratedScorer,
    detail: dict,
    p2_rows: list[LabeledRow],
) -> dict:
    label = _model_label(family, subset)
    if not p2_rows:
        raise InsufficientCohort(f"cohort {cohort!r}: no labeled test rows")
    X2 = np.array([[getattr(r.record, f) for f in subset] for r in p2_rows], dtype=float)
    y2 = np.array([r.y for r in p2_rows], dtype=int)
    calibrated = scorer.predict_calibrated(X2)
    try:
        report = evaluate(calibrated, y2, scorer.rule, cohort=cohort, model=label)
    except CohortError as exc:
        raise InsufficientCohort(f"cohort {cohort!r}: {exc}") from exc
    detail["eval"] = report.to_dict()
    detail["reliability"] = reliability_curve(calibrated, y2, cfg.reliability_bins)

    decisions = classify(calibrated, scorer.rule)
    flagged = [
        (r.record.zip, r.record.year, float(p))
        for r, p, d in zip(p2_rows, calibrated, decisions)
        if d == 1
    ]
    flagged.sort(key=lambda t: (-t[2], t[0], t[1]))
    detail["flagged"] = [[z, yr, p] for z, yr, p in flagged]

    importance = permutation_importance(
        scorer.model,
        X2,
        y2,
        metric=METRIC_AUC,
        repeats=cfg.importance_repeats,
        seed=cfg.seed,
    )
    detail["importance"] = {
        "metric": importance.metric,
        "baseline_auc": importance.baseline_auc,
        "baseline_ap": importance.baseline_ap,
        "features": [
            {
                "name": f.name,
                "delta_auc": f.delta_auc,
                "delta_ap": f.delta_ap,
                "repeats": f.repeats,
                "dispersion": f.dispersion,
            }
            for f in importance.features
        ],
    }
    return detail


def _hidden_fragility_entry(panel: LabeledPanel, tail: float) -> dict:
    try:
        with_resid, fit = fit_uptake_ols(panel)
    except Exception as exc:  # degenerate design: too few count pairs
        return {"error": str(exc)}
    zips = flag_hidden_fragility(with_resid, fit, tail)
    return {
        "ols": {"alpha": fit.alpha, "beta": fit.beta, "r2": fit.r2},
        "zips": sorted(zips),
    }


def _fragile_distribution(records: list[ZipRecord], label_cfg_base: LabelConfig) -> dict:
    """Share of fragile rows by area for the bottom-10% and bottom-30% rules."""
    out: dict[str, dict] = {}
    for lo_q in (0.10, 0.30):
        label_cfg = replace(label_cfg_base, lo_q=lo_q)
        try:
            panel = build_labels(records, label_cfg)
        except CohortError as exc:
            out[f"{lo_q:.2f}"] = {"error": str(exc)}
            continue
        counts: dict[str, int] = {}
        for r in panel.rows:
            if r.y == 1:
                counts[r.record.area.value] = counts.get(r.record.area.value, 0) + 1
        total = sum(counts.values())
        out[f"{lo_q:.2f}"] = {
            "total": total,
            "by_area": {
                area: {"count": cnt, "share": cnt / total if total else 0.0}
                for area, cnt in sorted(counts.items())
            },
        }
    return out


def run_yearly_diagnostics(cfg: BacktestConfig, records: Sequence[ZipRecord]) -> list[dict]:
    """Per-year eligible count, thresholds, prevalence, and anomaly count."""
    years = list(range(cfg.p1_years[0], cfg.p1_years[1] + 1)) + list(
        range(cfg.p2_years[0], cfg.p2_years[1] + 1)
    )
    pooled_cfg = replace(cfg.label, stratify_by_area=False)
    rows_by_year: dict[int, list[ZipRecord]] = {}
    for rec in records:
        rows_by_year.setdefault(rec.year, []).append(rec)
    table = []
    for year in years:
        year_rows = rows_by_year.get(year, [])
        entry: dict = {"year": year, "n_rows": len(year_rows)}
        if not year_rows:
            entry.update(
                {"n_eligible": 0, "tau_hi": None, "tau_lo": None, "prevalence": None, "anomaly_rows": 0}
            )
            table.append(entry)
            continue
        try:
            panel = build_labels(year_rows, pooled_cfg)
        except CohortError:
            entry.update(
                {
                    "n_eligible": 0,
                    "tau_hi": None,
                    "tau_lo": None,
                    "prevalence": None,
                    "anomaly_rows": 0,
                }
            )
            table.append(entry)
            continue
        entry.update(
            {
                "n_eligible": panel.n_eligible(),
                "tau_hi": panel.tau_hi,
                "tau_lo": panel.tau_lo,
                "prevalence": panel.prevalence,
                "anomaly_rows": _anomaly_count(panel),
            }
        )
        table.append(entry)
    return table


def train_scorers(
    cfg: BacktestConfig, records: Sequence[ZipRecord]
) -> dict[tuple[str, str], CalibratedScorer]:
    """Fit calibrated scorers on the training period only (no test rows needed)."""
    cfg.validate()
    stratified = cfg.area_mode == AREA_MODE_STRATIFIED
    label_cfg = replace(cfg.label, stratify_by_area=stratified)
    p1_records = _rows_in_years(records, cfg.p1_years)
    if not p1_records:
        raise InsufficientCohort(f"no rows in training years {cfg.p1_years}")
    p1_panel = build_labels(p1_records, label_cfg)
    cohorts = [a.value for a in MODELED_AREAS] if stratified else [POOLED_COHORT]

    scorers: dict[tuple[str, str], CalibratedScorer] = {}
    errors = []
    for cohort in cohorts:
        p1_rows = _cohort_rows(p1_panel, cohort)
        if not p1_rows:
            errors.append(f"cohort {cohort!r}: no labeled training rows")
            continue
        try:
            prevalence = _cohort_prevalence(p1_panel, cohort)
        except KeyError:
            errors.append(f"cohort {cohort!r}: no eligible training rows")
            continue
        for subset in cfg.subsets():
            for family in cfg.families:
                try:
                    scorer, _ = _fit_task(cfg, cohort, subset, family, p1_rows, prevalence)
                except CohortError as exc:
                    errors.append(str(exc))
                    continue
                scorers[(cohort, _model_label(family, subset))] = scorer
    if not scorers:
        raise InsufficientCohort("; ".join(sorted(set(errors))) or "nothing to train")
    return scorers


def run_backtest(
    cfg: BacktestConfig,
    records: Sequence[ZipRecord],
    input_digests: dict[str, str] | None = None,
) -> RunManifest:
    """Full train-on-P1 / evaluate-on-P2 run producing a reproducible manifest."""
    cfg.validate()
    stratified = cfg.area_mode == AREA_MODE_STRATIFIED
    label_cfg = replace(cfg.label, stratify_by_area=stratified)

    p1_records = _rows_in_years(records, cfg.p1_years)
    p2_records = _rows_in_years(records, cfg.p2_years)
    if not p1_records or not p2_records:
        raise InsufficientCohort(
            f"panel must cover both periods: {len(p1_records)} training rows, "
            f"{len(p2_records)} test rows"
        )

    p1_panel = build_labels(p1_records, label_cfg)
    if cfg.threshold_mode == THRESHOLD_REFIT:
        p2_panel = build_labels(p2_records, label_cfg)
    else:
        p2_panel = apply_thresholds(p2_records, label_cfg, p1_panel.thresholds)

    cohorts = [a.value for a in MODELED_AREAS] if stratified else [POOLED_COHORT]

    # Build the flat task list first so results assemble independently of
    # execution order or parallelism.
    tasks = []
    cohort_errors: dict[str, str] = {}
    for cohort in cohorts:
        p1_rows = _cohort_rows(p1_panel, cohort)
        p2_rows = _cohort_rows(p2_panel, cohort)
        if not p1_rows:
            cohort_errors[cohort] = f"cohort {cohort!r}: no labeled training rows"
            continue
        try:
            prevalence = _cohort_prevalence(p1_panel, cohort)
        except KeyError:
            cohort_errors[cohort] = f"cohort {cohort!r}: no eligible training rows"
            continue
        for subset in cfg.subsets():
            for family in cfg.families:
                tasks.append((cohort, subset, family, p1_rows, p2_rows, prevalence))

    def run_task(task):
        cohort, subset, family, p1_rows, p2_rows, prevalence = task
        try:
            scorer, detail = _fit_task(cfg, cohort, subset, family, p1_rows, prevalence)
            detail = _evaluate_task(cfg, cohort, subset, family, scorer, detail, p2_rows)
            return cohort, subset, family, scorer, detail, None
        except CohortError as exc:
            return cohort, subset, family, None, None, str(exc)

    if cfg.n_jobs > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as pool:
            results = list(pool.map(run_task, tasks))
    else:
        results = [run_task(t) for t in tasks]

    scorers: dict[tuple[str, str], CalibratedScorer] = {}
    cohort_models: dict[str, dict] = {c: {} for c in cohorts}
    for cohort, subset, family, scorer, detail, error in results:
        label = _model_label(family, subset)
        if error is not None:
            cohort_models[cohort][label] = {"error": error}
            continue
        cohort_models[cohort][label] = detail
        scorers[(cohort, label)] = scorer

    succeeded = any(
        any("error" not in d for d in models.values()) for models in cohort_models.values()
    )
    if not succeeded:
        details = "; ".join(
            sorted(
                set(
                    d["error"]
                    for models in cohort_models.values()
                    for d in models.values()
                    if "error" in d
                )
                | set(cohort_errors.values())
            )
        )
        raise InsufficientCohort(f"every cohort failed: {details}")

    cohort_body: dict[str, dict] = {}
    for cohort in cohorts:
        if cohort in cohort_errors:
            cohort_body[cohort] = {"error": cohort_errors[cohort]}
            continue
        cohort_body[cohort] = {"models": dict(sorted(cohort_models[cohort].items()))}

    body = {
        "format": MANIFEST_FORMAT,
        "version": __version__,
        "seed": cfg.seed,
        "config": cfg.to_dict(),
        "config_hash": digest_of(cfg.to_dict()),
        "input_digests": dict(sorted((input_digests or {}).items())),
        "periods": {
            "p1": _panel_summary(p1_panel),
            "p2": _panel_summary(p2_panel),
        },
        "cohorts": cohort_body,
        "hidden_fragility": {
            "p1": _hidden_fragility_entry(p1_panel, cfg.hidden_tail),
            "p2": _hidden_fragility_entry(p2_panel, cfg.hidden_tail),
        },
        "fragile_distribution": {
            "p1": _fragile_distribution(p1_records, label_cfg),
            "p2": _fragile_distribution(p2_records, label_cfg),
        },
        "yearly": run_yearly_diagnostics(cfg, records),
    }
    body["manifest_digest"] = digest_of(body)
    return RunManifest(body=body, scorers=scorers)


def run_area_stratified(
    cfg: BacktestConfig,
    records: Sequence[ZipRecord],
    input_digests: dict[str, str] | None = None,
) -> RunManifest:
    """Area-stratified run; with area_mode pooled this is run_backtest exactly."""
    if cfg.area_mode == AREA_MODE_POOLED:
        return run_backtest(cfg, records, input_digests)
    return run_backtest(replace(cfg, area_mode=AREA_MODE_STRATIFIED), records, input_digests)
