"""Score selection results against simulation ground truth.

Selection quality is judged over the L1-eligible parameter set: false positive
rate, false negative rate and accuracy per replicate, plus exact-set recovery
per term category.  Estimation quality is the absolute error of each treatment
contrast and of each recovered between-trial standard deviation.  Rates with
an empty denominator (e.g. FNR when nothing is influential) are undefined and
excluded from averages rather than coerced.
"""

from __future__ import annotations

from dataclasses import dataclass
from statistics import mean, median
from typing import Mapping, Sequence

import numpy as np

from .design import (
    ROLE_COVARIATE,
    ROLE_INCONSISTENCY,
    ROLE_INTERACTION,
    ROLE_NONPROP,
)
from .selection import SelectionReport
from .simulator import TrueModel

CATEGORY_BY_ROLE = {
    ROLE_COVARIATE: "covariates",
    ROLE_INTERACTION: "interactions",
    ROLE_INCONSISTENCY: "inconsistency",
    ROLE_NONPROP: "nonproportionality",
}
CATEGORIES = tuple(CATEGORY_BY_ROLE.values())


class ScoringError(ValueError):
    pass


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int
    tn: int
    fp: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class ReplicateScore:
    confusion: ConfusionCounts
    fpr: float | None
    fnr: float | None
    acc: float
    category_correct: dict[str, bool]
    beta_abs_bias: dict[str, float]
    tau_hat: dict[str, float] | None
    tau_abs_bias: dict[str, float] | None


def _nonprop_treatment(name: str) -> str:
    return name.split(":")[2]


def score_replicate(report: SelectionReport, truth: TrueModel) -> ReplicateScore:
    """Confusion counts, rates and category recovery for one fitted dataset."""
    l1_names = [
        name for name, role in report.roles.items() if role in CATEGORY_BY_ROLE
    ]
    selected = set(report.support)
    influential = set(truth.support)
    unknown = influential - set(l1_names)
    if unknown:
        raise ScoringError(
            f"truth names not present in the fitted model: {sorted(unknown)}"
        )

    tp = len(selected & influential)
    fp = len(selected - influential)
    fn = len(influential - selected)
    tn = len(l1_names) - tp - fp - fn
    confusion = ConfusionCounts(tp=tp, tn=tn, fp=fp, fn=fn)
    fpr = fp / (tn + fp) if (tn + fp) > 0 else None
    fnr = fn / (fn + tp) if (fn + tp) > 0 else None
    acc = (tp + tn) / confusion.total

    category_correct: dict[str, bool] = {}
    for role, category in CATEGORY_BY_ROLE.items():
        names_in = {n for n in l1_names if report.roles[n] == role}
        sel = selected & names_in
        tru = influential & names_in
        if category == "nonproportionality" and truth.nonproportional:
            flagged = set(truth.nonproportional)
            on_target = {n for n in sel if _nonprop_treatment(n) in flagged}
            off_target = sel - on_target
            category_correct[category] = bool(on_target) and not off_target
        else:
            category_correct[category] = sel == tru

    beta_abs_bias = {
        q: abs(report.estimates[f"trt:{q}"] - value)
        for q, value in truth.treatment_effects.items()
        if f"trt:{q}" in report.estimates
    }
    if report.tau is not None:
        tau_hat = {q: v for q, v in report.tau.items() if q != "baseline"}
        tau_abs_bias = {q: abs(v - truth.tau) for q, v in tau_hat.items()}
    else:
        tau_hat = None
        tau_abs_bias = None
    return ReplicateScore(
        confusion=confusion,
        fpr=fpr,
        fnr=fnr,
        acc=acc,
        category_correct=category_correct,
        beta_abs_bias=beta_abs_bias,
        tau_hat=tau_hat,
        tau_abs_bias=tau_abs_bias,
    )


def replicate_metrics(score: ReplicateScore) -> dict[str, float | None]:
    """Flatten one replicate's score into metric -> value (None = undefined)."""
    out: dict[str, float | None] = {
        "acc": score.acc,
        "fpr": score.fpr,
        "fnr": score.fnr,
    }
    for category, ok in score.category_correct.items():
        out[f"category_correct:{category}"] = float(ok)
    for q, value in score.beta_abs_bias.items():
        out[f"beta_abs_bias:{q}"] = value
    if score.tau_hat is not None:
        for q, value in score.tau_hat.items():
            out[f"tau_hat:{q}"] = value
        for q, value in (score.tau_abs_bias or {}).items():
            out[f"tau_abs_bias:{q}"] = value
    return out


def aggregate(scores: Sequence[ReplicateScore]) -> dict:
    """Summaries over replicates: means of defined rates, category recovery
    proportions, quartiles of the contrast biases, mean recovered taus."""
    if not scores:
        raise ScoringError("no replicate scores to aggregate")

    def defined(values):
        return [v for v in values if v is not None]

    summary: dict = {
        "n_replicates": len(scores),
        "acc_mean": mean(s.acc for s in scores),
    }
    fprs = defined([s.fpr for s in scores])
    fnrs = defined([s.fnr for s in scores])
    summary["fpr_mean"] = mean(fprs) if fprs else None
    summary["fpr_defined"] = len(fprs)
    summary["fnr_mean"] = mean(fnrs) if fnrs else None
    summary["fnr_defined"] = len(fnrs)

    summary["category_proportion"] = {
        category: mean(float(s.category_correct[category]) for s in scores)
        for category in scores[0].category_correct
    }

    bias_summary: dict[str, dict[str, float]] = {}
    contrasts = sorted({q for s in scores for q in s.beta_abs_bias})
    for q in contrasts:
        values = [s.beta_abs_bias[q] for s in scores if q in s.beta_abs_bias]
        q1, q3 = np.percentile(values, [25, 75])
        bias_summary[q] = {
            "median": float(median(values)),
            "mean": float(mean(values)),
            "q1": float(q1),
            "q3": float(q3),
        }
    summary["beta_abs_bias"] = bias_summary

    tau_scores = [s for s in scores if s.tau_hat is not None]
    if tau_scores:
        keys = sorted({q for s in tau_scores for q in s.tau_hat})
        summary["tau_hat_mean"] = {
            q: mean(s.tau_hat[q] for s in tau_scores if q in s.tau_hat) for q in keys
        }
        summary["tau_abs_bias_mean"] = {
            q: mean(s.tau_abs_bias[q] for s in tau_scores if q in s.tau_abs_bias)
            for q in keys
        }
    return summary


def tidy_rows(
    labels: Mapping[str, object], summary: Mapping
) -> list[tuple[object, ...]]:
    """Flatten an aggregate summary into (label..., metric, value) rows."""
    prefix = tuple(labels.values())
    rows: list[tuple[object, ...]] = []

    def emit(metric: str, value):
        if value is not None:
            rows.append(prefix + (metric, value))

    emit("acc_mean", summary["acc_mean"])
    emit("fpr_mean", summary["fpr_mean"])
    emit("fnr_mean", summary["fnr_mean"])
    for category, value in summary["category_proportion"].items():
        emit(f"category_proportion:{category}", value)
    for q, stats in summary["beta_abs_bias"].items():
        for stat, value in stats.items():
            emit(f"beta_abs_bias_{stat}:{q}", value)
    for key in ("tau_hat_mean", "tau_abs_bias_mean"):
        for q, value in summary.get(key, {}).items():
            emit(f"{key}:{q}", value)
    return rows
