"""Assemble the penalized Poisson regression problem from a risk table.

The linear predictor per risk row is, in column order:

  period adjustments (K-1 indicators, first period is the baseline)
  + intercept (mean log baseline hazard)
  + treatment contrasts (one column per non-reference treatment, values
    in {-1, 0, 1})
  + inconsistency terms (one per closed loop through the network reference)
  + covariate main effects
  + covariate-by-treatment interactions
  + period-by-treatment interactions (non-proportionality)
  + per-trial baseline deviations (ridge group 0)
  + per-trial contrast deviations (one ridge group per contrast, or one
    merged group)

Only inconsistency, covariate, interaction and non-proportionality columns
are eligible for the adaptive L1 penalty; the deviation columns carry ridge
penalties standing in for between-trial random effects; everything else is
unpenalized.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data_model import DataError, Trial, TreatmentNetwork
from .risk import RiskTable

ROLE_PERIOD = "period"
ROLE_BASELINE = "baseline"
ROLE_TREATMENT = "treatment"
ROLE_INCONSISTENCY = "inconsistency"
ROLE_COVARIATE = "covariate"
ROLE_INTERACTION = "interaction"
ROLE_NONPROP = "nonprop"
ROLE_TRIAL_DEV = "trial_dev"
ROLE_CONTRAST_DEV = "contrast_dev"

L1_ROLES = (ROLE_INCONSISTENCY, ROLE_COVARIATE, ROLE_INTERACTION, ROLE_NONPROP)
RIDGE_ROLES = (ROLE_TRIAL_DEV, ROLE_CONTRAST_DEV)

HETEROGENEITY_MODES = ("none", "per-contrast", "common")
BASELINE_RIDGE_GROUP = "baseline_dev"
COMMON_RIDGE_GROUP = "contrast_dev"


@dataclass(frozen=True)
class ModelConfig:
    """Which optional terms enter the model and how heterogeneity is handled."""

    include_inconsistency: bool = True
    covariates_for_baseline: tuple[str, ...] | None = None  # None = all encoded
    covariates_for_interaction: tuple[str, ...] | None = None  # None = baseline set
    include_nonproportionality: bool = True
    heterogeneity: str = "per-contrast"

    def __post_init__(self) -> None:
        if self.heterogeneity not in HETEROGENEITY_MODES:
            raise DataError(f"unknown heterogeneity mode {self.heterogeneity!r}")


@dataclass(frozen=True)
class CoefficientSpec:
    """Name, model role and penalty type of one design column."""

    name: str
    role: str
    penalty: str  # 'none' | 'ridge' | 'l1'
    ridge_group: str | None = None


@dataclass(frozen=True)
class PenalizedProblem:
    y: np.ndarray  # event counts per row
    offset: np.ndarray  # log exposure per row
    X: np.ndarray  # rows x coefficients
    coefficients: tuple[CoefficientSpec, ...]
    ridge_groups: Mapping[str, tuple[int, ...]] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.X.shape != (len(self.y), len(self.coefficients)):
            raise DataError("design matrix shape does not match rows x coefficients")
        if not np.all(np.isfinite(self.offset)):
            raise DataError("offset contains non-finite values")

    @property
    def n_rows(self) -> int:
        return self.X.shape[0]

    @property
    def n_coefficients(self) -> int:
        return self.X.shape[1]

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(c.name for c in self.coefficients)

    def indices_with_role(self, *roles: str) -> np.ndarray:
        return np.array(
            [i for i, c in enumerate(self.coefficients) if c.role in roles], dtype=int
        )

    def l1_indices(self) -> np.ndarray:
        return np.array(
            [i for i, c in enumerate(self.coefficients) if c.penalty == "l1"],
            dtype=int,
        )

    def index_of(self, name: str) -> int:
        for i, c in enumerate(self.coefficients):
            if c.name == name:
                return i
        raise KeyError(name)

    def subset(self, keep: Sequence[int]) -> "PenalizedProblem":
        """Restrict to a subset of columns (others implicitly fixed at zero)."""
        keep = list(keep)
        kept_groups: dict[str, list[int]] = {}
        for new_i, old_i in enumerate(keep):
            spec = self.coefficients[old_i]
            if spec.ridge_group is not None:
                kept_groups.setdefault(spec.ridge_group, []).append(new_i)
        return PenalizedProblem(
            y=self.y,
            offset=self.offset,
            X=np.ascontiguousarray(self.X[:, keep]),
            coefficients=tuple(self.coefficients[i] for i in keep),
            ridge_groups={g: tuple(ix) for g, ix in kept_groups.items()},
        )

    def without_l1_penalty(self) -> "PenalizedProblem":
        coeffs = tuple(
            replace(c, penalty="none") if c.penalty == "l1" else c
            for c in self.coefficients
        )
        return PenalizedProblem(self.y, self.offset, self.X, coeffs, self.ridge_groups)


def treatment_contrasts(
    trial: Trial, arm: str, network: TreatmentNetwork
) -> dict[str, float]:
    """Contrast values per non-reference treatment for a patient in `arm`.

    The trial's reference arm gets all zeros.  A patient in a non-reference arm
    with treatment q, compared against trial reference p, gets +1 on q and -1
    on p (the p component is omitted when p is the network reference).
    """
    if arm not in trial.treatments:
        raise DataError(f"arm {arm!r} not in trial {trial.trial_id}")
    out = {t: 0.0 for t in network.treatments[1:]}
    if arm == trial.reference_arm:
        return out
    out[arm] = 1.0
    if trial.reference_arm != network.reference:
        out[trial.reference_arm] = -1.0
    return out


def inconsistency_value(contrasts: Mapping[str, float], q: str, p: str) -> float:
    """|trt_q * trt_p|: 1 on experimental-arm rows of trials directly comparing q and p."""
    return abs(contrasts[q] * contrasts[p])


def build_problem(
    table: RiskTable,
    network: TreatmentNetwork,
    trials: Sequence[Trial],
    config: ModelConfig,
) -> PenalizedProblem:
    """Build design matrix, offset and penalty metadata for a risk table."""
    trial_by_id = {t.trial_id: t for t in trials}
    K = table.grid.n_periods
    non_ref = network.treatments[1:]

    baseline_covs = (
        tuple(table.pattern_names)
        if config.covariates_for_baseline is None
        else tuple(config.covariates_for_baseline)
    )
    unknown = set(baseline_covs) - set(table.pattern_names)
    if unknown:
        raise DataError(f"unknown covariate columns: {sorted(unknown)}")
    interaction_covs = (
        baseline_covs
        if config.covariates_for_interaction is None
        else tuple(config.covariates_for_interaction)
    )
    if not set(interaction_covs) <= set(baseline_covs):
        raise DataError("interaction covariates must be a subset of baseline covariates")

    loops = network.reference_loops if config.include_inconsistency else ()

    specs: list[CoefficientSpec] = []
    specs.extend(
        CoefficientSpec(f"period:{k}", ROLE_PERIOD, "none") for k in range(2, K + 1)
    )
    specs.append(CoefficientSpec("baseline", ROLE_BASELINE, "none"))
    specs.extend(CoefficientSpec(f"trt:{q}", ROLE_TREATMENT, "none") for q in non_ref)
    specs.extend(
        CoefficientSpec(f"incons:{q}:{p}", ROLE_INCONSISTENCY, "l1") for q, p in loops
    )
    specs.extend(
        CoefficientSpec(f"cov:{c}", ROLE_COVARIATE, "l1") for c in baseline_covs
    )
    specs.extend(
        CoefficientSpec(f"inter:{c}:{q}", ROLE_INTERACTION, "l1")
        for c in interaction_covs
        for q in non_ref
    )
    if config.include_nonproportionality:
        specs.extend(
            CoefficientSpec(f"nonprop:{k}:{q}", ROLE_NONPROP, "l1")
            for q in non_ref
            for k in range(2, K + 1)
        )

    trial_ids = sorted({row.trial_id for row in table.rows})
    ridge_groups: dict[str, list[int]] = {}
    if config.heterogeneity != "none":
        group0 = []
        for tid in trial_ids:
            group0.append(len(specs))
            specs.append(
                CoefficientSpec(
                    f"trial_dev:{tid}", ROLE_TRIAL_DEV, "ridge", BASELINE_RIDGE_GROUP
                )
            )
        ridge_groups[BASELINE_RIDGE_GROUP] = group0

        # a contrast deviation is identifiable only when its treatment shows up
        # in at least two trials
        trials_with = {
            q: [tid for tid in trial_ids if q in trial_by_id[tid].treatments]
            for q in non_ref
        }
        for q in non_ref:
            involved = trials_with[q]
            if not involved:
                continue
            if len(involved) < 2:
                warnings.warn(
                    f"treatment {q} appears in a single trial; no between-trial "
                    f"heterogeneity estimated for its contrast",
                    stacklevel=2,
                )
                continue
            group = (
                COMMON_RIDGE_GROUP
                if config.heterogeneity == "common"
                else f"contrast_dev:{q}"
            )
            for tid in involved:
                ridge_groups.setdefault(group, []).append(len(specs))
                specs.append(
                    CoefficientSpec(f"trt_dev:{q}:{tid}", ROLE_CONTRAST_DEV, "ridge", group)
                )

    name_to_col = {spec.name: j for j, spec in enumerate(specs)}
    n_rows = len(table.rows)
    X = np.zeros((n_rows, len(specs)))
    y = np.zeros(n_rows)
    offset = np.zeros(n_rows)

    pattern_index = {name: i for i, name in enumerate(table.pattern_names)}
    contrast_cache: dict[tuple[str, str], dict[str, float]] = {}

    for r, row in enumerate(table.rows):
        y[r] = row.d
        offset[r] = np.log(row.xi)
        trial = trial_by_id[row.trial_id]
        key = (row.trial_id, row.arm_treatment)
        if key not in contrast_cache:
            contrast_cache[key] = treatment_contrasts(trial, row.arm_treatment, network)
        contrasts = contrast_cache[key]

        if row.period >= 2:
            X[r, name_to_col[f"period:{row.period}"]] = 1.0
        X[r, name_to_col["baseline"]] = 1.0
        for q in non_ref:
            value = contrasts[q]
            if value != 0.0:
                X[r, name_to_col[f"trt:{q}"]] = value
                if config.include_nonproportionality and row.period >= 2:
                    X[r, name_to_col[f"nonprop:{row.period}:{q}"]] = value
        for q, p in loops:
            value = inconsistency_value(contrasts, q, p)
            if value != 0.0:
                X[r, name_to_col[f"incons:{q}:{p}"]] = value
        for c in baseline_covs:
            z = row.covariate_pattern[pattern_index[c]]
            if z != 0.0:
                X[r, name_to_col[f"cov:{c}"]] = z
                if c in interaction_covs:
                    for q in non_ref:
                        value = contrasts[q]
                        if value != 0.0:
                            X[r, name_to_col[f"inter:{c}:{q}"]] = z * value
        if config.heterogeneity != "none":
            X[r, name_to_col[f"trial_dev:{row.trial_id}"]] = 1.0
            for q in non_ref:
                value = contrasts[q]
                if value != 0.0:
                    dev_name = f"trt_dev:{q}:{row.trial_id}"
                    if dev_name in name_to_col:
                        X[r, name_to_col[dev_name]] = value

    return PenalizedProblem(
        y=y,
        offset=offset,
        X=X,
        coefficients=tuple(specs),
        ridge_groups={g: tuple(ix) for g, ix in ridge_groups.items()},
    )


def log_hazard_ratio(estimates: Mapping[str, float], q: str, p: str, network: TreatmentNetwork) -> float:
    """Log hazard ratio of q vs p reconstructed from basic contrasts.

    Under consistency this is trt:q minus trt:p, with the network reference
    contributing zero.
    """
    def basic(t: str) -> float:
        if t == network.reference:
            return 0.0
        return estimates[f"trt:{t}"]

    return basic(q) - basic(p)


def dump_problem(path: str | Path, problem: PenalizedProblem) -> None:
    """Write column names and penalty roles as JSON for audit."""
    payload = {
        "n_rows": problem.n_rows,
        "coefficients": [
            {
                "name": c.name,
                "role": c.role,
                "penalty": c.penalty,
                "ridge_group": c.ridge_group,
            }
            for c in problem.coefficients
        ],
        "ridge_groups": {g: list(ix) for g, ix in problem.ridge_groups.items()},
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
