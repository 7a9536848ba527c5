"""Piecewise-exponential expansion of IPD into Poisson risk rows.

Follow-up is split into K periods with constant hazard inside each.  A patient
contributes one row per period survived into, carrying the event count d
(0 or 1 before collapsing) and the exposure time xi spent at risk in that
period.  Rows sharing (trial, arm, period, covariate pattern) can be summed
without changing any Poisson estimate, which is how large datasets are made
cheap to fit.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .data_model import DataError, IpdDataset, encode_covariates


@dataclass(frozen=True)
class PeriodGrid:
    """K follow-up periods defined by K-1 finite, strictly increasing cuts.

    Period k (1-based) covers (t_{k-1}, t_k] with t_0 = 0 and t_K = +inf;
    times exactly on a cut belong to the earlier period.
    """

    cut_points: tuple[float, ...]

    def __post_init__(self) -> None:
        cuts = self.cut_points
        if any(c <= 0 for c in cuts):
            raise DataError("cut points must be positive")
        if any(b <= a for a, b in zip(cuts, cuts[1:])):
            raise DataError("cut points must be strictly increasing")

    @property
    def n_periods(self) -> int:
        return len(self.cut_points) + 1

    def lower(self, k: int) -> float:
        return 0.0 if k == 1 else self.cut_points[k - 2]

    def upper(self, k: int) -> float:
        return np.inf if k == self.n_periods else self.cut_points[k - 1]


@dataclass(frozen=True)
class RiskRow:
    trial_id: str
    period: int  # 1-based
    arm_treatment: str
    covariate_pattern: tuple[float, ...]
    d: int
    xi: float


@dataclass(frozen=True)
class RiskTable:
    rows: tuple[RiskRow, ...]
    grid: PeriodGrid
    pattern_names: tuple[str, ...]
    collapsed: bool = False

    @property
    def total_events(self) -> int:
        return sum(r.d for r in self.rows)

    @property
    def total_exposure(self) -> float:
        return float(sum(r.xi for r in self.rows))


def choose_boundaries(
    dataset: IpdDataset,
    n_periods: int,
    strategy: str | Sequence[float] = "event-quantiles",
) -> PeriodGrid:
    """Pick period cut points.

    With the default 'event-quantiles' strategy the k/K empirical quantiles of
    the observed event times (k = 1..K-1) become the cuts, giving roughly equal
    event counts per period.  An explicit sequence of cut points can be passed
    instead; it must then have length K-1.
    """
    if n_periods < 1:
        raise DataError("need at least one period")
    if not isinstance(strategy, str):
        cuts = tuple(float(c) for c in strategy)
        if len(cuts) != n_periods - 1:
            raise DataError(
                f"{n_periods} periods need {n_periods - 1} cut points, got {len(cuts)}"
            )
        return PeriodGrid(cuts)
    if strategy != "event-quantiles":
        raise DataError(f"unknown boundary strategy {strategy!r}")
    if n_periods == 1:
        return PeriodGrid(())
    event_times = np.array(
        [r.followup_time for r in dataset.records if r.event == 1], dtype=float
    )
    if len(np.unique(event_times)) < n_periods:
        raise DataError(
            f"need at least {n_periods} distinct event times for {n_periods} periods, "
            f"got {len(np.unique(event_times))}"
        )
    probs = np.arange(1, n_periods) / n_periods
    cuts = np.quantile(event_times, probs)
    if len(np.unique(cuts)) != len(cuts):
        raise DataError("tied event-time quantiles; reduce the period count")
    return PeriodGrid(tuple(float(c) for c in cuts))


def expand(dataset: IpdDataset, grid: PeriodGrid) -> RiskTable:
    """Expand each patient into one risk row per period entered.

    A patient with follow-up T produces, for every period k with t_{k-1} < T,
    exposure xi = min(T, t_k) - t_{k-1}; the event indicator lands in the final
    period reached.  Zero-exposure rows are dropped (their log offset would be
    undefined).
    """
    patterns, names = encode_covariates(dataset)
    cuts = grid.cut_points
    rows = []
    for rec, pattern in zip(dataset.records, patterns):
        T = rec.followup_time
        for k in range(1, grid.n_periods + 1):
            low = 0.0 if k == 1 else cuts[k - 2]
            if T <= low:
                break
            high = np.inf if k == grid.n_periods else cuts[k - 1]
            xi = min(T, high) - low
            if xi <= 0.0:
                continue
            d = rec.event if T <= high else 0
            rows.append(
                RiskRow(
                    trial_id=rec.trial_id,
                    period=k,
                    arm_treatment=rec.arm_treatment,
                    covariate_pattern=pattern,
                    d=d,
                    xi=float(xi),
                )
            )
    return RiskTable(tuple(rows), grid, tuple(names), collapsed=False)


def collapse(table: RiskTable, dataset: IpdDataset | None = None) -> RiskTable:
    """Sum d and xi over identical (trial, arm, period, covariate pattern) cells.

    Only valid when every covariate is categorical (binary included); with a
    continuous covariate the patterns are patient-specific and collapsing is
    refused.  Estimates from the collapsed table are identical to the expanded
    one because the Poisson log-likelihood differs only through the d!
    constant.
    """
    if dataset is not None:
        bad = [
            name
            for name, spec in dataset.covariate_schema.items()
            if spec.kind == "continuous"
        ]
        if bad:
            raise DataError(
                f"cannot collapse with continuous covariates: {', '.join(bad)}"
            )
    groups: dict[tuple, list[float]] = {}
    for row in table.rows:
        key = (row.trial_id, row.arm_treatment, row.period, row.covariate_pattern)
        acc = groups.setdefault(key, [0, 0.0])
        acc[0] += row.d
        acc[1] += row.xi
    rows = tuple(
        RiskRow(
            trial_id=key[0],
            period=key[2],
            arm_treatment=key[1],
            covariate_pattern=key[3],
            d=int(acc[0]),
            xi=float(acc[1]),
        )
        for key, acc in sorted(groups.items())
    )
    return RiskTable(rows, table.grid, table.pattern_names, collapsed=True)


def save_risk_table(path: str | Path, table: RiskTable) -> None:
    """Export `trial,period,treatment_arm,<pattern columns>,d,xi` for inspection."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["trial", "period", "treatment_arm", *table.pattern_names, "d", "xi"]
        )
        for row in table.rows:
            writer.writerow(
                [
                    row.trial_id,
                    row.period,
                    row.arm_treatment,
                    *[repr(v) for v in row.covariate_pattern],
                    row.d,
                    repr(row.xi),
                ]
            )
