"""Adaptive-lasso term selection with ridge-calibrated heterogeneity.

The full procedure for one dataset:

  1. expand follow-up into risk rows (optionally collapsing identical cells),
  2. build the penalized problem,
  3. estimate adaptive L1 weights from a nearly-unpenalized fit,
  4. walk a descending grid of L1 strengths, re-calibrating the ridge
     penalties at every point through the degrees-of-freedom fixed point
     lambda_g = df_g / ||theta_g||^2,
  5. refit every distinct support without the L1 penalty and keep the one
     with the smallest BIC,
  6. back out between-trial standard deviations from the calibrated ridge
     strengths (tau = 1 / sqrt(lambda)).

The same pipeline with heterogeneity disabled (no deviation columns, no
calibration loop) is the fixed-effect ablation.
"""

from __future__ import annotations

import math
import warnings as _warnings
from dataclasses import asdict, dataclass
from typing import Mapping, Sequence

import numpy as np

from .data_model import DataError, IpdDataset, PatientRecord, build_dataset
from .design import (
    BASELINE_RIDGE_GROUP,
    ModelConfig,
    PenalizedProblem,
    build_problem,
)
from .risk import PeriodGrid, RiskTable, choose_boundaries, collapse, expand
from .solver import (
    FitResult,
    PenaltyVector,
    SolverError,
    fit,
    hat_diagonal,
    negloglik_and_gradient,
)

LAMBDA_CAP = 1e8
LAMBDA_FLOOR = 1e-6
RHO_CAP = 1e6
# ridge strengths this large all read as "no heterogeneity" (tau < 4e-4);
# movements inside the band are not meaningful changes
LAMBDA_CAP_BAND = 1e7


class SelectionError(RuntimeError):
    """Pipeline failure, tagged with the stage that raised it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


def penalty_from_tau(tau: float) -> float:
    """Ridge strength equivalent to a between-trial standard deviation."""
    return 1.0 / (tau * tau)


def tau_from_penalty(lam: float) -> float:
    """Between-trial standard deviation implied by a ridge strength."""
    return 1.0 / math.sqrt(lam)


@dataclass(frozen=True)
class CalibrationState:
    """Ridge strengths used in the latest fit plus the df/sum-of-squares
    statistics that generate the next update."""

    lambdas: dict[str, float]
    df: dict[str, float]
    ss: dict[str, float]
    iterations: int = 0
    converged: bool = True

    @property
    def lambda0(self) -> float | None:
        return self.lambdas.get(BASELINE_RIDGE_GROUP)


@dataclass(frozen=True)
class AdaptiveWeights:
    rho: dict[str, float]
    eps_l1: float
    unpenalized: dict[str, float]


def build_penalty(
    problem: PenalizedProblem,
    lambdas: Mapping[str, float],
    lambda_l1: float,
    rho: Mapping[str, float],
) -> PenaltyVector:
    """Per-coefficient penalty arrays from ridge strengths and L1 weights."""
    p = problem.n_coefficients
    l2 = np.zeros(p)
    l1 = np.zeros(p)
    for i, spec in enumerate(problem.coefficients):
        if spec.penalty == "ridge":
            l2[i] = lambdas[spec.ridge_group]
        elif spec.penalty == "l1":
            l1[i] = lambda_l1 * rho.get(spec.name, 1.0)
    return PenaltyVector(l2, l1)


def _accelerate(history: list[float], proposal: float) -> float | None:
    """Bounded Aitken extrapolation of the ridge-strength sequence in log space.

    The df/sum-of-squares map contracts geometrically, painfully slowly for
    near-degenerate groups.  Three consecutive iterates with a steady ratio
    license a jump toward the extrapolated limit; jumps are clamped (and very
    small or inconsistent steps skipped) because a wrong long jump costs many
    recovery iterations.  A strength already past tau ~ 0.02 that keeps
    climbing is sent straight to the cap.  Returns None to keep the plain
    update.
    """
    if len(history) < 2:
        return None
    l0, l1 = history[-2], history[-1]
    l2 = math.log(proposal)
    d1, d2 = l1 - l0, l2 - l1
    if proposal >= 2e3 and d1 > math.log(1.02) and d2 > math.log(1.02):
        return LAMBDA_CAP
    if abs(d2) < 1e-3 or abs(d1) < 1e-12 or d1 * d2 <= 0:
        return None
    r = d2 / d1
    if not 0.2 < r < 1.5:
        return None
    gain = min(r, 0.95) / (1.0 - min(r, 0.95))
    max_jump = math.log(1e3) if d2 > 0 else math.log(30.0)
    jump = math.copysign(min(abs(d2) * gain, max_jump), d2)
    return math.exp(min(max(l2 + jump, math.log(LAMBDA_FLOOR)), math.log(LAMBDA_CAP)))


def _lambda_change(old: float, new: float) -> float:
    if min(old, new) >= LAMBDA_CAP_BAND:
        return 0.0
    return abs(new - old) / old


def calibrate_ridge(
    problem: PenalizedProblem,
    lambda_l1: float,
    rho: Mapping[str, float],
    init: CalibrationState | None = None,
    warm_start: np.ndarray | None = None,
    *,
    tol: float = 1e-4,
    max_iter: int = 50,
    **fit_kwargs,
) -> tuple[CalibrationState, FitResult]:
    """Alternate fitting and ridge-strength updates until the fixed point.

    Each group's strength moves to df_g / ||theta_g||^2 (with occasional
    extrapolation along the way; the fixed point is unchanged).  A collapsed
    block (sum of squares near zero) pins its strength at the cap, which reads
    as a between-trial standard deviation of about zero; the loop keeps
    running for the other groups.  Without ridge groups this reduces to a
    single fit.
    """
    groups = problem.ridge_groups
    if not groups:
        res = fit(problem, build_penalty(problem, {}, lambda_l1, rho), warm_start, **fit_kwargs)
        return CalibrationState({}, {}, {}, iterations=0, converged=True), res

    # the inner fits must be solved far more precisely than the strength
    # tolerance, otherwise df/ss noise keeps the loop dithering at tol scale
    fit_kwargs = {"tol_kkt": 1e-10, **fit_kwargs}
    used = {g: 1.0 for g in groups}
    if init is not None:
        used.update({g: v for g, v in init.lambdas.items() if g in groups})
    history: dict[str, list[float]] = {g: [] for g in groups}
    warm = warm_start
    res: FitResult | None = None
    df: dict[str, float] = {}
    ss: dict[str, float] = {}
    for iteration in range(1, max_iter + 1):
        res = fit(problem, build_penalty(problem, used, lambda_l1, rho), warm, **fit_kwargs)
        warm = res.theta_hat
        diag = hat_diagonal(res, problem)
        new = {}
        for g, idx in groups.items():
            cols = np.asarray(idx, dtype=int)
            df[g] = float(diag[cols].sum())
            ss[g] = float((res.theta_hat[cols] ** 2).sum())
            if ss[g] <= 0.0 or df[g] / ss[g] >= LAMBDA_CAP:
                new[g] = LAMBDA_CAP
                history[g].clear()
            else:
                plain = min(max(df[g] / ss[g], LAMBDA_FLOOR), LAMBDA_CAP)
                jumped = _accelerate(history[g], plain)
                if jumped is not None:
                    new[g] = jumped
                    history[g].clear()
                else:
                    new[g] = plain
                    history[g].append(math.log(plain))
                    del history[g][:-2]
        rel = max(_lambda_change(used[g], new[g]) for g in groups)
        if rel < tol:
            return CalibrationState(dict(used), df, ss, iteration, True), res
        used = new
    assert res is not None
    return CalibrationState(dict(used), df, ss, max_iter, False), res


def _scatter(problem: PenalizedProblem, idx: np.ndarray, values: np.ndarray) -> np.ndarray:
    out = np.zeros(problem.n_coefficients)
    out[idx] = values
    return out


def adaptive_weights(
    problem: PenalizedProblem,
    *,
    rho_cap: float = RHO_CAP,
    eps_rel: float = 1e-6,
    **fit_kwargs,
) -> tuple[AdaptiveWeights, float, CalibrationState, np.ndarray]:
    """Compute adaptive L1 weights 1/|estimate| from a near-unpenalized fit.

    Returns (weights, lambda_max, null-fit calibration state, null-fit
    coefficients embedded in the full problem).  lambda_max is the smallest L1
    strength at which the empty support satisfies the stationarity condition,
    the natural top of the grid.
    """
    l1_idx = problem.l1_indices()
    if len(l1_idx) == 0:
        raise DataError("problem has no selection-eligible terms")
    keep = [i for i in range(problem.n_coefficients) if i not in set(l1_idx.tolist())]
    null_problem = problem.subset(keep)
    null_state, null_fit = calibrate_ridge(null_problem, 0.0, {}, **fit_kwargs)
    theta_null = _scatter(problem, np.asarray(keep, dtype=int), null_fit.theta_hat)
    _, grad = negloglik_and_gradient(theta_null, problem)
    g_l1 = np.abs(grad[l1_idx])
    eps = max(float(eps_rel * g_l1.max(initial=0.0)), 1e-12)

    state, res = calibrate_ridge(
        problem, eps, {}, init=null_state, warm_start=theta_null, **fit_kwargs
    )
    names = problem.names
    unpen = {names[i]: float(res.theta_hat[i]) for i in l1_idx}
    rho = {}
    for name, est in unpen.items():
        rho[name] = min(1.0 / abs(est), rho_cap) if est != 0.0 else rho_cap
    lambda_max = float(max(g / rho[names[i]] for g, i in zip(g_l1, l1_idx)))
    weights = AdaptiveWeights(rho=rho, eps_l1=eps, unpenalized=unpen)
    return weights, lambda_max, null_state, theta_null


def default_grid(lambda_max: float, n_points: int = 30, span: float = 1000.0) -> np.ndarray:
    """Descending log-spaced L1 grid from lambda_max down to lambda_max/span."""
    lambda_max = max(lambda_max, 1e-8)
    return np.geomspace(lambda_max, lambda_max / span, n_points)


@dataclass
class PathPoint:
    lambda_l1: float
    support: tuple[str, ...]
    theta: np.ndarray
    state: CalibrationState
    converged: bool


def lasso_path(
    problem: PenalizedProblem,
    weights: AdaptiveWeights,
    grid: Sequence[float],
    *,
    init_state: CalibrationState | None = None,
    warm_start: np.ndarray | None = None,
    **fit_kwargs,
) -> list[PathPoint]:
    """Fit at each grid point (descending), warm-starting along the path."""
    grid = sorted((float(g) for g in grid), reverse=True)
    if any(g <= 0 for g in grid):
        raise DataError("L1 grid values must be positive")
    l1_idx = problem.l1_indices()
    names = problem.names
    points: list[PathPoint] = []
    state, warm = init_state, warm_start
    for pos, lam in enumerate(grid):
        try:
            state, res = calibrate_ridge(
                problem, lam, weights.rho, init=state, warm_start=warm, **fit_kwargs
            )
        except SolverError as exc:
            raise SelectionError("lasso_path", f"grid point {pos} (lambda={lam!r}): {exc}")
        warm = res.theta_hat
        support = tuple(names[i] for i in l1_idx if res.theta_hat[i] != 0.0)
        points.append(PathPoint(lam, support, res.theta_hat.copy(), state, res.converged))
    return points


@dataclass
class SupportRefit:
    support: tuple[str, ...]
    loglik: float
    df: float
    bic: float
    converged: bool
    calibration_converged: bool
    estimates: dict[str, float]
    state: CalibrationState
    first_lambda: float


def two_step_bic(
    path: Sequence[PathPoint],
    problem: PenalizedProblem,
    n_obs: int,
    **fit_kwargs,
) -> tuple[list[SupportRefit], int, list[str]]:
    """Refit each distinct support without L1 penalty and rank by BIC.

    df is the trace of the hat matrix over every active coefficient of the
    restricted problem (core terms, supported selection terms, deviation
    blocks).  Ridge strengths are re-calibrated during the refit.  Ties break
    toward the smaller support.
    """
    if not path:
        raise DataError("empty path")
    first_seen: dict[tuple[str, ...], PathPoint] = {}
    for point in path:
        first_seen.setdefault(point.support, point)

    refits: list[SupportRefit] = []
    notes: list[str] = []
    for support, point in first_seen.items():
        keep = [
            i
            for i, spec in enumerate(problem.coefficients)
            if spec.penalty != "l1" or spec.name in support
        ]
        sub = problem.subset(keep)
        warm = point.theta[keep]
        try:
            state, res = calibrate_ridge(
                sub, 0.0, {}, init=point.state, warm_start=warm, **fit_kwargs
            )
        except SolverError as exc:
            notes.append(f"support {support!r} refit failed: {exc}")
            continue
        df = float(hat_diagonal(res, sub).sum())
        bic = -2.0 * res.loglik + df * math.log(n_obs)
        refits.append(
            SupportRefit(
                support=support,
                loglik=res.loglik,
                df=df,
                bic=bic,
                converged=res.converged,
                calibration_converged=state.converged,
                estimates={n: float(v) for n, v in zip(sub.names, res.theta_hat)},
                state=state,
                first_lambda=point.lambda_l1,
            )
        )
    if not refits:
        raise SelectionError("two_step_bic", "every support refit failed")
    order = sorted(
        range(len(refits)), key=lambda i: (refits[i].bic, len(refits[i].support), i)
    )
    return refits, order[0], notes


# ---------------------------------------------------------------------------
# end-to-end runs
# ---------------------------------------------------------------------------


@dataclass
class SelectionReport:
    """Everything needed to report, reproduce and bootstrap a selected model."""

    method: str
    heterogeneity: str
    n_periods: int
    cut_points: tuple[float, ...]
    collapsed: bool
    n_obs: int
    model: dict
    eps_l1: float
    weights: dict[str, float]
    unpenalized_estimates: dict[str, float]
    lambda_grid: tuple[float, ...]
    path: tuple[tuple[float, tuple[str, ...]], ...]
    bic_table: tuple[dict, ...]
    support: tuple[str, ...]
    chosen_lambda: float
    estimates: dict[str, float]
    roles: dict[str, str]
    lambdas: dict[str, float]
    tau: dict[str, float] | None
    calibration_converged: bool
    warnings: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        out = asdict(self)
        out["cut_points"] = list(self.cut_points)
        out["lambda_grid"] = list(self.lambda_grid)
        out["path"] = [
            {"lambda_l1": lam, "support": list(sup)} for lam, sup in self.path
        ]
        out["bic_table"] = [dict(row) for row in self.bic_table]
        out["support"] = list(self.support)
        out["warnings"] = list(self.warnings)
        return out

    @classmethod
    def from_dict(cls, raw: Mapping) -> "SelectionReport":
        return cls(
            method=raw["method"],
            heterogeneity=raw["heterogeneity"],
            n_periods=int(raw["n_periods"]),
            cut_points=tuple(float(c) for c in raw["cut_points"]),
            collapsed=bool(raw["collapsed"]),
            n_obs=int(raw["n_obs"]),
            model=dict(raw["model"]),
            eps_l1=float(raw["eps_l1"]),
            weights=dict(raw["weights"]),
            unpenalized_estimates=dict(raw["unpenalized_estimates"]),
            lambda_grid=tuple(float(x) for x in raw["lambda_grid"]),
            path=tuple(
                (float(p["lambda_l1"]), tuple(p["support"])) for p in raw["path"]
            ),
            bic_table=tuple(dict(row) for row in raw["bic_table"]),
            support=tuple(raw["support"]),
            chosen_lambda=float(raw["chosen_lambda"]),
            estimates=dict(raw["estimates"]),
            roles=dict(raw["roles"]),
            lambdas=dict(raw["lambdas"]),
            tau=dict(raw["tau"]) if raw.get("tau") is not None else None,
            calibration_converged=bool(raw["calibration_converged"]),
            warnings=tuple(raw.get("warnings", ())),
        )


def _tau_map(state_lambdas: Mapping[str, float]) -> dict[str, float]:
    out = {}
    for group, lam in state_lambdas.items():
        if group == BASELINE_RIDGE_GROUP:
            out["baseline"] = tau_from_penalty(lam)
        elif group.startswith("contrast_dev:"):
            out[group.split(":", 1)[1]] = tau_from_penalty(lam)
        else:  # merged common-variance group
            out["common"] = tau_from_penalty(lam)
    return out


def _prepare_table(
    dataset: IpdDataset,
    n_periods: int,
    boundaries,
    collapse_mode,
    grid: PeriodGrid | None = None,
) -> tuple[RiskTable, bool]:
    if grid is None:
        grid = choose_boundaries(dataset, n_periods, boundaries)
    table = expand(dataset, grid)
    has_continuous = any(
        spec.kind == "continuous" for spec in dataset.covariate_schema.values()
    )
    if collapse_mode is True and has_continuous:
        raise DataError("collapsing requires all covariates categorical")
    do_collapse = collapse_mode is True or (collapse_mode == "auto" and not has_continuous)
    if do_collapse:
        table = collapse(table, dataset)
    return table, do_collapse


def _run_selection(
    dataset: IpdDataset,
    method: str,
    heterogeneity: str,
    *,
    n_periods: int = 6,
    boundaries="event-quantiles",
    grid_size: int = 30,
    grid_span: float = 1000.0,
    collapse_mode="auto",
    include_inconsistency: bool = True,
    covariates_for_baseline: Sequence[str] | None = None,
    covariates_for_interaction: Sequence[str] | None = None,
    include_nonproportionality: bool = True,
    **fit_kwargs,
) -> SelectionReport:
    caught: list[str] = []

    def stage(name):
        class _Ctx:
            def __enter__(self):
                return None

            def __exit__(self, exc_type, exc, tb):
                if exc is not None and not isinstance(exc, SelectionError):
                    raise SelectionError(name, str(exc)) from exc
                return False

        return _Ctx()

    with stage("risk_expansion"):
        table, collapsed = _prepare_table(dataset, n_periods, boundaries, collapse_mode)
    with stage("design"):
        config = ModelConfig(
            include_inconsistency=include_inconsistency,
            covariates_for_baseline=(
                tuple(covariates_for_baseline)
                if covariates_for_baseline is not None
                else None
            ),
            covariates_for_interaction=(
                tuple(covariates_for_interaction)
                if covariates_for_interaction is not None
                else None
            ),
            include_nonproportionality=include_nonproportionality,
            heterogeneity=heterogeneity,
        )
        with _warnings.catch_warnings(record=True) as wlist:
            _warnings.simplefilter("always")
            problem = build_problem(table, dataset.network, dataset.trials, config)
        caught.extend(str(w.message) for w in wlist)
    with stage("adaptive_weights"):
        weights, lambda_max, null_state, theta_null = adaptive_weights(
            problem, **fit_kwargs
        )
    with stage("lasso_path"):
        grid = default_grid(lambda_max, grid_size, grid_span)
        path = lasso_path(
            problem,
            weights,
            grid,
            init_state=null_state,
            warm_start=theta_null,
            **fit_kwargs,
        )
    with stage("two_step_bic"):
        refits, chosen_idx, notes = two_step_bic(path, problem, len(table.rows), **fit_kwargs)
        caught.extend(notes)
    chosen = refits[chosen_idx]

    estimates = {name: 0.0 for name in problem.names}
    estimates.update(chosen.estimates)
    tau = _tau_map(chosen.state.lambdas) if heterogeneity != "none" else None

    baseline_covs = (
        tuple(table.pattern_names)
        if config.covariates_for_baseline is None
        else config.covariates_for_baseline
    )
    interaction_covs = (
        baseline_covs
        if config.covariates_for_interaction is None
        else config.covariates_for_interaction
    )
    return SelectionReport(
        method=method,
        heterogeneity=heterogeneity,
        n_periods=table.grid.n_periods,
        cut_points=table.grid.cut_points,
        collapsed=collapsed,
        n_obs=len(table.rows),
        model={
            "include_inconsistency": config.include_inconsistency,
            "covariates_for_baseline": list(baseline_covs),
            "covariates_for_interaction": list(interaction_covs),
            "include_nonproportionality": config.include_nonproportionality,
            "heterogeneity": heterogeneity,
        },
        eps_l1=weights.eps_l1,
        weights=dict(weights.rho),
        unpenalized_estimates=dict(weights.unpenalized),
        lambda_grid=tuple(float(g) for g in grid),
        path=tuple((p.lambda_l1, p.support) for p in path),
        bic_table=tuple(
            {
                "support": list(r.support),
                "loglik": r.loglik,
                "df": r.df,
                "bic": r.bic,
                "converged": r.converged,
                "calibration_converged": r.calibration_converged,
                "first_lambda": r.first_lambda,
            }
            for r in refits
        ),
        support=chosen.support,
        chosen_lambda=chosen.first_lambda,
        estimates=estimates,
        roles={c.name: c.role for c in problem.coefficients},
        lambdas=dict(chosen.state.lambdas),
        tau=tau,
        calibration_converged=chosen.calibration_converged,
        warnings=tuple(caught),
    )


def run_het_adlasso(dataset: IpdDataset, heterogeneity: str = "per-contrast", **kwargs) -> SelectionReport:
    """Full selection with ridge-represented between-trial heterogeneity."""
    if heterogeneity == "none":
        raise DataError("heterogeneity mode 'none' is the fixed-effect ablation")
    return _run_selection(dataset, "het", heterogeneity, **kwargs)


def run_fx_adlasso(dataset: IpdDataset, **kwargs) -> SelectionReport:
    """Ablation without deviation terms: same pipeline, no calibration loop."""
    return _run_selection(dataset, "fx", "none", **kwargs)


# ---------------------------------------------------------------------------
# bootstrap confidence intervals
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapResult:
    n_resamples: int
    n_failed: int
    intervals: dict[str, tuple[float, float]]  # log-HR scale
    hr_intervals: dict[str, tuple[float, float]]


def refit_selected(
    dataset: IpdDataset, report: SelectionReport, **fit_kwargs
) -> dict[str, float]:
    """Refit the already-selected model structure on (possibly resampled) data."""
    grid = PeriodGrid(report.cut_points)
    table, _ = _prepare_table(
        dataset, report.n_periods, None, report.collapsed, grid=grid
    )
    config = ModelConfig(
        include_inconsistency=report.model["include_inconsistency"],
        covariates_for_baseline=tuple(report.model["covariates_for_baseline"]),
        covariates_for_interaction=tuple(report.model["covariates_for_interaction"]),
        include_nonproportionality=report.model["include_nonproportionality"],
        heterogeneity=report.heterogeneity,
    )
    with _warnings.catch_warnings():
        _warnings.simplefilter("ignore")
        problem = build_problem(table, dataset.network, dataset.trials, config)
    support = set(report.support)
    keep = [
        i
        for i, spec in enumerate(problem.coefficients)
        if spec.penalty != "l1" or spec.name in support
    ]
    sub = problem.subset(keep)
    _, res = calibrate_ridge(sub, 0.0, {}, **fit_kwargs)
    return {n: float(v) for n, v in zip(sub.names, res.theta_hat)}


def _resample(dataset: IpdDataset, rng: np.random.Generator) -> IpdDataset:
    strata: dict[tuple[str, str], list[PatientRecord]] = {}
    for rec in dataset.records:
        strata.setdefault((rec.trial_id, rec.arm_treatment), []).append(rec)
    records: list[PatientRecord] = []
    for key in sorted(strata):
        pool = strata[key]
        draws = rng.integers(0, len(pool), size=len(pool))
        records.extend(pool[i] for i in draws)
    return build_dataset(records, dataset.covariate_schema, dataset.network.reference)


def bootstrap_draw(
    dataset: IpdDataset,
    report: SelectionReport,
    seed: int,
    index: int,
    **fit_kwargs,
) -> dict[str, float] | None:
    """One stratified resample and refit; None if the refit fails.

    Deterministic in (seed, index), independent of execution order, so draws
    can run in parallel.
    """
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), int(index)]))
    resampled = _resample(dataset, rng)
    try:
        return refit_selected(resampled, report, **fit_kwargs)
    except (SolverError, SelectionError, DataError):
        return None


def intervals_from_draws(
    report: SelectionReport,
    draws: Sequence[dict[str, float] | None],
    levels: tuple[float, float] = (2.5, 97.5),
) -> BootstrapResult:
    """Percentile intervals per coefficient; failed draws are dropped and
    counted, off-support coefficients get the degenerate interval {0}."""
    good = [d for d in draws if d is not None]
    failed = len(draws) - len(good)
    lo_q, hi_q = levels
    intervals: dict[str, tuple[float, float]] = {}
    for name in report.estimates:
        values = [d[name] for d in good if name in d]
        if values:
            lo, hi = np.percentile(np.asarray(values), [lo_q, hi_q])
            intervals[name] = (float(lo), float(hi))
        else:
            intervals[name] = (0.0, 0.0)
    hr = {name: (math.exp(lo), math.exp(hi)) for name, (lo, hi) in intervals.items()}
    return BootstrapResult(
        n_resamples=len(draws), n_failed=failed, intervals=intervals, hr_intervals=hr
    )


def bootstrap_ci(
    dataset: IpdDataset,
    report: SelectionReport,
    n_resamples: int,
    seed: int,
    *,
    levels: tuple[float, float] = (2.5, 97.5),
    **fit_kwargs,
) -> BootstrapResult:
    """Percentile intervals from stratified patient resampling.

    Patients are drawn with replacement within each (trial, arm) stratum; the
    selected model is refit on each resample with ridge strengths
    re-calibrated.  Coefficients outside the selected support stay fixed at
    zero and get degenerate intervals.  Bit-reproducible given the seed.
    """
    if n_resamples < 2:
        raise DataError("need at least 2 bootstrap resamples")
    draws = [
        bootstrap_draw(dataset, report, seed, b, **fit_kwargs)
        for b in range(n_resamples)
    ]
    return intervals_from_draws(report, draws, levels)
