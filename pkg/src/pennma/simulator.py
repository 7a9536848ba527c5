"""Synthetic IPD survival datasets over a five-treatment network.

The simulated network has treatments A..E with A the reference; A is compared
head-to-head with every other treatment and five of the six remaining pairs
are also compared directly (the C-E edge is left out), giving 9 edges and a
densely looped geometry.  Each edge contributes a configurable number of
two-arm trials.  Event and censoring times follow competing exponentials with
log rates -5.5 and -7; between-trial spread enters through normal deviations
of the trial baseline log hazard (sd 0.2) and of each contrast's log hazard
ratio (sd tau).  A time-varying effect for treatment E is produced by swapping
its arms onto a Weibull baseline with shape 0.75 instead of adding explicit
period-interaction coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .data_model import CovariateSpec, IpdDataset, PatientRecord, build_dataset

SIMULATION_TREATMENTS = ("A", "B", "C", "D", "E")
SIMULATION_EDGES = (
    ("A", "B"),
    ("A", "C"),
    ("A", "D"),
    ("A", "E"),
    ("B", "C"),
    ("B", "D"),
    ("B", "E"),
    ("C", "D"),
    ("D", "E"),
)

DEFAULT_TREATMENT_EFFECTS = {
    "B": math.log(0.77),
    "C": math.log(0.65),
    "D": math.log(0.96),
    "E": math.log(0.87),
}

SCENARIO_IDS = ("S1", "S2", "S3", "S4", "S5")

_INCONSISTENCY = {("B", "C"): math.log(0.5), ("D", "E"): math.log(2.0)}
_COVARIATE_EFFECTS = (0.0, math.log(1.25))
_INTERACTIONS = {(2, "B"): math.log(1.25), (2, "D"): math.log(1.25)}


@dataclass(frozen=True)
class ExponentialBaseline:
    rate: float

    def inverse_cumhaz(self, h: float) -> float:
        return h / self.rate


@dataclass(frozen=True)
class WeibullBaseline:
    shape: float
    scale: float

    def inverse_cumhaz(self, h: float) -> float:
        return self.scale * h ** (1.0 / self.shape)


@dataclass(frozen=True)
class ScenarioSpec:
    scenario: str
    tau: float
    trials_per_edge: int
    treatment_effects: Mapping[str, float] = field(
        default_factory=lambda: dict(DEFAULT_TREATMENT_EFFECTS)
    )
    inconsistency: Mapping[tuple[str, str], float] = field(default_factory=dict)
    covariate_effects: tuple[float, ...] = (0.0, 0.0)
    interactions: Mapping[tuple[int, str], float] = field(default_factory=dict)
    nonproportional_treatments: tuple[str, ...] = ()
    baseline_sd: float = 0.2
    event_log_rate: float = -5.5
    censor_log_rate: float = -7.0
    size_range: tuple[int, int] = (50, 500)
    covariate_prob: float = 0.5
    n_periods: int = 6
    weibull_shape: float = 0.75

    def __post_init__(self) -> None:
        if self.trials_per_edge < 1:
            raise ValueError("trials_per_edge must be >= 1")
        if self.tau < 0 or self.baseline_sd < 0:
            raise ValueError("heterogeneity standard deviations must be >= 0")
        for q, b in self.treatment_effects.items():
            if not math.isfinite(b):
                raise ValueError(f"non-finite effect for treatment {q}")

    @property
    def n_covariates(self) -> int:
        return len(self.covariate_effects)

    @property
    def event_rate(self) -> float:
        return math.exp(self.event_log_rate)

    @property
    def censor_rate(self) -> float:
        return math.exp(self.censor_log_rate)

    def weibull_baseline(self) -> WeibullBaseline:
        """Weibull arm matched to the exponential cumulative hazard at its median.

        The shape is fixed; the scale is set so both baselines accumulate the
        same hazard by the exponential median event time, keeping effect sizes
        comparable across arms.
        """
        t_med = math.log(2.0) / self.event_rate
        scale = t_med / math.log(2.0) ** (1.0 / self.weibull_shape)
        return WeibullBaseline(self.weibull_shape, scale)


def scenario_spec(scenario: str, tau: float, trials_per_edge: int) -> ScenarioSpec:
    """Build one of the five canned scenarios."""
    if scenario not in SCENARIO_IDS:
        raise ValueError(
            f"unknown scenario {scenario!r}; valid: {', '.join(SCENARIO_IDS)}"
        )
    kwargs: dict = {}
    if scenario in ("S2", "S4", "S5"):
        kwargs["inconsistency"] = dict(_INCONSISTENCY)
    if scenario in ("S3", "S4", "S5"):
        kwargs["covariate_effects"] = _COVARIATE_EFFECTS
        kwargs["interactions"] = dict(_INTERACTIONS)
    if scenario == "S5":
        kwargs["nonproportional_treatments"] = ("E",)
    return ScenarioSpec(scenario=scenario, tau=tau, trials_per_edge=trials_per_edge, **kwargs)


@dataclass(frozen=True)
class TrueModel:
    """Ground truth for scoring: the influential selection-term names and values."""

    support: tuple[str, ...]
    effects: dict[str, float]  # values for terms with an explicit coefficient
    treatment_effects: dict[str, float]
    tau: float
    baseline_sd: float
    nonproportional: tuple[str, ...]


def true_support(spec: ScenarioSpec) -> TrueModel:
    support: list[str] = []
    effects: dict[str, float] = {}
    for (q, p), value in sorted(spec.inconsistency.items()):
        name = f"incons:{q}:{p}"
        support.append(name)
        effects[name] = value
    for c, value in enumerate(spec.covariate_effects, start=1):
        if value != 0.0:
            name = f"cov:z{c}"
            support.append(name)
            effects[name] = value
    for (c, q), value in sorted(spec.interactions.items()):
        if value != 0.0:
            name = f"inter:z{c}:{q}"
            support.append(name)
            effects[name] = value
    for q in spec.nonproportional_treatments:
        for k in range(2, spec.n_periods + 1):
            support.append(f"nonprop:{k}:{q}")
    return TrueModel(
        support=tuple(support),
        effects=effects,
        treatment_effects=dict(spec.treatment_effects),
        tau=spec.tau,
        baseline_sd=spec.baseline_sd,
        nonproportional=tuple(spec.nonproportional_treatments),
    )


def event_time_from_uniform(u: float, log_hazard_multiplier: float, baseline) -> float:
    """Inverse-transform event time: T = H0^{-1}(-log(u) / exp(m))."""
    u = min(max(u, 1e-300), 1.0 - 1e-16)
    return baseline.inverse_cumhaz(-math.log(u) / math.exp(log_hazard_multiplier))


def draw_event_time(
    log_hazard_multiplier: float, baseline, rng: np.random.Generator
) -> float:
    return event_time_from_uniform(rng.random(), log_hazard_multiplier, baseline)


def _relative_log_hazard(
    spec: ScenarioSpec,
    arm: str,
    trial_ref: str,
    u_trial: float,
    v_trial: Mapping[str, float],
    z: np.ndarray,
) -> float:
    """Patient log hazard relative to the overall event rate (which lives in
    the baseline distribution)."""
    m = u_trial + float(np.dot(spec.covariate_effects, z))
    contrasts: dict[str, float] = {}
    if arm != trial_ref:
        contrasts[arm] = 1.0
        if trial_ref != "A":
            contrasts[trial_ref] = -1.0
    for q, value in contrasts.items():
        if q == "A":
            continue
        effect = spec.treatment_effects[q] + v_trial.get(q, 0.0)
        effect += sum(
            spec.interactions.get((c + 1, q), 0.0) * z[c]
            for c in range(spec.n_covariates)
        )
        m += effect * value
    if arm != trial_ref and trial_ref != "A":
        pair = tuple(sorted((arm, trial_ref)))
        m += spec.inconsistency.get(pair, 0.0)
    return m


def simulate_dataset(spec: ScenarioSpec, seed: int) -> tuple[IpdDataset, TrueModel]:
    """Generate one dataset: trials_per_edge two-arm trials on each network edge.

    Each trial draws its size from U{50..500} (odd patient to the reference
    arm), a baseline deviation, and one contrast deviation per non-reference
    treatment it involves.  Patients draw covariates, an event time from the
    arm's baseline hazard scaled by their relative log hazard, and an
    independent censoring time; the observed time is the minimum.
    Deterministic per (spec, seed): each trial consumes its own RNG stream.
    """
    exp_base = ExponentialBaseline(spec.event_rate)
    weib_base = spec.weibull_baseline()
    censor_scale = 1.0 / spec.censor_rate
    lo, hi = spec.size_range

    records: list[PatientRecord] = []
    trial_index = 0
    for edge in SIMULATION_EDGES:
        ref, other = edge  # edges are stored reference-first in network order
        for _ in range(spec.trials_per_edge):
            trial_index += 1
            trial_id = f"T{trial_index:03d}"
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), trial_index]))
            n = int(rng.integers(lo, hi + 1))
            n_exp = n // 2
            n_ref = n - n_exp
            u_trial = float(rng.normal(0.0, spec.baseline_sd))
            v_trial = {
                q: float(rng.normal(0.0, spec.tau)) for q in edge if q != "A"
            }
            for arm, count in ((ref, n_ref), (other, n_exp)):
                nonprop = arm in spec.nonproportional_treatments
                baseline = weib_base if nonprop else exp_base
                for _patient in range(count):
                    z = (rng.random(spec.n_covariates) < spec.covariate_prob).astype(float)
                    m = _relative_log_hazard(spec, arm, ref, u_trial, v_trial, z)
                    t_event = draw_event_time(m, baseline, rng)
                    t_censor = float(rng.exponential(censor_scale))
                    time = min(t_event, t_censor)
                    records.append(
                        PatientRecord(
                            trial_id=trial_id,
                            arm_treatment=arm,
                            followup_time=float(time),
                            event=int(t_event <= t_censor),
                            covariates={
                                f"z{c + 1}": float(z[c])
                                for c in range(spec.n_covariates)
                            },
                        )
                    )

    schema = {
        f"z{c + 1}": CovariateSpec(kind="binary") for c in range(spec.n_covariates)
    }
    dataset = build_dataset(records, schema, reference_treatment="A")
    return dataset, true_support(spec)


def generator_parameters(spec: ScenarioSpec) -> dict:
    """Flat parameter record for the truth file shipped with each dataset."""
    return {
        "scenario": spec.scenario,
        "tau": spec.tau,
        "trials_per_edge": spec.trials_per_edge,
        "treatment_effects": dict(spec.treatment_effects),
        "inconsistency": {f"{q}:{p}": v for (q, p), v in spec.inconsistency.items()},
        "covariate_effects": list(spec.covariate_effects),
        "interactions": {f"z{c}:{q}": v for (c, q), v in spec.interactions.items()},
        "nonproportional_treatments": list(spec.nonproportional_treatments),
        "baseline_sd": spec.baseline_sd,
        "event_log_rate": spec.event_log_rate,
        "censor_log_rate": spec.censor_log_rate,
        "size_range": list(spec.size_range),
        "covariate_prob": spec.covariate_prob,
        "n_periods": spec.n_periods,
        "weibull_shape": spec.weibull_shape,
        "edges": ["".join(e) for e in SIMULATION_EDGES],
    }
