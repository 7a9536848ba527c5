"""Individual patient data (IPD) survival records and the treatment network.

A dataset is a list of per-patient records grouped into trials.  Each trial
randomizes patients to two or more treatment arms; the set of treatments
observed across trials forms a network whose nodes are treatments and whose
edges are pairs compared head-to-head in at least one trial.  Closed loops
through the network reference treatment are what make inconsistency terms
estimable downstream.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence


class DataError(ValueError):
    """Raised for malformed input data or schema violations."""


@dataclass(frozen=True)
class CovariateSpec:
    """Declared kind of one covariate column.

    kind is one of 'binary', 'categorical', 'continuous'.  Categorical
    covariates carry a reference level (coded all-zero); observed levels are
    filled in at load time.
    """

    kind: str
    reference: str | None = None
    levels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind not in ("binary", "categorical", "continuous"):
            raise DataError(f"unknown covariate kind {self.kind!r}")
        if self.kind == "categorical" and self.reference is None:
            raise DataError("categorical covariate needs a reference level")


@dataclass(frozen=True)
class PatientRecord:
    trial_id: str
    arm_treatment: str
    followup_time: float
    event: int
    covariates: Mapping[str, object] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if not self.followup_time > 0:
            raise DataError(
                f"followup_time must be > 0, got {self.followup_time!r} "
                f"(trial {self.trial_id})"
            )
        if self.event not in (0, 1):
            raise DataError(f"event must be 0 or 1, got {self.event!r}")


@dataclass(frozen=True)
class Trial:
    trial_id: str
    arms: tuple[tuple[str, int], ...]  # (treatment, patient count)
    reference_arm: str

    def __post_init__(self) -> None:
        treatments = [t for t, _ in self.arms]
        if len(self.arms) < 2:
            raise DataError(f"trial {self.trial_id} has fewer than 2 arms")
        if len(set(treatments)) != len(treatments):
            raise DataError(f"trial {self.trial_id} has duplicate arm treatments")
        if any(n <= 0 for _, n in self.arms):
            raise DataError(f"trial {self.trial_id} has an empty arm")
        if self.reference_arm not in treatments:
            raise DataError(
                f"reference arm {self.reference_arm!r} not in trial {self.trial_id}"
            )

    @property
    def treatments(self) -> tuple[str, ...]:
        return tuple(t for t, _ in self.arms)


@dataclass(frozen=True)
class TreatmentNetwork:
    """Treatments ordered with the network reference first, plus edge structure.

    reference_loops holds pairs (q, p) of non-reference treatments, q before p
    in treatment order, such that the three edges {ref,q}, {ref,p}, {q,p} all
    exist.  These are exactly the closed three-treatment loops through the
    reference.
    """

    treatments: tuple[str, ...]
    edges: frozenset[frozenset]
    reference_loops: tuple[tuple[str, str], ...]

    @property
    def reference(self) -> str:
        return self.treatments[0]

    def has_edge(self, a: str, b: str) -> bool:
        return frozenset((a, b)) in self.edges

    def order_index(self, treatment: str) -> int:
        return self.treatments.index(treatment)


@dataclass(frozen=True)
class IpdDataset:
    records: tuple[PatientRecord, ...]
    trials: tuple[Trial, ...]
    network: TreatmentNetwork
    covariate_schema: Mapping[str, CovariateSpec]

    @property
    def covariate_names(self) -> tuple[str, ...]:
        return tuple(self.covariate_schema)

    def trial(self, trial_id: str) -> Trial:
        for t in self.trials:
            if t.trial_id == trial_id:
                return t
        raise KeyError(trial_id)


def derive_network(trials: Sequence[Trial], reference: str) -> TreatmentNetwork:
    """Build the treatment network from trial arm structure.

    Nodes are all treatments seen; an edge is present iff some trial contains
    both treatments.  A pair (q, p) of non-reference treatments is a reference
    loop iff {ref,q}, {ref,p} and {q,p} are all edges.  Raises DataError if the
    network is disconnected (some contrasts would be inestimable).
    """
    if not trials:
        raise DataError("no trials")
    seen = sorted({t for trial in trials for t in trial.treatments})
    if reference not in seen:
        raise DataError(f"reference treatment {reference!r} not observed in any trial")
    treatments = (reference,) + tuple(t for t in seen if t != reference)

    edges = set()
    for trial in trials:
        arms = trial.treatments
        for i in range(len(arms)):
            for j in range(i + 1, len(arms)):
                edges.add(frozenset((arms[i], arms[j])))

    # connectivity check by flood fill from the reference
    reached = {reference}
    frontier = [reference]
    adjacency: dict[str, set[str]] = {t: set() for t in treatments}
    for e in edges:
        a, b = tuple(e)
        adjacency[a].add(b)
        adjacency[b].add(a)
    while frontier:
        node = frontier.pop()
        for nxt in adjacency[node]:
            if nxt not in reached:
                reached.add(nxt)
                frontier.append(nxt)
    if reached != set(treatments):
        missing = sorted(set(treatments) - reached)
        raise DataError(f"treatment network is disconnected; unreachable: {missing}")

    non_ref = treatments[1:]
    loops = []
    for i in range(len(non_ref)):
        for j in range(i + 1, len(non_ref)):
            q, p = non_ref[i], non_ref[j]
            if (
                frozenset((reference, q)) in edges
                and frozenset((reference, p)) in edges
                and frozenset((q, p)) in edges
            ):
                loops.append((q, p))
    return TreatmentNetwork(
        treatments=treatments,
        edges=frozenset(edges),
        reference_loops=tuple(loops),
    )


def _default_reference(trials: Sequence[Trial]) -> str:
    """Most-connected node; ties broken by treatment name order."""
    degree: dict[str, set[str]] = {}
    for trial in trials:
        arms = trial.treatments
        for t in arms:
            degree.setdefault(t, set()).update(a for a in arms if a != t)
    return min(degree, key=lambda t: (-len(degree[t]), t))


def build_dataset(
    records: Iterable[PatientRecord],
    schema: Mapping[str, CovariateSpec],
    reference_treatment: str | None = None,
) -> IpdDataset:
    """Validate records, group them into trials and derive the network.

    Each trial's reference arm defaults to the arm whose treatment comes
    earliest in network treatment order.  Categorical covariate levels are
    collected from the data, keeping the declared reference level first.
    """
    records = tuple(records)
    if not records:
        raise DataError("empty dataset")

    expected_cov = set(schema)
    by_trial: dict[str, dict[str, int]] = {}
    for rec in records:
        if set(rec.covariates) != expected_cov:
            raise DataError(
                f"record in trial {rec.trial_id} has covariates "
                f"{sorted(rec.covariates)}, schema declares {sorted(expected_cov)}"
            )
        counts = by_trial.setdefault(rec.trial_id, {})
        counts[rec.arm_treatment] = counts.get(rec.arm_treatment, 0) + 1

    trials_raw = [
        (tid, tuple(sorted(counts.items()))) for tid, counts in sorted(by_trial.items())
    ]
    for tid, arms in trials_raw:
        if len(arms) < 2:
            raise DataError(f"trial {tid} has a single arm")

    if reference_treatment is None:
        provisional = [
            Trial(tid, arms, reference_arm=arms[0][0]) for tid, arms in trials_raw
        ]
        reference_treatment = _default_reference(provisional)

    all_treatments = {t for _, arms in trials_raw for t, _ in arms}
    if reference_treatment not in all_treatments:
        raise DataError(
            f"reference treatment {reference_treatment!r} does not appear in the data"
        )

    order = [reference_treatment] + sorted(all_treatments - {reference_treatment})
    rank = {t: i for i, t in enumerate(order)}
    trials = tuple(
        Trial(tid, arms, reference_arm=min((t for t, _ in arms), key=rank.__getitem__))
        for tid, arms in trials_raw
    )
    network = derive_network(trials, reference_treatment)

    # fill categorical levels from the observed data; a pre-resolved schema
    # (e.g. when refitting resampled data) keeps its level set so the encoded
    # columns stay aligned
    resolved: dict[str, CovariateSpec] = {}
    for name, spec in schema.items():
        if spec.kind == "categorical":
            observed = sorted({str(rec.covariates[name]) for rec in records})
            if spec.levels:
                unseen = set(observed) - set(spec.levels)
                if unseen:
                    raise DataError(
                        f"covariate {name!r} has levels outside the declared "
                        f"set: {sorted(unseen)}"
                    )
                resolved[name] = spec
                continue
            if spec.reference not in observed:
                observed = [spec.reference] + observed
            levels = (spec.reference,) + tuple(
                l for l in observed if l != spec.reference
            )
            resolved[name] = CovariateSpec(spec.kind, spec.reference, levels)
        else:
            resolved[name] = spec

    dataset = IpdDataset(records, trials, network, resolved)
    _validate_values(dataset)
    return dataset


def _validate_values(dataset: IpdDataset) -> None:
    for rec in dataset.records:
        for name, spec in dataset.covariate_schema.items():
            value = rec.covariates[name]
            if spec.kind == "binary":
                if float(value) not in (0.0, 1.0):
                    raise DataError(
                        f"binary covariate {name!r} has value {value!r} "
                        f"in trial {rec.trial_id}"
                    )
            elif spec.kind == "continuous":
                float(value)


def encode_covariates(dataset: IpdDataset) -> tuple[list[tuple[float, ...]], list[str]]:
    """Encode covariates into numeric design columns, one tuple per record.

    Binary covariates give one 0/1 column, continuous give the value itself,
    and a categorical covariate with L levels gives L-1 indicators against its
    reference level.  Returns (rows, column names).
    """
    names: list[str] = []
    encoders = []
    for name, spec in dataset.covariate_schema.items():
        if spec.kind == "categorical":
            non_ref = spec.levels[1:]
            names.extend(f"{name}:{level}" for level in non_ref)
            encoders.append((name, spec, non_ref))
        else:
            names.append(name)
            encoders.append((name, spec, None))

    rows = []
    for rec in dataset.records:
        row: list[float] = []
        for name, spec, non_ref in encoders:
            value = rec.covariates[name]
            if spec.kind == "categorical":
                level = str(value)
                if level not in spec.levels:
                    raise DataError(
                        f"unseen level {level!r} for categorical covariate {name!r}"
                    )
                row.extend(1.0 if level == l else 0.0 for l in non_ref)
            else:
                row.append(float(value))
        rows.append(tuple(row))
    return rows, names


# ---------------------------------------------------------------------------
# CSV / JSON interfaces
#
# IPD CSV: header `trial,treatment,time,event,<covariate columns...>`.
# Schema JSON: {"reference_treatment": ..., "covariates": {name: {"kind": ...,
# "reference": ...}}}.
# ---------------------------------------------------------------------------

_FIXED_COLUMNS = ("trial", "treatment", "time", "event")


def load_schema(path: str | Path) -> tuple[str | None, dict[str, CovariateSpec]]:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    covs = {
        name: CovariateSpec(kind=entry["kind"], reference=entry.get("reference"))
        for name, entry in raw.get("covariates", {}).items()
    }
    return raw.get("reference_treatment"), covs


def save_schema(
    path: str | Path,
    schema: Mapping[str, CovariateSpec],
    reference_treatment: str | None,
) -> None:
    payload = {
        "reference_treatment": reference_treatment,
        "covariates": {
            name: (
                {"kind": spec.kind, "reference": spec.reference}
                if spec.kind == "categorical"
                else {"kind": spec.kind}
            )
            for name, spec in schema.items()
        },
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_ipd(
    path: str | Path,
    schema: Mapping[str, CovariateSpec],
    reference_treatment: str | None = None,
) -> IpdDataset:
    """Read an IPD CSV file and return a validated dataset.

    Malformed rows are reported with their 1-based line number.
    """
    path = Path(path)
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        if tuple(header[:4]) != _FIXED_COLUMNS:
            raise DataError(
                f"{path}: header must start with {','.join(_FIXED_COLUMNS)}, "
                f"got {','.join(header[:4])}"
            )
        cov_columns = header[4:]
        if set(cov_columns) != set(schema):
            raise DataError(
                f"{path}: covariate columns {cov_columns} do not match schema "
                f"{sorted(schema)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if len(row) != len(header):
                raise DataError(f"{path}:{lineno}: expected {len(header)} fields")
            try:
                time = float(row[2])
                event = int(row[3])
                covs: dict[str, object] = {}
                for name, value in zip(cov_columns, row[4:]):
                    kind = schema[name].kind
                    covs[name] = value if kind == "categorical" else float(value)
                records.append(
                    PatientRecord(
                        trial_id=row[0],
                        arm_treatment=row[1],
                        followup_time=time,
                        event=event,
                        covariates=covs,
                    )
                )
            except (ValueError, DataError) as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from None
    return build_dataset(records, schema, reference_treatment)


def save_ipd(path: str | Path, dataset: IpdDataset) -> None:
    """Write the dataset back to IPD CSV (round-trips with load_ipd)."""
    cov_names = list(dataset.covariate_schema)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(_FIXED_COLUMNS) + cov_names)
        for rec in dataset.records:
            row = [
                rec.trial_id,
                rec.arm_treatment,
                repr(float(rec.followup_time)),
                str(rec.event),
            ]
            for name in cov_names:
                value = rec.covariates[name]
                if dataset.covariate_schema[name].kind == "categorical":
                    row.append(str(value))
                else:
                    row.append(repr(float(value)))
            writer.writerow(row)
