import numpy as np
import pytest

from pennma.data_model import CovariateSpec, PatientRecord, build_dataset
from pennma.design import CoefficientSpec, PenalizedProblem


def random_poisson_problem(rng, n_rows=30, n_cols=6, l1_cols=(), ridge_cols=()):
    """Small random problem with a well-conditioned design."""
    X = rng.normal(size=(n_rows, n_cols)) * 0.5
    X[:, 0] = 1.0
    offset = np.log(rng.uniform(0.5, 2.0, size=n_rows))
    truth = rng.normal(size=n_cols) * 0.3
    mu = np.exp(np.clip(offset + X @ truth, -20, 5))
    y = rng.poisson(mu).astype(float)
    specs = []
    groups = {}
    for j in range(n_cols):
        if j in l1_cols:
            specs.append(CoefficientSpec(f"c{j}", "covariate", "l1"))
        elif j in ridge_cols:
            specs.append(CoefficientSpec(f"c{j}", "trial_dev", "ridge", "g"))
            groups.setdefault("g", []).append(j)
        else:
            specs.append(CoefficientSpec(f"c{j}", "baseline", "none"))
    return PenalizedProblem(
        y=y,
        offset=offset,
        X=X,
        coefficients=tuple(specs),
        ridge_groups={g: tuple(ix) for g, ix in groups.items()},
    )


def two_trial_records(n_per_arm=40, seed=5, covariate=True):
    """Hand-sized dataset: trial T1 compares A/B, trial T2 compares A/C."""
    rng = np.random.default_rng(seed)
    records = []
    for trial, arms in (("T1", ("A", "B")), ("T2", ("A", "C"))):
        for arm in arms:
            for _ in range(n_per_arm):
                covs = {"sex": float(rng.integers(0, 2))} if covariate else {}
                records.append(
                    PatientRecord(
                        trial_id=trial,
                        arm_treatment=arm,
                        followup_time=float(rng.exponential(100.0)) + 1e-6,
                        event=int(rng.random() < 0.8),
                        covariates=covs,
                    )
                )
    schema = {"sex": CovariateSpec(kind="binary")} if covariate else {}
    return build_dataset(records, schema, reference_treatment="A")


@pytest.fixture
def rng():
    return np.random.default_rng(2024)
