"""Repeated train/evaluate runs, the white-noise sweep, and report tables."""

from __future__ import annotations

import io
import csv
import logging
from dataclasses import dataclass, field, replace

import numpy as np

from ..gmn_oracle import gmn_analytic, noise_threshold
from ..statekit import GhzDiagonalSpec
from .data import Dataset, DegenerateGridError, build_noisy_dataset, split
from .training import EvalReport, TrainConfig, evaluate, train

log = logging.getLogger(__name__)

CNN = "CNN"
CNN_SE = "CNN-SE"
FN_ROW = "entangled predict non-entangled"
FP_ROW = "non-entangled predict entangled"


def arm_name(se_enabled: bool) -> str:
    return CNN_SE if se_enabled else CNN


@dataclass
class ArmSummary:
    arm: str
    seeds: list[int]
    reports: list[EvalReport]

    @property
    def accuracies(self) -> np.ndarray:
        return np.array([r.accuracy for r in self.reports])

    @property
    def mean(self) -> float:
        return float(np.mean(self.accuracies))

    @property
    def std(self) -> float:
        """Sample standard deviation across runs."""
        return float(np.std(self.accuracies, ddof=1)) if len(self.reports) > 1 else 0.0

    def to_dict(self) -> dict:
        return {
            "arm": self.arm,
            "mean_accuracy": self.mean,
            "std_accuracy": self.std,
            "runs": [{"seed": s, **r.to_dict()} for s, r in zip(self.seeds, self.reports)],
        }


@dataclass
class ExperimentResult:
    n_qubits: int
    kind: str
    arms: dict[str, ArmSummary] = field(default_factory=dict)

    def se_delta(self) -> float | None:
        if CNN in self.arms and CNN_SE in self.arms:
            return self.arms[CNN_SE].mean - self.arms[CNN].mean
        return None

    def to_dict(self) -> dict:
        return {
            "qubits": self.n_qubits,
            "kind": self.kind,
            "arms": {k: v.to_dict() for k, v in self.arms.items()},
            "se_delta": self.se_delta(),
        }


def run_once(dataset: Dataset, config: TrainConfig, train_fraction: float = 0.7) -> EvalReport:
    """Split, train and evaluate with everything derived from ``config.seed``."""
    train_set, test_set = split(dataset, train_fraction, config.seed)
    res = train(train_set, config)
    return evaluate(res.model, res.norm, test_set, res.history)


def repeat_experiment(
    dataset: Dataset,
    config: TrainConfig,
    seeds: list[int],
    arms: tuple[bool, ...] = (False, True),
    train_fraction: float = 0.7,
) -> ExperimentResult:
    """Full train/evaluate cycle per seed and arm; split and init both follow the run seed."""
    if len(seeds) < 2:
        raise ValueError("repeat_experiment needs at least 2 seeds")
    out = ExperimentResult(dataset.n_qubits, dataset.kind)
    for se in arms:
        reports = []
        for s in sorted(seeds):
            rep = run_once(dataset, replace(config, seed=s, se_enabled=se), train_fraction)
            log.info("n=%d %s seed %d accuracy %.4f", dataset.n_qubits, arm_name(se), s, rep.accuracy)
            reports.append(rep)
        out.arms[arm_name(se)] = ArmSummary(arm_name(se), sorted(seeds), reports)
    return out


# ---------------------------------------------------------------------------
# white noise
# ---------------------------------------------------------------------------


def ghz_spec(n: int) -> GhzDiagonalSpec:
    k = 1 << (n - 1)
    lam = np.zeros(k)
    mu = np.zeros(k)
    lam[0] = mu[0] = 0.5
    return GhzDiagonalSpec(n, lam, mu)


def label_flip_point(spec: GhzDiagonalSpec, tol: float = 1e-9, threshold: float = 0.0) -> float:
    """Noise weight where ``N_g`` of the noisy state first exceeds ``threshold``.

    Bisection on ``p`` in [0, 1]; requires the clean state to be above
    ``threshold``.
    """

    def above(p):
        return gmn_analytic(spec.with_white_noise(p)).value > threshold

    if not above(1.0):
        raise ValueError("state is not detected even without noise")
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if above(mid):
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@dataclass
class BoundaryCheck:
    n: int
    closed_form: float
    bisected: float

    @property
    def error(self) -> float:
        return abs(self.bisected - self.closed_form)

    def to_dict(self) -> dict:
        return {"qubits": self.n, "p_star": self.closed_form, "bisected": self.bisected, "error": self.error}


def boundary_check(n: int, tol: float = 1e-9) -> BoundaryCheck:
    return BoundaryCheck(n, noise_threshold(n), label_flip_point(ghz_spec(n), tol))


@dataclass
class NoisePoint:
    p: float
    status: str  # "ok" or "degenerate"
    summary: ArmSummary | None = None
    message: str = ""

    def to_dict(self) -> dict:
        d = {"p": self.p, "status": self.status, "message": self.message}
        if self.summary is not None:
            d.update(self.summary.to_dict())
        return d


@dataclass
class NoiseSweepResult:
    n: int
    points: list[NoisePoint]
    boundary: BoundaryCheck

    def gated_points(self) -> list[NoisePoint]:
        return [pt for pt in self.points if pt.status == "ok"]

    def mean_accuracy(self) -> float:
        accs = [pt.summary.mean for pt in self.gated_points()]
        return float(np.mean(accs)) if accs else float("nan")

    def to_dict(self) -> dict:
        return {
            "qubits": self.n,
            "points": [pt.to_dict() for pt in self.points],
            "boundary": self.boundary.to_dict(),
            "mean_accuracy_nondegenerate": self.mean_accuracy(),
        }


def noise_sweep(
    n: int,
    p_grid: list[float],
    count_per_label: int,
    config: TrainConfig,
    seeds: list[int],
    master_seed: int,
    train_fraction: float = 0.7,
    workers: int = 1,
) -> NoiseSweepResult:
    """Per noise level: build a balanced noisy dataset, then repeat train/evaluate.

    Levels at or below the detection boundary cannot hold entangled samples;
    they are reported as degenerate and skipped.
    """
    points = []
    for p in p_grid:
        try:
            ds = build_noisy_dataset(n, p, count_per_label, master_seed, workers=workers)
        except DegenerateGridError as exc:
            log.warning("degenerate noise level p=%g: %s", p, exc)
            points.append(NoisePoint(p, "degenerate", None, str(exc)))
            continue
        res = repeat_experiment(ds, config, seeds, arms=(config.se_enabled,), train_fraction=train_fraction)
        points.append(NoisePoint(p, "ok", res.arms[arm_name(config.se_enabled)]))
    return NoiseSweepResult(n, points, boundary_check(n))


# ---------------------------------------------------------------------------
# tables
# ---------------------------------------------------------------------------


def _csv(rows: list[list]) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


def pct(x: float) -> str:
    return f"{100.0 * x:.2f}"


def accuracy_table_csv(results: list[ExperimentResult]) -> str:
    """Accuracy per qubit count and arm (mean and std over runs, in percent)."""
    rows = [["qubits", "arm", "mean_accuracy_pct", "std_pct", "runs"]]
    for res in results:
        for arm, summ in res.arms.items():
            rows.append([res.n_qubits, arm, pct(summ.mean), pct(summ.std), len(summ.reports)])
    return _csv(rows)


def error_table_csv(results: list[ExperimentResult]) -> str:
    """Error counts summed over runs: one row per error type, one column per (qubits, arm)."""
    cols = [(res.n_qubits, arm, summ) for res in results for arm, summ in res.arms.items()]
    rows = [["error"] + [f"{n}q {arm}" for n, arm, _ in cols]]
    rows.append([FN_ROW] + [sum(r.fn_count for r in s.reports) for _, _, s in cols])
    rows.append([FP_ROW] + [sum(r.fp_count for r in s.reports) for _, _, s in cols])
    return _csv(rows)


def eval_table_csv(n: int, arm: str, report: EvalReport) -> str:
    return _csv([["qubits", "arm", "accuracy_pct", "fn", "fp"], [n, arm, pct(report.accuracy), report.fn_count, report.fp_count]])


def noise_table_csv(result: NoiseSweepResult) -> str:
    rows = [["p", "status", "mean_accuracy_pct", "std_pct", "runs"]]
    for pt in result.points:
        if pt.summary is None:
            rows.append([repr(pt.p), pt.status, "", "", 0])
        else:
            rows.append([repr(pt.p), pt.status, pct(pt.summary.mean), pct(pt.summary.std), len(pt.summary.reports)])
    return _csv(rows)
