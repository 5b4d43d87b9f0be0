"""Trial protocol comparing SOLBP with SOSPN, calibration curves, CSV export.

Each trial learns a Dirichlet network from ``n_train`` samples of a
ground-truth network, observes the evidence variables at the values of one
further sample, and records the ground-truth posteriors next to both
engines' means and variances. A new ground truth is drawn every
``trials_per_ground_truth`` trials.

All randomness of trial ``t`` comes from streams keyed by ``t`` (and by the
ground-truth index), so trials can run in any order or process and still
produce identical records.
"""

from __future__ import annotations

import csv
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from . import exact, ingest
from .errors import DomainError, InconsistentEvidenceError
from .ingest import ExperimentConfig
from .model import MarginalEstimate, NetworkStructure
from .solbp import run_solbp
from .spn import Spn, compile_spn, sospn_query

ENGINES = ("solbp", "sospn")
TRIALS_SCHEMA = "# sobn trials v1"
SCATTER_SCHEMA = "# sobn scatter v1"
TIMING_SCHEMA = "# sobn timing v1"
DECBOD_SCHEMA = "# sobn decbod v1"


def confidence_interval(mean: float, variance: float, gamma: float) -> tuple[float, float]:
    """Equal-tailed interval of mass ``gamma`` of the moment-matched Beta.

    Beta(a, b) has a = mean * nu and b = (1 - mean) * nu with
    nu = mean (1 - mean) / variance - 1. A zero variance, or a variance at
    the feasibility bound, gives the degenerate interval [mean, mean].
    """
    if not 0 <= gamma < 1:
        raise DomainError(f"gamma must lie in [0, 1), got {gamma}")
    if variance < 0 or variance > mean * (1 - mean) + 1e-12:
        raise DomainError(f"variance {variance} infeasible for mean {mean}")
    if variance == 0:
        return float(mean), float(mean)
    nu = mean * (1 - mean) / variance - 1
    if nu <= 0:
        return float(mean), float(mean)
    a, b = mean * nu, (1 - mean) * nu
    lo, hi = stats.beta.ppf([(1 - gamma) / 2, (1 + gamma) / 2], a, b)
    return float(lo), float(hi)


def coverage(truth: np.ndarray, means: np.ndarray, variances: np.ndarray, gammas: Sequence[float]) -> np.ndarray:
    """Fraction of truths inside the Beta interval, one entry per gamma.

    Vector form of :func:`confidence_interval`. Variances above the
    feasibility bound mean(1 - mean) count as the full interval [0, 1].
    """
    truth, means, variances = (np.asarray(x, dtype=float) for x in (truth, means, variances))
    if truth.size == 0:
        return np.full(len(gammas), np.nan)
    bound = means * (1 - means)
    infeasible = variances > bound + 1e-12
    with np.errstate(divide="ignore", invalid="ignore"):
        nu = bound / variances - 1
    regular = (variances > 0) & (nu > 0) & ~infeasible
    a = np.where(regular, means * nu, 1.0)
    b = np.where(regular, (1 - means) * nu, 1.0)
    out = []
    for g in gammas:
        lo = np.where(regular, stats.beta.ppf((1 - g) / 2, a, b), means)
        hi = np.where(regular, stats.beta.ppf((1 + g) / 2, a, b), means)
        lo = np.where(infeasible, 0.0, lo)
        hi = np.where(infeasible, 1.0, hi)
        out.append(np.mean((truth >= lo) & (truth <= hi)))
    return np.array(out)


def gamma_grid(step: float = 0.01, top: float = 0.99) -> np.ndarray:
    n = int(np.floor(top / step + 1e-9))
    return np.round(np.arange(n + 1) * step, 12)


@dataclass
class TrialRecord:
    """Results of one trial; ``nodes`` are the queried (unobserved) variables."""

    trial_id: int
    ground_truth_id: int
    nodes: list[int]
    truth: list[np.ndarray]
    solbp: list[MarginalEstimate]
    sospn: list[MarginalEstimate]
    solbp_rounds: int
    solbp_converged: bool
    solbp_seconds: float
    sospn_seconds: float

    def estimates(self, engine: str) -> list[MarginalEstimate]:
        if engine not in ENGINES:
            raise ValueError(f"unknown engine {engine!r}")
        return self.solbp if engine == "solbp" else self.sospn


@dataclass
class ExperimentResult:
    records: list[TrialRecord]
    failures: list[tuple[int, str]] = field(default_factory=list)


@dataclass(frozen=True)
class _Setup:
    structure: NetworkStructure
    evidence_ids: tuple[int, ...]
    circuit: Spn
    config: ExperimentConfig


def _setup(config: ExperimentConfig) -> _Setup:
    structure = config.structure()
    return _Setup(structure, tuple(config.evidence_ids()), compile_spn(structure), config)


def run_trial(setup: _Setup, trial_id: int) -> TrialRecord:
    config = setup.config
    structure = setup.structure
    gt_id = trial_id // config.trials_per_ground_truth
    truth_net = ingest.sample_ground_truth(
        structure, ingest.rng_stream(config.seed, ingest.STREAM_GROUND_TRUTH, gt_id)
    )
    rng = ingest.rng_stream(config.seed, ingest.STREAM_TRAINING, trial_id)
    data = exact.ancestral_samples(truth_net, config.n_train, rng)
    observed = exact.ancestral_sample(truth_net, rng)
    evidence = {v: int(observed[v]) for v in setup.evidence_ids}
    uncertain = exact.learn_dirichlet(structure, data)
    truth = exact.enumerate_query(truth_net, evidence).marginals

    schedule = ingest.rng_stream(config.seed, ingest.STREAM_SCHEDULE, trial_id)
    t0 = time.perf_counter()
    so = run_solbp(uncertain, evidence, config.epsilon, config.max_rounds, schedule)
    t1 = time.perf_counter()
    sp = sospn_query(uncertain, evidence, setup.circuit)
    t2 = time.perf_counter()
    nodes = [v for v in range(structure.n_variables) if v not in evidence]
    return TrialRecord(
        trial_id,
        gt_id,
        nodes,
        [truth[v] for v in nodes],
        [so.marginals[v] for v in nodes],
        [sp[v] for v in nodes],
        so.report.rounds,
        so.report.converged,
        t1 - t0,
        t2 - t1,
    )


def _run_chunk(config: ExperimentConfig, trial_ids: Sequence[int]):
    setup = _setup(config)
    out = []
    for t in trial_ids:
        try:
            out.append(run_trial(setup, t))
        except InconsistentEvidenceError as exc:
            out.append((t, str(exc)))
    return out


def run_experiment(config: ExperimentConfig, jobs: int = 1, trial_ids: Iterable[int] | None = None) -> ExperimentResult:
    """Run every trial; records come back ordered by trial id whatever ``jobs`` is."""
    ids = list(range(config.n_runs)) if trial_ids is None else list(trial_ids)
    if jobs <= 1 or len(ids) < 2:
        outcomes = _run_chunk(config, ids)
    else:
        n_chunks = min(len(ids), jobs * 4)
        chunks = [ids[k::n_chunks] for k in range(n_chunks)]
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            parts = pool.map(_run_chunk, [config] * len(chunks), chunks)
            outcomes = [o for part in parts for o in part]
    result = ExperimentResult([], [])
    for o in sorted(outcomes, key=lambda o: o.trial_id if isinstance(o, TrialRecord) else o[0]):
        if isinstance(o, TrialRecord):
            result.records.append(o)
        else:
            result.failures.append(o)
    return result


# ---------------------------------------------------------------------------
# calibration


def calibration_tests(records: Sequence[TrialRecord], engine: str):
    """(truth, mean, variance) arrays, one entry per calibration test.

    Binary variables contribute their state 0 only (state 1 is the same test
    mirrored); larger variables contribute every state.
    """
    truth, means, variances = [], [], []
    for r in records:
        for t, est in zip(r.truth, r.estimates(engine)):
            states = [0] if t.size == 2 else range(t.size)
            for s in states:
                truth.append(t[s])
                means.append(est.mean[s])
                variances.append(est.cov[s, s])
    return np.array(truth), np.array(means), np.array(variances)


@dataclass(frozen=True)
class DecbodCurve:
    gammas: np.ndarray
    fractions: np.ndarray

    def rms_deviation(self) -> float:
        return float(np.sqrt(np.mean((self.fractions - self.gammas) ** 2)))


def decbod(records: Sequence[TrialRecord], engine: str, gammas: Sequence[float] | None = None) -> DecbodCurve:
    """In-bounds rate of the ground truth against the interval mass gamma."""
    if not records:
        raise ValueError("decbod needs at least one record")
    gammas = gamma_grid() if gammas is None else np.asarray(gammas, dtype=float)
    if np.any(np.diff(gammas) <= 0):
        raise ValueError("gamma grid must be strictly increasing")
    return DecbodCurve(gammas, coverage(*calibration_tests(records, engine), gammas))


# ---------------------------------------------------------------------------
# CSV output


def _fmt(x) -> str:
    return repr(float(x))


def _csv_text(schema: str, header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    buf.write(schema + "\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


TRIALS_HEADER = (
    "trial_id", "ground_truth_id", "node", "state", "cardinality", "truth",
    "solbp_mean", "solbp_var", "sospn_mean", "sospn_var", "solbp_rounds", "solbp_converged",
)
SCATTER_HEADER = ("trial_id", "node", "state", "mean_solbp", "mean_sospn", "var_solbp", "var_sospn")
TIMING_HEADER = ("trial_id", "solbp_seconds", "sospn_seconds", "solbp_rounds")
DECBOD_HEADER = ("gamma",) + tuple(f"inbounds_{e}" for e in ENGINES)


def trials_csv(records: Sequence[TrialRecord], structure: NetworkStructure) -> str:
    rows = []
    for r in records:
        for v, t, a, b in zip(r.nodes, r.truth, r.solbp, r.sospn):
            for s in range(t.size):
                rows.append((
                    r.trial_id, r.ground_truth_id, structure.variables[v].name, s, t.size, _fmt(t[s]),
                    _fmt(a.mean[s]), _fmt(a.cov[s, s]), _fmt(b.mean[s]), _fmt(b.cov[s, s]),
                    r.solbp_rounds, int(r.solbp_converged),
                ))
    return _csv_text(TRIALS_SCHEMA, TRIALS_HEADER, rows)


def scatter_export(records: Sequence[TrialRecord], structure: NetworkStructure) -> str:
    """One row per (trial, node, state) pairing SOLBP with SOSPN."""
    rows = []
    for r in records:
        for v, a, b in zip(r.nodes, r.solbp, r.sospn):
            for s in range(a.mean.size):
                rows.append((
                    r.trial_id, structure.variables[v].name, s,
                    _fmt(a.mean[s]), _fmt(b.mean[s]), _fmt(a.cov[s, s]), _fmt(b.cov[s, s]),
                ))
    return _csv_text(SCATTER_SCHEMA, SCATTER_HEADER, rows)


def timing_csv(records: Sequence[TrialRecord]) -> str:
    rows = [(r.trial_id, _fmt(r.solbp_seconds), _fmt(r.sospn_seconds), r.solbp_rounds) for r in records]
    return _csv_text(TIMING_SCHEMA, TIMING_HEADER, rows)


def decbod_csv(curves: dict[str, DecbodCurve]) -> str:
    gammas = next(iter(curves.values())).gammas
    rows = [
        (_fmt(g),) + tuple(_fmt(curves[e].fractions[k]) if e in curves else "" for e in ENGINES)
        for k, g in enumerate(gammas)
    ]
    return _csv_text(DECBOD_SCHEMA, DECBOD_HEADER, rows)


def read_calibration_tests(text: str, engine: str):
    """Calibration (truth, mean, variance) arrays from a trials CSV."""
    lines = text.splitlines()
    if not lines or lines[0] != TRIALS_SCHEMA:
        raise ValueError("not a trials CSV (missing schema line)")
    reader = csv.DictReader(lines[1:])
    if tuple(reader.fieldnames or ()) != TRIALS_HEADER:
        raise ValueError("unexpected trials CSV header")
    truth, means, variances = [], [], []
    for row in reader:
        if int(row["cardinality"]) == 2 and int(row["state"]) != 0:
            continue
        truth.append(float(row["truth"]))
        means.append(float(row[f"{engine}_mean"]))
        variances.append(float(row[f"{engine}_var"]))
    return np.array(truth), np.array(means), np.array(variances)


def summarize_timing(records: Sequence[TrialRecord]) -> dict[str, float]:
    so = np.array([r.solbp_seconds for r in records])
    sp = np.array([r.sospn_seconds for r in records])
    return {
        "trials": len(records),
        "solbp_median_seconds": float(np.median(so)) if len(so) else math.nan,
        "sospn_median_seconds": float(np.median(sp)) if len(sp) else math.nan,
        "fraction_solbp_faster": float(np.mean(so < sp)) if len(so) else math.nan,
    }
