"""Command-line interface.

Exit codes: 0 success, 1 other library error, 2 usage error, 3 parse error,
4 inconsistent evidence, 5 non-convergence (only with --strict),
6 capacity exceeded. Every file a command writes goes into --output-dir,
together with a ``manifest.json`` describing the run.
"""

from __future__ import annotations

import argparse
import json
import os
import platform
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np
import scipy

from . import __version__, evaluation, exact, ingest, spn
from .bp import run_bp
from .errors import CapacityError, InconsistentEvidenceError, ParseError, SobnError
from .model import ConcreteNetwork, MarginalEstimate, point_moments
from .solbp import run_solbp

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2
EXIT_PARSE = 3
EXIT_INCONSISTENT = 4
EXIT_NOT_CONVERGED = 5
EXIT_CAPACITY = 6

ENGINES = ("bp", "solbp", "sospn", "enum", "mc")


class UsageError(Exception):
    pass


def _positive_float(text):
    value = float(text)
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be positive, got {text}")
    return value


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be at least 1, got {text}")
    return value


def _seed(text):
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("seed must be non-negative")
    return value


def _file_name(text):
    if not text or os.sep in text or (os.altsep and os.altsep in text) or text in (".", ".."):
        raise argparse.ArgumentTypeError(f"expected a plain file name, got {text!r}")
    return text


def _add_shared(p: argparse.ArgumentParser, config_defaults: bool = False):
    # with config_defaults, None means "take the value from the config document"
    p.add_argument("--seed", type=_seed, default=None if config_defaults else 0, help="master seed")
    p.add_argument("--epsilon", type=_positive_float, default=None if config_defaults else 1e-8,
                   help="convergence threshold on message means")
    p.add_argument("--max-rounds", type=_positive_int, default=None if config_defaults else 200,
                   help="round cap for loopy propagation")
    p.add_argument("--output-dir", default=None if config_defaults else ".",
                   help="directory for every file written")
    p.add_argument("--jobs", type=_positive_int, default=os.cpu_count() or 1,
                   help="worker processes for trials (default: available cores)")
    p.add_argument("--strict", action="store_true", help="exit nonzero when propagation does not converge")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sobn", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"sobn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("infer", help="posterior means and variances for one network and evidence")
    p.add_argument("network", help="network document (probabilities or alphas)")
    p.add_argument("--evidence", help="evidence document")
    p.add_argument("--engine", choices=ENGINES, default="solbp")
    p.add_argument("--mc-samples", type=_positive_int, default=200_000, help="parameter draws for --engine mc")
    p.add_argument("--csv", type=_file_name, help="also write the table to this file in --output-dir")
    _add_shared(p)

    p = sub.add_parser("compare", help="run the SOLBP/SOSPN trial protocol")
    p.add_argument("config", help="experiment document")
    p.add_argument("--n-runs", type=int, help="override the number of trials")
    _add_shared(p, config_defaults=True)

    p = sub.add_parser("decbod", help="calibration curve from a trials CSV")
    p.add_argument("trials", help="trials.csv written by compare")
    p.add_argument("--gamma-step", type=_positive_float, default=0.01)
    _add_shared(p)

    p = sub.add_parser("bench", help="time both engines over a batch of trials")
    p.add_argument("--network", default="net21", help="built-in name or network document")
    p.add_argument("--trials", type=_positive_int, default=100)
    p.add_argument("--n-train", type=int, default=100)
    _add_shared(p)

    p = sub.add_parser("gen", help="ground truth, training data, learned network and evidence")
    p.add_argument("network", help="built-in name or network document (structure only is used)")
    p.add_argument("--n-train", type=int, default=100)
    _add_shared(p)

    p = sub.add_parser("compile-spn", help="compile a network structure into a circuit listing")
    p.add_argument("network", help="built-in name or network document")
    _add_shared(p)
    return parser


# ---------------------------------------------------------------------------
# helpers


def _structure_of(source: str):
    if source in ingest.BUILTIN_NAMES:
        return ingest.builtin_structure(source)
    return ingest.read_network(source).structure


def _output_dir(args) -> Path:
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write(out: Path, name: str, text: str, written: list[str]):
    (out / name).write_text(text)
    written.append(name)


def _manifest(out: Path, args, written: list[str], summary: dict):
    arguments = {k: v for k, v in sorted(vars(args).items()) if k != "jobs"}
    doc = {
        "command": args.command,
        "arguments": arguments,
        "seed": getattr(args, "seed", None),
        "outputs": sorted(written),
        "summary": summary,
        "versions": {
            "sobn": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
    }
    (out / "manifest.json").write_text(json.dumps(doc, indent=2, sort_keys=True, default=str) + "\n")


def _fmt(x: float) -> str:
    return f"{x:.10g}"


def _estimates_table(structure, estimates: list[MarginalEstimate]) -> list[tuple[str, str, float, float]]:
    rows = []
    for est in estimates:
        var = structure.variables[est.variable]
        for s, name in enumerate(var.state_names):
            rows.append((var.name, name, float(est.mean[s]), float(est.cov[s, s])))
    return rows


def _infer(network, evidence, args):
    """Estimates for every variable and the convergence report (loopy engines only)."""
    structure = network.structure
    concrete = isinstance(network, ConcreteNetwork)
    engine = args.engine

    def zero_cov(vectors):
        return [MarginalEstimate(i, np.asarray(m), np.zeros((m.size, m.size))) for i, m in enumerate(vectors)]

    if engine in ("bp", "enum") or (engine == "mc" and concrete):
        point = network if concrete else network.mean_network()
        if engine == "bp":
            rng = ingest.rng_stream(args.seed, ingest.STREAM_SCHEDULE, 0)
            result = run_bp(point, evidence, args.epsilon, args.max_rounds, rng)
            return zero_cov(result.beliefs), result.report
        return zero_cov(exact.enumerate_query(point, evidence).marginals), None
    moments = point_moments(network) if concrete else None
    if engine == "solbp":
        rng = ingest.rng_stream(args.seed, ingest.STREAM_SCHEDULE, 0)
        result = run_solbp(network, evidence, args.epsilon, args.max_rounds, rng, moments=moments)
        return result.marginals, result.report
    if engine == "sospn":
        return spn.sospn_query(network, evidence, moments=moments), None
    rng = ingest.rng_stream(args.seed, ingest.STREAM_MONTE_CARLO, 0)
    evidence = structure.check_evidence(evidence)
    mc = exact.monte_carlo_second_order(network, evidence, args.mc_samples, rng)
    observed = {i: np.eye(v.cardinality)[evidence[i]] for i, v in enumerate(structure.variables) if i in evidence}
    out = [mc.estimates.get(i) for i in range(structure.n_variables)]
    for i, clamp in observed.items():
        out[i] = MarginalEstimate(i, clamp, np.zeros((clamp.size, clamp.size)))
    return out, None


# ---------------------------------------------------------------------------
# commands


def cmd_infer(args) -> int:
    network = ingest.read_network(args.network)
    structure = network.structure
    evidence = {}
    if args.evidence:
        evidence = ingest.parse_evidence(Path(args.evidence).read_text(), structure)
    estimates, report = _infer(network, evidence, args)
    rows = _estimates_table(structure, estimates)
    width = max([4] + [len(r[0]) for r in rows])
    print(f"{'node':<{width}}  state  mean              variance")
    for name, state, mean, var in rows:
        print(f"{name:<{width}}  {state:<5}  {_fmt(mean):<16}  {_fmt(var)}")
    summary = {"engine": args.engine}
    if report is not None:
        summary.update(rounds=report.rounds, converged=report.converged, max_delta=report.max_delta)
        print(f"# rounds {report.rounds} converged {report.converged}")
    written: list[str] = []
    if args.csv or args.output_dir != ".":
        out = _output_dir(args)
        if args.csv:
            text = "node,state,mean,variance\n" + "".join(
                f"{n},{s},{m!r},{v!r}\n" for n, s, m, v in rows
            )
            _write(out, args.csv, text, written)
        _manifest(out, args, written, summary)
    if args.strict and report is not None and not report.converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def _experiment_config(args) -> ingest.ExperimentConfig:
    config = ingest.parse_experiment(Path(args.config).read_text())
    overrides = {
        "seed": args.seed,
        "epsilon": args.epsilon,
        "max_rounds": args.max_rounds,
        "output_dir": args.output_dir,
        "n_runs": args.n_runs,
    }
    config = replace(config, **{k: v for k, v in overrides.items() if v is not None})
    if config.network not in ingest.BUILTIN_NAMES and not Path(config.network).is_absolute():
        # relative network paths resolve against the config document
        config = replace(config, network=str(Path(args.config).parent / config.network))
    return config


def cmd_compare(args) -> int:
    config = _experiment_config(args)
    args.output_dir = config.output_dir
    structure = config.structure()
    result = evaluation.run_experiment(config, jobs=args.jobs)
    out = _output_dir(args)
    written: list[str] = []
    _write(out, "trials.csv", evaluation.trials_csv(result.records, structure), written)
    _write(out, "scatter.csv", evaluation.scatter_export(result.records, structure), written)
    _write(out, "timing.csv", evaluation.timing_csv(result.records), written)
    not_converged = sum(1 for r in result.records if not r.solbp_converged)
    summary = {
        "config": json.loads(ingest.serialize_experiment(config)),
        "trials": len(result.records),
        "failed_trials": len(result.failures),
        "solbp_not_converged": not_converged,
    }
    _manifest(out, args, written, summary)
    print(f"{len(result.records)} trials, {len(result.failures)} failed, {not_converged} not converged")
    if args.strict and not_converged:
        return EXIT_NOT_CONVERGED
    return EXIT_OK


def cmd_decbod(args) -> int:
    if args.gamma_step >= 1:
        raise UsageError("--gamma-step must be below 1")
    text = Path(args.trials).read_text()
    gammas = evaluation.gamma_grid(args.gamma_step)
    curves = {}
    for engine in evaluation.ENGINES:
        truth, means, variances = evaluation.read_calibration_tests(text, engine)
        curves[engine] = evaluation.DecbodCurve(gammas, evaluation.coverage(truth, means, variances, gammas))
    out = _output_dir(args)
    written: list[str] = []
    _write(out, "decbod.csv", evaluation.decbod_csv(curves), written)
    summary = {f"rms_deviation_{e}": c.rms_deviation() for e, c in curves.items()}
    _manifest(out, args, written, summary)
    for e, c in curves.items():
        print(f"{e}: RMS deviation from the diagonal {c.rms_deviation():.4f}")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = ingest.ExperimentConfig(
        network=args.network, n_train=args.n_train, n_runs=args.trials, seed=args.seed,
        epsilon=args.epsilon, max_rounds=args.max_rounds, output_dir=args.output_dir,
    )
    result = evaluation.run_experiment(config, jobs=args.jobs)
    summary = evaluation.summarize_timing(result.records)
    out = _output_dir(args)
    written: list[str] = []
    _write(out, "timing.csv", evaluation.timing_csv(result.records), written)
    _manifest(out, args, written, summary)
    for k, v in summary.items():
        print(f"{k}: {v}")
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.n_train < 0:
        raise UsageError("--n-train must be non-negative")
    structure = _structure_of(args.network)
    truth = ingest.sample_ground_truth(structure, ingest.rng_stream(args.seed, ingest.STREAM_GROUND_TRUTH, 0))
    rng = ingest.rng_stream(args.seed, ingest.STREAM_TRAINING, 0)
    data = exact.ancestral_samples(truth, args.n_train, rng)
    observed = exact.ancestral_sample(truth, rng)
    if args.network in ingest.BUILTIN_NAMES:
        evidence_ids = ingest.default_evidence(args.network)
    else:
        evidence_ids = ingest.degree_one_evidence(structure)
    evidence = {v: int(observed[v]) for v in evidence_ids}
    out = _output_dir(args)
    written: list[str] = []
    _write(out, "ground_truth.json", ingest.serialize_network(truth), written)
    _write(out, "learned.json", ingest.serialize_network(exact.learn_dirichlet(structure, data)), written)
    _write(out, "data.csv", ingest.write_dataset(data, structure), written)
    _write(out, "evidence.json", ingest.serialize_evidence(evidence, structure), written)
    _manifest(out, args, written, {"variables": structure.n_variables, "n_train": args.n_train})
    print("wrote " + ", ".join(written))
    return EXIT_OK


def cmd_compile_spn(args) -> int:
    circuit = spn.compile_spn(_structure_of(args.network))
    out = _output_dir(args)
    written: list[str] = []
    _write(out, "spn.txt", spn.dump(circuit), written)
    summary = {"nodes": circuit.size, "edges": circuit.n_edges}
    _manifest(out, args, written, summary)
    print(f"nodes {circuit.size} edges {circuit.n_edges}")
    return EXIT_OK


COMMANDS = {
    "infer": cmd_infer,
    "compare": cmd_compare,
    "decbod": cmd_decbod,
    "bench": cmd_bench,
    "gen": cmd_gen,
    "compile-spn": cmd_compile_spn,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"sobn: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"sobn: parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InconsistentEvidenceError as exc:
        print(f"sobn: inconsistent evidence: {exc}", file=sys.stderr)
        return EXIT_INCONSISTENT
    except CapacityError as exc:
        print(f"sobn: capacity exceeded: {exc}", file=sys.stderr)
        return EXIT_CAPACITY
    except (SobnError, ValueError, OSError) as exc:
        print(f"sobn: error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
