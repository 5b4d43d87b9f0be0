"""Network, evidence, dataset, and experiment documents; benchmark topologies.

Documents are JSON. A network document looks like::

    {
      "edges": [["A", "B"]],
      "format": "sobn.network",
      "tables": {
        "A": {"alphas": {"": [2.0, 5.0]}},
        "B": {"alphas": {"0": [1.0, 1.0], "1": [3.0, 1.0]}}
      },
      "variables": [{"name": "A", "states": ["0", "1"]},
                    {"name": "B", "states": ["0", "1"]}],
      "version": 1
    }

Parents of a variable are ordered as their edges appear in ``edges``. Table
rows are keyed by the parent state names joined with ``,`` (the empty string
for a root). Every table of a document is either ``probabilities`` (a point
network) or ``alphas`` (a Dirichlet network).

Randomness: every generator is a numpy ``Generator`` over PCG64. Experiment
streams are derived from one master seed with ``SeedSequence(seed,
spawn_key=(stream, index))``, see :func:`rng_stream`.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import errors
from .errors import StructureError
from .model import (
    ConcreteNetwork,
    NetworkStructure,
    UncertainNetwork,
    Variable,
    make_variables,
    parent_config_index,
    parent_config_states,
)

FORMAT_VERSION = 1
NETWORK_FORMAT = "sobn.network"
EVIDENCE_FORMAT = "sobn.evidence"
EXPERIMENT_FORMAT = "sobn.experiment"

BUILTIN_NAMES = ("chain3", "tent3", "v3", "triangle", "diamond", "net21")

NET21_SEED = 20210521
NET21_EVIDENCE_SEED = 20210522

# stream ids for rng_stream
STREAM_GROUND_TRUTH = 0
STREAM_TRAINING = 1
STREAM_SCHEDULE = 2
STREAM_MONTE_CARLO = 3


def rng_stream(seed: int, *key: int) -> np.random.Generator:
    """Independent generator for ``key`` under master ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


# ---------------------------------------------------------------------------
# built-in topologies


def _structure(names, cards, edges) -> NetworkStructure:
    index = {n: i for i, n in enumerate(names)}
    parents = [[] for _ in names]
    for p, c in edges:
        parents[index[c]].append(index[p])
    return NetworkStructure(make_variables(names, cards), tuple(tuple(p) for p in parents))


def generate_net21(seed: int = NET21_SEED) -> NetworkStructure:
    """Deterministic 21-node loopy DAG with binary and ternary variables.

    Node i draws 1-3 parents (probabilities 0.4/0.4/0.2) uniformly from the
    five preceding nodes, which keeps the graph connected, acyclic, and of
    small treewidth while creating many undirected loops.
    """
    rng = np.random.default_rng(seed)
    n = 21
    cards = [int(c) for c in rng.choice([2, 3], size=n)]
    edges = []
    for i in range(1, n):
        window = list(range(max(0, i - 5), i))
        k = min(len(window), int(rng.choice([1, 2, 3], p=[0.4, 0.4, 0.2])))
        for p in sorted(int(p) for p in rng.choice(window, size=k, replace=False)):
            edges.append((p, i))
    names = [f"X{i:02d}" for i in range(n)]
    return _structure(names, cards, [(names[p], names[c]) for p, c in edges])


def builtin_structure(name: str) -> NetworkStructure:
    """One of the benchmark topologies; all small ones are binary."""
    if name == "chain3":
        return _structure("ABC", [2] * 3, [("A", "B"), ("B", "C")])
    if name == "tent3":
        return _structure("ABC", [2] * 3, [("A", "B"), ("A", "C")])
    if name == "v3":
        return _structure("ABC", [2] * 3, [("A", "C"), ("B", "C")])
    if name == "triangle":
        return _structure("ABC", [2] * 3, [("A", "B"), ("A", "C"), ("B", "C")])
    if name == "diamond":
        return _structure("ABCD", [2] * 4, [("A", "B"), ("A", "C"), ("B", "D"), ("C", "D")])
    if name == "net21":
        return generate_net21()
    raise StructureError(f"unknown built-in network {name!r}; expected one of {BUILTIN_NAMES}")


def degree_one_evidence(structure: NetworkStructure) -> list[int]:
    """Nodes incident with exactly one edge, falling back to sources and sinks.

    The fallback applies when no node has degree one (triangle, diamond).
    """
    nodes = [i for i in range(structure.n_variables) if structure.degree(i) == 1]
    if not nodes:
        nodes = [
            i
            for i in range(structure.n_variables)
            if not structure.parents[i] or not structure.children[i]
        ]
    return nodes


def default_evidence(name: str) -> list[int]:
    """Ids of the evidence variables used for a built-in network."""
    structure = builtin_structure(name)
    if name == "net21":
        rng = np.random.default_rng(NET21_EVIDENCE_SEED)
        k = math.ceil(structure.n_variables / 2)
        return sorted(int(i) for i in rng.choice(structure.n_variables, size=k, replace=False))
    return degree_one_evidence(structure)


def uniform_prior(structure: NetworkStructure) -> UncertainNetwork:
    return UncertainNetwork(
        structure,
        [np.ones((structure.n_rows(i), v.cardinality)) for i, v in enumerate(structure.variables)],
    )


def sample_dirichlet_rows(alphas: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One Dirichlet draw per row via normalized unit-rate Gamma variates.

    With very small alphas every variate of a row can underflow to zero;
    such rows are redrawn in log space from Gamma(a) = Gamma(a + 1) U^(1/a).
    """
    alphas = np.asarray(alphas, dtype=float)
    draws = rng.standard_gamma(alphas)
    totals = draws.sum(axis=-1, keepdims=True)
    dead = totals[..., 0] == 0
    if np.any(dead):
        a = alphas[dead]
        logs = np.log(rng.standard_gamma(a + 1.0)) + np.log(rng.random(a.shape)) / a
        logs -= logs.max(axis=-1, keepdims=True)
        draws[dead] = np.exp(logs)
        totals = draws.sum(axis=-1, keepdims=True)
    return draws / totals


def sample_ground_truth(structure: NetworkStructure, rng: np.random.Generator) -> ConcreteNetwork:
    """Every table row drawn independently from the uniform Dirichlet."""
    tables = [
        sample_dirichlet_rows(np.ones((structure.n_rows(i), v.cardinality)), rng)
        for i, v in enumerate(structure.variables)
    ]
    return ConcreteNetwork(structure, tables)


# ---------------------------------------------------------------------------
# canonical JSON emission


def _format_number(x) -> str:
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    x = float(x)
    if not math.isfinite(x):
        raise ValueError("non-finite number in document")
    text = format(x, ".17g")
    if "e" not in text and "." not in text and "inf" not in text:
        text += ".0"
    return text


def _emit(obj, indent=0) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{json.dumps(k)}: {_emit(obj[k], indent + 1)}" for k in sorted(obj)]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(x, (dict, list, tuple)) for x in obj):
            return "[" + ", ".join(_emit(x) for x in obj) + "]"
        if all(isinstance(x, (list, tuple)) and all(not isinstance(y, (dict, list, tuple)) for y in x) for x in obj):
            return "[\n" + ",\n".join(inner + _emit(x) for x in obj) + "\n" + pad + "]"
        return "[\n" + ",\n".join(inner + _emit(x, indent + 1) for x in obj) + "\n" + pad + "]"
    if isinstance(obj, str):
        return json.dumps(obj)
    if obj is None:
        return "null"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    return _format_number(obj)


def _load_json(text: str):
    def no_duplicates(pairs):
        seen = {}
        for k, v in pairs:
            if k in seen:
                raise errors.SchemaError(f"duplicate key {k!r}")
            seen[k] = v
        return seen

    try:
        return json.loads(text, object_pairs_hook=no_duplicates)
    except json.JSONDecodeError as exc:
        raise errors.DocumentSyntaxError(exc.msg, exc.lineno, exc.colno) from None


def _check_header(doc, expected_format, allowed):
    if not isinstance(doc, dict):
        raise errors.SchemaError("document must be a JSON object")
    unknown = sorted(set(doc) - set(allowed))
    if unknown:
        raise errors.SchemaError(f"unknown fields {unknown}")
    missing = sorted(set(allowed) - set(doc))
    if missing:
        raise errors.SchemaError(f"missing fields {missing}")
    if doc["format"] != expected_format:
        raise errors.SchemaError(f"expected format {expected_format!r}, got {doc['format']!r}")
    if doc["version"] != FORMAT_VERSION:
        raise errors.SchemaError(f"unsupported version {doc['version']!r}")


def _as_list(value, what):
    if not isinstance(value, list):
        raise errors.SchemaError(f"{what} must be a list")
    return value


def _as_name(value, what):
    if not isinstance(value, str) or not value:
        raise errors.SchemaError(f"{what} must be a nonempty string")
    return value


# ---------------------------------------------------------------------------
# network documents


def _parse_variables(raw) -> list[tuple[str, tuple[str, ...]]]:
    out = []
    seen = set()
    for entry in _as_list(raw, "variables"):
        if not isinstance(entry, dict) or set(entry) != {"name", "states"}:
            raise errors.SchemaError("each variable needs exactly the fields 'name' and 'states'")
        name = _as_name(entry["name"], "variable name")
        if name in seen:
            raise errors.DuplicateVariableError(f"variable {name!r} declared twice")
        seen.add(name)
        states = tuple(_as_name(s, f"state of {name!r}") for s in _as_list(entry["states"], "states"))
        if len(states) < 2:
            raise errors.SchemaError(f"variable {name!r} needs at least 2 states")
        if len(set(states)) != len(states):
            raise errors.SchemaError(f"variable {name!r} has duplicate states")
        if any("," in s for s in states):
            raise errors.SchemaError(f"state names of {name!r} may not contain ','")
        out.append((name, states))
    return out


def _parse_number_row(row, what) -> list[float]:
    row = _as_list(row, what)
    values = []
    for x in row:
        if isinstance(x, bool) or not isinstance(x, (int, float)):
            raise errors.SchemaError(f"{what} must contain numbers")
        if not math.isfinite(x):
            raise errors.InvalidValueError(f"{what} contains a non-finite number")
        values.append(float(x))
    return values


def parse_network(text: str) -> ConcreteNetwork | UncertainNetwork:
    """Parse and validate a network document."""
    doc = _load_json(text)
    _check_header(doc, NETWORK_FORMAT, ("format", "version", "variables", "edges", "tables"))
    declared = _parse_variables(doc["variables"])
    index = {name: i for i, (name, _) in enumerate(declared)}
    parents = [[] for _ in declared]
    for edge in _as_list(doc["edges"], "edges"):
        if not isinstance(edge, list) or len(edge) != 2:
            raise errors.SchemaError("each edge must be a [parent, child] pair")
        p, c = (_as_name(x, "edge endpoint") for x in edge)
        for x in (p, c):
            if x not in index:
                raise errors.UnknownVariableError(f"edge references unknown variable {x!r}")
        if index[p] in parents[index[c]]:
            raise errors.SchemaError(f"edge {p}->{c} listed twice")
        if p == c:
            raise errors.DocumentCycleError(f"self-loop on {p!r}")
        parents[index[c]].append(index[p])
    variables = tuple(
        Variable(i, name, len(states), states) for i, (name, states) in enumerate(declared)
    )
    try:
        structure = NetworkStructure(variables, tuple(tuple(p) for p in parents))
    except errors.CycleError as exc:
        raise errors.DocumentCycleError(str(exc)) from None

    raw_tables = doc["tables"]
    if not isinstance(raw_tables, dict):
        raise errors.SchemaError("tables must be an object keyed by variable name")
    unknown = sorted(set(raw_tables) - set(index))
    if unknown:
        raise errors.UnknownVariableError(f"tables for unknown variables {unknown}")
    kinds = set()
    tables = []
    for var in variables:
        if var.name not in raw_tables:
            raise errors.MissingRowError(f"no table for variable {var.name!r}")
        block = raw_tables[var.name]
        if not isinstance(block, dict) or len(block) != 1 or next(iter(block)) not in ("probabilities", "alphas"):
            raise errors.SchemaError(
                f"table of {var.name!r} must have exactly one of 'probabilities' or 'alphas'"
            )
        kind, rows = next(iter(block.items()))
        kinds.add(kind)
        if not isinstance(rows, dict):
            raise errors.SchemaError(f"rows of {var.name!r} must be an object")
        pcards = structure.parent_cardinalities(var.id)
        pstates = [structure.variables[p].state_names for p in structure.parents[var.id]]
        table = np.full((structure.n_rows(var.id), var.cardinality), np.nan)
        for key, row in rows.items():
            names = key.split(",") if pstates else ([] if key == "" else [key])
            if len(names) != len(pstates) or any(n not in s for n, s in zip(names, pstates)):
                raise errors.UnknownVariableError(f"row key {key!r} of {var.name!r} is not a parent configuration")
            r = parent_config_index([s.index(n) for n, s in zip(names, pstates)], pcards)
            values = _parse_number_row(row, f"row {key!r} of {var.name!r}")
            if len(values) != var.cardinality:
                raise errors.SchemaError(f"row {key!r} of {var.name!r} has {len(values)} entries")
            if kind == "alphas" and any(v <= 0 for v in values):
                raise errors.InvalidValueError(f"row {key!r} of {var.name!r} has a nonpositive alpha")
            if kind == "probabilities":
                if any(v < 0 for v in values):
                    raise errors.InvalidValueError(f"row {key!r} of {var.name!r} has a negative probability")
                if abs(math.fsum(values) - 1.0) > 1e-12:
                    raise errors.RowSumError(f"row {key!r} of {var.name!r} sums to {math.fsum(values)!r}")
            table[r] = values
        missing = np.flatnonzero(np.isnan(table[:, 0]))
        if missing.size:
            config = parent_config_states(int(missing[0]), pcards)
            label = ",".join(s[x] for s, x in zip(pstates, config))
            raise errors.MissingRowError(f"table of {var.name!r} is missing row {label!r}")
        tables.append(table)
    if len(kinds) != 1:
        raise errors.SchemaError("all tables must be of the same kind")
    if kinds == {"alphas"}:
        return UncertainNetwork(structure, tables)
    return ConcreteNetwork(structure, tables)


def _row_key(structure: NetworkStructure, node: int, row: int) -> str:
    config = parent_config_states(row, structure.parent_cardinalities(node))
    return ",".join(structure.variables[p].state_names[s] for p, s in zip(structure.parents[node], config))


def serialize_network(network: ConcreteNetwork | UncertainNetwork) -> str:
    """Canonical document text: sorted keys, 17 significant digits."""
    s = network.structure
    kind = "alphas" if isinstance(network, UncertainNetwork) else "probabilities"
    tables = {}
    for v in s.variables:
        table = network.tables[v.id]
        tables[v.name] = {kind: {_row_key(s, v.id, r): [float(x) for x in table[r]] for r in range(table.shape[0])}}
    doc = {
        "format": NETWORK_FORMAT,
        "version": FORMAT_VERSION,
        "variables": [{"name": v.name, "states": list(v.state_names)} for v in s.variables],
        "edges": [[s.variables[p].name, v.name] for v in s.variables for p in s.parents[v.id]],
        "tables": tables,
    }
    return _emit(doc) + "\n"


def read_network(path) -> ConcreteNetwork | UncertainNetwork:
    return parse_network(Path(path).read_text())


# ---------------------------------------------------------------------------
# evidence documents


def parse_evidence(text: str, structure: NetworkStructure) -> dict[int, int]:
    """Evidence document: ``{"format", "version", "evidence": [[var, state], ...]}``."""
    doc = _load_json(text)
    _check_header(doc, EVIDENCE_FORMAT, ("format", "version", "evidence"))
    evidence = {}
    for pair in _as_list(doc["evidence"], "evidence"):
        if not isinstance(pair, list) or len(pair) != 2:
            raise errors.SchemaError("each evidence entry must be a [variable, state] pair")
        name, state = (_as_name(x, "evidence entry") for x in pair)
        try:
            var = structure.index_of(name)
        except StructureError:
            raise errors.UnknownVariableError(f"evidence on unknown variable {name!r}") from None
        states = structure.variables[var].state_names
        if state not in states:
            raise errors.UnknownVariableError(f"variable {name!r} has no state {state!r}")
        if var in evidence:
            raise errors.SchemaError(f"variable {name!r} observed twice")
        evidence[var] = states.index(state)
    return evidence


def serialize_evidence(evidence, structure: NetworkStructure) -> str:
    pairs = [
        [structure.variables[v].name, structure.variables[v].state_names[s]]
        for v, s in sorted(evidence.items())
    ]
    doc = {"format": EVIDENCE_FORMAT, "version": FORMAT_VERSION, "evidence": pairs}
    return _emit(doc) + "\n"


# ---------------------------------------------------------------------------
# datasets (CSV: header of variable names, one row of state names per case)


def write_dataset(data: np.ndarray, structure: NetworkStructure) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow([v.name for v in structure.variables])
    for row in np.asarray(data, dtype=int):
        writer.writerow([structure.variables[i].state_names[s] for i, s in enumerate(row)])
    return buf.getvalue()


def read_dataset(text: str, structure: NetworkStructure) -> np.ndarray:
    reader = csv.reader(io.StringIO(text))
    try:
        header = next(reader)
    except StopIteration:
        raise errors.SchemaError("empty dataset document") from None
    names = [v.name for v in structure.variables]
    if sorted(header) != sorted(names) or len(header) != len(names):
        raise errors.SchemaError("dataset header must list every network variable once")
    columns = [structure.index_of(h) for h in header]
    rows = []
    for lineno, record in enumerate(reader, start=2):
        if len(record) != len(header):
            raise errors.SchemaError(f"dataset line {lineno} has {len(record)} fields")
        row = [0] * len(names)
        for col, value in zip(columns, record):
            states = structure.variables[col].state_names
            if value not in states:
                raise errors.UnknownVariableError(f"dataset line {lineno}: unknown state {value!r}")
            row[col] = states.index(value)
        rows.append(row)
    return np.array(rows, dtype=int).reshape(len(rows), len(names))


# ---------------------------------------------------------------------------
# experiment configuration


@dataclass(frozen=True)
class ExperimentConfig:
    """Parameters of one comparison experiment.

    ``network`` is a built-in topology name or the path of a network document
    whose structure is used. ``evidence`` lists evidence variable names; when
    omitted the topology's default evidence set is used.
    """

    network: str = "chain3"
    n_train: int = 100
    n_runs: int = 1000
    trials_per_ground_truth: int = 100
    epsilon: float = 1e-8
    max_rounds: int = 200
    gamma_step: float = 0.01
    seed: int = 0
    output_dir: str = "out"
    evidence: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.n_train < 0 or self.n_runs < 0 or self.trials_per_ground_truth < 1:
            raise errors.SchemaError("n_train, n_runs must be >= 0 and trials_per_ground_truth >= 1")
        if not self.epsilon > 0 or self.max_rounds < 1:
            raise errors.SchemaError("epsilon must be positive and max_rounds at least 1")
        if not 0 < self.gamma_step < 1:
            raise errors.SchemaError("gamma_step must lie in (0, 1)")
        if self.evidence is not None:
            object.__setattr__(self, "evidence", tuple(self.evidence))

    def structure(self) -> NetworkStructure:
        if self.network in BUILTIN_NAMES:
            return builtin_structure(self.network)
        return read_network(self.network).structure

    def evidence_ids(self) -> list[int]:
        structure = self.structure()
        if self.evidence is not None:
            return sorted(structure.index_of(n) for n in self.evidence)
        if self.network in BUILTIN_NAMES:
            return default_evidence(self.network)
        return degree_one_evidence(structure)


_CONFIG_FIELDS = tuple(f.name for f in fields(ExperimentConfig))


def parse_experiment(text: str) -> ExperimentConfig:
    doc = _load_json(text)
    if not isinstance(doc, dict):
        raise errors.SchemaError("document must be a JSON object")
    unknown = sorted(set(doc) - set(_CONFIG_FIELDS) - {"format", "version"})
    if unknown:
        raise errors.SchemaError(f"unknown fields {unknown}")
    if doc.get("format") != EXPERIMENT_FORMAT or doc.get("version") != FORMAT_VERSION:
        raise errors.SchemaError(f"expected format {EXPERIMENT_FORMAT!r} version {FORMAT_VERSION}")
    kwargs = {k: v for k, v in doc.items() if k in _CONFIG_FIELDS}
    try:
        return ExperimentConfig(**kwargs)
    except TypeError as exc:
        raise errors.SchemaError(str(exc)) from None


def serialize_experiment(config: ExperimentConfig) -> str:
    doc = {"format": EXPERIMENT_FORMAT, "version": FORMAT_VERSION}
    for k, v in asdict(config).items():
        if v is not None:
            doc[k] = list(v) if isinstance(v, tuple) else v
    return _emit(doc) + "\n"


def evidence_assignment(names: Sequence[str], states: Sequence[str], structure: NetworkStructure) -> dict[int, int]:
    """Evidence dict from parallel lists of variable and state names."""
    out = {}
    for n, s in zip(names, states):
        v = structure.index_of(n)
        out[v] = structure.variables[v].state_names.index(s)
    return out
