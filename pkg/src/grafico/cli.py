"""Operator command line: run graphs, inspect the knowledge graph, evaluate.

Exit codes are stable: 0 ok, 2 validation, 3 guard/complexity, 4 not found,
5 runtime fault. Machine-readable errors go to stderr as one JSON object.
"""

from __future__ import annotations

import contextlib
import json
import sys
from pathlib import Path

import click
import numpy as np

from . import lab
from .atoms import IRI, TokenGenerator, from_extxyz, to_extxyz
from .graph import (
    HandlerRegistry,
    InputRejected,
    load_graph_spec,
    run_to_completion,
    start_run,
    validate_graph,
)
from .evals import (
    EmptyLedger,
    RunScore,
    carryover_ratio,
    context_saturation,
    error_recovery_cost,
    format_pass_table,
    load_ledger,
    load_pricing,
    monetary_cost,
    pass_matrix,
)
from .mof import (
    AssignmentRejected,
    AtomsDocument,
    BuildQueueItem,
    ConnectionCountMismatch,
    MOFS_NS,
    NonPeriodic,
    PorosityDocument,
    ScopeViolation,
    assemble_mock_mof,
    mock_porosity,
    mof_ontology,
    propose_cross_topology,
    propose_intra_topology,
)
from .ogm import NotFound, get_instance_stripped, mint_iri, ontology_snapshot, pull, push
from .query import (
    ComplexityViolation,
    GuardConfig,
    NotReadOnly,
    QuerySyntaxError,
    QueryTimeout,
    UnknownMarker,
    UnsupportedForm,
    evaluate,
    inject_values,
    parse,
)
from .router import TERMINATE, RoutingFault, ScriptedPolicy
from .scheduler import new_pool
from .schema import EMPTY, FieldSpec, Schema
from .store import Literal, TripleStore

try:
    import tomllib
except ModuleNotFoundError:  # 3.10
    import tomli as tomllib

EXIT_OK = 0
EXIT_VALIDATION = 2
EXIT_GUARD = 3
EXIT_NOT_FOUND = 4
EXIT_RUNTIME = 5

_GUARD_ERRORS = (ComplexityViolation, QueryTimeout)
_VALIDATION_ERRORS = (
    InputRejected,
    QuerySyntaxError,
    NotReadOnly,
    UnsupportedForm,
    UnknownMarker,
    EmptyLedger,
    ScopeViolation,
    ConnectionCountMismatch,
    AssignmentRejected,
    NonPeriodic,
    ValueError,
)


@contextlib.contextmanager
def mapped_errors():
    try:
        yield
    except _GUARD_ERRORS as exc:
        _fail(EXIT_GUARD, exc)
    except NotFound as exc:
        _fail(EXIT_NOT_FOUND, exc)
    except FileNotFoundError as exc:
        _fail(EXIT_NOT_FOUND, exc)
    except _VALIDATION_ERRORS as exc:
        _fail(EXIT_VALIDATION, exc)
    except (RoutingFault, RuntimeError, KeyError, OSError) as exc:
        _fail(EXIT_RUNTIME, exc)


def _fail(code: int, exc: Exception) -> None:
    payload = {"error": type(exc).__name__, "detail": str(exc)}
    if isinstance(exc, InputRejected):
        payload["violations"] = [str(v) for v in exc.violations]
    sys.stderr.write(json.dumps(payload) + "\n")
    raise SystemExit(code)


class CliState:
    def __init__(self, store_path, seed, log_path, json_output):
        self.store_path = store_path
        self.seed = seed
        self.log_path = log_path
        self.json_output = json_output
        self.tokens = TokenGenerator(seed=seed)

    def open_store(self) -> TripleStore:
        if self.store_path is None:
            return TripleStore()
        path = Path(self.store_path)
        if path.exists():
            return TripleStore.replay_journal(path, journal=path)
        return TripleStore(journal=path)

    def event_sink(self):
        if self.log_path is None:
            return None
        handle = open(self.log_path, "a")

        def sink(event: dict) -> None:
            handle.write(json.dumps(event) + "\n")
            handle.flush()

        return sink

    def emit(self, payload: dict, human: str = "") -> None:
        if self.json_output or not human:
            click.echo(json.dumps(payload, indent=2, default=str))
        else:
            click.echo(human)


@click.group()
@click.option("--store", "store_path", type=click.Path(), default=None,
              help="Knowledge-store journal file (created if absent).")
@click.option("--seed", type=int, default=None, help="Deterministic seed.")
@click.option("--log", "log_path", type=click.Path(), default=None,
              help="JSON-lines event log destination.")
@click.option("--json", "json_output", is_flag=True, help="Machine output.")
@click.pass_context
def main(ctx, store_path, seed, log_path, json_output):
    """Typed execution graphs with knowledge-graph persistence."""
    ctx.obj = CliState(store_path, seed, log_path, json_output)


# --------------------------------------------------------------------------
# built-in schemas, handlers, and policies for lab graphs

BUILTIN_SCHEMAS = {
    "empty": EMPTY,
    "geometry": Schema("geometry", (FieldSpec("atoms", "string"),)),
    "opt_result": Schema("opt_result", (
        FieldSpec("atoms", "string"),
        FieldSpec("energy", "number"),
        FieldSpec("converged", "boolean"),
    )),
    "scalar_result": Schema("scalar_result", (
        FieldSpec("atoms", "string"),
        FieldSpec("energy", "number"),
        FieldSpec("gap", "number"),
        FieldSpec("dipole", ("array", "number", (3,))),
    )),
    "freq_result": Schema("freq_result", (
        FieldSpec("atoms", "string"),
        FieldSpec("n_imaginary", "integer"),
        FieldSpec("mode", ("array", "number", None)),
    )),
    "displace_input": Schema("displace_input", (
        FieldSpec("atoms", "string"),
        FieldSpec("mode", ("array", "number", None)),
    )),
}


def default_registry() -> HandlerRegistry:
    reg = HandlerRegistry()

    @reg.register("single_point")
    def _single_point(doc):
        result = lab.single_point(from_extxyz(doc["atoms"]))
        return {
            "atoms": doc["atoms"],
            "energy": float(result.energy),
            "gap": float(result.homo_lumo_gap),
            "dipole": [float(x) for x in result.dipole],
        }

    @reg.register("optimize")
    def _optimize(doc):
        final, trajectory, converged = lab.optimize(from_extxyz(doc["atoms"]))
        return {
            "atoms": to_extxyz(final),
            "energy": float(trajectory[-1]),
            "converged": bool(converged),
        }

    @reg.register("frequencies")
    def _frequencies(doc):
        result = lab.frequencies(from_extxyz(doc["atoms"]))
        return {
            "atoms": doc["atoms"],
            "n_imaginary": int(result.n_imaginary),
            "mode": [float(x) for x in result.lowest_mode],
        }

    @reg.register("displace")
    def _displace(doc):
        moved = lab.repair_displacement_sign(
            from_extxyz(doc["atoms"]), np.asarray(doc["mode"], dtype=float)
        )
        return {"atoms": to_extxyz(moved)}

    return reg


class ForwardingPolicy:
    """Fills missing decision arguments from the previous node's output.

    The wrapped policy only has to choose the next node; fields the target
    schema declares are projected out of the last artifact. ``run`` is
    attached once the run exists.
    """

    def __init__(self, inner):
        self.inner = inner
        self.run = None

    def __call__(self, ctx, feedback):
        text = self.inner(ctx, feedback)
        try:
            doc = json.loads(text)
        except (json.JSONDecodeError, TypeError):
            return text
        if (
            isinstance(doc, dict)
            and "arguments" not in doc
            and doc.get("choice") not in (TERMINATE, None)
        ):
            schema = ctx.schema_for(doc["choice"])
            last = {}
            if self.run is not None and self.run.artifacts:
                last = self.run.artifacts[-1][1]
            if schema is not None and isinstance(last, dict):
                doc["arguments"] = {
                    f.name: last[f.name] for f in schema.fields if f.name in last
                }
        return json.dumps(doc)


class RepairPolicy:
    """opt -> freq; freq with imaginary modes -> displace -> opt; else stop."""

    def __init__(self):
        self.run = None

    def __call__(self, ctx, feedback):
        if self.run is None or not self.run.artifacts:
            # input-correction phase: aim at the entry node and let the
            # validator report what is wrong with the document
            return json.dumps({"choice": ctx.admissible[0][0]})
        node, output = self.run.artifacts[-1]
        admissible = {nid for nid, _ in ctx.admissible}
        if node == "freq" and output.get("n_imaginary", 0) == 0:
            return json.dumps({"choice": TERMINATE})
        for target in ("freq", "displace", "opt"):
            if target in admissible:
                return json.dumps({"choice": target})
        return json.dumps({"choice": TERMINATE})


def _load_policy(name: str, base: Path):
    if name == "repair":
        return ForwardingPolicy(RepairPolicy())
    return ForwardingPolicy(ScriptedPolicy.from_file(base / name))


# --------------------------------------------------------------------------
# run

@main.command("run")
@click.argument("manifest", type=click.Path(exists=True))
@click.pass_obj
def cmd_run(state: CliState, manifest):
    """Execute a graph described by a TOML manifest."""
    with mapped_errors():
        base = Path(manifest).parent
        with open(manifest, "rb") as f:
            doc = tomllib.load(f)
        for key in ("graph", "input", "policy"):
            if key not in doc:
                raise ValueError(f"manifest missing required key {key!r}")
        for key in ("graph", "input"):
            if not (base / doc[key]).exists():
                raise FileNotFoundError(base / doc[key])

        registry = default_registry()
        spec = load_graph_spec(base / doc["graph"], BUILTIN_SCHEMAS, registry)
        problems = validate_graph(spec)
        if problems:
            raise ValueError("invalid graph: " + "; ".join(problems))
        initial_input = json.loads((base / doc["input"]).read_text())
        policy = _load_policy(doc["policy"], base)

        pool = None
        pool_cfg = doc.get("pool")
        if pool_cfg:
            pool = new_pool(pool_cfg["devices"], pool_cfg.get("slots", 3))

        sink = state.event_sink()
        run = start_run(
            spec,
            intent=doc.get("intent", spec.graph_id),
            initial_input=initial_input,
            policy=policy,
            step_budget=int(doc.get("step_budget", 64)),
            tokens=state.tokens,
            event_sink=sink,
        )
        policy.run = run
        if hasattr(policy.inner, "run"):
            policy.inner.run = run
        artifacts = run_to_completion(run, policy, registry, pool)

        out_dir = Path(doc.get("output_dir", base))
        out_dir.mkdir(parents=True, exist_ok=True)
        final_node, final = artifacts[-1]
        written = []
        if isinstance(final, dict) and "atoms" in final:
            target = out_dir / f"{spec.graph_id}_final.xyz"
            target.write_text(final["atoms"])
            written.append(str(target))

        iris = []
        if doc.get("persist") and state.store_path is not None:
            store = state.open_store()
            ontology = mof_ontology()
            if isinstance(final, dict) and "atoms" in final:
                record = AtomsDocument.from_atoms(from_extxyz(final["atoms"]))
                push(record, ontology, store)
                iris.append(str(record.instance_iri))
            store.sync()

        summary = {
            "run_id": run.run_id,
            "graph": spec.graph_id,
            "steps": len(artifacts),
            "final_node": final_node,
            "artifacts_written": written,
            "persisted_iris": iris,
        }
        state.emit(summary, human="\n".join(
            [f"run {run.run_id}: {len(artifacts)} steps, ended at {final_node}"]
            + [f"wrote {w}" for w in written]
            + [f"persisted {iri}" for iri in iris]
        ))


# --------------------------------------------------------------------------
# kg

@main.group("kg")
def cmd_kg():
    """Inspect and query the knowledge store."""


def _parse_values(pairs) -> dict:
    values: dict[str, list[str]] = {}
    for pair in pairs:
        if "=" not in pair:
            raise click.BadParameter(f"expected NAME=<iri>[,<iri>...], got {pair!r}")
        name, _, rest = pair.partition("=")
        values.setdefault(name.strip().upper(), []).extend(
            v.strip().strip("<>") for v in rest.split(",") if v.strip()
        )
    return values


def _term_text(term) -> str:
    if isinstance(term, Literal):
        return term.lexical()
    return str(term)


@cmd_kg.command("query")
@click.argument("query_text", required=False)
@click.option("-f", "--file", "query_file", type=click.Path(exists=True))
@click.option("--values", "value_pairs", multiple=True,
              help="Inject VALUES at a template marker: NAME=<iri>[,<iri>...]")
@click.option("--timeout", type=float, default=45.0)
@click.pass_obj
def kg_query(state: CliState, query_text, query_file, value_pairs, timeout):
    """Run a read-only query; solutions as TSV (or JSON lines with --json)."""
    with mapped_errors():
        if (query_text is None) == (query_file is None):
            raise ValueError("give a query string or -f FILE, not both")
        text = query_text or Path(query_file).read_text()
        values = _parse_values(value_pairs)
        if values:
            text = inject_values(text, values)
        store = state.open_store()
        ast = parse(text)
        guards = GuardConfig(timeout=timeout)
        result = evaluate(ast, store, guards)
        if ast.form == "ASK":
            state.emit({"ask": bool(result)}, human=str(bool(result)).lower())
            return
        names = [v.name for v in ast.select]
        if state.json_output:
            for row in result:
                click.echo(json.dumps({n: _term_text(row.get(n)) for n in names}))
        else:
            click.echo("\t".join(names))
            for row in result:
                click.echo("\t".join(
                    _term_text(row[n]) if n in row else "" for n in names
                ))


@cmd_kg.command("get")
@click.argument("iri")
@click.option("--depth", type=int, default=0)
@click.pass_obj
def kg_get(state: CliState, iri, depth):
    """Stripped envelope of one instance (large fields listed, not inlined)."""
    with mapped_errors():
        store = state.open_store()
        envelope = get_instance_stripped(IRI(iri), mof_ontology(), store, depth=depth)
        state.emit({
            "instance_iri": str(envelope.instance_iri),
            "class_type": envelope.class_type,
            "data": envelope.data,
            "large_fields_available": list(envelope.large_fields_available),
            "large_field_info": envelope.large_field_info,
        })


@cmd_kg.command("snapshot")
@click.option("--classes", "class_list", default=None,
              help="Comma-separated class IRIs to include.")
@click.pass_obj
def kg_snapshot(state: CliState, class_list):
    """Ontology schema document."""
    with mapped_errors():
        ontology = mof_ontology()
        class_filter = None
        if class_list:
            class_filter = [IRI(c.strip()) for c in class_list.split(",")]
        state.emit(ontology_snapshot(ontology.ontology_iri, ontology, class_filter))


@cmd_kg.command("export")
@click.option("--format", "fmt", type=click.Choice(["ntriples", "turtle"]),
              default="ntriples")
@click.option("-o", "--output", type=click.Path(), default=None)
@click.pass_obj
def kg_export(state: CliState, fmt, output):
    """Dump the store as N-Triples or Turtle."""
    with mapped_errors():
        store = state.open_store()
        text = store.export_ntriples() if fmt == "ntriples" else store.export_turtle()
        if output:
            Path(output).write_text(text)
            click.echo(f"wrote {len(store)} triples to {output}")
        else:
            click.echo(text, nl=False)


# --------------------------------------------------------------------------
# eval

@main.command("eval")
@click.argument("ledgers", nargs=-1, required=True,
                type=click.Path(exists=True))
@click.option("--model", default=None, help="Pricing table key.")
@click.option("--pricing", "pricing_path", type=click.Path(exists=True))
@click.option("--scores", "scores_path", type=click.Path(exists=True),
              help="JSON-lines rows {task, run, numerical, judge}.")
@click.option("--pooled", is_flag=True, help="Pool runs across tasks.")
@click.pass_obj
def cmd_eval(state: CliState, ledgers, model, pricing_path, scores_path, pooled):
    """Trace metrics per ledger plus the pass@k / pass^k table."""
    with mapped_errors():
        pricing_table = load_pricing(pricing_path)
        pricing = pricing_table.get(model) if model else None
        if model and pricing is None:
            sys.stderr.write(f"warning: no pricing for {model!r}; cost omitted\n")

        report = {"ledgers": [], "pass_table": None}
        for path in ledgers:
            ledger = load_ledger(path)
            row = {
                "ledger": str(path),
                "requests": len(ledger),
                "total_tokens": sum(e.total_tokens for e in ledger),
                "carryover_ratio": carryover_ratio(ledger),
                "error_recovery_cost": error_recovery_cost(ledger),
            }
            if pricing is not None:
                row["context_saturation"] = context_saturation(ledger, pricing)
                row["monetary_cost"] = monetary_cost(ledger, pricing)
            report["ledgers"].append(row)

        table_text = ""
        if scores_path:
            rows = [
                RunScore(
                    task=raw["task"], run=int(raw["run"]),
                    numerical=raw.get("numerical"), judge=raw.get("judge"),
                )
                for raw in map(json.loads, Path(scores_path).read_text().splitlines())
                if raw
            ]
            matrix = pass_matrix(rows, pooled=pooled)
            report["pass_table"] = matrix.table
            table_text = format_pass_table(matrix)

        if state.json_output:
            click.echo(json.dumps(report, indent=2))
            return
        for row in report["ledgers"]:
            parts = [
                f"{row['ledger']}: {row['requests']} requests,",
                f"{row['total_tokens']} tokens,",
                f"carryover {row['carryover_ratio']:.2%},",
                f"error recovery {row['error_recovery_cost']:.2%}",
            ]
            if "monetary_cost" in row:
                parts.append(
                    f", saturation {row['context_saturation']:.2%},"
                    f" cost ${row['monetary_cost']:.4f}"
                )
            click.echo(" ".join(parts))
        if table_text:
            click.echo(table_text)


# --------------------------------------------------------------------------
# propose

@main.command("propose")
@click.option("--algorithm", type=click.Choice(["intra", "cross"]), default="intra")
@click.option("--values", "value_pairs", multiple=True,
              help="Restrict: TOPOLOGY/METAL/LINKER=<iri>[,<iri>...]")
@click.option("--build", "build_count", type=int, default=0,
              help="Assemble and persist the first N candidates.")
@click.pass_obj
def cmd_propose(state: CliState, algorithm, value_pairs, build_count):
    """Combinatorial candidate search over the knowledge store."""
    with mapped_errors():
        store = state.open_store()
        restrict = _parse_values(value_pairs) or None
        search = propose_intra_topology if algorithm == "intra" else propose_cross_topology
        candidates = search(store, restrict=restrict)

        built = []
        ontology = mof_ontology()
        for candidate in candidates[:build_count]:
            mof, descriptors = _build_candidate(candidate, ontology, store, state.tokens)
            built.append({
                "iri": str(mof.instance_iri),
                "name": mof.name,
                "surface_area": descriptors.accessible_surface_area,
                "lcd": descriptors.largest_cavity_diameter,
                "pld": descriptors.pore_limiting_diameter,
                "void_fraction": descriptors.void_fraction,
            })
        if built:
            store.sync()
        built.sort(key=lambda b: -b["surface_area"])

        payload = {
            "algorithm": algorithm,
            "candidates": [c._asdict() for c in candidates],
            "built": built,
        }
        lines = [f"{len(candidates)} candidate(s) [{algorithm}]"]
        lines += [
            f"  {c.name}\t{c.topology}\t{c.metal_node}\t{c.organic_linker}"
            for c in candidates
        ]
        if built:
            lines.append("built (ranked by surface area):")
            lines += [
                f"  {b['iri']}  asa={b['surface_area']:.4f}"
                f" lcd={b['lcd']:.2f} pld={b['pld']:.2f} vf={b['void_fraction']:.3f}"
                for b in built
            ]
        state.emit(payload, human="\n".join(lines))


def _build_candidate(candidate, ontology, store, tokens):
    import copy

    node = pull(IRI(candidate.metal_node), ontology, store, depth=-1)
    linker = pull(IRI(candidate.organic_linker), ontology, store, depth=-1)
    topology = pull(IRI(candidate.topology), ontology, store, depth=-1)
    for block in (node, linker):
        if not isinstance(block.atoms, AtomsDocument):
            raise ValueError(f"{block.instance_iri} has no stored geometry")

    assembly_node = copy.copy(node)
    assembly_node.atoms = node.atoms.to_atoms()
    assembly_linker = copy.copy(linker)
    assembly_linker.atoms = linker.atoms.to_atoms()
    item = BuildQueueItem(
        topology=topology, node=assembly_node, linker=assembly_linker,
        name=candidate.name,
    )
    mof = assemble_mock_mof(item, tokens=tokens)
    descriptors = mock_porosity(mof.atoms)

    mof.building_blocks_used = [node, linker]
    mof.atoms = AtomsDocument.from_atoms(mof.atoms)
    mof.porosity = PorosityDocument.from_descriptors(
        descriptors, mint_iri(MOFS_NS, "PorosityDescriptors", tokens)
    )
    push(mof, ontology, store)
    return mof, descriptors


# --------------------------------------------------------------------------
# lab one-shots

@main.group("lab")
def cmd_lab():
    """Single-shot mock-lab computations on extended-XYZ files."""


@cmd_lab.command("single-point")
@click.argument("xyz", type=click.Path(exists=True))
@click.pass_obj
def lab_single_point(state: CliState, xyz):
    with mapped_errors():
        result = lab.single_point(from_extxyz(Path(xyz).read_text()))
        state.emit({
            "energy": float(result.energy),
            "gap": float(result.homo_lumo_gap),
            "dipole": [float(x) for x in result.dipole],
        })


@cmd_lab.command("opt")
@click.argument("xyz", type=click.Path(exists=True))
@click.option("-o", "--output", type=click.Path(), default=None)
@click.pass_obj
def lab_opt(state: CliState, xyz, output):
    with mapped_errors():
        final, trajectory, converged = lab.optimize(from_extxyz(Path(xyz).read_text()))
        if output:
            Path(output).write_text(to_extxyz(final))
        state.emit({
            "energy": float(trajectory[-1]),
            "steps": len(trajectory) - 1,
            "converged": bool(converged),
            "output": output,
        })


@cmd_lab.command("freq")
@click.argument("xyz", type=click.Path(exists=True))
@click.pass_obj
def lab_freq(state: CliState, xyz):
    with mapped_errors():
        result = lab.frequencies(from_extxyz(Path(xyz).read_text()))
        state.emit({
            "n_imaginary": int(result.n_imaginary),
            "eigenvalues": [float(x) for x in result.eigenvalues],
        })


@cmd_lab.command("spectrum")
@click.argument("xyz", type=click.Path(exists=True))
@click.option("-n", "--n-conformers", type=int, default=16)
@click.option("--beta", type=float, default=1.0)
@click.option("--sigma", type=float, default=0.1)
@click.option("--threshold", type=float, default=0.95)
@click.option("-o", "--output", "base_path", type=click.Path(), required=True)
@click.pass_obj
def lab_spectrum(state: CliState, xyz, n_conformers, beta, sigma, threshold, base_path):
    """Conformer ensemble -> Boltzmann selection -> broadened spectrum files."""
    with mapped_errors():
        seed_atoms = from_extxyz(Path(xyz).read_text())
        ensemble = lab.generate_conformers(
            seed_atoms, n_conformers, rng_seed=state.seed or 0
        )
        if len(ensemble) == 0:
            raise RuntimeError("every conformer optimization diverged")
        ensemble = lab.with_boltzmann_weights(ensemble, beta)
        ensemble = lab.select_by_cumulative_weight(ensemble, threshold)
        ensemble = lab.dedup_conformers(ensemble)
        results = [lab.excitations(atoms) for atoms, _ in ensemble.conformers]
        top = max(float(r.energies.max()) for r in results)
        grid = np.linspace(0.0, top + 3 * sigma, 400)
        spectrum = lab.broaden_spectrum(results, ensemble.weights, sigma, grid)
        tsv, sidecar = lab.export_spectrum(
            spectrum, base_path, beta=beta, weights=ensemble.weights
        )
        state.emit({
            "conformers": len(ensemble),
            "dropped": ensemble.dropped,
            "tsv": str(tsv),
            "sidecar": str(sidecar),
        })


if __name__ == "__main__":
    main()
