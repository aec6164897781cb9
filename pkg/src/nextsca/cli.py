"""Experiment runner.

    nextsca run <config> [--out DIR] [--reps N] [--threads K] [--iterations N]
    nextsca validate <config>
    nextsca graph-dump <config> [--rep R]

A config is an INI file with the sections ``[experiment]``, ``[problem]``,
``[graph]``, ``[run]`` and one ``[algorithm.<label>]`` per algorithm. It may
also be the name of a bundled config (``localization_fig1``, ...).

Exit codes: 0 success, 2 configuration error, 3 numerical abort.
"""

import argparse
import configparser
import csv
import math
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

from .apps import BUILDERS
from .graph import (
    DEFAULT_FLOOR,
    GraphError,
    complete_graph,
    constant_schedule,
    dump_schedule,
    erdos_renyi_graph,
    generate_b_connected_schedule,
    geometric_graph,
    load_schedule,
    path_graph,
    ring_graph,
)
from .solver import ALGORITHMS, NumericalAbort, RunConfig, StepSizeRule, step_rule_problems
from .surrogate import SURROGATE_KINDS

OUT_ENV = "NEXTSCA_OUT"
DEFAULT_OUT = "nextsca-results"
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

SUMMARY_HEADER = ("algorithm", "rep", "seed", "iterations", "comm", "J", "D", "NMSE", "U",
                  "threshold", "exchanges_to_threshold")


class ConfigError(Exception):
    """Carries every diagnostic found in a config file."""

    def __init__(self, diagnostics):
        self.diagnostics = list(diagnostics)
        super().__init__("\n".join(self.diagnostics))


# -- parsing -----------------------------------------------------------------

def _none(v):
    return None if v.lower() in ("none", "") else v


def _float(v):
    return float(v)


def _opt_float(v):
    return None if _none(v) is None else float(v)


def _int(v):
    f = float(v)
    if f != int(f):
        raise ValueError(f"{v!r} is not an integer")
    return int(f)


def _bool(v):
    low = v.lower()
    if low in ("1", "yes", "true", "on"):
        return True
    if low in ("0", "no", "false", "off"):
        return False
    raise ValueError(f"{v!r} is not a boolean")


def _str(v):
    return v


PROBLEM_KEYS = {
    "localization": {"I": _int, "N_T": _int, "snr_db": _opt_float, "seed": _int, "tau": _float,
                     "p": _int},
    "cartography": {"I": _int, "N_s": _int, "N_b": _int, "N_f": _int, "lam": _float,
                    "snr_db": _opt_float, "seed": _int, "tau": _float, "p_max": _float,
                    "area": _float},
    "flow_control": {"n_sources": _int, "n_links": _int, "seed": _int, "tau": _float},
    "sparse_ml": {"I": _int, "dim": _int, "rows": _int, "sparsity": _int, "lam": _float,
                  "noise": _float, "seed": _int},
}
GRAPH_KEYS = {"generator": _str, "radius": _float, "p": _float, "directed": _bool, "B": _int,
              "horizon": _int, "floor": _float, "seed": _int, "file": _str,
              "use_positions": _bool}
GENERATORS = ("ring", "path", "complete", "erdos_renyi", "geometric", "file")
ALGORITHM_KEYS = {"kind": _str, "step_rule": _str, "alpha0": _float, "beta": _float,
                  "mu": _float, "tau": _float, "surrogate": _str, "eps_scale": _float}
RUN_KEYS = {"iterations": _int, "repetitions": _int, "seed": _int, "cadence": _int,
            "threshold": _float, "tol": _opt_float, "output": _str, "track": _bool}
EXPERIMENT_KEYS = {"name": _str, "description": _str}


def _key_lines(text):
    """``(section, key) -> line number`` for diagnostics."""
    lines, section = {}, None
    for no, line in enumerate(text.splitlines(), start=1):
        m = re.match(r"\s*\[([^\]]+)\]", line)
        if m:
            section = m.group(1).strip()
            lines[(section, None)] = no
            continue
        m = re.match(r"\s*([^#;=:\s][^=:]*?)\s*[=:]", line)
        if m and section is not None:
            lines[(section, m.group(1).strip().lower())] = no
    return lines


@dataclass
class AlgorithmSpec:
    label: str
    kind: str
    step: StepSizeRule
    tau: float = None
    surrogate: str = None
    eps_scale: float = 1.0


@dataclass
class ExperimentConfig:
    name: str
    path: str
    app: str
    problem: dict
    graph: dict
    algorithms: list
    iterations: int = 1000
    repetitions: int = 20
    seed: int = 0
    cadence: int = 1
    threshold: float = 1e-2
    tol: float = None
    output: str = None
    track: bool = False

    def build_problem(self, rep=0):
        params = dict(self.problem)
        params["seed"] = params.get("seed", 0) + rep
        builder = BUILDERS[self.app]
        built = builder(**params)
        return built[0] if isinstance(built, tuple) else built

    def build_schedule(self, problem, rep=0):
        g = self.graph
        n = problem.n_agents
        seed = g.get("seed", 0) + rep
        floor = g.get("floor", DEFAULT_FLOOR)
        kind = g.get("generator", "ring")
        if kind == "file":
            with open(self._resolve(g["file"])) as fh:
                schedule = load_schedule(fh)
            if schedule.n_agents != n:
                raise ConfigError([f"{self.path}: graph file has {schedule.n_agents} agents, "
                                   f"problem has {n}"])
            return schedule
        if kind == "ring":
            base = ring_graph(n, directed=g.get("directed", False))
        elif kind == "path":
            base = path_graph(n)
        elif kind == "complete":
            base = complete_graph(n)
        elif kind == "erdos_renyi":
            base = erdos_renyi_graph(n, g.get("p", 0.3), seed=seed)
        else:
            positions = None
            if g.get("use_positions", False) and hasattr(problem, "instance"):
                positions = problem.instance.positions
            base = geometric_graph(n, g.get("radius", 0.4), seed=seed, positions=positions)
        B = g.get("B", 1)
        if B == 1:
            return constant_schedule(base, floor=floor)
        return generate_b_connected_schedule(base, B, g.get("horizon", 10 * B), seed=seed,
                                             floor=floor)

    def _resolve(self, p):
        p = Path(p)
        return p if p.is_absolute() else Path(self.path).parent / p

    def run_config(self, algo, rep=0, problem=None):
        tau = algo.tau
        if tau is None:
            tau = getattr(problem, "default_tau", 1.0)
        return RunConfig(algorithm=algo.kind, iterations=self.iterations, step=algo.step,
                         tau=tau, surrogate=algo.surrogate, eps_scale=algo.eps_scale,
                         seed=self.seed + rep, cadence=self.cadence, tol=self.tol,
                         track=self.track)


def _convert(section, table, items, lines, diags):
    out = {}
    for key, raw in items:
        canon = {k.lower(): k for k in table}.get(key)
        where = f"line {lines.get((section, key), '?')}"
        if canon is None:
            diags.append(f"{where}: unknown key '{key}' in [{section}] "
                         f"(allowed: {', '.join(sorted(table))})")
            continue
        try:
            out[canon] = table[canon](raw.strip())
        except ValueError as exc:
            diags.append(f"{where}: bad value for '{canon}' in [{section}]: {exc}")
    return out


def resolve_config_path(name):
    """A filesystem path, or the name of a bundled config."""
    p = Path(name)
    if p.exists():
        return p
    bundled = resources.files("nextsca") / "configs" / (p.stem + ".ini")
    if bundled.is_file():
        return Path(str(bundled))
    return p


def parse_config(path):
    """Parse and check a config; raises :class:`ConfigError` with all problems."""
    path = resolve_config_path(path)
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError([f"{path}: cannot read config: {exc}"]) from exc
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str.lower
    try:
        parser.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError([f"{path}: {exc}"]) from exc
    lines = _key_lines(text)
    diags = []

    known = {"experiment", "problem", "graph", "run"}
    algo_sections = [s for s in parser.sections() if s.startswith("algorithm.")]
    for s in parser.sections():
        if s not in known and s not in algo_sections:
            diags.append(f"line {lines.get((s, None), '?')}: unknown section [{s}]")

    exp = _convert("experiment", EXPERIMENT_KEYS,
                   parser.items("experiment") if parser.has_section("experiment") else [],
                   lines, diags)

    app = None
    problem = {}
    if not parser.has_section("problem"):
        diags.append("missing section [problem]")
    else:
        items = parser.items("problem")
        app = dict(items).get("app")
        if app not in PROBLEM_KEYS:
            diags.append(f"line {lines.get(('problem', 'app'), '?')}: problem app must be one of "
                         f"{', '.join(PROBLEM_KEYS)}, got {app!r}")
        else:
            problem = _convert("problem", PROBLEM_KEYS[app], [kv for kv in items if kv[0] != "app"],
                               lines, diags)

    graph = _convert("graph", GRAPH_KEYS,
                     parser.items("graph") if parser.has_section("graph") else [], lines, diags)
    gen = graph.get("generator", "ring")
    if gen not in GENERATORS:
        diags.append(f"line {lines.get(('graph', 'generator'), '?')}: generator must be one of "
                     f"{', '.join(GENERATORS)}, got {gen!r}")
    if gen == "file" and "file" not in graph:
        diags.append("[graph] generator = file needs a 'file' key")
    if graph.get("B", 1) < 1:
        diags.append(f"line {lines.get(('graph', 'b'), '?')}: B must be at least 1")

    run = _convert("run", RUN_KEYS, parser.items("run") if parser.has_section("run") else [],
                   lines, diags)
    for key in ("iterations", "cadence", "repetitions"):
        if key in run and run[key] < (0 if key == "iterations" else 1):
            diags.append(f"line {lines.get(('run', key), '?')}: {key} is out of range")

    algorithms = []
    if not algo_sections:
        diags.append("no [algorithm.<label>] section: the algorithm list is empty")
    for sec in algo_sections:
        label = sec.split(".", 1)[1]
        vals = _convert(sec, ALGORITHM_KEYS, parser.items(sec), lines, diags)
        kind = vals.get("kind", label)
        where = f"line {lines.get((sec, 'kind'), lines.get((sec, None), '?'))}"
        if kind not in ALGORITHMS:
            diags.append(f"{where}: unknown algorithm '{kind}' in [{sec}] "
                         f"(choose from {', '.join(ALGORITHMS)})")
            continue
        defaults = (dict(alpha0=0.05, mu=0.05) if kind == "dgradient" else dict(alpha0=0.1, mu=0.01))
        rule_kind = vals.get("step_rule", "rule2")
        step_args = dict(kind=rule_kind, alpha0=vals.get("alpha0", defaults["alpha0"]),
                         beta=vals.get("beta", 1.0), mu=vals.get("mu", defaults["mu"]))
        problems = step_rule_problems(**step_args)
        for msg in problems:
            diags.append(f"line {lines.get((sec, None), '?')}: [{sec}] {msg}")
        if problems:
            continue
        if "tau" in vals and not vals["tau"] > 0:
            diags.append(f"line {lines.get((sec, 'tau'), '?')}: tau must be positive")
        sur = vals.get("surrogate")
        if sur is not None and kind == "dgradient":
            diags.append(f"line {lines.get((sec, 'surrogate'), '?')}: dgradient takes no surrogate")
        algorithms.append(AlgorithmSpec(label, kind, StepSizeRule(**step_args), vals.get("tau"),
                                        sur, vals.get("eps_scale", 1.0)))

    if diags:
        raise ConfigError([f"{path}: {d}" for d in diags])

    cfg = ExperimentConfig(name=exp.get("name", Path(path).stem), path=str(path), app=app,
                           problem=problem, graph=graph, algorithms=algorithms, **run)
    _semantic_checks(cfg)
    return cfg


def _semantic_checks(cfg):
    """Checks that need the problem: surrogates exist, the graph fits."""
    diags = []
    try:
        problem = cfg.build_problem(0)
    except (ValueError, TypeError) as exc:
        raise ConfigError([f"{cfg.path}: [problem] {exc}"]) from exc
    for algo in cfg.algorithms:
        if algo.kind == "dgradient":
            continue
        try:
            rc = cfg.run_config(algo, 0, problem)
        except ValueError as exc:
            diags.append(f"[algorithm.{algo.label}] {exc}")
            continue
        name = rc.surrogate_name(problem)
        if name not in problem.surrogates and name not in SURROGATE_KINDS:
            diags.append(f"[algorithm.{algo.label}] surrogate '{name}' is not available for "
                         f"{cfg.app} (offers {', '.join(sorted(problem.surrogates))})")
    try:
        schedule = cfg.build_schedule(problem, 0)
        if not schedule.is_b_connected:
            diags.append("[graph] schedule is not B-strongly connected")
    except (GraphError, ValueError, OSError) as exc:
        diags.append(f"[graph] {exc}")
    if diags:
        raise ConfigError([f"{cfg.path}: {d}" for d in diags])


# -- running -----------------------------------------------------------------

def _run_rep(cfg, rep):
    """All algorithms on repetition ``rep``; returns CSV texts and summary rows."""
    import io

    problem = cfg.build_problem(rep)
    schedule = cfg.build_schedule(problem, rep)
    outputs, summary = [], []
    manifest = None
    if hasattr(problem, "instance") and hasattr(problem.instance, "manifest"):
        buf = io.StringIO()
        problem.instance.manifest(buf)
        manifest = buf.getvalue()
    for algo in cfg.algorithms:
        rc = cfg.run_config(algo, rep, problem)
        try:
            est = rc.estimator(problem).fit(problem, schedule)
        except NumericalAbort as exc:
            return None, None, None, (algo.label, rc.seed, exc)
        except FloatingPointError as exc:
            return None, None, None, (algo.label, rc.seed, NumericalAbort(str(exc), -1))
        trace = est.trace_
        buf = io.StringIO()
        trace.to_csv(buf)
        outputs.append((f"{algo.label}_rep{rep:03d}.csv", buf.getvalue()))
        hit = trace.first_reaching(cfg.threshold)
        f = trace.final
        summary.append((algo.label, rep, rc.seed, f.n, f.comm, _fmt(f.J), _fmt(f.D), _fmt(f.NMSE),
                        _fmt(f.U), _fmt(cfg.threshold), "NA" if hit is None else str(hit.comm)))
    return outputs, summary, manifest, None


def _fmt(v):
    return "NA" if v is None or (isinstance(v, float) and math.isnan(v)) else f"{v:.17g}"


def run_experiment(config, out=None, reps=None, threads=1, iterations=None, stream=None):
    """Run a config; returns the process exit code."""
    stream = sys.stdout if stream is None else stream
    try:
        cfg = parse_config(config)
    except ConfigError as exc:
        print("\n".join(exc.diagnostics), file=sys.stderr)
        return EXIT_CONFIG
    if reps is not None:
        cfg.repetitions = reps
    if iterations is not None:
        cfg.iterations = iterations
    out_dir = Path(out or cfg.output or os.environ.get(OUT_ENV) or DEFAULT_OUT) / cfg.name
    out_dir.mkdir(parents=True, exist_ok=True)

    reps_range = range(cfg.repetitions)
    if threads > 1 and cfg.repetitions > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(_run_rep, [cfg] * cfg.repetitions, reps_range))
    else:
        results = [_run_rep(cfg, r) for r in reps_range]

    rows = []
    for rep, (outputs, summary, manifest, failure) in zip(reps_range, results):
        if failure is not None:
            label, seed, exc = failure
            print(f"numerical abort: algorithm {label}, seed {seed}, iteration {exc.iteration}: {exc}",
                  file=sys.stderr)
            return EXIT_NUMERIC
        for name, text in outputs:
            (out_dir / name).write_text(text)
        if manifest is not None:
            (out_dir / f"instance_rep{rep:03d}.txt").write_text(manifest)
        rows.extend(summary)
    with open(out_dir / "summary.csv", "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(SUMMARY_HEADER)
        writer.writerows(rows)
    print(f"wrote {len(rows)} traces and summary.csv to {out_dir}", file=stream)
    return 0


def validate_config(config):
    """List of diagnostics; empty when the config is valid."""
    try:
        parse_config(config)
    except ConfigError as exc:
        return exc.diagnostics
    return []


def graph_dump(config, rep=0, stream=None):
    stream = sys.stdout if stream is None else stream
    try:
        cfg = parse_config(config)
    except ConfigError as exc:
        print("\n".join(exc.diagnostics), file=sys.stderr)
        return EXIT_CONFIG
    problem = cfg.build_problem(rep)
    dump_schedule(cfg.build_schedule(problem, rep), stream)
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(prog="nextsca", description="NEXT experiment runner.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.add_argument("--out", help=f"output directory (default: ${OUT_ENV} or ./{DEFAULT_OUT})")
    p_run.add_argument("--reps", type=int, help="override the number of repetitions")
    p_run.add_argument("--threads", type=int, default=1, help="parallel repetitions")
    p_run.add_argument("--iterations", type=int, help="override the iteration budget")

    p_val = sub.add_parser("validate", help="check a config without running it")
    p_val.add_argument("config")

    p_dump = sub.add_parser("graph-dump", help="print the graph schedule of a config")
    p_dump.add_argument("config")
    p_dump.add_argument("--rep", type=int, default=0)

    args = parser.parse_args(argv)
    if args.command == "run":
        return run_experiment(args.config, args.out, args.reps, max(args.threads, 1), args.iterations)
    if args.command == "validate":
        diags = validate_config(args.config)
        for d in diags:
            print(d, file=sys.stderr)
        if not diags:
            print(f"{args.config}: ok")
        return EXIT_CONFIG if diags else 0
    return graph_dump(args.config, args.rep)


if __name__ == "__main__":
    sys.exit(main())
