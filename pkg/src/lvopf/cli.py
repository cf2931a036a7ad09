"""Command-line front end.

    lvopf validate --network FILE
    lvopf pf       --network FILE [--full-pv]
    lvopf opf      --network FILE --strategy {none,p_only,pq}
    lvopf study    --network FILE [--scenarios FILE]

Common options: ``--format {table,csv,json}``, ``--output PATH``,
``--multistart N``, ``--seed N``, ``--tol X`` and ``--plot`` (PNG figures
written next to ``--output``). A short summary always goes to stdout; the
full document goes to ``--output`` when given, otherwise to stdout.

Exit status: 0 success, 1 invalid input or formulation, 2 solver or
verification failure, 64 usage error.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .netmodel import (Network, NetworkFormatError, NetworkValidationError, Phase, as_per_unit,
                       bundled_path, load_network)
from .powerflow import PfSolution, PowerFlowError, network_injections, solve_power_flow
from .scenarios import ScenarioError, StudyResult, load_specs, run_study
from .ubopf import (OPTIMAL, TIE_BREAK_EPS, FormulationError, OpfSolution, SolverOptions, Strategy,
                    VerificationError, compute_curtailment, default_tolerance, solve_opf,
                    verify_solution)

EXIT_OK, EXIT_INPUT, EXIT_SOLVER, EXIT_USAGE = 0, 1, 2, 64
DECIMALS = 4


class ReportRefused(ValueError):
    """Raised when asked to serialize a solution that has not passed verification."""


# -- report documents --------------------------------------------------------
#
# Every report is a plain dict with ``kind``, ``summary`` (scalars),
# ``columns`` and ``rows``; csv and table renderings use only the columns.
# Numbers are rounded once, here, so every format carries the same values.

def _r(x, nd: int = DECIMALS):
    if x is None:
        return None
    x = float(x)
    if not math.isfinite(x):
        return None
    return round(x, nd) + 0.0      # + 0.0 folds -0.0


def _sci(x) -> float | None:
    return None if x is None or not math.isfinite(float(x)) else float(f"{float(x):.3e}")


STUDY_COLUMNS = ["scenario", "strategy", "status", "p_available_kw", "p_injected_kw",
                 "p_curtailed_kw", "curtailed_pct", "v_max_pu"]


def study_document(study: StudyResult) -> dict:
    rows = []
    for sc in study.scenarios:
        for out in sc.outcomes:
            rep = out.report
            row = {"scenario": sc.name, "strategy": out.strategy.value, "status": out.status,
                   "p_available_kw": None, "p_injected_kw": None, "p_curtailed_kw": None,
                   "curtailed_pct": None, "v_max_pu": None}
            if rep is not None:
                row.update(p_available_kw=_r(rep.p_available_kw), p_injected_kw=_r(rep.p_injected_kw),
                           v_max_pu=_r(rep.v_max_pu))
                if out.strategy is not Strategy.NoControl:
                    row.update(p_curtailed_kw=_r(rep.p_curtailed_kw), curtailed_pct=_r(rep.curtailed_pct))
            rows.append(row)
    summary = {"scenarios": len(study.scenarios),
               "failed_rows": sum(1 for sc in study.scenarios for o in sc.outcomes if not o.ok),
               "tie_break_eps": TIE_BREAK_EPS}
    return {"kind": "study", "summary": summary, "columns": STUDY_COLUMNS, "rows": rows,
            "provenance": study.provenance}


OPF_COLUMNS = ["node", "phase", "s_available_kva", "p_kw", "q_kvar"]


def opf_document(network: Network, solution: OpfSolution) -> dict:
    if not solution.verified:
        raise ReportRefused("refusing to report an unverified solution "
                            f"(status {solution.status}); run verify_solution first")
    rep = compute_curtailment(network, solution)
    net = as_per_unit(network)
    kw = net.s_base / 1000.0
    conv = [{"node": g.node, "phase": ph.name, "p_kw": _r(solution.conv_p[k, int(ph)] * kw),
             "q_kvar": _r(solution.conv_q[k, int(ph)] * kw)}
            for k, g in enumerate(net.conventional_generators) for ph in Phase]
    summary = {
        "strategy": solution.strategy.value,
        "status": solution.status,
        "objective": _r(solution.objective),
        "v_max_pu": _r(solution.v_max),
        "p_available_kw": _r(rep.p_available_kw),
        "p_injected_kw": _r(rep.p_injected_kw),
        "p_curtailed_kw": _r(rep.p_curtailed_kw),
        "curtailed_pct": _r(rep.curtailed_pct),
        "kkt_stationarity": _sci(solution.kkt_stationarity),
        "max_constraint_violation": _sci(solution.max_constraint_violation),
        "verification_max_violation": _sci(solution.verification.max_violation),
        "tie_break_eps": TIE_BREAK_EPS,
        "multistart": solution.starts,
        "best_start": solution.best_start,
    }
    rows = [{"node": u.node, "phase": u.phase.name, "s_available_kva": _r(u.s_available_kva),
             "p_kw": _r(u.p_kw), "q_kvar": _r(u.q_kvar)} for u in rep.inverters]
    return {"kind": "opf", "summary": summary, "columns": OPF_COLUMNS, "rows": rows,
            "conventional": conv}


PF_COLUMNS = ["node", "v_a_pu", "v_b_pu", "v_c_pu"]


def pf_document(pf: PfSolution) -> dict:
    mags = pf.magnitudes
    node, phase = pf.argmax()
    rows = [{"node": nid, "v_a_pu": _r(m[0]), "v_b_pu": _r(m[1]), "v_c_pu": _r(m[2])}
            for nid, m in zip(pf.node_ids, mags)]
    summary = {"converged": pf.converged, "iterations": pf.iterations,
               "max_mismatch": _sci(pf.max_mismatch), "v_max_pu": _r(pf.v_max),
               "v_max_node": node, "v_max_phase": phase.name}
    return {"kind": "pf", "summary": summary, "columns": PF_COLUMNS, "rows": rows}


def report_document(result, network: Network | None = None) -> dict:
    if isinstance(result, StudyResult):
        return study_document(result)
    if isinstance(result, OpfSolution):
        if network is None:
            raise ValueError("an OPF report needs the network it was solved on")
        return opf_document(network, result)
    if isinstance(result, PfSolution):
        return pf_document(result)
    raise TypeError(f"cannot report {type(result).__name__}")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return f"{v:.{DECIMALS}f}"
    return str(v)


def render(doc: dict, fmt: str) -> str:
    """Serialize a report document; the json form re-renders byte-identically."""
    if fmt == "json":
        return json.dumps(doc, indent=2) + "\n"
    cols = doc["columns"]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(cols)
        for row in doc["rows"]:
            w.writerow([_cell(row.get(c)) for c in cols])
        return buf.getvalue()
    if fmt == "table":
        cells = [[_cell(row.get(c)) or "–" for c in cols] for row in doc["rows"]]
        widths = [max([len(c)] + [len(r[k]) for r in cells]) for k, c in enumerate(cols)]
        lines = [f"{k}: {v}" for k, v in doc.get("summary", {}).items()]
        if lines:
            lines.append("")
        lines.append("  ".join(c.ljust(w) for c, w in zip(cols, widths)))
        lines.append("  ".join("-" * w for w in widths))
        lines += ["  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in cells]
        return "\n".join(lines) + "\n"
    raise ValueError(f"unknown format {fmt!r}")


def emit_report(result, fmt: str = "table", network: Network | None = None) -> str:
    return render(report_document(result, network), fmt)


# -- argument handling ---------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


@dataclass(frozen=True)
class RunConfig:
    command: str
    network_path: Path
    scenario_path: Path | None
    strategy: Strategy | None
    output_path: Path | None
    output_format: str
    tolerance: float
    multistart: int
    seed: int
    full_pv: bool
    plot: bool
    workers: int

    def solver_options(self) -> SolverOptions:
        return SolverOptions(feas_tol=self.tolerance, opt_tol=self.tolerance,
                             multistart=self.multistart, seed=self.seed)


def _positive_float(text):
    v = float(text)
    if not v > 0:
        raise argparse.ArgumentTypeError("must be positive")
    return v


def _positive_int(text):
    v = int(text)
    if v < 1:
        raise argparse.ArgumentTypeError("must be at least 1")
    return v


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--network", default="ref18.json",
                        help="network file (bundled names such as ref18.json also resolve)")
    common.add_argument("--format", dest="output_format", choices=("table", "csv", "json"),
                        default="table")
    common.add_argument("--output", type=Path, help="write the full report here")
    common.add_argument("--tol", type=_positive_float, default=None,
                        help="feasibility/optimality tolerance (default $LVOPF_TOL or 1e-6)")
    common.add_argument("--multistart", type=_positive_int, default=5)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--plot", action="store_true",
                        help="also save PNG figures next to --output")
    common.add_argument("-v", "--verbose", action="count", default=0)

    ap = _Parser(prog="lvopf", description="Unbalanced LV feeder power flow and PV curtailment OPF.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)
    sub.add_parser("validate", parents=[common], help="check a network file")
    pf = sub.add_parser("pf", parents=[common], help="power flow with fixed injections")
    pf.add_argument("--full-pv", action="store_true",
                    help="inject all available PV at unity power factor (no control)")
    opf = sub.add_parser("opf", parents=[common], help="optimal PV dispatch")
    opf.add_argument("--strategy", default="pq", help="none | p_only | pq")
    st = sub.add_parser("study", parents=[common], help="scenario comparison")
    st.add_argument("--scenarios", default="scenarios.json",
                    help="scenario spec file (default: bundled baseline and S1-S5)")
    st.add_argument("--workers", type=_positive_int, default=1)
    return ap


def _resolve(name) -> Path:
    path = Path(name)
    if path.exists():
        return path
    bundled = bundled_path(path.name)
    if bundled.exists():
        return bundled
    return path


def parse_config(argv) -> RunConfig:
    ns = build_parser().parse_args(argv)
    strategy = None
    if ns.command == "opf":
        try:
            strategy = Strategy.parse(ns.strategy)
        except ValueError as exc:
            build_parser().error(str(exc))
    if ns.plot and ns.output is None:
        build_parser().error("--plot needs --output (figures are written next to it)")
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    return RunConfig(
        command=ns.command,
        network_path=_resolve(ns.network),
        scenario_path=_resolve(ns.scenarios) if ns.command == "study" else None,
        strategy=strategy,
        output_path=ns.output,
        output_format=ns.output_format,
        tolerance=ns.tol if ns.tol is not None else default_tolerance(),
        multistart=ns.multistart,
        seed=ns.seed,
        full_pv=getattr(ns, "full_pv", False),
        plot=ns.plot,
        workers=getattr(ns, "workers", 1),
    )


# -- commands ------------------------------------------------------------------

def _figure_path(cfg: RunConfig, tag: str) -> Path:
    out = cfg.output_path
    return out.with_name(f"{out.stem}_{tag}.png")


def _deliver(cfg: RunConfig, doc: dict, summary: str) -> None:
    text = render(doc, cfg.output_format)
    if cfg.output_path is None:
        sys.stdout.write(text)
    else:
        cfg.output_path.parent.mkdir(parents=True, exist_ok=True)
        cfg.output_path.write_text(text)
        print(summary)
        print(f"report written to {cfg.output_path}")


def _cmd_validate(cfg: RunConfig, net: Network) -> int:
    print(f"{cfg.network_path}: valid — {net.n_nodes} nodes, {len(net.lines)} lines, "
          f"{len(net.loads)} loads, {len(net.pv_inverters)} PV inverters "
          f"({net.total_pv() / 1000:.2f} kVA)")
    return EXIT_OK


def _cmd_pf(cfg: RunConfig, net: Network) -> int:
    pv_p = None if cfg.full_pv else np.zeros(len(net.pv_inverters))
    pf = solve_power_flow(net, network_injections(net, pv_p=pv_p))
    doc = pf_document(pf)
    node, phase = pf.argmax()
    _deliver(cfg, doc, f"power flow converged in {pf.iterations} iterations; "
                       f"max |V| {pf.v_max:.4f} pu at node {node} phase {phase.name}")
    if cfg.plot:
        from .plotting import voltage_profile
        title = "Voltage profile, full PV" if cfg.full_pv else "Voltage profile, no PV"
        p = voltage_profile(pf.node_ids, pf.magnitudes, _figure_path(cfg, "voltage"),
                            limits=(net.limits.v_min, net.limits.v_max), title=title)
        print(f"figure written to {p}")
    return EXIT_OK


def _cmd_opf(cfg: RunConfig, net: Network) -> int:
    sol = solve_opf(net, cfg.strategy, cfg.solver_options())
    if sol.status != OPTIMAL:
        print(f"solver finished with status {sol.status} ({sol.message}); "
              f"max violation {sol.max_constraint_violation:.3e} pu", file=sys.stderr)
        return EXIT_SOLVER
    sol = sol.with_verification(verify_solution(net, sol))
    if not sol.verified:
        print(str(sol.verification), file=sys.stderr)
        return EXIT_SOLVER
    doc = opf_document(net, sol)
    s = doc["summary"]
    _deliver(cfg, doc, f"{s['strategy']}: {s['status']}, injected {s['p_injected_kw']:.4f} kW, "
                       f"curtailed {s['p_curtailed_kw']:.4f} kW ({s['curtailed_pct']:.4f} %), "
                       f"max |V| {s['v_max_pu']:.4f} pu")
    if cfg.plot:
        from .plotting import inverter_dispatch, voltage_profile
        rows = doc["rows"]
        p1 = voltage_profile(sol.node_ids, sol.magnitudes, _figure_path(cfg, "voltage"),
                             limits=(net.limits.v_min, net.limits.v_max),
                             title=f"Voltage profile, {sol.strategy.value}")
        p2 = inverter_dispatch([f"{r['node']}{r['phase']}" for r in rows],
                               [r["s_available_kva"] for r in rows], [r["p_kw"] for r in rows],
                               [r["q_kvar"] for r in rows], _figure_path(cfg, "dispatch"),
                               title=f"Inverter dispatch, {sol.strategy.value}")
        print(f"figures written to {p1} and {p2}")
    return EXIT_OK


def _cmd_study(cfg: RunConfig, net: Network) -> int:
    specs = load_specs(cfg.scenario_path)
    study = run_study(net, specs, cfg.solver_options(), max_workers=cfg.workers)
    doc = study_document(study)
    failed = doc["summary"]["failed_rows"]
    _deliver(cfg, doc, f"{len(study.scenarios)} scenarios, {failed} failed rows")
    if cfg.plot and study.scenarios:
        from .plotting import curtailment_bars
        series = {s.value: [sc[s].report.curtailed_pct if sc[s].ok else float("nan")
                            for sc in study.scenarios]
                  for s in (Strategy.ActiveOnly, Strategy.ActiveReactive)}
        p1 = curtailment_bars(study.names, series, _figure_path(cfg, "curtailment"))
        vmax = {"no control": [sc.v_max_no_control for sc in study.scenarios]}
        p2 = curtailment_bars(study.names, vmax, _figure_path(cfg, "vmax"),
                              ylabel="max |V| (pu)", title="Maximum voltage without control")
        print(f"figures written to {p1} and {p2}")
    return EXIT_SOLVER if failed else EXIT_OK


COMMANDS = {"validate": _cmd_validate, "pf": _cmd_pf, "opf": _cmd_opf, "study": _cmd_study}


def main(argv=None) -> int:
    try:
        cfg = parse_config(sys.argv[1:] if argv is None else argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    except ValueError as exc:           # malformed LVOPF_TOL
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    try:
        net = load_network(cfg.network_path)
        return COMMANDS[cfg.command](cfg, net)
    except NetworkValidationError as exc:
        print(f"{cfg.network_path}: invalid", file=sys.stderr)
        for d in exc.diagnostics:
            print(f"  {d}", file=sys.stderr)
        return EXIT_INPUT
    except (NetworkFormatError, FormulationError, ScenarioError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (PowerFlowError, VerificationError, ReportRefused) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
