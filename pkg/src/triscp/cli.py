"""Command-line entry point: solve / powerflow / generate / verify.

Artifacts are deterministic: float fields go through Python's shortest
round-trip repr and no timing information is written, so identical inputs
produce byte-identical files.  Exit codes: 0 solved and verified, 2 finished
without convergence (or verification failed), 1 usage/data error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .conic import SolverError
from .convex import LinearisationPoint
from .ingest import (
    FeederFormatError,
    RandomizationSpec,
    generate_feeder,
    parse_feeder,
    randomize_loads,
    to_feeder,
    to_network,
    write_feeder,
)
from .netmodel import Network, NetworkError, build_index
from .pfcore import PowerFlowError, solve_power_flow
from .scp import IterationRecord, ScpError, Solution, TrustRegionConfig, solve_opf
from .verify import (
    ReferenceInfeasible,
    ReferenceTooLarge,
    VerificationReport,
    reference_optimum_tiny,
    verify_solution,
)

SOLUTION_FORMAT = "triscp-solution-v1"


def _iteration_dict(rec: IterationRecord) -> dict:
    # solve time deliberately omitted: the log must be byte-stable across runs
    return {
        "k": rec.k,
        "objective": float(rec.objective),
        "dv": float(rec.dv),
        "delta2": float(rec.delta2),
        "max_bilinear_residual": float(rec.max_bilinear_residual),
        "status": rec.status,
    }


def _solution_dict(network: Network, solution: Solution) -> dict:
    index = build_index(network)
    nodes = []
    for node, (bus, phase) in enumerate(index.pairs):
        nodes.append(
            {
                "bus": bus,
                "phase": phase,
                "v_re": float(solution.V[node].real),
                "v_im": float(solution.V[node].imag),
                "i_re": float(solution.I[node].real),
                "i_im": float(solution.I[node].imag),
                "m_rr": float(solution.m[0, node]),
                "m_ri": float(solution.m[1, node]),
                "m_ir": float(solution.m[2, node]),
                "m_ii": float(solution.m[3, node]),
            }
        )
    generators = [
        {"bus": g.bus, "phase": g.phase, "p_pu": float(solution.pg[i]), "q_pu": float(solution.qg[i])}
        for i, g in enumerate(network.generators)
    ]
    return {
        "format": SOLUTION_FORMAT,
        "converged": bool(solution.converged),
        "objective": float(solution.objective),
        "iterations": int(solution.iterations),
        "delta2_final": float(solution.delta2_final),
        "dv_final": float(solution.dv_final),
        "max_bilinear_residual": float(solution.max_bilinear_residual),
        "nodes": nodes,
        "generators": generators,
        "lin_point": {
            "v_re": [float(v) for v in solution.lin_point.V.real],
            "v_im": [float(v) for v in solution.lin_point.V.imag],
            "i_re": [float(v) for v in solution.lin_point.I.real],
            "i_im": [float(v) for v in solution.lin_point.I.imag],
        },
    }


def solution_from_dict(doc: dict, network: Network) -> Solution:
    """Rebuild a Solution from its JSON form (inverse of the solve artifact)."""
    if doc.get("format") != SOLUTION_FORMAT:
        raise ValueError(f"unrecognized solution format {doc.get('format')!r}")
    index = build_index(network)
    n = index.n_ph
    V = np.zeros(n, dtype=complex)
    I = np.zeros(n, dtype=complex)
    m = np.zeros((4, n))
    seen = 0
    for rec in doc["nodes"]:
        node = index.node(rec["bus"], rec["phase"])
        V[node] = rec["v_re"] + 1j * rec["v_im"]
        I[node] = rec["i_re"] + 1j * rec["i_im"]
        m[:, node] = (rec["m_rr"], rec["m_ri"], rec["m_ir"], rec["m_ii"])
        seen += 1
    if seen != n:
        raise ValueError(f"solution lists {seen} nodes, network has {n}")
    pg = np.zeros(len(network.generators))
    qg = np.zeros(len(network.generators))
    by_key = {(g.bus, g.phase): i for i, g in enumerate(network.generators)}
    for rec in doc["generators"]:
        key = (rec["bus"], rec["phase"])
        if key not in by_key:
            raise ValueError(f"solution generator at {key} not present in the network")
        pg[by_key[key]] = rec["p_pu"]
        qg[by_key[key]] = rec["q_pu"]
    lp = doc["lin_point"]
    lin = LinearisationPoint(
        V=np.asarray(lp["v_re"], dtype=float) + 1j * np.asarray(lp["v_im"], dtype=float),
        I=np.asarray(lp["i_re"], dtype=float) + 1j * np.asarray(lp["i_im"], dtype=float),
    )
    return Solution(
        V=V,
        I=I,
        pg=pg,
        qg=qg,
        m=m,
        objective=float(doc["objective"]),
        converged=bool(doc["converged"]),
        iterations=int(doc["iterations"]),
        delta2_final=float(doc["delta2_final"]),
        dv_final=float(doc["dv_final"]),
        max_bilinear_residual=float(doc["max_bilinear_residual"]),
        lin_point=lin,
        history=(),
    )


def _report_verdict(solution_converged: bool, report: VerificationReport) -> bool:
    return (
        solution_converged
        and report.oracle_converged
        and report.triangle_slack_min >= -1e-9
        and report.surrogate_gap_max <= report.delta_final + 1e-9
    )


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _reference_or_none(network: Network) -> float | None:
    try:
        objective, _ = reference_optimum_tiny(network)
        return objective
    except (ReferenceTooLarge, ReferenceInfeasible):
        return None


def cmd_solve(args: argparse.Namespace) -> int:
    network = to_network(parse_feeder(args.input))
    config = TrustRegionConfig(
        delta2_init=args.delta2_init,
        delta2_min=args.delta2_min,
        delta2_max=args.delta2_max,
        alpha=args.alpha,
        beta=args.beta,
        tau=args.tau,
    )
    out_dir = Path(args.out_dir)
    records: list[IterationRecord] = []

    def on_iteration(rec: IterationRecord) -> None:
        records.append(rec)
        if args.log == "jsonl":
            print(json.dumps(_iteration_dict(rec), sort_keys=True, separators=(",", ":")))

    try:
        solution = solve_opf(
            network,
            config,
            dv_tol=args.dv_tol,
            delta2_tol=args.delta2_tol,
            max_iter=args.max_iter,
            backend=args.backend,
            on_iteration=on_iteration,
        )
    except ScpError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1

    report = verify_solution(network, solution, reference_objective=_reference_or_none(network))

    _write(out_dir / "solution.json", json.dumps(_solution_dict(network, solution), indent=2, sort_keys=True) + "\n")
    lines = [json.dumps(_iteration_dict(r), sort_keys=True, separators=(",", ":")) for r in records]
    _write(out_dir / "iterations.jsonl", "\n".join(lines) + ("\n" if lines else ""))
    _write(out_dir / "report.json", report.to_json() + "\n")
    csv_rows = ["iteration,objective,dv,delta2"]
    csv_rows += [f"{r.k},{float(r.objective)!r},{float(r.dv)!r},{float(r.delta2)!r}" for r in records]
    _write(out_dir / "iterations.csv", "\n".join(csv_rows) + "\n")

    gap = "n/a" if report.optimality_gap_pct is None else f"{report.optimality_gap_pct:.6f}%"
    print(
        f"converged={solution.converged} iterations={solution.iterations} "
        f"objective={solution.objective:.9e} voltage_error_max={report.voltage_error_max:.3e} gap={gap}"
    )
    if not solution.converged:
        print(f"did not converge within {args.max_iter} iterations", file=sys.stderr)
        return 2
    if not _report_verdict(solution.converged, report):
        print("verification failed; see report.json", file=sys.stderr)
        return 2
    return 0


def cmd_powerflow(args: argparse.Namespace) -> int:
    network = to_network(parse_feeder(args.input))
    out_dir = Path(args.out_dir)
    try:
        result = solve_power_flow(network)
    except PowerFlowError as exc:
        print(f"power flow failed: {exc}", file=sys.stderr)
        return 2
    index = build_index(network)
    nodes = [
        {
            "bus": bus,
            "phase": phase,
            "v_re": float(result.V[i].real),
            "v_im": float(result.V[i].imag),
            "magnitude": float(abs(result.V[i])),
        }
        for i, (bus, phase) in enumerate(index.pairs)
    ]
    doc = {
        "converged": bool(result.converged),
        "iterations": int(result.iterations),
        "residual": float(result.residual),
        "nodes": nodes,
    }
    _write(out_dir / "powerflow.json", json.dumps(doc, indent=2, sort_keys=True) + "\n")
    print(f"converged={result.converged} iterations={result.iterations} residual={result.residual:.3e}")
    return 0 if result.converged else 2


def cmd_generate(args: argparse.Namespace) -> int:
    network = generate_feeder(
        args.buses,
        phase_policy=args.phase_policy,
        tie_lines=args.ties,
        seed=args.seed,
        load_kw=args.load_kw,
        load_pf=args.load_pf,
    )
    if args.randomize:
        spec = RandomizationSpec(
            p_lo_kw=args.p_lo_kw,
            p_hi_kw=args.p_hi_kw,
            pf_lo=args.pf_lo,
            pf_hi=args.pf_hi,
            seed=args.seed,
        )
        network = randomize_loads(network, spec)
    write_feeder(to_feeder(network), args.out)
    print(args.out)
    return 0


def cmd_verify(args: argparse.Namespace) -> int:
    network = to_network(parse_feeder(args.input))
    doc = json.loads(Path(args.solution).read_text())
    solution = solution_from_dict(doc, network)
    report = verify_solution(network, solution, reference_objective=_reference_or_none(network))
    _write(Path(args.out_dir) / "report.json", report.to_json() + "\n")
    ok = _report_verdict(solution.converged, report)
    print(f"verified={ok} voltage_error_max={report.voltage_error_max:.3e} triangle_slack_min={report.triangle_slack_min:.3e}")
    return 0 if ok else 2


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--out-dir", default=".", help="directory for artifacts")
    p.add_argument("--seed", type=int, default=0, help="random seed where applicable")


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="triscp", description="Three-phase OPF by sequential convex programming.")
    sub = p.add_subparsers(dest="command", required=True)

    ps = sub.add_parser("solve", help="run the full solve on a feeder file")
    ps.add_argument("--input", required=True, help="feeder JSON file")
    _add_common(ps)
    ps.add_argument("--delta2-init", type=float, default=1e-1)
    ps.add_argument("--delta2-min", type=float, default=1e-10)
    ps.add_argument("--delta2-max", type=float, default=1.0)
    ps.add_argument("--alpha", type=float, default=0.1, help="radius contraction factor")
    ps.add_argument("--beta", type=float, default=2.0, help="radius expansion factor")
    ps.add_argument("--tau", type=float, default=2e-2, help="voltage-step threshold for contraction")
    ps.add_argument("--dv-tol", type=float, default=1e-3, help="convergence threshold on the voltage step")
    ps.add_argument("--delta2-tol", type=float, default=1e-6, help="convergence threshold on the squared radius")
    ps.add_argument("--max-iter", type=int, default=50)
    ps.add_argument("--log", choices=("jsonl", "quiet"), default="quiet", help="stream per-iteration records")
    ps.add_argument("--backend", default="reference", help="conic solver backend")
    ps.set_defaults(func=cmd_solve)

    pp = sub.add_parser("powerflow", help="run the fixed-point power-flow oracle only")
    pp.add_argument("--input", required=True)
    _add_common(pp)
    pp.set_defaults(func=cmd_powerflow)

    pg = sub.add_parser("generate", help="synthesize a feeder file")
    _add_common(pg)
    pg.add_argument("--buses", type=int, required=True)
    pg.add_argument("--ties", type=int, default=0, help="tie-lines to add (each closes a loop)")
    pg.add_argument("--phase-policy", choices=("abc", "a", "mixed"), default="abc")
    pg.add_argument("--load-kw", type=float, default=0.4)
    pg.add_argument("--load-pf", type=float, default=0.95)
    pg.add_argument("--randomize", action="store_true", help="redraw loads uniformly")
    pg.add_argument("--p-lo-kw", type=float, default=0.2)
    pg.add_argument("--p-hi-kw", type=float, default=0.8)
    pg.add_argument("--pf-lo", type=float, default=0.92)
    pg.add_argument("--pf-hi", type=float, default=0.98)
    pg.add_argument("--out", default="feeder.json")
    pg.set_defaults(func=cmd_generate)

    pv = sub.add_parser("verify", help="re-verify a solution artifact against its feeder")
    pv.add_argument("--input", required=True)
    pv.add_argument("--solution", required=True, help="solution.json produced by solve")
    _add_common(pv)
    pv.set_defaults(func=cmd_verify)
    return p


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    try:
        return args.func(args)
    except (FeederFormatError, NetworkError, PowerFlowError, ScpError, SolverError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
