"""Command-line front end: ``qstack {compile,map,simulate,qutrit-bench,pulse-opt}``.

Every subcommand exits 0 on success and 1 with a one-line diagnostic on
stderr otherwise. Output files are written atomically, and only after all
of them have been computed, so a failed run never leaves partial output.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import tempfile
import time
from pathlib import Path

from .circuit import Circuit, build_gdg, emit_qasm, parse_qasm
from .device import DeviceModel, load_calibration
from .errors import QStackError, TooLarge
from .mapper import ObjectiveWeights, coherence_check, exact_map, heuristic_map, routing_error
from .pulse import GrapeConfig, HamiltonianSpec, aggregate_and_optimize, minimal_duration
from .qutrit import loads as load_qutrit, scaling_table
from .scheduler import aggregate_diagonal_blocks, aggregates, cls_schedule
from .simulator import NoiseSpec, circuit_unitary, simulate_noisy

SCHEMA = 1
VERIFY_AUTO_WIRES = 4


def _atomic_write(outputs: dict[Path, str]) -> None:
    """Write every file via a temp file and rename."""
    for path, text in outputs.items():
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(text)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise


def _dump(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _read_qasm(path: str) -> Circuit:
    return parse_qasm(Path(path).read_text(encoding="utf-8"))


def _mode(args, c: Circuit, dev: DeviceModel):
    w = ObjectiveWeights(args.omega)
    if args.mode == "exact":
        return exact_map(c, dev, w)
    if args.mode == "heuristic":
        return heuristic_map(c, dev, w, seed=args.seed)
    try:
        return exact_map(c, dev, w)
    except TooLarge:
        return heuristic_map(c, dev, w, seed=args.seed)


def _map_section(m, rc, coh) -> dict:
    return {"mapping": list(m.assign), "final_mapping": list(rc.final.assign),
            "swap_count": rc.swap_count, "log_reliability": rc.log_reliability,
            "coherence": coh.to_json()}


# ---------------------------------------------------------------------------
# subcommands

def cmd_compile(args) -> int:
    timings: dict[str, float] = {}
    clock = time.perf_counter()

    def lap(stage):
        nonlocal clock
        now = time.perf_counter()
        timings[stage] = now - clock
        clock = now

    c = _read_qasm(args.qasm)
    dev = load_calibration(args.device).model
    lap("parse")
    m, rc = _mode(args, c, dev)
    lap("map")
    agg = aggregate_diagonal_blocks(rc.circuit, max_wires=args.max_block_wires)
    lap("aggregate")
    sched = cls_schedule(agg, build_gdg(agg), dev)
    coh = coherence_check(sched, None, dev)
    lap("schedule")

    report = {"schema": SCHEMA, "input": {"qasm": str(args.qasm), "n_wires": c.n_wires, "n_gates": len(c)},
              **_map_section(m, rc, coh),
              "aggregated_blocks": len(aggregates(agg)), "makespan_ns": sched.makespan}
    outputs = {}
    out = Path(args.out_dir)
    outputs[out / "routed.qasm"] = emit_qasm(rc.circuit)
    outputs[out / "schedule.csv"] = sched.to_csv()

    verify = args.verify if args.verify is not None else c.n_wires < VERIFY_AUTO_WIRES
    if verify:
        err = routing_error(c, rc)
        report["verify"] = {"unitary_error": err, "pass": err < 1e-8}
        lap("verify")

    if not args.no_pulse:
        hw = HamiltonianSpec.from_json(args.hamiltonian) if args.hamiltonian else HamiltonianSpec()
        cfg = GrapeConfig(max_iters=args.max_iters, fidelity_target=args.target_fidelity)
        comp = aggregate_and_optimize(agg, hw, cfg, seed=args.seed)
        psched = cls_schedule(agg, build_gdg(agg), comp.duration_table({"measure": dev.durations_ns["measure"]}),
                              exclusive_wires=True)
        report["pulse"] = {"makespan_ns": psched.makespan,
                           "durations_ns": {str(k): v for k, v in sorted(comp.durations.items())},
                           "fidelities": {str(k): v for k, v in sorted(comp.fidelities.items())}}
        outputs[out / "pulse_schedule.csv"] = psched.to_csv()
        for gid, pulse in sorted(comp.pulses.items()):
            if pulse is not None:
                outputs[out / "pulses" / f"gate_{gid}.csv"] = pulse.to_csv()
        lap("pulse")

    if args.timings:
        report["timings_s"] = timings
    outputs[out / "report.json"] = _dump(report)
    _atomic_write(outputs)
    if report.get("verify", {}).get("pass") is False:
        print("error: routed circuit is not equivalent to the input", file=sys.stderr)
        return 1
    return 0


def cmd_map(args) -> int:
    c = _read_qasm(args.qasm)
    dev = load_calibration(args.device).model
    m, rc = _mode(args, c, dev)
    sched = cls_schedule(rc.circuit, build_gdg(rc.circuit), dev)
    report = {"schema": SCHEMA, **_map_section(m, rc, coherence_check(sched, None, dev))}
    outputs = {Path(args.report): _dump(report)}
    if args.out:
        outputs[Path(args.out)] = emit_qasm(rc.circuit)
    _atomic_write(outputs)
    return 0


def _load_circuit(path: str):
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("qutrits"):
        return load_qutrit(text)
    return parse_qasm(text)


def cmd_simulate(args) -> int:
    c = _load_circuit(args.circuit)
    noise = NoiseSpec.from_json(Path(args.noise).read_text()) if args.noise else NoiseSpec.default()
    initial = None
    if args.initial:
        initial = tuple(int(ch) for ch in args.initial)
        if len(initial) != c.n_wires:
            raise ValueError(f"--initial has {len(initial)} digits for {c.n_wires} wires")
    res = simulate_noisy(c, noise, trajectories=args.trajectories, seed=args.seed, initial=initial)
    _atomic_write({Path(args.out): _dump({"schema": SCHEMA, **res.to_json()})})
    return 0


def cmd_qutrit_bench(args) -> int:
    if args.max_controls < 2:
        raise ValueError("--max-controls must be at least 2")
    rows = ["n_controls,depth,two_qudit,single_qudit"]
    for r in scaling_table(range(2, args.max_controls + 1)):
        rows.append(f"{r.n_controls},{r.depth},{r.two_qudit_count},{r.single_qudit_count}")
    _atomic_write({Path(args.out): "\n".join(rows) + "\n"})
    return 0


def cmd_pulse_opt(args) -> int:
    c = _read_qasm(args.block)
    hw = HamiltonianSpec.from_json(args.hamiltonian) if args.hamiltonian else HamiltonianSpec()
    if c.n_wires > hw.n_qubits:
        raise ValueError(f"block has {c.n_wires} wires, Hamiltonian models {hw.n_qubits}")
    u = circuit_unitary(c)
    cfg = GrapeConfig(max_iters=args.max_iters, fidelity_target=args.target_fidelity)
    res = minimal_duration(u, hw, cfg, seed=args.seed)
    n_ctrl = 2 * c.n_wires
    pulse_csv = res.pulse.to_csv() if res.pulse is not None else "control_index,step,amplitude\n"
    outputs = {Path(args.out): pulse_csv}
    if args.report:
        outputs[Path(args.report)] = _dump({"schema": SCHEMA, "duration_ns": res.duration_ns,
                                            "fidelity": res.fidelity, "n_controls": n_ctrl})
    _atomic_write(outputs)
    print(f"duration_ns={res.duration_ns:g} fidelity={res.fidelity:.6f}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _mapping_flags(p):
    p.add_argument("--qasm", required=True)
    p.add_argument("--device", required=True, help="calibration JSON")
    p.add_argument("--omega", type=float, default=0.5, help="readout weight in [0, 1]")
    p.add_argument("--mode", choices=["exact", "heuristic", "auto"], default="auto")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="qstack", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("compile", help="map, aggregate, schedule and (optionally) pulse-optimise a circuit")
    _mapping_flags(p)
    p.add_argument("--out-dir", default="qstack_out")
    p.add_argument("--no-pulse", action="store_true", help="stop after scheduling")
    p.add_argument("--verify", dest="verify", action="store_true", default=None,
                   help="check routed unitary against the input (default: on below 4 wires)")
    p.add_argument("--no-verify", dest="verify", action="store_false")
    p.add_argument("--hamiltonian", help="hw.json for pulse optimisation")
    p.add_argument("--target-fidelity", type=float, default=0.999)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--max-block-wires", type=int, default=2)
    p.add_argument("--timings", action="store_true", help="add wall-clock stage timings to the report")
    p.set_defaults(func=cmd_compile)

    p = sub.add_parser("map", help="noise-adaptive mapping and routing")
    _mapping_flags(p)
    p.add_argument("--out", help="routed QASM")
    p.add_argument("--report", required=True)
    p.set_defaults(func=cmd_map)

    p = sub.add_parser("simulate", help="Monte Carlo noisy simulation")
    p.add_argument("--circuit", required=True, help="QASM or qutrit-format file")
    p.add_argument("--noise", help="noise JSON (default: depolarizing 1e-3 / 1e-2)")
    p.add_argument("--trajectories", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--initial", help="basis digits of the input state, e.g. 0112")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("qutrit-bench", help="Generalized Toffoli cost table")
    p.add_argument("--max-controls", type=int, required=True)
    p.add_argument("--out", default="costs.csv")
    p.set_defaults(func=cmd_qutrit_bench)

    p = sub.add_parser("pulse-opt", help="minimal-duration GRAPE pulse for one block")
    p.add_argument("--block", required=True)
    p.add_argument("--hamiltonian")
    p.add_argument("--target-fidelity", type=float, default=0.999)
    p.add_argument("--max-iters", type=int, default=500)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--report")
    p.set_defaults(func=cmd_pulse_opt)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except QStackError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    except (OSError, ValueError, KeyError, TypeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return 1


if __name__ == "__main__":
    sys.exit(main())
