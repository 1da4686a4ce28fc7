"""Command-line entry points: optimize, validate, sweep.

Configuration is one JSON document (workload + hardware + optional sweep
lists); reports are deterministic given the config, with wall-clock timings
kept under a separate "timing" key.  Exit codes: 0 success, 1 usage or
config error (and validation mismatches), 2 infeasible.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import os
import sys
import time
from pathlib import Path

from . import oracle, search
from .core import (
    ACCEL_SMALL,
    AcceleratorConfig,
    EnergyCoefficients,
    Workload,
)
from .encoding import enumerate_tilings
from .enumeration import enumerate_templates

CSV_COLUMNS = [
    "mapping_id", "loop_order", "lvl_A", "lvl_B", "lvl_C", "lvl_D", "lvl_E",
    "stationary_op1", "stationary_op2", "recompute",
    "i_D", "k_D", "l_D", "j_D", "i_G", "k_G", "l_G", "j_G",
    "buffer_bytes", "dram_elems", "macs", "energy", "latency_cycles",
    "utilization",
]

MAX_DIM_DEFAULT = 4


class ConfigError(Exception):
    pass


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def load_config(path: str) -> dict:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror or exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(
            f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc
    _require(isinstance(doc, dict), f"{path}: top level must be an object")
    return doc


def parse_workload(doc: dict, path: str) -> Workload:
    wl = doc.get("workload")
    _require(isinstance(wl, dict), f"{path}: missing 'workload' object")
    for key in ("I", "K", "L", "J"):
        _require(key in wl, f"{path}: workload.{key} is required")
        v = wl[key]
        _require(isinstance(v, int) and v >= 1,
                 f"{path}: workload.{key} must be a positive integer")
    heads = wl.get("heads", 1)
    _require(isinstance(heads, int) and heads >= 1,
             f"{path}: workload.heads must be a positive integer")
    c_softmax = wl.get("c_softmax", 10.0)
    _require(isinstance(c_softmax, (int, float)) and c_softmax >= 0,
             f"{path}: workload.c_softmax must be non-negative")
    extra = set(wl) - {"I", "K", "L", "J", "heads", "c_softmax"}
    _require(not extra, f"{path}: unknown workload keys {sorted(extra)}")
    return Workload(wl["I"], wl["K"], wl["L"], wl["J"], heads,
                    float(c_softmax))


def parse_hardware(doc: dict, path: str) -> AcceleratorConfig:
    hw = doc.get("hardware", {})
    _require(isinstance(hw, dict), f"{path}: 'hardware' must be an object")
    base = ACCEL_SMALL
    energy_doc = hw.get("energy", {})
    _require(isinstance(energy_doc, dict),
             f"{path}: hardware.energy must be an object")
    e_extra = set(energy_doc) - {"e_dram", "e_buf", "e_mac", "e_sfu"}
    _require(not e_extra,
             f"{path}: unknown hardware.energy keys {sorted(e_extra)}")
    energy = EnergyCoefficients(
        e_dram=float(energy_doc.get("e_dram", base.energy.e_dram)),
        e_buf=float(energy_doc.get("e_buf", base.energy.e_buf)),
        e_mac=float(energy_doc.get("e_mac", base.energy.e_mac)),
        e_sfu=float(energy_doc.get("e_sfu", base.energy.e_sfu)),
    )
    known = {"pe_rows", "pe_cols", "num_arrays", "buffer_bytes",
             "dram_bw_bytes_per_s", "freq_hz", "bytes_per_element", "energy"}
    extra = set(hw) - known
    _require(not extra, f"{path}: unknown hardware keys {sorted(extra)}")
    for key in ("pe_rows", "pe_cols", "num_arrays", "buffer_bytes",
                "bytes_per_element"):
        if key in hw:
            _require(isinstance(hw[key], int) and hw[key] >= (0 if key == "buffer_bytes" else 1),
                     f"{path}: hardware.{key} must be a positive integer")
    cfg = AcceleratorConfig(
        pe_rows=hw.get("pe_rows", base.pe_rows),
        pe_cols=hw.get("pe_cols", base.pe_cols),
        num_arrays=hw.get("num_arrays", base.num_arrays),
        buffer_bytes=hw.get("buffer_bytes", base.buffer_bytes),
        dram_bw_bytes_per_s=float(hw.get("dram_bw_bytes_per_s",
                                         base.dram_bw_bytes_per_s)),
        freq_hz=float(hw.get("freq_hz", base.freq_hz)),
        bytes_per_element=hw.get("bytes_per_element",
                                 base.bytes_per_element),
        energy=energy,
    )
    _require(cfg.dram_bw_bytes_per_s > 0 and cfg.freq_hz > 0,
             f"{path}: bandwidth and frequency must be positive")
    return cfg


def _effective_cache_dir(flag_value: str | None) -> Path | None:
    env = os.environ.get("ATTNFLOW_CACHE_DIR")
    if env:
        return Path(env)
    return Path(flag_value) if flag_value else None


def _hw_asdict(hw: AcceleratorConfig) -> dict:
    d = dataclasses.asdict(hw)
    return d


def _write_solutions_csv(path: Path, rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for row in rows:
            writer.writerow({k: row[k] for k in CSV_COLUMNS})


def cmd_optimize(args: argparse.Namespace) -> int:
    doc = load_config(args.config)
    w = parse_workload(doc, args.config)
    hw = parse_hardware(doc, args.config)
    cache_dir = _effective_cache_dir(args.cache_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prune = not args.no_prune

    report: dict = {
        "workload": dataclasses.asdict(w),
        "hardware": _hw_asdict(hw),
        "objective": args.objective,
        "pruning": prune,
    }
    t0 = time.perf_counter()
    if args.objective == "pareto":
        front = search.pareto_front(w, hw, prune=prune, cache_dir=cache_dir,
                                    threads=args.threads)
        rows = [search.solution_record(p.solution, hw) for p in front]
        report["feasible"] = bool(front)
        report["front"] = [
            {"energy": p.energy, "latency_cycles": p.latency_cycles,
             "mapping_id": p.solution.mapping_id,
             "recompute_classes": list(p.recompute_classes)}
            for p in front
        ]
        feasible = bool(front)
    else:
        result = search.optimize(w, hw, args.objective, prune=prune,
                                 cache_dir=cache_dir, threads=args.threads)
        feasible = result.feasible
        report["feasible"] = feasible
        report["min_buffer_bytes"] = result.min_buffer_bytes
        report["rows_searched"] = result.rows_searched
        report["tilings"] = result.tilings
        report["cells"] = result.cells
        rows = []
        if result.best is not None:
            rows = [search.solution_record(result.best, hw)]
            report["best"] = rows[0]
    report["timing"] = {"runtime_s": time.perf_counter() - t0}

    (out_dir / "report.json").write_text(json.dumps(report, indent=2) + "\n")
    _write_solutions_csv(out_dir / "solutions.csv", rows)
    if not feasible:
        need = report.get("min_buffer_bytes")
        print(f"infeasible: no mapping fits buffer_bytes="
              f"{hw.buffer_bytes}" +
              (f"; smallest working set needs {need} bytes"
               if need else ""),
              file=sys.stderr)
        return 2
    print(f"wrote {out_dir / 'report.json'} and {out_dir / 'solutions.csv'}")
    return 0


def cmd_validate(args: argparse.Namespace) -> int:
    doc = load_config(args.config)
    w = parse_workload(doc, args.config)
    n = args.max_dim
    if n > 12 and not args.force:
        print(f"--max-dim {n} exceeds 12; the exhaustive check would take "
              f"hours (pass --force to run anyway)", file=sys.stderr)
        return 1
    wv = Workload(min(w.I, n), min(w.K, n), min(w.L, n), min(w.J, n))
    tilings = enumerate_tilings(wv)
    groups = enumerate_templates()
    checked = 0
    mismatches: list[str] = []
    t0 = time.perf_counter()
    for g in groups:
        if g.stationary != ("WS", "WS"):
            continue  # buffer and DRAM metrics do not depend on stationarity
        for row in range(len(g.templates)):
            t = g.materialize(row)
            for b in tilings.columns:
                res = oracle.compare_with_analytical(t, b)
                checked += 1
                if not (res["bs_match"] and res["da_match"]):
                    mismatches.append(
                        f"{g.key}:{row} b={b} model bs/da="
                        f"{res['model_bs']}/{res['model_da']} oracle="
                        f"{res['oracle_bs']}/{res['oracle_da']}")
    dt = time.perf_counter() - t0
    if mismatches:
        print(f"{len(mismatches)} mismatches out of {checked} pairs "
              f"({dt:.1f}s):", file=sys.stderr)
        for line in mismatches[:20]:
            print(f"  {line}", file=sys.stderr)
        return 1
    print(f"validated {checked} (template, tiling) pairs against the tile "
          f"oracle in {dt:.1f}s: all exact")
    return 0


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        vals = [int(x) for x in text.split(",") if x.strip()]
    except ValueError as exc:
        raise ConfigError(f"{flag}: expected comma-separated integers") \
            from exc
    _require(bool(vals), f"{flag}: empty list")
    return vals


def _parse_hw_list(text: str) -> list[tuple[int, int]]:
    shapes = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        parts = item.lower().split("x")
        _require(len(parts) == 2 and all(p.isdigit() for p in parts),
                 f"--hw-list: expected ROWSxCOLS entries, got {item!r}")
        shapes.append((int(parts[0]), int(parts[1])))
    _require(bool(shapes), "--hw-list: empty list")
    return shapes


def _sweep_point(w: Workload, hw: AcceleratorConfig, objective: str,
                 prune: bool, cache_dir: Path | None, threads: int) -> dict:
    t0 = time.perf_counter()
    result = search.optimize(w, hw, objective, prune=prune,
                             cache_dir=cache_dir, threads=threads)
    ms = (time.perf_counter() - t0) * 1e3
    row = {"feasible": int(result.feasible), "runtime_ms": f"{ms:.3f}"}
    if result.best is not None:
        m = result.best.metrics
        row.update(best_energy=m.energy, best_latency_cycles=m.latency_cycles,
                   best_dram_elems=m.dram_elems)
    else:
        row.update(best_energy="", best_latency_cycles="",
                   best_dram_elems="")
    return row


def cmd_sweep(args: argparse.Namespace) -> int:
    doc = load_config(args.config)
    w = parse_workload(doc, args.config)
    hw = parse_hardware(doc, args.config)
    cache_dir = _effective_cache_dir(args.cache_dir)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    prune = not args.no_prune
    objective = args.objective
    _require(objective != "pareto",
             "sweep: --objective must be energy, latency, or edp")

    sweeps = doc.get("sweep", {})
    _require(isinstance(sweeps, dict), "config: 'sweep' must be an object")
    buffer_list = (_parse_int_list(args.buffer_list, "--buffer-list")
                   if args.buffer_list else sweeps.get("buffer_bytes"))
    seqlen_list = (_parse_int_list(args.seqlen_list, "--seqlen-list")
                   if args.seqlen_list else sweeps.get("seqlen"))
    hw_list = (_parse_hw_list(args.hw_list)
               if args.hw_list else
               [tuple(x) for x in sweeps.get("pe_shapes", [])] or None)
    if not (buffer_list or seqlen_list or hw_list):
        raise ConfigError("sweep: provide --buffer-list, --seqlen-list, "
                          "or --hw-list (or config sweep lists)")

    written = []
    if buffer_list:
        path = out_dir / "sweep_buffer.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=[
                "buffer_bytes", "feasible", "best_energy",
                "best_latency_cycles", "best_dram_elems", "runtime_ms"])
            wr.writeheader()
            for budget in buffer_list:
                hw_b = dataclasses.replace(hw, buffer_bytes=int(budget))
                row = _sweep_point(w, hw_b, objective, prune, cache_dir,
                                   args.threads)
                wr.writerow({"buffer_bytes": budget, **row})
        written.append(path)
    if seqlen_list:
        path = out_dir / "sweep_seqlen.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=[
                "seqlen", "feasible", "best_energy", "best_latency_cycles",
                "best_dram_elems", "runtime_ms"])
            wr.writeheader()
            for seq in seqlen_list:
                w_s = dataclasses.replace(w, I=int(seq), L=int(seq))
                row = _sweep_point(w_s, hw, objective, prune, cache_dir,
                                   args.threads)
                wr.writerow({"seqlen": seq, **row})
        written.append(path)
    if hw_list:
        path = out_dir / "sweep_hw.csv"
        with open(path, "w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=[
                "pe_rows", "pe_cols", "feasible", "best_energy",
                "best_latency_cycles", "best_dram_elems", "runtime_ms"])
            wr.writeheader()
            for rows_, cols_ in hw_list:
                hw_s = dataclasses.replace(hw, pe_rows=rows_, pe_cols=cols_)
                row = _sweep_point(w, hw_s, objective, prune, cache_dir,
                                   args.threads)
                wr.writerow({"pe_rows": rows_, "pe_cols": cols_, **row})
        written.append(path)
    print("wrote " + ", ".join(str(p) for p in written))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="attnflow",
        description="Energy/latency optimizer for fused attention dataflows "
                    "on spatial accelerators.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True,
                       help="JSON config with workload and hardware")
        p.add_argument("--cache-dir", default=None,
                       help="metric-matrix cache directory "
                            "(ATTNFLOW_CACHE_DIR overrides)")
        p.add_argument("--threads", type=int, default=1,
                       help="worker threads for batched evaluation")

    p_opt = sub.add_parser("optimize", help="find the best mapping")
    common(p_opt)
    p_opt.add_argument("--objective", default="energy",
                       choices=["energy", "latency", "edp", "pareto"])
    p_opt.add_argument("--no-prune", action="store_true",
                       help="search every enumerated row (baseline mode)")
    p_opt.add_argument("--out-dir", default=".",
                       help="directory for report.json and solutions.csv")
    p_opt.set_defaults(func=cmd_optimize)

    p_val = sub.add_parser(
        "validate",
        help="exhaustively check the closed-form model against the tile "
             "oracle on a clipped workload")
    common(p_val)
    p_val.add_argument("--max-dim", type=int, default=MAX_DIM_DEFAULT,
                       help="clip every workload dimension to this size")
    p_val.add_argument("--force", action="store_true",
                       help="allow --max-dim greater than 12")
    p_val.set_defaults(func=cmd_validate)

    p_sw = sub.add_parser("sweep", help="optimize across a parameter list")
    common(p_sw)
    p_sw.add_argument("--objective", default="energy",
                      choices=["energy", "latency", "edp", "pareto"])
    p_sw.add_argument("--no-prune", action="store_true")
    p_sw.add_argument("--out-dir", default=".")
    p_sw.add_argument("--buffer-list", default=None,
                      help="comma-separated buffer sizes in bytes")
    p_sw.add_argument("--seqlen-list", default=None,
                      help="comma-separated sequence lengths (sets I and L)")
    p_sw.add_argument("--hw-list", default=None,
                      help="comma-separated PE shapes like 32x32,128x128")
    p_sw.set_defaults(func=cmd_sweep)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 1 if exc.code not in (0, None) else 0
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
