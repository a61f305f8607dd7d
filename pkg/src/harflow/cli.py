"""Command-line entry point: parse -> optimize -> schedule -> report.

All artifacts are JSON/CSV so runs can be diffed and pinned as fixtures.
Set HARFLOW_LOG to error/info/debug to control verbosity.
"""

import csv
import json
import logging
import os
import sys
from pathlib import Path

import click

from . import device as device_mod
from . import generators
from .model_ir import ModelError, parse_model, serialize_model, topological_order
from .optimizer import (
    AnnealingParams,
    OptimizerError,
    evaluate,
    anneal,
    pareto_sweep,
)
from .perf_model import schedule_latency
from .reporting import build_report
from .resource_model import graph_resources
from .scheduler import MODE_PADDED, MODE_RUNTIME, Schedule, ScheduleEntry, build_schedule
from .hardware_graph import HardwareGraph

log = logging.getLogger("harflow")


def _setup_logging():
    level = os.environ.get("HARFLOW_LOG", "error").lower()
    levels = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
    logging.basicConfig(level=levels.get(level, logging.ERROR), format="%(message)s")


def _load_model_text(spec: str) -> str:
    if spec in generators.BUNDLED_MODELS and not Path(spec).exists():
        return generators.bundled_model_text(spec)
    path = Path(spec)
    if not path.exists():
        raise click.ClickException(f"model file not found: {spec}")
    return path.read_text()


def _load_device(spec: str):
    path = Path(spec)
    try:
        if path.exists():
            return device_mod.load_profile(path.read_text())
        if spec in device_mod.bundled_profile_names():
            return device_mod.load_bundled_profile(spec)
    except device_mod.DeviceError as exc:
        raise click.ClickException(str(exc))
    raise click.ClickException(
        f"unknown device '{spec}' (bundled: {', '.join(device_mod.bundled_profile_names())})"
    )


def _parse_model_or_fail(text: str):
    try:
        return parse_model(text)
    except ModelError as exc:
        raise click.ClickException(str(exc))


@click.group()
def main():
    """Latency-driven DSE for streaming 3D-CNN FPGA accelerators."""
    _setup_logging()


@main.command("parse")
@click.argument("model_file")
def parse_cmd(model_file):
    """Validate a model document and print a summary."""
    model = _parse_model_or_fail(_load_model_text(model_file))
    kinds = {}
    for layer in model.layers.values():
        kinds[layer.kind] = kinds.get(layer.kind, 0) + 1
    click.echo(f"model: {model.name}")
    click.echo(f"layers: {len(model.layers)} ({', '.join(f'{k}={v}' for k, v in sorted(kinds.items()))})")
    click.echo(f"edges: {len(model.edges)}")
    click.echo(f"workload: {model.workload_macs() / 1e9:.2f} GMACs")
    click.echo(f"order: {' -> '.join(topological_order(model)[:6])} ...")


def _params_from_file(params_file, seed, fusion, runtime_reconfig, combine):
    overrides = {}
    if params_file:
        overrides = json.loads(Path(params_file).read_text())
    overrides.setdefault("seed", seed)
    overrides["enable_fusion"] = fusion
    overrides["enable_runtime_reconfig"] = runtime_reconfig
    overrides["enable_combine_separate"] = combine
    return AnnealingParams(**overrides)


def _write_trace(path, trace):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["iter", "tau", "current_cycles", "best_cycles", "feasible"])
        for row in trace:
            writer.writerow(
                [row.iteration, f"{row.tau:.9g}", row.current_cycles,
                 row.best_cycles, int(row.feasible)]
            )


@main.command("optimize")
@click.option("--model", "model_file", required=True)
@click.option("--device", "device_spec", required=True)
@click.option("--seed", default=0, type=int)
@click.option("--params", "params_file", default=None, help="JSON of AnnealingParams overrides")
@click.option("--out", "out_file", default="design.json")
@click.option("--trace", "trace_file", default=None)
@click.option("--no-fusion", is_flag=True, help="disable activation fusion")
@click.option("--no-runtime-reconfig", is_flag=True, help="padded-baseline execution")
@click.option("--no-combine", is_flag=True, help="disable combine/separate moves")
def optimize_cmd(model_file, device_spec, seed, params_file, out_file, trace_file,
                 no_fusion, no_runtime_reconfig, no_combine):
    """Minimise model latency on a device with simulated annealing."""
    model_text = _load_model_text(model_file)
    model = _parse_model_or_fail(model_text)
    dev = _load_device(device_spec)
    params = _params_from_file(
        params_file, seed, not no_fusion, not no_runtime_reconfig, not no_combine
    )
    try:
        best, trace = anneal(model, dev, params)
    except OptimizerError as exc:
        raise click.ClickException(str(exc))
    design = {
        "model": json.loads(serialize_model(model)),
        "device": dev.to_dict(),
        "mode": MODE_RUNTIME if params.enable_runtime_reconfig else MODE_PADDED,
        "graph": best.graph.to_dict(),
        "latency_cycles": best.latency_cycles,
        "latency_ms": best.latency_cycles * 1e3 / dev.clock_hz,
        "resources": best.resources.to_dict(),
    }
    Path(out_file).write_text(json.dumps(design, indent=2) + "\n")
    if trace_file:
        _write_trace(trace_file, trace)
    click.echo(
        f"best latency: {design['latency_ms']:.3f} ms "
        f"({best.latency_cycles} cycles), dsp={best.resources.dsp}"
    )


def _load_design(design_file):
    try:
        doc = json.loads(Path(design_file).read_text())
    except FileNotFoundError:
        raise click.ClickException(f"design file not found: {design_file}")
    model = _parse_model_or_fail(json.dumps(doc["model"]))
    dev = device_mod.load_profile(json.dumps(doc["device"]))
    graph = HardwareGraph.from_dict(doc["graph"])
    return doc, model, dev, graph


@main.command("schedule")
@click.option("--design", "design_file", required=True)
@click.option("--out", "out_file", default="schedule.json")
def schedule_cmd(design_file, out_file):
    """Build the tiled invocation schedule for an optimized design."""
    doc, model, dev, graph = _load_design(design_file)
    schedule = build_schedule(model, graph, doc.get("mode", MODE_RUNTIME))
    total = schedule_latency(schedule, dev)
    out = {
        "model": model.name,
        "device": dev.name,
        "total_cycles": total,
        "total_ms": total * 1e3 / dev.clock_hz,
        "entries": [e.to_dict() for e in schedule.entries],
    }
    Path(out_file).write_text(json.dumps(out, indent=2) + "\n")
    click.echo(f"schedule: {len(schedule.entries)} invocations, {out['total_ms']:.3f} ms")


@main.command("report")
@click.option("--design", "design_file", required=True)
@click.option("--schedule", "schedule_file", required=True)
@click.option("--device", "device_spec", default=None)
@click.option("--out", "out_file", default="report.json")
def report_cmd(design_file, schedule_file, device_spec, out_file):
    """Derive throughput/utilisation metrics for a design + schedule."""
    doc, model, dev, graph = _load_design(design_file)
    if device_spec:
        dev = _load_device(device_spec)
    sched_doc = json.loads(Path(schedule_file).read_text())
    schedule = Schedule([ScheduleEntry.from_dict(e) for e in sched_doc["entries"]])
    latency = schedule_latency(schedule, dev)
    resources = graph_resources(graph, dev)
    report = build_report(model, dev, schedule, resources, latency)
    Path(out_file).write_text(json.dumps(report.to_dict(), indent=2) + "\n")
    click.echo(
        f"{report.gops_per_s:.2f} GOps/s, {report.gops_per_s_per_dsp:.3f} GOps/s/DSP, "
        f"{report.op_per_dsp_per_cycle:.3f} Op/DSP/cycle"
    )


@main.command("pareto")
@click.option("--model", "model_file", required=True)
@click.option("--device", "device_spec", required=True)
@click.option("--budgets", required=True, help="comma-separated ascending DSP caps")
@click.option("--seed", default=0, type=int)
@click.option("--params", "params_file", default=None)
@click.option("--out", "out_file", default="pareto.csv")
def pareto_cmd(model_file, device_spec, budgets, seed, params_file, out_file):
    """Sweep DSP budgets and emit the non-dominated (dsp, latency) set."""
    model = _parse_model_or_fail(_load_model_text(model_file))
    dev = _load_device(device_spec)
    params = _params_from_file(params_file, seed, True, True, True)
    caps = [int(b) for b in budgets.split(",")]
    points = pareto_sweep(model, dev, params, caps)
    with open(out_file, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["dsp", "bram", "latency_ms"])
        for p in points:
            writer.writerow([p.dsp, p.bram, f"{p.latency_ms:.6f}"])
    click.echo(f"pareto points: {len(points)}")


if __name__ == "__main__":
    main()
