"""Derived metrics and report assembly for optimized designs."""

from dataclasses import dataclass, field

from .perf_model import invocation_latency


@dataclass
class Report:
    model_name: str
    device_name: str
    latency_cycles: int
    latency_ms: float
    workload_gmacs: float
    gops_per_s: float
    gops_per_s_per_dsp: float
    op_per_dsp_per_cycle: float
    utilization: dict = field(default_factory=dict)
    per_layer: list = field(default_factory=list)

    def to_dict(self):
        return {
            "model": self.model_name,
            "device": self.device_name,
            "latency_cycles": self.latency_cycles,
            "latency_ms": self.latency_ms,
            "workload_gmacs": self.workload_gmacs,
            "gops_per_s": self.gops_per_s,
            "gops_per_s_per_dsp": self.gops_per_s_per_dsp,
            "op_per_dsp_per_cycle": self.op_per_dsp_per_cycle,
            "utilization_percent": self.utilization,
            "per_layer": self.per_layer,
        }


def derive_metrics(workload_gmacs: float, latency_ms: float, dsp_total: int,
                   clock_hz: int) -> dict:
    """Throughput metrics from workload and latency; pure arithmetic."""
    latency_s = latency_ms / 1e3
    gops = workload_gmacs / latency_s
    gops_per_dsp = gops / dsp_total
    clock_ghz = clock_hz / 1e9
    return {
        "gops_per_s": gops,
        "gops_per_s_per_dsp": gops_per_dsp,
        "op_per_dsp_per_cycle": gops_per_dsp / clock_ghz,
    }


def utilization_percent(resources, dev) -> dict:
    budgets = dev.budgets
    return {
        name: 100.0 * getattr(resources, name) / getattr(budgets, name)
        for name in ("dsp", "bram", "lut", "ff")
    }


def per_layer_latency(schedule, dev) -> list:
    """Aggregate invocation latencies and bound tags per layer."""
    rows = {}
    for entry in schedule.entries:
        brk = invocation_latency(
            entry.config, dev.bw_in_words_per_cycle, dev.bw_out_words_per_cycle
        )
        row = rows.setdefault(
            entry.layer_id,
            {"layer": entry.layer_id, "node": entry.node_id, "invocations": 0,
             "cycles": 0, "bounds": set()},
        )
        row["invocations"] += 1
        row["cycles"] += brk.total_cycles
        row["bounds"].add(brk.bound)
    out = []
    for row in rows.values():
        row["bounds"] = sorted(row["bounds"])
        row["ms"] = row["cycles"] * 1e3 / dev.clock_hz
        out.append(row)
    return out


def build_report(model, dev, schedule, resources, latency_cycles: int) -> Report:
    workload_gmacs = model.workload_macs() / 1e9
    latency_ms = latency_cycles * 1e3 / dev.clock_hz
    metrics = derive_metrics(workload_gmacs, latency_ms, dev.dsp_total, dev.clock_hz)
    return Report(
        model_name=model.name,
        device_name=dev.name,
        latency_cycles=latency_cycles,
        latency_ms=latency_ms,
        workload_gmacs=workload_gmacs,
        gops_per_s=metrics["gops_per_s"],
        gops_per_s_per_dsp=metrics["gops_per_s_per_dsp"],
        op_per_dsp_per_cycle=metrics["op_per_dsp_per_cycle"],
        utilization=utilization_percent(resources, dev),
        per_layer=per_layer_latency(schedule, dev),
    )
