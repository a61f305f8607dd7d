"""Simulated-annealing design space exploration over hardware graphs.

A candidate state bundles a hardware graph with its schedule, latency and
resource estimate. The annealer perturbs states with the reshaping, folding
and combine/separate transformations, subject to the device constraint set.
Chains are deterministic per seed.
"""

import math
import random
from dataclasses import dataclass, field, replace

from .device import DeviceProfile
from .hardware_graph import (
    HardwareGraph,
    combine_nodes,
    fuse_activations,
    initial_mapping,
    legal_fold,
    separate_node,
)
from .model_ir import ModelGraph
from .perf_model import invocation_latency, schedule_latency
from .resource_model import default_regression_models, graph_resources
from .scheduler import (
    MODE_PADDED,
    MODE_RUNTIME,
    InfeasibleScheduleError,
    Schedule,
    build_schedule,
)


class OptimizerError(RuntimeError):
    pass


@dataclass(frozen=True)
class AnnealingParams:
    tau_start: float = 10.0
    tau_min: float = 1e-6
    cooling: float = 0.99
    seed: int = 0
    iterations_per_temperature: int = 10
    separate_layers: int = 2  # layers detached per separate move
    combine_nodes: int = 2  # nodes merged per combine move
    warm_start_samples: int = 32
    enable_combine_separate: bool = True
    enable_fusion: bool = True
    enable_runtime_reconfig: bool = True

    def __post_init__(self):
        if not (self.tau_start > self.tau_min > 0):
            raise ValueError("need tau_start > tau_min > 0")
        if not (0 < self.cooling < 1):
            raise ValueError("cooling rate must be in (0, 1)")


@dataclass
class CandidateState:
    graph: HardwareGraph
    schedule: Schedule
    latency_cycles: int
    resources: object
    feasible: bool
    violations: list = field(default_factory=list)


@dataclass
class TraceRow:
    iteration: int
    tau: float
    current_cycles: int
    best_cycles: int
    feasible: bool


def check_constraints(state: CandidateState, dev: DeviceProfile, min_bw_progress=0) -> list:
    """Violation list for the four feasibility checks (empty means feasible)."""
    violations = []
    res = state.resources
    budgets = dev.budgets
    for name in ("dsp", "bram", "lut", "ff"):
        used = getattr(res, name)
        avail = getattr(budgets, name)
        if used > avail:
            violations.append(f"{name} over budget: {used} > {avail}")
    for node_id, cap in state.graph.nodes.items():
        if cap.kind in ("Conv3D", "FullyConnected"):
            if cap.shape_in_max.c % cap.coarse_in:
                violations.append(
                    f"node {node_id}: coarse_in {cap.coarse_in} does not divide "
                    f"channels {cap.shape_in_max.c}"
                )
            if cap.filters_max % cap.coarse_out:
                violations.append(
                    f"node {node_id}: coarse_out {cap.coarse_out} does not divide "
                    f"filters {cap.filters_max}"
                )
        elif cap.shape_in_max.c % cap.coarse_in:
            violations.append(
                f"node {node_id}: coarse fold {cap.coarse_in} does not divide "
                f"channels {cap.shape_in_max.c}"
            )
    # identical configurations repeat across interior tiles; check each once
    unique = {
        (entry.node_id, entry.layer_id, entry.config)
        for entry in state.schedule.entries
    }
    for node_id, layer_id, cfg in sorted(unique, key=lambda t: (t[0], t[1])):
        cap = state.graph.nodes[node_id]
        s, m = cfg.shape_in, cap.shape_in_max
        if any(getattr(s, a) > getattr(m, a) for a in "dhwc"):
            violations.append(
                f"layer {layer_id} on {node_id}: shape {s.to_list()} "
                f"exceeds node max {m.to_list()}"
            )
        if cfg.coarse_in > cap.coarse_in or cfg.coarse_out > cap.coarse_out or cfg.fine > cap.fine:
            violations.append(f"layer {layer_id} on {node_id}: folds exceed node folds")
        brk = invocation_latency(cfg, dev.bw_in_words_per_cycle, dev.bw_out_words_per_cycle)
        if brk.bw_in <= min_bw_progress and cfg.shape_in.numel > 0:
            violations.append(f"layer {layer_id} on {node_id}: inbound bandwidth starved")
    return violations


def evaluate(model: ModelGraph, graph: HardwareGraph, dev: DeviceProfile, mode: str,
             lut_model=None, ff_model=None) -> CandidateState:
    """Schedule, measure and constraint-check one hardware graph."""
    if lut_model is None or ff_model is None:
        lut_model, ff_model = default_regression_models()
    resources = graph_resources(graph, dev, lut_model, ff_model)
    try:
        schedule = build_schedule(model, graph, mode)
    except InfeasibleScheduleError as exc:
        return CandidateState(
            graph=graph,
            schedule=Schedule(),
            latency_cycles=0,
            resources=resources,
            feasible=False,
            violations=[str(exc)],
        )
    latency = schedule_latency(schedule, dev)
    state = CandidateState(
        graph=graph,
        schedule=schedule,
        latency_cycles=latency,
        resources=resources,
        feasible=True,
    )
    state.violations = check_constraints(state, dev)
    state.feasible = not state.violations
    return state


# ---------------------------------------------------------------------------
# Transformations


def _divisors(n: int) -> list:
    divs = []
    for i in range(1, int(math.isqrt(n)) + 1):
        if n % i == 0:
            divs.append(i)
            if i != n // i:
                divs.append(n // i)
    return sorted(divs)


def _node_layers(graph, model, node_id):
    return [model.layers[lid] for lid in graph.mapping[node_id]]


def _reshape(graph, model, node_id, rng):
    cap = graph.nodes[node_id]
    layers = _node_layers(graph, model, node_id)
    if cap.kind == "FullyConnected":
        features = sorted({l.fc_features for l in layers})
        choices = sorted({d for c in features for d in _divisors(c)})
        new_c = rng.choice(choices)
        new_shape = replace(cap.shape_in_max, c=new_c)
    else:
        shapes = [l.primary_in for l in layers]
        kd, kh, kw = cap.kernel_max
        d_max = max(s.d for s in shapes)
        w_max = max(s.w for s in shapes)
        h_max = max(s.h for s in shapes)
        new_d = rng.randint(min(kd, d_max), d_max)
        new_w = rng.randint(min(kw, w_max), w_max)
        c_choices = sorted({d for s in shapes for d in _divisors(s.c)})
        new_c = rng.choice(c_choices)
        new_shape = type(cap.shape_in_max)(new_d, h_max, new_w, new_c)
    c_in = legal_fold(cap.coarse_in, new_shape.c)
    new_cap = replace(
        cap,
        shape_in_max=new_shape,
        coarse_in=c_in,
        coarse_out=(
            cap.coarse_out if cap.kind in ("Conv3D", "FullyConnected") else c_in
        ),
    )
    nodes = dict(graph.nodes)
    nodes[node_id] = new_cap
    return HardwareGraph(nodes=nodes, mapping=dict(graph.mapping), fused=dict(graph.fused))


def _coarse_fold(graph, model, node_id, rng):
    cap = graph.nodes[node_id]
    if cap.kind in ("Conv3D", "FullyConnected"):
        new_cap = cap.with_folds(
            coarse_in=rng.choice(_divisors(cap.shape_in_max.c)),
            coarse_out=rng.choice(_divisors(cap.filters_max)),
        )
    else:
        c = rng.choice(_divisors(cap.shape_in_max.c))
        new_cap = cap.with_folds(coarse_in=c, coarse_out=c)
    nodes = dict(graph.nodes)
    nodes[node_id] = new_cap
    return HardwareGraph(nodes=nodes, mapping=dict(graph.mapping), fused=dict(graph.fused))


def _fine_fold(graph, model, node_id, rng):
    cap = graph.nodes[node_id]
    kvol = cap.kernel_max[0] * cap.kernel_max[1] * cap.kernel_max[2]
    new_cap = cap.with_folds(fine=rng.choice(_divisors(kvol)))
    nodes = dict(graph.nodes)
    nodes[node_id] = new_cap
    return HardwareGraph(nodes=nodes, mapping=dict(graph.mapping), fused=dict(graph.fused))


def _combine(graph, model, rng, n_c):
    by_kind = {}
    for nid, cap in graph.nodes.items():
        by_kind.setdefault(cap.kind, []).append(nid)
    candidates = [ids for ids in by_kind.values() if len(ids) >= 2]
    if not candidates:
        return None
    ids = rng.choice(sorted(candidates))
    take = min(n_c, len(ids))
    chosen = rng.sample(sorted(ids), take)
    return combine_nodes(graph, chosen, model)


def _separate(graph, model, rng, l_e):
    candidates = sorted(nid for nid, lids in graph.mapping.items() if len(lids) >= 2)
    if not candidates:
        return None
    nid = rng.choice(candidates)
    lids = sorted(graph.mapping[nid])
    take = min(l_e, len(lids) - 1)
    chosen = rng.sample(lids, take)
    return separate_node(graph, nid, chosen, model)


def random_transformation(model: ModelGraph, graph: HardwareGraph, rng: random.Random,
                          params: AnnealingParams) -> HardwareGraph:
    """Apply one uniformly chosen enabled transform to one eligible node."""
    moves = ["reshape", "coarse"]
    if any(c.kind == "Conv3D" for c in graph.nodes.values()):
        moves.append("fine")
    if params.enable_combine_separate:
        moves.extend(["combine", "separate"])
    rng.shuffle(moves)
    for move in moves:
        if move == "combine":
            result = _combine(graph, model, rng, params.combine_nodes)
        elif move == "separate":
            result = _separate(graph, model, rng, params.separate_layers)
        else:
            if move == "fine":
                eligible = sorted(
                    nid for nid, c in graph.nodes.items() if c.kind == "Conv3D"
                )
            else:
                eligible = sorted(graph.nodes)
            node_id = rng.choice(eligible)
            fn = {"reshape": _reshape, "coarse": _coarse_fold, "fine": _fine_fold}[move]
            result = fn(graph, model, node_id, rng)
        if result is not None:
            return result
    return graph


def _sample_folds(graph, rng):
    """Random fold assignment across all nodes (warm-start sampling)."""
    nodes = {}
    for nid, cap in graph.nodes.items():
        if cap.kind in ("Conv3D", "FullyConnected"):
            kvol = cap.kernel_max[0] * cap.kernel_max[1] * cap.kernel_max[2]
            nodes[nid] = cap.with_folds(
                coarse_in=rng.choice(_divisors(cap.shape_in_max.c)),
                coarse_out=rng.choice(_divisors(cap.filters_max)),
                fine=rng.choice(_divisors(kvol)) if cap.kind == "Conv3D" else 1,
            )
        else:
            c = rng.choice(_divisors(cap.shape_in_max.c))
            nodes[nid] = cap.with_folds(coarse_in=c, coarse_out=c)
    return HardwareGraph(nodes=nodes, mapping=dict(graph.mapping), fused=dict(graph.fused))


def _sample_capabilities(graph, model, rng):
    """Random tile shapes and folds for every node (warm-start sampling).

    The full elementwise-max shapes of the initial mapping are usually far
    over BRAM budget, so shapes must be sampled alongside folds.
    """
    for nid in sorted(graph.nodes):
        graph = _reshape(graph, model, nid, rng)
    return _sample_folds(graph, rng)


def warm_start(model: ModelGraph, dev: DeviceProfile, params: AnnealingParams,
               rng: random.Random, lut_model=None, ff_model=None):
    """Initial per-kind mapping with the best feasible of R random fold samplings."""
    mode = MODE_RUNTIME if params.enable_runtime_reconfig else MODE_PADDED
    base = initial_mapping(model, runtime_configurable=params.enable_runtime_reconfig)
    if params.enable_fusion:
        base = fuse_activations(base, model)
    best = None
    last = None
    candidates = [base] + [
        _sample_capabilities(base, model, rng) for _ in range(params.warm_start_samples)
    ]
    for graph in candidates:
        state = evaluate(model, graph, dev, mode, lut_model, ff_model)
        last = state
        if state.feasible and (best is None or state.latency_cycles < best.latency_cycles):
            best = state
    if best is None:
        raise OptimizerError(
            "no feasible warm-start state found; last violations: "
            + "; ".join(last.violations if last else [])
        )
    return best, mode


def _fold_neighbours(cap, dsp_headroom):
    """Higher-parallelism fold assignments for `cap`.

    For Conv/FC every fold combination with a larger parallelism product is a
    candidate (single-axis steps are multiplicative and often overshoot the
    DSP budget where a repacking like (c_in/2, c_out/4, 27·f) would fit);
    combinations whose DSP increase exceeds `dsp_headroom` are pruned before
    evaluation. Other kinds step the single coarse fold up one divisor.
    """
    from .resource_model import node_dsp

    if cap.kind in ("Conv3D", "FullyConnected"):
        current = cap.coarse_in * cap.coarse_out * cap.fine
        kvol = cap.kernel_max[0] * cap.kernel_max[1] * cap.kernel_max[2]
        fines = _divisors(kvol) if cap.kind == "Conv3D" else [1]
        out = []
        for c_in in _divisors(cap.shape_in_max.c):
            for c_out in _divisors(cap.filters_max):
                for fine in fines:
                    product = c_in * c_out * fine
                    if product <= current or product - node_dsp(cap) > dsp_headroom:
                        continue
                    out.append(cap.with_folds(coarse_in=c_in, coarse_out=c_out, fine=fine))
        # try the most parallel repackings first
        out.sort(key=lambda c: -(c.coarse_in * c.coarse_out * c.fine))
        return out
    bigger = [d for d in _divisors(cap.shape_in_max.c) if d > cap.coarse_in]
    if not bigger:
        return []
    return [cap.with_folds(coarse_in=min(bigger), coarse_out=min(bigger))]


def fold_climb(model: ModelGraph, dev: DeviceProfile, state: CandidateState, mode: str,
               lut_model=None, ff_model=None) -> CandidateState:
    """Greedy post-search pass: repack folds while feasible and improving.

    SA's random divisor proposals leave parallelism on the table near the
    resource cap; this systematic neighbourhood descent closes the gap.
    """
    best = state
    improved = True
    while improved:
        improved = False
        for nid in sorted(best.graph.nodes):
            headroom = dev.dsp_total - best.resources.dsp
            for cap in _fold_neighbours(best.graph.nodes[nid], headroom):
                nodes = dict(best.graph.nodes)
                nodes[nid] = cap
                graph = HardwareGraph(
                    nodes=nodes, mapping=dict(best.graph.mapping), fused=dict(best.graph.fused)
                )
                cand = evaluate(model, graph, dev, mode, lut_model, ff_model)
                if cand.feasible and cand.latency_cycles < best.latency_cycles:
                    best = cand
                    improved = True
                    break
    return best


def anneal(model: ModelGraph, dev: DeviceProfile, params: AnnealingParams):
    """Run one SA chain; returns (best feasible CandidateState, trace rows).

    Acceptance of worse feasible states uses the Metropolis rule on the
    latency delta measured in milliseconds, so the default temperature
    schedule is meaningful across devices.
    """
    rng = random.Random(params.seed)
    lut_model, ff_model = default_regression_models()
    current, mode = warm_start(model, dev, params, rng, lut_model, ff_model)
    best = current
    trace = []
    tau = params.tau_start
    iteration = 0
    ms = 1e3 / dev.clock_hz
    while tau > params.tau_min:
        for _ in range(params.iterations_per_temperature):
            new_graph = random_transformation(model, current.graph, rng, params)
            state = evaluate(model, new_graph, dev, mode, lut_model, ff_model)
            if state.feasible:
                delta_ms = (state.latency_cycles - current.latency_cycles) * ms
                if delta_ms <= 0 or rng.random() < math.exp(-delta_ms / tau):
                    current = state
                if state.latency_cycles < best.latency_cycles:
                    best = state
            trace.append(
                TraceRow(
                    iteration=iteration,
                    tau=tau,
                    current_cycles=current.latency_cycles,
                    best_cycles=best.latency_cycles,
                    feasible=state.feasible,
                )
            )
            iteration += 1
        tau *= params.cooling
    polished = fold_climb(model, dev, best, mode, lut_model, ff_model)
    if polished.latency_cycles < best.latency_cycles:
        best = polished
        trace.append(
            TraceRow(
                iteration=iteration,
                tau=tau,
                current_cycles=best.latency_cycles,
                best_cycles=best.latency_cycles,
                feasible=True,
            )
        )
    return best, trace


@dataclass
class ParetoPoint:
    dsp: int
    bram: int
    latency_cycles: int
    latency_ms: float


def pareto_filter(points) -> list:
    """Non-dominated subset under (dsp, latency) minimisation."""
    kept = []
    for p in points:
        if any(
            (q.dsp <= p.dsp and q.latency_cycles <= p.latency_cycles)
            and (q.dsp < p.dsp or q.latency_cycles < p.latency_cycles)
            for q in points
        ):
            continue
        kept.append(p)
    kept.sort(key=lambda p: p.dsp)
    return kept


def pareto_sweep(model: ModelGraph, dev: DeviceProfile, params: AnnealingParams,
                 budgets) -> list:
    """Anneal once per ascending DSP budget; keep the non-dominated points.

    Each budget's chain is seeded deterministically from the base seed, and
    the best design from the previous (smaller) budget carries forward, so
    latency never increases with budget.
    """
    budgets = list(budgets)
    if budgets != sorted(budgets):
        raise ValueError("budgets must be ascending")
    mode = MODE_RUNTIME if params.enable_runtime_reconfig else MODE_PADDED
    points = []
    carry = None
    for i, cap in enumerate(budgets):
        capped = dev.with_dsp_cap(cap)
        run_params = replace(params, seed=params.seed + i)
        try:
            best, _ = anneal(model, capped, run_params)
        except OptimizerError:
            best = None
        if carry is not None:
            carried = evaluate(model, carry.graph, capped, mode)
            if carried.feasible and (
                best is None or carried.latency_cycles < best.latency_cycles
            ):
                best = carried
        if best is None:
            continue
        carry = best
        points.append(
            ParetoPoint(
                dsp=best.resources.dsp,
                bram=best.resources.bram,
                latency_cycles=best.latency_cycles,
                latency_ms=best.latency_cycles * 1e3 / dev.clock_hz,
            )
        )
    return pareto_filter(points)
