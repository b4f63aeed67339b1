"""
Placement on a cloud/edge/gateway topology

Exact depth-first branch and bound over component -> node assignments with
capacity and budget pruning. Routes are latency-shortest paths; the bandwidth
term of a flow uses the narrowest link on its route.
"""

from __future__ import annotations

import math
from typing import NamedTuple, Optional, Union

import networkx as nx

from src.core.config import settings
from src.core.errors import (
    CapacityExceeded,
    Disconnected,
    PlacementInfeasible,
    SchemaError,
    SearchSpaceTooLarge,
)
from src.core.logging import get_plain_logger
from src.models.schemas import (
    AppModel,
    MaxPerfUnderBudget,
    MinCostUnderLatency,
    PlacementPlan,
    Topology,
)

logger = get_plain_logger(__name__)


class PlacementScore(NamedTuple):
    latency: float
    throughput: float
    cost: float
    network_latency: float
    compute_latency: float


class RoutingTable:
    """All-pairs latency-shortest routes with their bottleneck bandwidth"""

    def __init__(self, topology: Topology):
        graph = nx.Graph()
        graph.add_nodes_from(n.id for n in topology.nodes)
        for link in topology.links:
            if graph.has_edge(link.a, link.b) and graph[link.a][link.b]["latency"] <= link.latency:
                continue
            graph.add_edge(link.a, link.b, latency=link.latency, bandwidth=link.bandwidth)
        self._routes: dict[str, tuple[dict[str, float], dict[str, list[str]]]] = dict(
            nx.all_pairs_dijkstra(graph, weight="latency")
        )
        self._graph = graph

    def route(self, a: str, b: str) -> tuple[float, float]:
        """(path latency, bottleneck bandwidth); same node is (0, inf)"""
        if a == b:
            return 0.0, math.inf
        distances, paths = self._routes.get(a, ({}, {}))
        if b not in paths:
            raise Disconnected(a, b)
        path = paths[b]
        bandwidth = min(self._graph[u][v]["bandwidth"] for u, v in zip(path, path[1:]))
        return distances[b], bandwidth


def _endpoint(name: str, assign: dict[str, str], topology: Topology, where: str) -> str:
    if name in assign:
        return assign[name]
    if any(n.id == name for n in topology.nodes):
        return name
    raise SchemaError(where, f"unknown flow endpoint '{name}'")


def evaluate_placement(
    topology: Topology,
    app: AppModel,
    assign: dict[str, str],
    routes: Optional[RoutingTable] = None,
) -> PlacementScore:
    routes = routes or RoutingTable(topology)
    usage: dict[str, float] = {}
    for comp in app.components:
        node_id = assign.get(comp.id)
        if node_id is None:
            raise PlacementInfeasible(f"(component '{comp.id}' unassigned)")
        pinned = app.pinned.get(comp.id)
        if pinned is not None and pinned != node_id:
            raise PlacementInfeasible(f"(component '{comp.id}' is pinned to '{pinned}')")
        usage[node_id] = usage.get(node_id, 0.0) + comp.demand
    for node_id, demand in usage.items():
        node = topology.node(node_id)
        if demand > node.available:
            raise CapacityExceeded(node_id, demand, node.available)

    stages: list[float] = []
    network = 0.0
    for i, flow in enumerate(app.flows):
        a = _endpoint(flow.src, assign, topology, f"flows.{i}.src")
        b = _endpoint(flow.dst, assign, topology, f"flows.{i}.dst")
        latency, bandwidth = routes.route(a, b)
        t = latency + (flow.bytes_per_request / bandwidth if a != b else 0.0)
        network += t
        stages.append(t)
    compute = 0.0
    cost = 0.0
    for comp in app.components:
        node = topology.node(assign[comp.id])
        t = comp.work * app.op_cost / (comp.demand * node.speed)
        compute += t
        stages.append(t)
        cost += comp.demand * node.unit_price

    bottleneck = max(stages, default=0.0)
    throughput = 1.0 / bottleneck if bottleneck > 0 else math.inf
    return PlacementScore(network + compute, throughput, cost, network, compute)


Mode = Union[MaxPerfUnderBudget, MinCostUnderLatency]


def to_plan(assign: dict[str, str], score: PlacementScore, mode: Mode) -> PlacementPlan:
    return PlacementPlan(
        assign=dict(assign),
        latency=score.latency,
        throughput=score.throughput,
        cost=score.cost,
        objective_value=score.latency if isinstance(mode, MaxPerfUnderBudget) else score.cost,
        network_latency=score.network_latency,
        compute_latency=score.compute_latency,
    )


def placement_key(assignment: tuple[str, ...], score: PlacementScore, mode: Mode) -> tuple:
    """Total order on feasible assignments: objective, then cost, then node ids"""
    if isinstance(mode, MaxPerfUnderBudget):
        return (score.latency, score.cost, assignment)
    return (score.cost, assignment)


def feasible(score: PlacementScore, mode: Mode) -> bool:
    if isinstance(mode, MaxPerfUnderBudget):
        return score.cost <= mode.budget
    return score.latency <= mode.bound


def solve_placement(
    topology: Topology,
    app: AppModel,
    mode: Mode,
    cap: Optional[int] = None,
) -> PlacementPlan:
    cap = settings.placement_search_cap if cap is None else cap
    node_ids = sorted(n.id for n in topology.nodes)
    components = app.components
    domains = [[app.pinned[c.id]] if c.id in app.pinned else node_ids for c in components]
    size = math.prod(len(d) for d in domains)
    if size > cap:
        raise SearchSpaceTooLarge(size, cap)

    routes = RoutingTable(topology)
    available = {n.id: n.available for n in topology.nodes}
    prices = {n.id: n.unit_price for n in topology.nodes}
    budget = mode.budget if isinstance(mode, MaxPerfUnderBudget) else math.inf

    best: Optional[tuple[tuple, dict[str, str], PlacementScore]] = None
    usage: dict[str, float] = {n: 0.0 for n in node_ids}
    chosen: list[str] = []

    def search(i: int, cost: float) -> None:
        nonlocal best
        if i == len(components):
            assign = {c.id: n for c, n in zip(components, chosen)}
            try:
                score = evaluate_placement(topology, app, assign, routes)
            except Disconnected:
                return
            if not feasible(score, mode):
                return
            key = placement_key(tuple(chosen), score, mode)
            if best is None or key < best[0]:
                best = (key, assign, score)
            return
        comp = components[i]
        for node_id in domains[i]:
            if usage[node_id] + comp.demand > available[node_id]:
                continue
            step_cost = cost + comp.demand * prices[node_id]
            if step_cost > budget:
                continue
            if best is not None and isinstance(mode, MinCostUnderLatency) and step_cost > best[2].cost:
                continue
            usage[node_id] += comp.demand
            chosen.append(node_id)
            search(i + 1, step_cost)
            chosen.pop()
            usage[node_id] -= comp.demand

    search(0, 0.0)

    if best is None:
        logger.warning(f"No feasible placement for {len(components)} components ({mode.mode})")
        raise PlacementInfeasible(f"({mode.mode})")
    plan = to_plan(best[1], best[2], mode)
    logger.info(f"Placement {plan.assign}: latency {plan.latency:.4g}, cost {plan.cost:g}")
    return plan
