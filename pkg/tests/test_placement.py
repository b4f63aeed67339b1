import itertools
import json

import numpy as np
import pytest

from src.core.errors import (
    CapacityExceeded,
    Disconnected,
    PlacementInfeasible,
    SearchSpaceTooLarge,
)
from src.models.schemas import (
    AppModel,
    MaxPerfUnderBudget,
    MinCostUnderLatency,
    Topology,
)
from src.services.placement import (
    RoutingTable,
    evaluate_placement,
    feasible,
    placement_key,
    solve_placement,
)


@pytest.fixture
def topology(demo_dir):
    return Topology.model_validate(json.loads((demo_dir / "topology.json").read_text()))


@pytest.fixture
def app(demo_dir):
    return AppModel.model_validate(json.loads((demo_dir / "appmodel.json").read_text()))


def test_demo_latency_by_hand(topology, app):
    edge = evaluate_placement(topology, app, {"camera": "gw1", "analysis": "edge1"})
    # 0.02 + 1e5 / 1e6 on the wire, 200 * 0.0005 / 2 on the node
    assert edge.network_latency == pytest.approx(0.12)
    assert edge.compute_latency == pytest.approx(0.05)
    assert edge.latency == pytest.approx(0.17)
    assert edge.cost == pytest.approx(4.0)

    cloud = evaluate_placement(topology, app, {"camera": "gw1", "analysis": "cloud1"})
    # direct gw1-cloud1 link is shorter but narrower
    assert cloud.network_latency == pytest.approx(0.51)
    assert cloud.latency == pytest.approx(0.56)
    assert cloud.cost == pytest.approx(2.0)


def test_route_uses_bottleneck_bandwidth(topology):
    routes = RoutingTable(topology)
    assert routes.route("gw1", "cloud1") == pytest.approx((0.01, 2e5))
    assert routes.route("edge1", "edge1")[0] == 0.0


def test_colocated_components_have_no_network_latency(topology, app):
    free = app.model_copy(update={"pinned": {}})
    score = evaluate_placement(topology, free, {"camera": "cloud1", "analysis": "cloud1"})
    assert score.network_latency == 0.0
    assert score.latency == pytest.approx(0.05)


def test_capacity_and_pins_are_enforced(topology, app):
    with pytest.raises(CapacityExceeded) as exc:
        evaluate_placement(topology, app, {"camera": "gw1", "analysis": "gw1"})
    assert exc.value.node == "gw1"
    assert exc.value.demand == pytest.approx(2.5)

    with pytest.raises(PlacementInfeasible):
        evaluate_placement(topology, app, {"camera": "edge1", "analysis": "edge1"})
    with pytest.raises(PlacementInfeasible):
        evaluate_placement(topology, app, {"camera": "gw1"})


def test_unlinked_nodes_are_disconnected(app):
    islands = Topology.model_validate(
        {
            "nodes": [
                {"id": "gw1", "kind": "gw", "capacity": 1},
                {"id": "cloud1", "kind": "cloud", "capacity": 10},
            ]
        }
    )
    with pytest.raises(Disconnected):
        evaluate_placement(islands, app, {"camera": "gw1", "analysis": "cloud1"})
    with pytest.raises(PlacementInfeasible):
        solve_placement(islands, app, MaxPerfUnderBudget(budget=100))


@pytest.mark.parametrize(
    "budget, expected",
    [(10.0, "edge1"), (3.0, "cloud1")],
)
def test_max_perf_follows_budget(topology, app, budget, expected):
    plan = solve_placement(topology, app, MaxPerfUnderBudget(budget=budget))
    assert plan.assign == {"camera": "gw1", "analysis": expected}
    assert plan.objective_value == pytest.approx(plan.latency)


def test_max_perf_budget_too_small(topology, app):
    with pytest.raises(PlacementInfeasible):
        solve_placement(topology, app, MaxPerfUnderBudget(budget=1.0))


def test_min_cost_under_latency_bound(topology, app):
    plan = solve_placement(topology, app, MinCostUnderLatency(bound=0.5))
    assert plan.assign["analysis"] == "edge1"
    assert plan.objective_value == pytest.approx(4.0)

    relaxed = solve_placement(topology, app, MinCostUnderLatency(bound=1.0))
    assert relaxed.assign["analysis"] == "cloud1"


def test_single_node_is_forced():
    topo = Topology.model_validate({"nodes": [{"id": "only", "kind": "edge", "capacity": 2, "unit_price": 3}]})
    app = AppModel.model_validate({"components": [{"id": "svc", "demand": 1, "work": 10}], "op_cost": 1})
    plan = solve_placement(topo, app, MaxPerfUnderBudget(budget=5))
    assert plan.assign == {"svc": "only"}
    assert plan.latency == pytest.approx(10.0)


def test_search_space_cap(topology, app):
    free = app.model_copy(update={"pinned": {}})
    with pytest.raises(SearchSpaceTooLarge) as exc:
        solve_placement(topology, free, MaxPerfUnderBudget(budget=10), cap=4)
    assert exc.value.size == 9


# --- exhaustive oracle ------------------------------------------------------------

KINDS = ("cloud", "edge", "gw", "device")


def _random_instance(rng: np.random.Generator) -> tuple[Topology, AppModel]:
    n_nodes = int(rng.integers(1, 7))
    ids = [f"n{i}" for i in range(n_nodes)]
    nodes = [
        {
            "id": node_id,
            "kind": KINDS[int(rng.integers(0, len(KINDS)))],
            "capacity": float(rng.integers(1, 6)),
            "unit_price": float(rng.integers(0, 4)),
            "speed": float(rng.choice([0.5, 1.0, 2.0])),
        }
        for node_id in ids
    ]
    links = []
    for a, b in zip(ids, ids[1:]):
        # occasionally cut the chain so some instances are disconnected
        if rng.random() < 0.9:
            links.append({"a": a, "b": b, "latency": float(rng.uniform(0.001, 0.05)), "bandwidth": float(rng.uniform(1e4, 1e6))})
    for a, b in itertools.combinations(ids, 2):
        if rng.random() < 0.25:
            links.append({"a": a, "b": b, "latency": float(rng.uniform(0.001, 0.05)), "bandwidth": float(rng.uniform(1e4, 1e6))})

    n_comp = int(rng.integers(1, 4))
    comps = [
        {"id": f"c{k}", "demand": float(rng.choice([0.5, 1.0, 2.0])), "work": float(rng.uniform(0, 100))}
        for k in range(n_comp)
    ]
    flows = [
        {"src": f"c{k}", "dst": f"c{k + 1}", "bytes_per_request": float(rng.uniform(0, 1e5))}
        for k in range(n_comp - 1)
    ]
    pinned = {}
    if rng.random() < 0.3:
        pinned["c0"] = ids[int(rng.integers(0, n_nodes))]
    topo = Topology.model_validate({"nodes": nodes, "links": links})
    app = AppModel.model_validate({"components": comps, "flows": flows, "pinned": pinned, "op_cost": 0.001})
    return topo, app


def _exhaustive(topo: Topology, app: AppModel, mode):
    ids = sorted(n.id for n in topo.nodes)
    best = None
    for combo in itertools.product(ids, repeat=len(app.components)):
        assign = {c.id: n for c, n in zip(app.components, combo)}
        try:
            score = evaluate_placement(topo, app, assign)
        except (CapacityExceeded, Disconnected, PlacementInfeasible):
            continue
        if not feasible(score, mode):
            continue
        key = placement_key(combo, score, mode)
        if best is None or key < best[0]:
            best = (key, assign)
    return best


@pytest.mark.parametrize("seed", range(100))
def test_branch_and_bound_matches_exhaustive(seed):
    rng = np.random.default_rng(seed)
    topo, app = _random_instance(rng)
    modes = [
        MaxPerfUnderBudget(budget=float(rng.uniform(0, 15))),
        MinCostUnderLatency(bound=float(rng.uniform(0.01, 1.0))),
    ]
    for mode in modes:
        oracle = _exhaustive(topo, app, mode)
        if oracle is None:
            with pytest.raises(PlacementInfeasible):
                solve_placement(topo, app, mode)
            continue
        plan = solve_placement(topo, app, mode)
        assert plan.assign == oracle[1]
        assert plan.objective_value == pytest.approx(oracle[0][0])
