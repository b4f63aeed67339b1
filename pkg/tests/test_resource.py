import math

import numpy as np
import pytest

from src.core.errors import NonPositiveTime, ResourceInfeasible
from src.models.schemas import ScalingModel, TimeSplit
from src.services.resource import amdahl, compute_ratio, plan_for, scaled_times, size_resources


def test_four_to_one():
    decision = compute_ratio(400, 100, ScalingModel())
    assert decision.pair == (4, 1)
    assert decision.imbalance == pytest.approx(1.0)
    assert decision.warning is None


def test_equal_times_give_one_to_one():
    assert compute_ratio(100, 100, ScalingModel()).pair == (1, 1)


def test_cpu_heavy_split_is_clamped_with_a_warning():
    decision = compute_ratio(1000, 1, ScalingModel(max_cpu_units=64))
    assert decision.pair == (64, 1)
    assert decision.imbalance == pytest.approx(1000 / 64)
    assert "cpu side" in decision.warning


def test_ratio_needs_positive_times():
    with pytest.raises(NonPositiveTime):
        compute_ratio(0, 10, ScalingModel())


def test_amdahl():
    assert amdahl(1, 0.3) == pytest.approx(1.0)
    assert amdahl(4, 0.0) == pytest.approx(0.25)
    assert amdahl(4, 0.2) == pytest.approx(0.4)


def test_doubling_reaches_the_target():
    split = TimeSplit(cpu_time=800, device_time=200)
    ratio = compute_ratio(split.cpu_time, split.device_time, ScalingModel()).pair
    assert ratio == (4, 1)
    assert plan_for(ratio, 1, split, ScalingModel()).est_latency == pytest.approx(200)
    plan = size_resources(ratio, 110, None, ScalingModel(), split)
    assert (plan.cpu_units, plan.device_units, plan.multiplier) == (8, 2, 2)
    assert plan.est_latency == pytest.approx(100)
    assert plan.cost == pytest.approx(8 * 1 + 2 * 4)


def test_target_met_at_one_keeps_one():
    split = TimeSplit(cpu_time=800, device_time=200, transfer_time=5)
    plan = size_resources((4, 1), 300, None, ScalingModel(), split)
    assert plan.multiplier == 1
    assert plan.est_latency == pytest.approx(205)


def test_no_target_takes_the_smallest_plan():
    plan = size_resources((2, 1), None, None, ScalingModel(), TimeSplit(cpu_time=10, device_time=5))
    assert (plan.cpu_units, plan.device_units) == (2, 1)


def test_zero_budget_is_infeasible():
    with pytest.raises(ResourceInfeasible) as exc:
        size_resources((4, 1), 110, 0, ScalingModel(), TimeSplit(cpu_time=800, device_time=200))
    assert exc.value.reason == ResourceInfeasible.BUDGET_EXCEEDED


def test_unreachable_latency():
    with pytest.raises(ResourceInfeasible) as exc:
        size_resources((4, 1), 1, None, ScalingModel(), TimeSplit(cpu_time=800, device_time=200, transfer_time=2))
    assert exc.value.reason == ResourceInfeasible.LATENCY_UNREACHABLE


def _instance(rng: np.random.Generator, serial: bool):
    model = ScalingModel(
        cpu_serial_frac=float(rng.uniform(0, 0.3)) if serial else 0.0,
        device_serial_frac=float(rng.uniform(0, 0.3)) if serial else 0.0,
        max_cpu_units=int(rng.integers(1, 17)),
        max_device_units=int(rng.integers(1, 9)),
        price_cpu=float(rng.uniform(0.5, 2)),
        price_device=float(rng.uniform(1, 5)),
    )
    split = TimeSplit(
        cpu_time=float(10 ** rng.uniform(0, 3)),
        device_time=float(10 ** rng.uniform(0, 3)),
        transfer_time=float(rng.uniform(0, 5)),
    )
    return model, split


def test_random_instances_against_exhaustive_scan():
    rng = np.random.default_rng(1234)
    for trial in range(1000):
        model, split = _instance(rng, serial=trial % 2 == 1)
        decision = compute_ratio(split.cpu_time, split.device_time, model)
        c, g = decision.pair
        assert 1 <= c <= model.max_cpu_units and 1 <= g <= model.max_device_units
        assert math.gcd(c, g) == 1
        for cc in range(1, model.max_cpu_units + 1):
            for gg in range(1, model.max_device_units + 1):
                if math.gcd(cc, gg) != 1:
                    continue
                cpu, device, _ = scaled_times(split, cc, gg, model)
                assert abs(math.log(cpu / device)) >= math.log(decision.imbalance) - 1e-12

        target = float(rng.uniform(1, 1000))
        reachable = [
            k for k in range(1, 65)
            if c * k <= model.max_cpu_units and g * k <= model.max_device_units
            and scaled_times(split, c * k, g * k, model)[2] <= target
        ]
        if not reachable:
            with pytest.raises(ResourceInfeasible):
                size_resources(decision.pair, target, None, model, split)
            continue
        plan = size_resources(decision.pair, target, None, model, split)
        assert plan.multiplier == min(reachable)
        assert (plan.cpu_units, plan.device_units) == (c * plan.multiplier, g * plan.multiplier)
        assert plan.cpu_units * g == plan.device_units * c


def test_balanced_within_two_when_caps_do_not_bind():
    rng = np.random.default_rng(99)
    checked = 0
    for _ in range(1000):
        model, split = _instance(rng, serial=False)
        r = split.cpu_time / split.device_time
        if not 1 / model.max_device_units <= r <= model.max_cpu_units:
            continue
        checked += 1
        assert compute_ratio(split.cpu_time, split.device_time, model).imbalance <= 2.0 + 1e-9
    assert checked > 100
