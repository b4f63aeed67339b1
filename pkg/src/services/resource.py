"""
Resource tuning: CPU:device unit ratio, then the amount at that ratio

Scaled time on u units follows Amdahl's law with the side's serial fraction.
Latency after scaling is max(cpu, device) + transfer; transfers never scale.
"""

from __future__ import annotations

import math
from typing import Optional

from src.core.errors import NonPositiveTime, ResourceInfeasible
from src.core.logging import get_plain_logger
from src.models.schemas import RatioDecision, ResourcePlan, ScalingModel, TimeSplit

logger = get_plain_logger(__name__)

BOTTLENECK_IMBALANCE = 10.0


def amdahl(units: int, serial_frac: float) -> float:
    """Fraction of single-unit time left when running on `units` units"""
    return serial_frac + (1.0 - serial_frac) / units


def scaled_times(split: TimeSplit, cpu_units: int, device_units: int, model: ScalingModel) -> tuple[float, float, float]:
    """(cpu, device, latency) after scaling"""
    cpu = split.cpu_time * amdahl(cpu_units, model.cpu_serial_frac)
    device = split.device_time * amdahl(device_units, model.device_serial_frac)
    return cpu, device, max(cpu, device) + split.transfer_time


def compute_ratio(cpu_time: float, device_time: float, model: ScalingModel) -> RatioDecision:
    """
    Coprime (c, g) within the unit caps minimizing |log(cpu/c' : device/g')|

    Ties go to the smaller c+g, then the smaller c.
    """
    if cpu_time <= 0 or device_time <= 0:
        raise NonPositiveTime(cpu_time, device_time)

    best: Optional[tuple[float, int, int]] = None  # (score, c+g, c)
    pair = (1, 1)
    for c in range(1, model.max_cpu_units + 1):
        cpu = cpu_time * amdahl(c, model.cpu_serial_frac)
        for g in range(1, model.max_device_units + 1):
            if math.gcd(c, g) != 1:
                continue
            device = device_time * amdahl(g, model.device_serial_frac)
            score = abs(math.log(cpu / device))
            key = (score, c + g, c)
            if best is None or key < best:
                best, pair = key, (c, g)

    assert best is not None
    score = best[0]
    c, g = pair
    imbalance = math.exp(score)
    warning = None
    if imbalance > BOTTLENECK_IMBALANCE:
        cpu = cpu_time * amdahl(c, model.cpu_serial_frac)
        device = device_time * amdahl(g, model.device_serial_frac)
        side = "cpu" if cpu > device else "device"
        warning = f"{side} side stays {imbalance:.1f}x slower at the unit caps"
        logger.warning(f"Bottleneck at ratio {c}:{g}: {warning}")
    logger.info(f"Resource ratio cpu:device = {c}:{g} (imbalance {imbalance:.2f})")
    return RatioDecision(cpu_units=c, device_units=g, imbalance=imbalance, warning=warning)


def plan_for(ratio: tuple[int, int], k: int, split: TimeSplit, model: ScalingModel) -> ResourcePlan:
    c, g = ratio[0] * k, ratio[1] * k
    cpu, device, latency = scaled_times(split, c, g, model)
    return ResourcePlan(
        cpu_units=c,
        device_units=g,
        multiplier=k,
        ratio=c / g,
        est_cpu_time=cpu,
        est_device_time=device,
        transfer_time=split.transfer_time,
        est_latency=latency,
        cost=c * model.price_cpu + g * model.price_device,
    )


def size_resources(
    ratio: tuple[int, int],
    perf_target: Optional[float],
    budget: Optional[float],
    model: ScalingModel,
    split: TimeSplit,
    min_k: int = 1,
) -> ResourcePlan:
    """
    Smallest multiplier k >= min_k whose latency meets the target, at the ratio

    A None target accepts k = min_k; a None budget is unbounded.
    """
    target = math.inf if perf_target is None else perf_target
    cap = math.inf if budget is None else budget
    k = max(1, min_k)
    while ratio[0] * k <= model.max_cpu_units and ratio[1] * k <= model.max_device_units:
        plan = plan_for(ratio, k, split, model)
        if plan.est_latency <= target:
            if plan.cost > cap:
                logger.warning(f"Plan {plan.cpu_units}:{plan.device_units} costs {plan.cost} > budget {cap}")
                raise ResourceInfeasible(
                    ResourceInfeasible.BUDGET_EXCEEDED, f"(cost {plan.cost:g} > {cap:g} at k={k})"
                )
            logger.info(f"Sized resources k={k}: {plan.cpu_units} cpu / {plan.device_units} device, "
                        f"latency {plan.est_latency:.4g}, cost {plan.cost:g}")
            return plan
        k += 1
    raise ResourceInfeasible(ResourceInfeasible.LATENCY_UNREACHABLE, f"(target {target:g} within unit caps)")
