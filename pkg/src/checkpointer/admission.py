"""Budget admission for checkpoint requests.

Each job that wants a checkpoint brings an offer: the objective value its
best cut earns and the global-storage bytes the cut would persist. Offers
arrive online and share a fixed byte budget per time window, so the
controller runs a threshold rule calibrated on historical offers: estimate
what fraction p of demand the budget can carry, then accept offers whose
value-to-weight ratio clears the (1 - p) quantile of the historical ratio
distribution. In expectation the accepted demand then fills, but does not
exceed, the budget. A hard capacity check backstops the statistics within
each window.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import EmptyTrainingSet, ParseError, SchemaError, UnsortedStream


@dataclass(frozen=True)
class JobOffer:
    """One job's checkpoint request: value earned vs bytes consumed."""

    job_id: str
    saving: float
    weight: float
    arrival_time: float

    def __post_init__(self) -> None:
        if self.weight < 0:
            raise ValueError(f"offer {self.job_id!r} has negative weight")

    @property
    def value_ratio(self) -> float:
        """Value per byte of budget; zero-weight offers are free cuts and
        rank above every threshold."""
        if self.weight == 0:
            return math.inf
        return self.saving / self.weight

    def to_dict(self) -> dict:
        return {
            "job_id": self.job_id,
            "saving": self.saving,
            "weight": self.weight,
            "arrival_time": self.arrival_time,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "JobOffer":
        return cls(
            job_id=str(doc["job_id"]),
            saving=float(doc["saving"]),
            weight=float(doc["weight"]),
            arrival_time=float(doc["arrival_time"]),
        )


@dataclass(frozen=True)
class AdmissionPolicy:
    """Calibrated threshold rule.

    capacity is the byte budget per window, window the period length in
    seconds, arrival_rate the expected offers per second, and mean_weight
    the average positive offer weight seen at calibration. accept_fraction
    is capacity / (arrival_rate * window * mean_weight) clamped to (0, 1]:
    the share of expected demand the budget can hold. threshold is the
    (1 - accept_fraction) quantile of calibration value ratios, or -inf
    when the budget covers everything.
    """

    capacity: float
    window: float
    arrival_rate: float
    mean_weight: float
    accept_fraction: float
    threshold: float

    def __post_init__(self) -> None:
        if self.capacity <= 0:
            raise ValueError("capacity must be > 0")
        if self.window <= 0:
            raise ValueError("window must be > 0")
        if self.arrival_rate <= 0:
            raise ValueError("arrival_rate must be > 0")
        if self.mean_weight <= 0:
            raise ValueError("mean_weight must be > 0")
        if not 0.0 < self.accept_fraction <= 1.0:
            raise ValueError("accept_fraction must be in (0, 1]")

    def to_dict(self) -> dict:
        return {
            "capacity": self.capacity,
            "window": self.window,
            "arrival_rate": self.arrival_rate,
            "mean_weight": self.mean_weight,
            "accept_fraction": self.accept_fraction,
            "threshold": self.threshold,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "AdmissionPolicy":
        return cls(
            capacity=float(doc["capacity"]),
            window=float(doc["window"]),
            arrival_rate=float(doc["arrival_rate"]),
            mean_weight=float(doc["mean_weight"]),
            accept_fraction=float(doc["accept_fraction"]),
            threshold=float(doc["threshold"]),
        )


def calibrate_policy(
    offers: Sequence[JobOffer],
    capacity: float,
    window: float,
    arrival_rate: float,
) -> AdmissionPolicy:
    """Fit the threshold to a historical offer sample.

    Only positive-weight offers inform the weight mean and the ratio
    quantile; free cuts carry no budget signal and would pin the quantile
    at infinity. The quantile uses linear interpolation between order
    statistics. An accept fraction of exactly 1 turns the threshold off:
    everything that fits is taken.
    """
    if capacity <= 0:
        raise ValueError("capacity must be > 0")
    if window <= 0:
        raise ValueError("window must be > 0")
    if arrival_rate <= 0:
        raise ValueError("arrival_rate must be > 0")
    weighted = [o for o in offers if o.weight > 0]
    if len(weighted) < 2:
        raise EmptyTrainingSet(
            f"calibration needs >= 2 offers with positive weight, got {len(weighted)}"
        )
    mean_weight = math.fsum(o.weight for o in weighted) / len(weighted)
    p = min(1.0, capacity / (arrival_rate * window * mean_weight))
    if p == 1.0:
        threshold = -math.inf
    else:
        ratios = np.array([o.value_ratio for o in weighted])
        threshold = float(np.quantile(ratios, 1.0 - p))
    return AdmissionPolicy(
        capacity=capacity,
        window=window,
        arrival_rate=arrival_rate,
        mean_weight=mean_weight,
        accept_fraction=p,
        threshold=threshold,
    )


def decide(
    policy: AdmissionPolicy, offer: JobOffer, remaining: float
) -> tuple[bool, float]:
    """One admission decision against the remaining window budget.

    Accept when the offer's value ratio clears the threshold and its weight
    fits in what is left; returns the decision and the budget after it.
    """
    accept = offer.value_ratio >= policy.threshold and remaining >= offer.weight
    if accept:
        return True, remaining - offer.weight
    return False, remaining


@dataclass(frozen=True)
class Decision:
    offer: JobOffer
    accepted: bool
    window_index: int
    remaining_after: float

    def to_dict(self) -> dict:
        doc = self.offer.to_dict()
        doc["accepted"] = self.accepted
        doc["window_index"] = self.window_index
        doc["remaining_after"] = self.remaining_after
        return doc


@dataclass(frozen=True)
class StreamSummary:
    offered_count: int
    accepted_count: int
    accepted_weight: float
    accepted_value: float
    window_count: int
    per_window_weight: tuple[float, ...]

    def to_dict(self) -> dict:
        return {
            "offered_count": self.offered_count,
            "accepted_count": self.accepted_count,
            "accepted_weight": self.accepted_weight,
            "accepted_value": self.accepted_value,
            "window_count": self.window_count,
            "per_window_weight": list(self.per_window_weight),
        }


def process_stream(
    policy: AdmissionPolicy,
    offers: Sequence[JobOffer],
    *,
    enforce_capacity: bool = True,
) -> tuple[list[Decision], StreamSummary]:
    """Run the policy over offers in arrival order.

    Windows are the half-open intervals [k*window, (k+1)*window); the budget
    resets to full capacity when the stream enters a new window. Decisions
    are one-shot: an offer rejected for capacity is not revisited even if a
    later window would have room. With enforce_capacity=False only the
    threshold decides; accepted weight is still accounted, may overshoot the
    budget, and remaining_after may go negative. That mode exists to observe
    the raw statistical behavior of the threshold.
    """
    decisions: list[Decision] = []
    window_weight: dict[int, float] = {}
    accepted_weight: list[float] = []
    accepted_value: list[float] = []

    current_window: int | None = None
    remaining = policy.capacity
    last_arrival = -math.inf
    for position, offer in enumerate(offers):
        if offer.arrival_time < last_arrival:
            raise UnsortedStream(
                position, f"arrival {offer.arrival_time} after {last_arrival}"
            )
        last_arrival = offer.arrival_time
        index = math.floor(offer.arrival_time / policy.window)
        if index != current_window:
            current_window = index
            remaining = policy.capacity
            window_weight.setdefault(index, 0.0)
        if enforce_capacity:
            accepted, remaining = decide(policy, offer, remaining)
        else:
            accepted = offer.value_ratio >= policy.threshold
            if accepted:
                remaining -= offer.weight
        if accepted:
            window_weight[index] += offer.weight
            accepted_weight.append(offer.weight)
            accepted_value.append(offer.saving)
        decisions.append(
            Decision(
                offer=offer,
                accepted=accepted,
                window_index=index,
                remaining_after=remaining,
            )
        )

    if window_weight:
        indices = sorted(window_weight)
        span = range(indices[0], indices[-1] + 1)
        per_window = tuple(window_weight.get(i, 0.0) for i in span)
    else:
        per_window = ()
    summary = StreamSummary(
        offered_count=len(offers),
        accepted_count=sum(1 for d in decisions if d.accepted),
        accepted_weight=math.fsum(accepted_weight),
        accepted_value=math.fsum(accepted_value),
        window_count=len(per_window),
        per_window_weight=per_window,
    )
    return decisions, summary


def read_offers_jsonl(lines: Iterable[str]) -> list[JobOffer]:
    """Parse offers from JSON-lines text; blank lines are skipped."""
    offers = []
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            doc = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ParseError(lineno, str(exc.colno), exc.msg) from exc
        if not isinstance(doc, dict):
            raise ParseError(lineno, "-", "offer line must be a JSON object")
        try:
            offers.append(JobOffer.from_dict(doc))
        except KeyError as exc:
            raise SchemaError(exc.args[0]) from exc
        except (TypeError, ValueError) as exc:
            raise ParseError(lineno, "-", str(exc)) from exc
    return offers
