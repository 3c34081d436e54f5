from dataclasses import dataclass, field
from datetime import date
from typing import Dict, Iterable, List, Mapping, Optional, Tuple

import numpy as np

from models.domain import GeoPoint, HubLabel, MoveKind, YearMonth

NO_DETECTIONS = "NoDetections"


@dataclass(frozen=True)
class AnchorSpell:
    """A true home or work location of a user over [start, end]"""

    kind: HubLabel
    location: GeoPoint
    start: date
    end: date

    def active_on(self, day: date) -> bool:
        return self.start <= day <= self.end


@dataclass(frozen=True)
class TrueMove:
    user_id: str
    kind: MoveKind
    month: YearMonth
    from_location: GeoPoint
    to_location: GeoPoint


@dataclass(frozen=True)
class UserTruth:
    user_id: str
    archetype: str
    anchors: Tuple[AnchorSpell, ...]


@dataclass(frozen=True)
class GroundTruth:
    """Scripted truth of a synthetic scenario"""

    users: Tuple[UserTruth, ...]
    moves: Tuple[TrueMove, ...]
    restaurant_radius_km: Mapping[str, float] = field(default_factory=dict)
    restaurant_method: Mapping[str, str] = field(default_factory=dict)

    def user_ids(self) -> List[str]:
        return [u.user_id for u in self.users]

    def anchors_of(self, user_id: str) -> Tuple[AnchorSpell, ...]:
        for user in self.users:
            if user.user_id == user_id:
                return user.anchors
        return ()

    def to_dict(self) -> Dict:
        return {
            "users": [
                {
                    "user_id": u.user_id,
                    "archetype": u.archetype,
                    "anchors": [
                        {
                            "kind": a.kind.value,
                            "lat": a.location.lat,
                            "lon": a.location.lon,
                            "start": a.start.isoformat(),
                            "end": a.end.isoformat(),
                        }
                        for a in u.anchors
                    ],
                }
                for u in self.users
            ],
            "moves": [
                {
                    "user_id": m.user_id,
                    "kind": m.kind.value,
                    "month": str(m.month),
                    "from_lat": m.from_location.lat,
                    "from_lon": m.from_location.lon,
                    "to_lat": m.to_location.lat,
                    "to_lon": m.to_location.lon,
                }
                for m in self.moves
            ],
            "restaurants": [
                {
                    "restaurant_id": rid,
                    "radius_km": self.restaurant_radius_km[rid],
                    "method": self.restaurant_method.get(rid),
                }
                for rid in sorted(self.restaurant_radius_km)
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> "GroundTruth":
        users = tuple(
            UserTruth(
                user_id=str(u["user_id"]),
                archetype=u.get("archetype", ""),
                anchors=tuple(
                    AnchorSpell(
                        kind=HubLabel(a["kind"]),
                        location=GeoPoint(float(a["lat"]), float(a["lon"])),
                        start=date.fromisoformat(a["start"]),
                        end=date.fromisoformat(a["end"]),
                    )
                    for a in u["anchors"]
                ),
            )
            for u in data.get("users", [])
        )
        moves = tuple(
            TrueMove(
                user_id=str(m["user_id"]),
                kind=MoveKind(m["kind"]),
                month=YearMonth.parse(m["month"]),
                from_location=GeoPoint(float(m["from_lat"]), float(m["from_lon"])),
                to_location=GeoPoint(float(m["to_lat"]), float(m["to_lon"])),
            )
            for m in data.get("moves", [])
        )
        restaurants = data.get("restaurants", [])
        return cls(
            users=users,
            moves=moves,
            restaurant_radius_km={r["restaurant_id"]: float(r["radius_km"]) for r in restaurants},
            restaurant_method={r["restaurant_id"]: r.get("method") for r in restaurants},
        )


@dataclass(frozen=True)
class DistributionSummary:
    n: int
    min: Optional[float] = None
    median: Optional[float] = None
    p95: Optional[float] = None
    max: Optional[float] = None

    @classmethod
    def of(cls, values: Iterable[float]) -> "DistributionSummary":
        arr = np.asarray(list(values), dtype=float)
        if arr.size == 0:
            return cls(n=0)
        return cls(
            n=int(arr.size),
            min=float(arr.min()),
            median=float(np.median(arr)),
            p95=float(np.percentile(arr, 95)),
            max=float(arr.max()),
        )

    def as_dict(self) -> Dict[str, Optional[float]]:
        return {"n": self.n, "min": self.min, "median": self.median, "p95": self.p95, "max": self.max}


@dataclass(frozen=True)
class EvalReport:
    """Detected output scored against ground truth"""

    hub_center_error_km: DistributionSummary
    label_accuracy: Optional[float]
    n_matched_hubs: int
    move_precision: Dict[str, Optional[float]]
    move_recall: Dict[str, Optional[float]]
    move_counts: Dict[str, Dict[str, int]]
    move_month_error: DistributionSummary
    month_error_within_one: Optional[float]

    def as_dict(self) -> Dict:
        def fraction(value: Optional[float]):
            return NO_DETECTIONS if value is None else value

        return {
            "hub_center_error_km": self.hub_center_error_km.as_dict(),
            "label_accuracy": self.label_accuracy,
            "n_matched_hubs": self.n_matched_hubs,
            "move_precision": {k: fraction(v) for k, v in self.move_precision.items()},
            "move_recall": dict(self.move_recall),
            "move_counts": self.move_counts,
            "move_month_error": self.move_month_error.as_dict(),
            "month_error_within_one": self.month_error_within_one,
        }
