import math
from collections import OrderedDict
from dataclasses import dataclass, field
from datetime import date, datetime
from enum import Enum
from typing import Dict, FrozenSet, Iterable, Iterator, List, Optional, Tuple


class DayType(str, Enum):
    """Day type used by the time-slot scheme"""

    WEEKDAY = "weekday"
    WEEKEND = "weekend"
    HOLIDAY = "holiday"


class Slot(str, Enum):
    """Daily time slot"""

    MORNING = "morning"
    NOON = "noon"
    AFTERNOON = "afternoon"
    EVENING = "evening"
    NIGHT = "night"


DAY_TYPES: Tuple[DayType, ...] = tuple(DayType)
SLOTS: Tuple[Slot, ...] = tuple(Slot)
N_SLOT_LABELS = len(DAY_TYPES) * len(SLOTS)


@dataclass(frozen=True)
class SlotLabel:
    """One of the 15 (day type, slot) combinations"""

    day_type: DayType
    slot: Slot

    @property
    def index(self) -> int:
        return DAY_TYPES.index(self.day_type) * len(SLOTS) + SLOTS.index(self.slot)

    def __str__(self) -> str:
        return f"{self.day_type.value}-{self.slot.value}"


ALL_SLOT_LABELS: Tuple[SlotLabel, ...] = tuple(SlotLabel(d, s) for d in DAY_TYPES for s in SLOTS)


@dataclass(frozen=True, order=True)
class YearMonth:
    """Civil year-month"""

    year: int
    month: int

    def __post_init__(self):
        if not 1 <= self.month <= 12:
            raise ValueError(f"month out of range: {self.month}")

    @classmethod
    def of(cls, value) -> "YearMonth":
        return cls(value.year, value.month)

    @classmethod
    def parse(cls, text: str) -> "YearMonth":
        year, month = text.strip().split("-")[:2]
        return cls(int(year), int(month))

    @property
    def ordinal(self) -> int:
        return self.year * 12 + (self.month - 1)

    def shift(self, months: int) -> "YearMonth":
        year, month0 = divmod(self.ordinal + months, 12)
        return YearMonth(year, month0 + 1)

    def months_until(self, other: "YearMonth") -> int:
        return other.ordinal - self.ordinal

    def first_day(self) -> date:
        return date(self.year, self.month, 1)

    def __str__(self) -> str:
        return f"{self.year:04d}-{self.month:02d}"


def month_range(start: YearMonth, end: YearMonth) -> List[YearMonth]:
    """All months from start to end inclusive"""
    return [start.shift(i) for i in range(start.months_until(end) + 1)]


@dataclass(frozen=True)
class GeoPoint:
    """WGS84 point in degrees"""

    lat: float
    lon: float

    def __post_init__(self):
        if not (math.isfinite(self.lat) and math.isfinite(self.lon)):
            raise ValueError(f"non-finite coordinate: ({self.lat}, {self.lon})")
        if not -90.0 <= self.lat <= 90.0:
            raise ValueError(f"latitude out of range: {self.lat}")
        if not -180.0 <= self.lon <= 180.0:
            raise ValueError(f"longitude out of range: {self.lon}")


@dataclass(frozen=True)
class Order:
    """A delivery order: user u got food from restaurant r at t_d, delivery took t_c minutes"""

    user_id: str
    restaurant_id: str
    location: GeoPoint
    delivered_at: datetime
    delivery_minutes: float

    def __post_init__(self):
        if not math.isfinite(self.delivery_minutes) or self.delivery_minutes < 0:
            raise ValueError(f"delivery_minutes must be a non-negative number, got {self.delivery_minutes}")
        if self.delivered_at.second or self.delivered_at.microsecond:
            raise ValueError("delivered_at must have minute resolution")
        if self.delivered_at.tzinfo is not None:
            raise ValueError("delivered_at must be naive local time")

    @property
    def sort_key(self) -> Tuple[str, datetime, str]:
        return (self.user_id, self.delivered_at, self.restaurant_id)


@dataclass(frozen=True)
class OrderLog:
    """The full order sequence, kept in (user, time, restaurant) order"""

    orders: Tuple[Order, ...] = ()

    def __post_init__(self):
        ordered = tuple(sorted(self.orders, key=lambda o: o.sort_key))
        object.__setattr__(self, "orders", ordered)

    @property
    def span(self) -> Optional[Tuple[datetime, datetime]]:
        if not self.orders:
            return None
        times = [o.delivered_at for o in self.orders]
        return min(times), max(times)

    def users(self) -> List[str]:
        return list(self.by_user().keys())

    def by_user(self) -> "OrderedDict[str, Tuple[Order, ...]]":
        grouped: "OrderedDict[str, List[Order]]" = OrderedDict()
        for order in self.orders:
            grouped.setdefault(order.user_id, []).append(order)
        return OrderedDict((user, tuple(items)) for user, items in grouped.items())

    def __len__(self) -> int:
        return len(self.orders)

    def __iter__(self) -> Iterator[Order]:
        return iter(self.orders)


@dataclass(frozen=True)
class HolidayCalendar:
    """Public holidays plus the weekday indices (Monday=0) treated as weekend"""

    holiday_dates: FrozenSet[date] = frozenset()
    weekend_days: FrozenSet[int] = frozenset({5, 6})

    def __post_init__(self):
        object.__setattr__(self, "holiday_dates", frozenset(self.holiday_dates))
        object.__setattr__(self, "weekend_days", frozenset(self.weekend_days))
        if not self.weekend_days:
            raise ValueError("weekend_days must not be empty")
        if any(not 0 <= d <= 6 for d in self.weekend_days):
            raise ValueError(f"weekend_days must be weekday indices 0..6, got {sorted(self.weekend_days)}")

    def is_holiday(self, day: date) -> bool:
        return day in self.holiday_dates

    def is_weekend(self, day: date) -> bool:
        return day.weekday() in self.weekend_days


@dataclass(frozen=True)
class WeightedSite:
    """A restaurant of one user with its delivery-time weight"""

    location: GeoPoint
    weight: float
    restaurant_id: str
    order_count: int

    def __post_init__(self):
        if not self.weight > 0:
            raise ValueError(f"site weight must be positive, got {self.weight}")
        if self.order_count < 1:
            raise ValueError("order_count must be >= 1")


class HubLabel(str, Enum):
    HOME = "H"
    WORK = "W"
    OTHER = "O"


@dataclass(frozen=True)
class HubRecord:
    """Serializable summary of a hub (what the hub CSV files hold)"""

    user_id: str
    hub_id: str
    center: GeoPoint
    n_restaurants: int
    n_orders: int
    first_order: datetime
    last_order: datetime
    label: Optional[HubLabel] = None

    def active_on(self, day: date) -> bool:
        return self.first_order.date() <= day <= self.last_order.date()

    def precedes(self, other: "HubRecord") -> bool:
        """All orders of this hub happened before any order of the other one"""
        return self.last_order < other.first_order


@dataclass(frozen=True)
class DiningHub:
    """A per-user cluster of restaurants with their orders"""

    user_id: str
    hub_id: str
    center: GeoPoint
    members: FrozenSet[str]
    orders: Tuple[Order, ...]

    def __post_init__(self):
        if not self.orders:
            raise ValueError(f"hub {self.hub_id} has no orders")
        object.__setattr__(self, "members", frozenset(self.members))
        object.__setattr__(self, "orders", tuple(sorted(self.orders, key=lambda o: o.sort_key)))

    @property
    def active_interval(self) -> Tuple[datetime, datetime]:
        return self.orders[0].delivered_at, self.orders[-1].delivered_at

    @property
    def n_orders(self) -> int:
        return len(self.orders)

    def to_record(self, label: Optional[HubLabel] = None) -> HubRecord:
        first, last = self.active_interval
        return HubRecord(
            user_id=self.user_id,
            hub_id=self.hub_id,
            center=self.center,
            n_restaurants=len(self.members),
            n_orders=self.n_orders,
            first_order=first,
            last_order=last,
            label=label,
        )


@dataclass(frozen=True)
class ClusterOutcome:
    """Result of clustering one user's orders into hubs"""

    user_id: str
    hubs: Tuple[DiningHub, ...]
    outliers: FrozenSet[str]
    outlier_orders: Tuple[Order, ...] = ()
    clusterable: bool = True
    temporary: Tuple[DiningHub, ...] = ()
    nonconverged: FrozenSet[str] = frozenset()

    @property
    def n_orders(self) -> int:
        return (
            sum(h.n_orders for h in self.hubs)
            + sum(h.n_orders for h in self.temporary)
            + len(self.outlier_orders)
        )


@dataclass(frozen=True)
class HubFeatures:
    """Relative order frequency of a hub over the 15 slot labels"""

    hub_id: str
    freq: Tuple[float, ...]

    def __post_init__(self):
        if len(self.freq) != N_SLOT_LABELS:
            raise ValueError(f"expected {N_SLOT_LABELS} slot frequencies, got {len(self.freq)}")

    def __getitem__(self, label: SlotLabel) -> float:
        return self.freq[label.index]


class MoveKind(str, Enum):
    HOUSING = "Housing"
    JOB = "Job"

    @property
    def hub_label(self) -> HubLabel:
        return HubLabel.HOME if self is MoveKind.HOUSING else HubLabel.WORK


@dataclass(frozen=True)
class Move:
    """A hub transition between two same-label hubs of one user"""

    user_id: str
    kind: MoveKind
    from_hub: str
    to_hub: str
    from_center: GeoPoint
    to_center: GeoPoint
    move_month: YearMonth
    displacement_km: float
    from_month: Optional[YearMonth] = None
    pre_commute_km: Optional[float] = None
    post_commute_km: Optional[float] = None
    pre_overtime_ratio: Optional[float] = None
    post_overtime_ratio: Optional[float] = None

    @property
    def sort_key(self) -> Tuple[str, YearMonth, str, str]:
        return (self.user_id, self.move_month, self.kind.value, self.to_hub)


class UserGroup(str, Enum):
    STAYER = "Stayer"
    JOB_HOPPER = "JobHopper"
    HOME_MOVER = "HomeMover"


@dataclass(frozen=True)
class UserProfile:
    """Group membership and stayer-side metrics of one user"""

    user_id: str
    groups: FrozenSet[UserGroup] = frozenset()
    excluded_reason: Optional[str] = None
    commute_km: Optional[float] = None
    overtime_ratio: Optional[float] = None
    home_center: Optional[GeoPoint] = None
    home_month: Optional[YearMonth] = None

    @property
    def excluded(self) -> bool:
        return self.excluded_reason is not None


@dataclass(frozen=True)
class Transaction:
    """A monthly housing transaction record"""

    location: GeoPoint
    month: YearMonth
    price: float

    def __post_init__(self):
        if not self.price > 0:
            raise ValueError(f"transaction price must be positive, got {self.price}")


@dataclass
class LoadReport:
    """Bookkeeping of one order file load"""

    n_rows: int = 0
    n_loaded: int = 0
    duplicates: int = 0
    rejected: List[Tuple[int, str]] = field(default_factory=list)

    def as_dict(self) -> Dict[str, object]:
        return {
            "n_rows": self.n_rows,
            "n_loaded": self.n_loaded,
            "duplicates": self.duplicates,
            "rejected": [{"line": line, "reason": reason} for line, reason in self.rejected],
        }


def group_by_user(items: Iterable, key=lambda item: item.user_id) -> "OrderedDict[str, list]":
    """Группирует объекты по user_id, сохраняя порядок первого появления"""
    grouped: "OrderedDict[str, list]" = OrderedDict()
    for item in items:
        grouped.setdefault(key(item), []).append(item)
    return grouped
