import logging
from dataclasses import dataclass, replace
from datetime import date, datetime, timedelta
from typing import Dict, FrozenSet, List, Mapping, Optional, Sequence, Tuple

from config.pipeline import MoveConfig
from models.domain import (
    DayType,
    DiningHub,
    HolidayCalendar,
    HubLabel,
    HubRecord,
    Move,
    MoveKind,
    Slot,
    UserGroup,
    UserProfile,
    YearMonth,
)
from utils.exceptions import AmbiguityError, InsufficientDataError
from utils.geo import haversine_km
from utils.timeslots import time_slot

logger = logging.getLogger(__name__)

REGULAR_SLOTS = (Slot.MORNING, Slot.NOON, Slot.AFTERNOON)


def _between(a: HubRecord, c: HubRecord, b: HubRecord) -> bool:
    return a.last_order < c.first_order and c.last_order < b.first_order


def detect_transitions(labeled_hubs_of_user: Sequence[HubRecord], cfg: MoveConfig) -> List[Move]:
    """Переезды H->H и смены работы W->W между непересекающимися по времени хабами"""
    moves = []
    for kind in MoveKind:
        same = sorted(
            (h for h in labeled_hubs_of_user if h.label is kind.hub_label),
            key=lambda h: (h.first_order, h.hub_id),
        )
        for a in same:
            for b in same:
                if not a.precedes(b):
                    continue
                displacement = haversine_km(a.center, b.center)
                if displacement < cfg.min_separation_km:
                    continue
                # только соседние звенья цепочки
                if any(_between(a, c, b) for c in same if c is not a and c is not b):
                    continue
                moves.append(
                    Move(
                        user_id=b.user_id,
                        kind=kind,
                        from_hub=a.hub_id,
                        to_hub=b.hub_id,
                        from_center=a.center,
                        to_center=b.center,
                        move_month=YearMonth.of(b.first_order),
                        displacement_km=displacement,
                        from_month=YearMonth.of(a.last_order),
                    )
                )
    return sorted(moves, key=lambda m: m.sort_key)


def classify_user(hubs: Sequence[HubRecord], moves: Sequence[Move]) -> FrozenSet[UserGroup]:
    """Stayer / JobHopper / HomeMover; пользователь без H или W хаба исключается"""
    labels = {h.label for h in hubs}
    missing = [label.value for label in (HubLabel.HOME, HubLabel.WORK) if label not in labels]
    if missing:
        raise InsufficientDataError(f"no {'/'.join(missing)} hub")
    if not moves:
        return frozenset({UserGroup.STAYER})
    groups = set()
    if any(m.kind is MoveKind.JOB for m in moves):
        groups.add(UserGroup.JOB_HOPPER)
    if any(m.kind is MoveKind.HOUSING for m in moves):
        groups.add(UserGroup.HOME_MOVER)
    return frozenset(groups)


def _gap_days(hub: HubRecord, at: date) -> int:
    if at < hub.first_order.date():
        return (hub.first_order.date() - at).days
    return (at - hub.last_order.date()).days


def active_hub(hubs: Sequence[HubRecord], label: HubLabel, at: date) -> HubRecord:
    """
    Хаб с меткой label, активный в дату at

    Если ни один интервал не покрывает дату, берётся ближайший по времени.
    """
    candidates = [h for h in hubs if h.label is label]
    if not candidates:
        raise InsufficientDataError(f"no {label.value} hub")
    covering = [h for h in candidates if h.active_on(at)]
    if len(covering) == 1:
        return covering[0]
    if len(covering) > 1:
        raise AmbiguityError(f"{len(covering)} {label.value} hubs active on {at}")

    gaps = sorted((_gap_days(h, at), h.hub_id, h) for h in candidates)
    if len(gaps) > 1 and gaps[0][0] == gaps[1][0]:
        raise AmbiguityError(f"two {label.value} hubs equally close to {at}")
    return gaps[0][2]


def commuting_distance(
    hubs: Sequence[HubRecord], at: date, pinned: Optional[Mapping[HubLabel, HubRecord]] = None
) -> float:
    """Расстояние H-W на дату at; pinned фиксирует хаб переезжающей стороны"""
    pinned = pinned or {}
    home = pinned.get(HubLabel.HOME) or active_hub(hubs, HubLabel.HOME, at)
    work = pinned.get(HubLabel.WORK) or active_hub(hubs, HubLabel.WORK, at)
    return haversine_km(home.center, work.center)


def overtime_ratio(w_hub: DiningHub, cal: HolidayCalendar) -> float:
    """Доля заказов в будние вечер/ночь, в выходные и праздники"""
    regular = _count_regular(w_hub, cal)
    return (len(w_hub.orders) - regular) / len(w_hub.orders)


def regular_ratio(w_hub: DiningHub, cal: HolidayCalendar) -> float:
    """Доля заказов в будние утро/обед/день"""
    return _count_regular(w_hub, cal) / len(w_hub.orders)


def _count_regular(w_hub: DiningHub, cal: HolidayCalendar) -> int:
    if not w_hub.orders:
        raise InsufficientDataError(f"hub {w_hub.hub_id} has no orders")
    regular = 0
    for order in w_hub.orders:
        label = time_slot(order.delivered_at, cal)
        if label.day_type is DayType.WEEKDAY and label.slot in REGULAR_SLOTS:
            regular += 1
    return regular


def move_metrics(
    move: Move,
    hubs: Sequence[HubRecord],
    hub_orders: Mapping[str, DiningHub],
    cal: HolidayCalendar,
) -> Tuple[Move, int]:
    """Дополняет переезд дистанциями до/после и overtime; возвращает (move, число неоднозначностей)"""
    by_id = {h.hub_id: h for h in hubs}
    source, target = by_id[move.from_hub], by_id[move.to_hub]
    label = move.kind.hub_label
    post_day = target.first_order.date()
    pre_day = post_day - timedelta(days=1)

    ambiguous = 0
    commutes = []
    for day, pinned in ((pre_day, source), (post_day, target)):
        try:
            commutes.append(commuting_distance(hubs, day, {label: pinned}))
        except (AmbiguityError, InsufficientDataError) as e:
            logger.debug(f"User {move.user_id}: commute on {day} unavailable: {e}")
            ambiguous += isinstance(e, AmbiguityError)
            commutes.append(None)

    pre_overtime = post_overtime = None
    if move.kind is MoveKind.JOB:
        if move.from_hub in hub_orders:
            pre_overtime = overtime_ratio(hub_orders[move.from_hub], cal)
        if move.to_hub in hub_orders:
            post_overtime = overtime_ratio(hub_orders[move.to_hub], cal)

    enriched = replace(
        move,
        pre_commute_km=commutes[0],
        post_commute_km=commutes[1],
        pre_overtime_ratio=pre_overtime,
        post_overtime_ratio=post_overtime,
        from_month=YearMonth.of(source.last_order),
    )
    return enriched, ambiguous


def activity_midpoint(hub: HubRecord) -> datetime:
    return hub.first_order + (hub.last_order - hub.first_order) / 2


def user_profile(
    user_id: str,
    hubs: Sequence[HubRecord],
    moves: Sequence[Move],
    hub_orders: Mapping[str, DiningHub],
    cal: HolidayCalendar,
) -> Tuple[UserProfile, int]:
    """Группа пользователя и метрики стайера; возвращает (profile, число неоднозначностей)"""
    try:
        groups = classify_user(hubs, moves)
    except InsufficientDataError as e:
        return UserProfile(user_id=user_id, excluded_reason=str(e)), 0

    if UserGroup.STAYER not in groups:
        return UserProfile(user_id=user_id, groups=groups), 0

    homes = [h for h in hubs if h.label is HubLabel.HOME]
    works = [h for h in hubs if h.label is HubLabel.WORK]
    if len(homes) != 1 or len(works) != 1:
        logger.debug(f"User {user_id}: {len(homes)} H and {len(works)} W hubs, stayer metrics skipped")
        return UserProfile(user_id=user_id, groups=groups), 1

    home, work = homes[0], works[0]
    overtime = overtime_ratio(hub_orders[work.hub_id], cal) if work.hub_id in hub_orders else None
    return (
        UserProfile(
            user_id=user_id,
            groups=groups,
            commute_km=haversine_km(home.center, work.center),
            overtime_ratio=overtime,
            home_center=home.center,
            home_month=YearMonth.of(activity_midpoint(home)),
        ),
        0,
    )


@dataclass(frozen=True)
class UserMobility:
    """Переезды и профиль одного пользователя"""

    profile: UserProfile
    moves: Tuple[Move, ...]
    ambiguous_commutes: int = 0


def analyze_user(
    user_id: str,
    hubs: Sequence[HubRecord],
    hub_orders: Mapping[str, DiningHub],
    cal: HolidayCalendar,
    cfg: MoveConfig,
) -> UserMobility:
    moves = detect_transitions(hubs, cfg)
    enriched: List[Move] = []
    ambiguous = 0
    for move in moves:
        move, n = move_metrics(move, hubs, hub_orders, cal)
        enriched.append(move)
        ambiguous += n
    profile, n = user_profile(user_id, hubs, enriched, hub_orders, cal)
    return UserMobility(profile=profile, moves=tuple(enriched), ambiguous_commutes=ambiguous + n)


def group_counts(profiles: Sequence[UserProfile]) -> Dict[str, int]:
    counts = {g.value: 0 for g in UserGroup}
    counts["Excluded"] = 0
    for p in profiles:
        if p.excluded:
            counts["Excluded"] += 1
        for g in p.groups:
            counts[g.value] += 1
    return counts
