"""
Синтетический город: рестораны с зонами доставки, пользователи с якорями
дом/работа и сценариями переездов, журнал заказов и эталон для проверки
"""

import logging
import math
from dataclasses import dataclass, field
from datetime import date, datetime, timedelta
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import brentq
from scipy.stats import truncnorm
from shapely.geometry import box

from config.pipeline import ScenarioConfig
from models.domain import (
    DAY_TYPES,
    SLOTS,
    DayType,
    GeoPoint,
    HolidayCalendar,
    HubLabel,
    MoveKind,
    Order,
    OrderLog,
    Slot,
    Transaction,
)
from models.geography import to_point
from models.truth import AnchorSpell, GroundTruth, TrueMove, UserTruth
from utils.exceptions import ConfigError
from utils.geo import destination, haversine_km, haversine_km_arrays
from utils.parallel import parallel_map, worker_context
from utils.timeslots import day_type_of

logger = logging.getLogger(__name__)

ARCHETYPES = ("stayer", "job_hopper", "home_mover", "both")

# spawn keys: (0, 0, stream) for the city, (1, user index, stream) for users
_CITY, _USER = 0, 1
_RESTAURANTS, _MARKET = 0, 1
_SCRIPT, _ORDERS, _NOISE = 0, 1, 2

# minute-of-day windows; night wraps midnight and stays on the civil date
_SLOT_WINDOWS = {
    Slot.MORNING: (360, 300),
    Slot.NOON: (660, 240),
    Slot.AFTERNOON: (900, 240),
    Slot.EVENING: (1140, 180),
    Slot.NIGHT: (1320, 480),
}

BASE_MINUTES = 15.0
MINUTES_PER_KM = 8.0
MINUTES_NOISE = 5.0
MIN_MINUTES = 5.0


def _rng(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=key))


@dataclass(frozen=True)
class TruncatedLogNormal:
    """Log-normal delivery distance truncated at cap_km"""

    mu: float
    shape: float
    cap_km: float

    @property
    def _upper(self) -> float:
        return (math.log(self.cap_km) - self.mu) / self.shape

    def ppf(self, q):
        return np.exp(truncnorm.ppf(q, -np.inf, self._upper, loc=self.mu, scale=self.shape))

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return self.ppf(rng.random(n))

    @classmethod
    def fit(cls, p95_km: float, shape: float, cap_km: float, quantile: float = 0.95) -> "TruncatedLogNormal":
        """Location parameter such that the truncated quantile equals p95_km"""

        def gap(mu: float) -> float:
            return float(cls(mu, shape, cap_km).ppf(quantile)) - p95_km

        low = math.log(p95_km) - 10 * shape - 5
        high = math.log(cap_km) + 3 * shape
        return cls(brentq(gap, low, high, xtol=1e-12), shape, cap_km)


def delivery_models(cfg: ScenarioConfig) -> Dict[str, TruncatedLogNormal]:
    return {
        method: TruncatedLogNormal.fit(
            cfg.per_method_radius_p95_km[method], cfg.per_method_shape[method], cfg.per_method_cap_km[method]
        )
        for method in sorted(cfg.delivery_method_mix)
    }


def sample_delivery_distances(
    cfg: ScenarioConfig, n: int, rng: np.random.Generator
) -> List[Tuple[str, float]]:
    """Выборка (способ доставки, дистанция км) по смеси способов из конфигурации"""
    models = delivery_models(cfg)
    methods = sorted(models)
    p = np.array([cfg.delivery_method_mix[m] for m in methods])
    chosen = rng.choice(len(methods), size=n, p=p / p.sum())
    u = rng.random(n)
    distances = np.empty(n)
    for i, method in enumerate(methods):
        mask = chosen == i
        distances[mask] = models[method].ppf(u[mask])
    return [(methods[c], float(d)) for c, d in zip(chosen, distances)]


@dataclass(frozen=True)
class Restaurants:
    ids: Tuple[str, ...]
    lats: np.ndarray
    lons: np.ndarray
    radii: np.ndarray
    methods: Tuple[str, ...]

    def location(self, i: int) -> GeoPoint:
        return GeoPoint(float(self.lats[i]), float(self.lons[i]))

    def distances(self, p: GeoPoint) -> np.ndarray:
        return haversine_km_arrays(p.lat, p.lon, self.lats, self.lons)


@dataclass
class _Spell:
    start: int  # date ordinal
    anchor: GeoPoint
    favorites: np.ndarray
    cumulative: np.ndarray


@dataclass
class SyntheticCity:
    """Everything a scenario produces"""

    orders: OrderLog
    truth: GroundTruth
    subdistricts: Dict[str, object] = field(default_factory=dict)
    rings: Dict[str, object] = field(default_factory=dict)
    census: Dict[str, Tuple[float, float]] = field(default_factory=dict)
    transactions: List[Transaction] = field(default_factory=list)


class SyntheticCityGenerator:
    """Детерминированный генератор сценария по ScenarioConfig и seed"""

    def __init__(self, cfg: ScenarioConfig, seed: int = 0, cal: Optional[HolidayCalendar] = None):
        self.cfg = cfg
        self.seed = seed
        self.cal = cal or HolidayCalendar()
        self.first_month = cfg.first_month
        self.last_month = self.first_month.shift(cfg.span_months - 1)
        self.first_day = self.first_month.first_day()
        self.last_day = self.last_month.shift(1).first_day() - timedelta(days=1)
        self.days = self._day_table()
        self.restaurants = self._place_restaurants()
        self.min_anchor_gap = min(cfg.min_commute_km, cfg.min_displacement_km)
        self._profiles = {
            HubLabel.HOME: np.cumsum(cfg.home_slot_profile),
            HubLabel.WORK: np.cumsum(cfg.work_slot_profile),
        }

    # --- city ---

    def _day_table(self) -> Dict[DayType, np.ndarray]:
        table: Dict[DayType, List[int]] = {d: [] for d in DAY_TYPES}
        day = self.first_day
        while day <= self.last_day:
            table[day_type_of(day, self.cal)].append(day.toordinal())
            day += timedelta(days=1)
        if not table[DayType.HOLIDAY]:
            table[DayType.HOLIDAY] = list(table[DayType.WEEKEND])
        if not table[DayType.WEEKEND]:
            table[DayType.WEEKEND] = list(table[DayType.WEEKDAY])
        return {d: np.array(v, dtype=np.int64) for d, v in table.items()}

    def _uniform_point(self, rng: np.random.Generator) -> GeoPoint:
        e = self.cfg.extent
        return GeoPoint(float(rng.uniform(e.min_lat, e.max_lat)), float(rng.uniform(e.min_lon, e.max_lon)))

    def _inside(self, p: GeoPoint) -> bool:
        e = self.cfg.extent
        return e.min_lat <= p.lat <= e.max_lat and e.min_lon <= p.lon <= e.max_lon

    def _place_restaurants(self) -> Restaurants:
        cfg = self.cfg
        rng = _rng(self.seed, _CITY, 0, _RESTAURANTS)
        n = cfg.n_restaurants
        e = cfg.extent
        lats = rng.uniform(e.min_lat, e.max_lat, n)
        lons = rng.uniform(e.min_lon, e.max_lon, n)
        models = delivery_models(cfg)
        methods = sorted(models)
        p = np.array([cfg.delivery_method_mix[m] for m in methods])
        chosen = rng.choice(len(methods), size=n, p=p / p.sum())
        u = rng.random(n)
        radii = np.empty(n)
        for i, method in enumerate(methods):
            mask = chosen == i
            radii[mask] = models[method].ppf(u[mask])
        width = len(str(n))
        logger.info(f"Placed {n} restaurants")
        return Restaurants(
            ids=tuple(f"r{i + 1:0{width}d}" for i in range(n)),
            lats=lats,
            lons=lons,
            radii=radii,
            methods=tuple(methods[c] for c in chosen),
        )

    # --- users ---

    def _user_id(self, idx: int) -> str:
        return f"u{idx + 1:0{len(str(self.cfg.n_users))}d}"

    def _place_anchor(
        self,
        rng: np.random.Generator,
        user_id: str,
        around: Optional[GeoPoint],
        distance_range: Tuple[float, float],
        existing: Sequence[GeoPoint],
        accept: Callable[[GeoPoint], bool] = lambda p: True,
    ) -> GeoPoint:
        for _ in range(self.cfg.max_anchor_retries):
            if around is None:
                p = self._uniform_point(rng)
            else:
                bearing = rng.uniform(0.0, 2 * math.pi)
                p = destination(around, bearing, rng.uniform(*distance_range))
                if not self._inside(p):
                    continue
            if not np.any(self.restaurants.distances(p) <= self.restaurants.radii):
                continue
            if any(haversine_km(p, q) < self.min_anchor_gap for q in existing):
                continue
            if accept(p):
                return p
        raise ConfigError(
            f"scenario infeasible: no anchor with a reachable restaurant for user {user_id} "
            f"after {self.cfg.max_anchor_retries} attempts"
        )

    def _spell(self, rng: np.random.Generator, start: date, anchor: GeoPoint) -> _Spell:
        d = self.restaurants.distances(anchor)
        reach = np.flatnonzero(d <= self.restaurants.radii)
        weights = np.exp(-d[reach] / self.cfg.preference_scale_km)
        size = min(self.cfg.favorites_per_anchor, reach.size)
        picked = rng.choice(reach.size, size=size, replace=False, p=weights / weights.sum())
        picked.sort()
        favorites = reach[picked]
        return _Spell(
            start=start.toordinal(),
            anchor=anchor,
            favorites=favorites,
            cumulative=np.cumsum(weights[picked]),
        )

    def _move_month(self, rng: np.random.Generator) -> int:
        span = self.cfg.span_months
        margin = math.ceil(self.cfg.min_segment_share * span)
        low, high = max(1, margin), min(span - 1, span - margin)
        if low > high:
            raise ConfigError(f"span_months={span} leaves no month for a move")
        months = np.arange(low, high + 1)
        w = np.array([self.cfg.move_month_weights[self.first_month.shift(int(m)).month - 1] for m in months])
        if w.sum() <= 0:
            w = np.ones_like(w)
        return int(rng.choice(months, p=w / w.sum()))

    def generate_user(self, idx: int) -> Tuple[List[Order], UserTruth, List[TrueMove]]:
        cfg = self.cfg
        user_id = self._user_id(idx)
        script = _rng(self.seed, _USER, idx, _SCRIPT)
        shares = np.array([cfg.archetype_shares.get(a, 0.0) for a in ARCHETYPES])
        archetype = ARCHETYPES[int(script.choice(len(ARCHETYPES), p=shares / shares.sum()))]

        home = self._place_anchor(script, user_id, None, (0.0, 0.0), [])
        work = self._place_anchor(
            script, user_id, home, (cfg.min_commute_km, cfg.max_commute_km), [home]
        )
        anchors = {HubLabel.HOME: [(0, home)], HubLabel.WORK: [(0, work)]}

        scripted = []
        if archetype in ("home_mover", "both"):
            scripted.append((self._move_month(script), MoveKind.HOUSING))
        if archetype in ("job_hopper", "both"):
            scripted.append((self._move_month(script), MoveKind.JOB))

        moves = []
        for month_idx, kind in sorted(scripted, key=lambda s: (s[0], s[1].value)):
            label = kind.hub_label
            other = HubLabel.WORK if label is HubLabel.HOME else HubLabel.HOME
            old = anchors[label][-1][1]
            partner = anchors[other][-1][1]
            existing = [a for spells in anchors.values() for _, a in spells]

            def accept(p: GeoPoint, old=old, partner=partner) -> bool:
                if haversine_km(p, partner) < cfg.min_commute_km:
                    return False
                if cfg.moves_increase_commute:
                    return haversine_km(p, partner) > haversine_km(old, partner)
                return True

            new = self._place_anchor(
                script, user_id, old, (cfg.min_displacement_km, cfg.max_displacement_km), existing, accept
            )
            anchors[label].append((month_idx, new))
            moves.append(
                TrueMove(
                    user_id=user_id,
                    kind=kind,
                    month=self.first_month.shift(month_idx),
                    from_location=old,
                    to_location=new,
                )
            )

        spells = {
            label: [self._spell(script, self.first_month.shift(m).first_day(), a) for m, a in items]
            for label, items in anchors.items()
        }
        orders = self._orders(idx, user_id, spells)
        truth = UserTruth(user_id=user_id, archetype=archetype, anchors=self._anchor_spells(anchors))
        return orders, truth, moves

    def _anchor_spells(self, anchors: Dict[HubLabel, List[Tuple[int, GeoPoint]]]) -> Tuple[AnchorSpell, ...]:
        result = []
        for label in (HubLabel.HOME, HubLabel.WORK):
            items = anchors[label]
            for i, (month_idx, location) in enumerate(items):
                start = self.first_month.shift(month_idx).first_day()
                end = (
                    self.first_month.shift(items[i + 1][0]).first_day() - timedelta(days=1)
                    if i + 1 < len(items)
                    else self.last_day
                )
                result.append(AnchorSpell(kind=label, location=location, start=start, end=end))
        return tuple(result)

    def _orders(self, idx: int, user_id: str, spells: Dict[HubLabel, List[_Spell]]) -> List[Order]:
        cfg = self.cfg
        rng = _rng(self.seed, _USER, idx, _ORDERS)
        noise_rng = _rng(self.seed, _USER, idx, _NOISE)
        n = max(cfg.orders_per_user.min, int(rng.poisson(cfg.orders_per_user.mean)))

        is_work = rng.random(n) < cfg.work_share
        slot_u, day_u, minute_u, pick_u = rng.random((4, n))
        jitter = rng.normal(0.0, MINUTES_NOISE, n)
        # one draw per order and field regardless of the noise level
        noise_u, noise_pick, noise_bearing, noise_radius = noise_rng.random((4, n))

        starts = {label: np.array([s.start for s in items]) for label, items in spells.items()}
        orders: List[Order] = []
        taken = set()
        for i in range(n):
            label = HubLabel.WORK if is_work[i] else HubLabel.HOME
            cumulative = self._profiles[label]
            label_idx = int(np.searchsorted(cumulative, slot_u[i] * cumulative[-1], side="right"))
            label_idx = min(label_idx, len(cumulative) - 1)
            day_type = DAY_TYPES[label_idx // len(SLOTS)]
            slot = SLOTS[label_idx % len(SLOTS)]
            days = self.days[day_type]
            day = int(days[min(int(day_u[i] * days.size), days.size - 1)])
            start, length = _SLOT_WINDOWS[slot]
            minute = (start + int(minute_u[i] * length)) % (24 * 60)
            ts = datetime.fromordinal(day) + timedelta(minutes=minute)

            if noise_u[i] < cfg.noise:
                r = min(int(noise_pick[i] * len(self.restaurants.ids)), len(self.restaurants.ids) - 1)
                origin = self.restaurants.location(r)
                spot = destination(
                    origin,
                    2 * math.pi * noise_bearing[i],
                    float(self.restaurants.radii[r]) * math.sqrt(noise_radius[i]),
                )
                distance = haversine_km(spot, origin)
            else:
                spell = spells[label][int(np.searchsorted(starts[label], day, side="right")) - 1]
                k = int(np.searchsorted(spell.cumulative, pick_u[i] * spell.cumulative[-1], side="right"))
                r = int(spell.favorites[min(k, spell.favorites.size - 1)])
                distance = haversine_km(spell.anchor, self.restaurants.location(r))

            while (r, ts) in taken:
                ts += timedelta(minutes=1)
            taken.add((r, ts))
            minutes = max(MIN_MINUTES, BASE_MINUTES + MINUTES_PER_KM * distance + jitter[i])
            orders.append(
                Order(
                    user_id=user_id,
                    restaurant_id=self.restaurants.ids[r],
                    location=self.restaurants.location(r),
                    delivered_at=ts,
                    delivery_minutes=round(minutes, 1),
                )
            )
        return orders

    # --- geography and market ---

    def _grid_cells(self) -> Dict[str, object]:
        e = self.cfg.extent
        g = self.cfg.subdistrict_grid
        lat_edges = np.linspace(e.min_lat, e.max_lat, g + 1)
        lon_edges = np.linspace(e.min_lon, e.max_lon, g + 1)
        return {
            str(row * g + col + 1): box(lon_edges[col], lat_edges[row], lon_edges[col + 1], lat_edges[row + 1])
            for row in range(g)
            for col in range(g)
        }

    def _rings(self) -> Dict[str, object]:
        e = self.cfg.extent
        c_lat, c_lon = (e.min_lat + e.max_lat) / 2, (e.min_lon + e.max_lon) / 2
        h_lat, h_lon = (e.max_lat - e.min_lat) / 2, (e.max_lon - e.min_lon) / 2
        names = ("core", "inner", "outer")
        return {
            name: box(c_lon - f * h_lon, c_lat - f * h_lat, c_lon + f * h_lon, c_lat + f * h_lat)
            for name, f in zip(names, self.cfg.ring_fractions)
        }

    def center(self) -> GeoPoint:
        e = self.cfg.extent
        return GeoPoint((e.min_lat + e.max_lat) / 2, (e.min_lon + e.max_lon) / 2)

    def _census(self, cells: Dict[str, object], truth: GroundTruth) -> Dict[str, Tuple[float, float]]:
        counts = {sid: [0.0, 0.0] for sid in cells}
        for user in truth.users:
            for spell in user.anchors:
                point = to_point(spell.location)
                for sid, cell in cells.items():
                    if cell.covers(point):
                        counts[sid][0 if spell.kind is HubLabel.WORK else 1] += 1
                        break
        return {sid: (v[0], v[1]) for sid, v in counts.items()}

    def _transactions(self, cells: Dict[str, object]) -> List[Transaction]:
        cfg = self.cfg
        rng = _rng(self.seed, _CITY, 0, _MARKET)
        center = self.center()
        result = []
        for m in range(cfg.span_months):
            month = self.first_month.shift(m)
            for sid in sorted(cells, key=int):
                min_lon, min_lat, max_lon, max_lat = cells[sid].bounds
                k = cfg.transactions_per_cell_month
                lats = rng.uniform(min_lat, max_lat, k)
                lons = rng.uniform(min_lon, max_lon, k)
                noise = rng.normal(0.0, cfg.price_noise, k)
                d = haversine_km_arrays(center.lat, center.lon, lats, lons)
                prices = cfg.center_price_per_m2 * np.exp(-d / cfg.price_decay_km + noise)
                for lat, lon, price in zip(lats, lons, prices):
                    result.append(
                        Transaction(
                            location=GeoPoint(float(lat), float(lon)), month=month, price=round(float(price), 2)
                        )
                    )
        return result

    # --- entry point ---

    def build(self, workers: int = 1) -> SyntheticCity:
        results = parallel_map(_generate_user, range(self.cfg.n_users), workers, context={"generator": self})
        orders = [o for user_orders, _, _ in results for o in user_orders]
        truth = GroundTruth(
            users=tuple(t for _, t, _ in results),
            moves=tuple(m for _, _, user_moves in results for m in user_moves),
            restaurant_radius_km={rid: float(r) for rid, r in zip(self.restaurants.ids, self.restaurants.radii)},
            restaurant_method=dict(zip(self.restaurants.ids, self.restaurants.methods)),
        )
        cells = self._grid_cells()
        logger.info(
            f"Generated {len(orders)} orders for {self.cfg.n_users} users, {len(truth.moves)} scripted moves"
        )
        return SyntheticCity(
            orders=OrderLog(tuple(orders)),
            truth=truth,
            subdistricts=cells,
            rings=self._rings(),
            census=self._census(cells, truth),
            transactions=self._transactions(cells),
        )


def _generate_user(idx: int):
    return worker_context()["generator"].generate_user(idx)


def generate(
    cfg: ScenarioConfig, seed: int = 0, cal: Optional[HolidayCalendar] = None, workers: int = 1
) -> Tuple[OrderLog, GroundTruth]:
    """Журнал заказов и эталон по конфигурации сценария"""
    city = SyntheticCityGenerator(cfg, seed, cal).build(workers)
    return city.orders, city.truth
