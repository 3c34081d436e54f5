"""
Агрегированная аналитика: помесячные ряды переездов, потоки между
подрайонами, отношение работа/дом, цены жилья, переходы между кольцами,
карты плотности
"""

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import networkx as nx
import numpy as np
from sklearn.neighbors import KernelDensity

from models.domain import (
    GeoPoint,
    HubLabel,
    HubRecord,
    Move,
    MoveKind,
    Transaction,
    UserProfile,
    YearMonth,
    month_range,
)
from models.geography import Region, RingModel, SubdistrictSet, id_sort_key
from services.statistics import paired_t, pearson_p, pearson_r, summarize, welch_t
from utils.exceptions import InsufficientDataError
from utils.geo import EARTH_RADIUS_KM, haversine_km_arrays

logger = logging.getLogger(__name__)

OUTSIDE = "Outside"


def monthly_move_counts(
    moves: Iterable[Move], span: Optional[Tuple[YearMonth, YearMonth]] = None
) -> Dict[MoveKind, "OrderedDict[YearMonth, int]"]:
    """Число переездов каждого вида по месяцам; пустые месяцы заполнены нулями"""
    moves = list(moves)
    months = [m.move_month for m in moves]
    if span is not None:
        months += list(span)
    result: Dict[MoveKind, "OrderedDict[YearMonth, int]"] = {}
    axis = month_range(min(months), max(months)) if months else []
    for kind in MoveKind:
        series: "OrderedDict[YearMonth, int]" = OrderedDict((ym, 0) for ym in axis)
        for move in moves:
            if move.kind is kind:
                series[move.move_month] += 1
        result[kind] = series
    return result


def seasonal_profile(series: Mapping[YearMonth, int]) -> List[int]:
    """Сворачивает ряд по месяцам года: индекс 0 = январь"""
    totals = [0] * 12
    for ym, count in series.items():
        totals[ym.month - 1] += count
    return totals


def point_to_subdistrict(p: GeoPoint, s: SubdistrictSet) -> Optional[str]:
    """Id подрайона или None (Outside); точка на границе уходит в меньший id"""
    return s.locate(p)


@dataclass
class FlowGraph:
    """Directed subdistrict graph; edge attribute 'count'"""

    graph: nx.DiGraph
    spill: int = 0

    def nodes(self) -> Dict[str, Tuple[int, int]]:
        """id -> (total incident moves, in minus out)"""
        result = {}
        for node in sorted(self.graph.nodes, key=id_sort_key):
            inbound = int(self.graph.in_degree(node, weight="count"))
            outbound = int(self.graph.out_degree(node, weight="count"))
            result[node] = (inbound + outbound, inbound - outbound)
        return result

    def edges(self) -> Dict[Tuple[str, str], int]:
        return {
            (u, v): int(c)
            for u, v, c in sorted(
                self.graph.edges.data("count"), key=lambda e: (id_sort_key(e[0]), id_sort_key(e[1]))
            )
        }


def flow_graph(moves: Iterable[Move], s: SubdistrictSet) -> FlowGraph:
    """Граф потоков переездов между подрайонами; концы вне области идут в spill"""
    graph = nx.DiGraph()
    graph.add_nodes_from(s.ids)
    spill = 0
    for move in moves:
        source = s.locate(move.from_center)
        target = s.locate(move.to_center)
        if source is None or target is None:
            spill += 1
            continue
        if graph.has_edge(source, target):
            graph[source][target]["count"] += 1
        else:
            graph.add_edge(source, target, count=1)
    if spill:
        logger.info(f"Flow graph: {spill} moves with an endpoint outside the study area")
    return FlowGraph(graph=graph, spill=spill)


@dataclass
class WorkHomeRatios:
    ratios: Dict[str, float] = field(default_factory=dict)
    counts: Dict[str, Tuple[int, int]] = field(default_factory=dict)
    excluded: List[str] = field(default_factory=list)
    r: Optional[float] = None
    p: Optional[float] = None
    n_common: int = 0


def work_home_ratios(labeled_hubs: Iterable[HubRecord], s: SubdistrictSet) -> WorkHomeRatios:
    """#W / #H хабов по подрайонам; подрайоны без H хабов исключаются"""
    counts: Dict[str, List[int]] = {}
    for hub in labeled_hubs:
        if hub.label not in (HubLabel.HOME, HubLabel.WORK):
            continue
        sid = s.locate(hub.center)
        if sid is None:
            continue
        entry = counts.setdefault(sid, [0, 0])
        entry[0 if hub.label is HubLabel.WORK else 1] += 1

    result = WorkHomeRatios()
    for sid in sorted(counts, key=id_sort_key):
        work, home = counts[sid]
        result.counts[sid] = (work, home)
        if home == 0:
            result.excluded.append(sid)
        else:
            result.ratios[sid] = work / home
    if result.excluded:
        logger.info(f"Work-home ratio: {len(result.excluded)} subdistricts without H hubs excluded")
    return result


def work_home_ratio_correlation(labeled_hubs: Iterable[HubRecord], s: SubdistrictSet) -> WorkHomeRatios:
    """Отношения работа/дом и корреляция Пирсона с переписью (занятость / население)"""
    result = work_home_ratios(labeled_hubs, s)
    if not s.reference_series:
        raise InsufficientDataError("no census reference series for the correlation")
    common = [
        sid for sid in result.ratios if sid in s.reference_series and s.reference_series[sid][1] > 0
    ]
    result.n_common = len(common)
    if len(common) < 3:
        raise InsufficientDataError(f"correlation needs >= 3 common subdistricts, got {len(common)}")
    detected = [result.ratios[sid] for sid in common]
    reference = [s.reference_series[sid][0] / s.reference_series[sid][1] for sid in common]
    result.r = pearson_r(detected, reference)
    result.p = pearson_p(result.r, len(common))
    logger.info(f"Work-home ratio vs census: r={result.r:.4f} over {len(common)} subdistricts")
    return result


class PriceMatcher:
    """Транзакции, сгруппированные по месяцам, для быстрых запросов по радиусу"""

    def __init__(self, txns: Iterable[Transaction]):
        by_month: Dict[YearMonth, List[Transaction]] = {}
        for txn in txns:
            by_month.setdefault(txn.month, []).append(txn)
        self._by_month = {
            month: (
                np.array([t.location.lat for t in items]),
                np.array([t.location.lon for t in items]),
                np.array([t.price for t in items]),
            )
            for month, items in by_month.items()
        }

    def median_price(self, center: GeoPoint, month: YearMonth, radius_km: float = 3.0) -> Optional[float]:
        if month not in self._by_month:
            return None
        lats, lons, prices = self._by_month[month]
        near = haversine_km_arrays(center.lat, center.lon, lats, lons) <= radius_km
        if not near.any():
            return None
        return float(np.median(prices[near]))


def match_housing_price(
    h_hub_center: GeoPoint, month: YearMonth, txns: Iterable[Transaction], radius_km: float = 3.0
) -> Optional[float]:
    """Медиана цены сделок того же месяца в радиусе radius_km; None = NoMatch"""
    return PriceMatcher(txns).median_price(h_hub_center, month, radius_km)


@dataclass(frozen=True)
class BinStat:
    index: int
    lower: float
    upper: float
    mean_diff: float
    count: int


def binned_post_pre_diff(pairs: Iterable[Tuple[float, float]], bin_width: float) -> List[BinStat]:
    """Средняя разность post - pre по корзинам floor(pre / width)"""
    if not bin_width > 0:
        raise ValueError(f"bin_width must be positive, got {bin_width}")
    bins: Dict[int, List[float]] = {}
    for pre, post in pairs:
        bins.setdefault(math.floor(pre / bin_width), []).append(post - pre)
    return [
        BinStat(
            index=i,
            lower=i * bin_width,
            upper=(i + 1) * bin_width,
            mean_diff=float(np.mean(bins[i])),
            count=len(bins[i]),
        )
        for i in sorted(bins)
    ]


@dataclass(frozen=True)
class HousingMoveOutcome:
    """A housing move with matched prices and commutes on both sides"""

    user_id: str
    from_location: GeoPoint
    to_location: GeoPoint
    pre_price: float
    post_price: float
    pre_commute_km: float
    post_commute_km: float


@dataclass(frozen=True)
class RegionCell:
    from_region: Region
    to_region: Region
    mean_price_diff: float
    mean_commute_diff: float
    count: int


def region_transitions(
    housing_moves: Iterable[HousingMoveOutcome], rings: RingModel
) -> Tuple[List[RegionCell], int]:
    """Таблица (откуда, куда) -> средние изменения цены и дистанции поездки; второй элемент - spill"""
    cells: Dict[Tuple[Region, Region], List[Tuple[float, float]]] = {}
    spill = 0
    for move in housing_moves:
        source = rings.region_of(move.from_location)
        target = rings.region_of(move.to_location)
        if Region.OUTSIDE in (source, target):
            spill += 1
            continue
        cells.setdefault((source, target), []).append(
            (move.post_price - move.pre_price, move.post_commute_km - move.pre_commute_km)
        )

    order = list(Region)
    table = []
    for key in sorted(cells, key=lambda k: (order.index(k[0]), order.index(k[1]))):
        diffs = np.array(cells[key])
        table.append(
            RegionCell(
                from_region=key[0],
                to_region=key[1],
                mean_price_diff=float(diffs[:, 0].mean()),
                mean_commute_diff=float(diffs[:, 1].mean()),
                count=len(diffs),
            )
        )
    return table, spill


def destination_shares(moves: Iterable[Move], rings: RingModel) -> Dict[str, float]:
    """Доли переездов по региону назначения"""
    counts = {region.value: 0 for region in Region}
    total = 0
    for move in moves:
        counts[rings.region_of(move.to_center).value] += 1
        total += 1
    return {region: (count / total if total else 0.0) for region, count in counts.items()}


@dataclass
class KdeGrid:
    lats: np.ndarray
    lons: np.ndarray
    density: np.ndarray  # shape (len(lats), len(lons)), per km^2
    cell_km: float

    def rows(self) -> Iterable[Tuple[float, float, float]]:
        for i, lat in enumerate(self.lats):
            for j, lon in enumerate(self.lons):
                yield float(lat), float(lon), float(self.density[i, j])

    def integral(self) -> float:
        return float(self.density.sum() * self.cell_km ** 2)


def kde_hotspot_grid(points: Sequence[GeoPoint], cell_km: float = 0.5, bandwidth_km: float = 2.0) -> KdeGrid:
    """Гауссова KDE на регулярной сетке вокруг точек с отступом 3 полосы"""
    if not points:
        raise InsufficientDataError("kde_hotspot_grid needs at least one point")
    lats = np.array([p.lat for p in points])
    lons = np.array([p.lon for p in points])
    mid_lat = math.radians((lats.min() + lats.max()) / 2)
    km_per_deg = math.radians(1.0) * EARTH_RADIUS_KM
    dlat = cell_km / km_per_deg
    dlon = cell_km / (km_per_deg * math.cos(mid_lat))
    pad_lat = 3 * bandwidth_km / km_per_deg
    pad_lon = 3 * bandwidth_km / (km_per_deg * math.cos(mid_lat))

    grid_lats = np.arange(lats.min() - pad_lat, lats.max() + pad_lat + dlat / 2, dlat)
    grid_lons = np.arange(lons.min() - pad_lon, lons.max() + pad_lon + dlon / 2, dlon)
    mesh_lat, mesh_lon = np.meshgrid(grid_lats, grid_lons, indexing="ij")

    kde = KernelDensity(
        bandwidth=bandwidth_km / EARTH_RADIUS_KM, metric="haversine", kernel="gaussian", algorithm="ball_tree"
    )
    kde.fit(np.radians(np.column_stack([lats, lons])))
    log_density = kde.score_samples(np.radians(np.column_stack([mesh_lat.ravel(), mesh_lon.ravel()])))
    raw = np.exp(log_density - log_density.max()).reshape(mesh_lat.shape)
    density = raw / (raw.sum() * cell_km ** 2)
    return KdeGrid(lats=grid_lats, lons=grid_lons, density=density, cell_km=cell_km)


def _welch_or_note(a: Sequence[float], b: Sequence[float]) -> Dict[str, object]:
    try:
        return welch_t(a, b).as_dict()
    except InsufficientDataError as e:
        return {"error": str(e)}


def _paired_or_note(pairs: Sequence[Tuple[float, float]]) -> Dict[str, object]:
    try:
        return paired_t([p for p, _ in pairs], [q for _, q in pairs]).as_dict()
    except InsufficientDataError as e:
        return {"error": str(e)}


def compare_groups(baseline_name: str, groups: Mapping[str, Sequence[float]]) -> Dict[str, object]:
    """Средние по группам и t Уэлча каждой группы против базовой"""
    baseline = groups[baseline_name]
    return {
        "groups": {name: summarize(values) for name, values in groups.items()},
        "tests": {
            name: _welch_or_note(values, baseline) for name, values in groups.items() if name != baseline_name
        },
    }


@dataclass
class PriceContext:
    """Prices matched for stayers' homes and both sides of housing moves"""

    stayer_prices: Dict[str, Optional[float]] = field(default_factory=dict)
    move_prices: List[Tuple[Move, Optional[float], Optional[float]]] = field(default_factory=list)

    @property
    def matched_rate(self) -> Optional[float]:
        values = list(self.stayer_prices.values()) + [v for _, pre, post in self.move_prices for v in (pre, post)]
        if not values:
            return None
        return sum(v is not None for v in values) / len(values)


def match_prices(
    profiles: Iterable[UserProfile], moves: Iterable[Move], matcher: PriceMatcher, radius_km: float
) -> PriceContext:
    context = PriceContext()
    for profile in profiles:
        if profile.home_center is not None and profile.home_month is not None:
            context.stayer_prices[profile.user_id] = matcher.median_price(
                profile.home_center, profile.home_month, radius_km
            )
    for move in moves:
        if move.kind is not MoveKind.HOUSING:
            continue
        pre = (
            matcher.median_price(move.from_center, move.from_month, radius_km) if move.from_month is not None else None
        )
        post = matcher.median_price(move.to_center, move.move_month, radius_km)
        context.move_prices.append((move, pre, post))
    logger.info(f"Housing prices matched for {context.matched_rate} of lookups")
    return context


def group_comparisons(
    profiles: Sequence[UserProfile], moves: Sequence[Move], prices: Optional[PriceContext] = None
) -> Dict[str, object]:
    """Сравнение стайеров с переезжающими: дистанция поездки, overtime, цена жилья"""
    stayer_commute = [p.commute_km for p in profiles if p.commute_km is not None]
    stayer_overtime = [p.overtime_ratio for p in profiles if p.overtime_ratio is not None]
    job = [m for m in moves if m.kind is MoveKind.JOB]
    housing = [m for m in moves if m.kind is MoveKind.HOUSING]

    def commute_pairs(items):
        return [
            (m.pre_commute_km, m.post_commute_km)
            for m in items
            if m.pre_commute_km is not None and m.post_commute_km is not None
        ]

    result: Dict[str, object] = {
        "commute_km": compare_groups(
            "Stayer",
            {
                "Stayer": stayer_commute,
                "JobHopper": [m.pre_commute_km for m in job if m.pre_commute_km is not None],
                "HomeMover": [m.pre_commute_km for m in housing if m.pre_commute_km is not None],
            },
        ),
        "overtime_ratio": compare_groups(
            "Stayer",
            {
                "Stayer": stayer_overtime,
                "JobHopper": [m.pre_overtime_ratio for m in job if m.pre_overtime_ratio is not None],
            },
        ),
        "paired": {
            "commute_km_job": _paired_or_note(commute_pairs(job)),
            "commute_km_housing": _paired_or_note(commute_pairs(housing)),
            "overtime_ratio_job": _paired_or_note(
                [
                    (m.pre_overtime_ratio, m.post_overtime_ratio)
                    for m in job
                    if m.pre_overtime_ratio is not None and m.post_overtime_ratio is not None
                ]
            ),
        },
    }
    if prices is not None:
        stayer_prices = [v for v in prices.stayer_prices.values() if v is not None]
        mover_prices = [pre for _, pre, _ in prices.move_prices if pre is not None]
        result["housing_price"] = compare_groups("Stayer", {"Stayer": stayer_prices, "HomeMover": mover_prices})
        result["paired"]["housing_price"] = _paired_or_note(
            [(pre, post) for _, pre, post in prices.move_prices if pre is not None and post is not None]
        )
        result["price_matched_rate"] = prices.matched_rate
    return result


def hub_statistics(records: Sequence[HubRecord], n_users: Optional[int] = None) -> Dict[str, object]:
    """Хабы на пользователя, доля пользователей без хабов, счётчики H/W/O"""
    per_user: Dict[str, int] = {}
    for record in records:
        per_user[record.user_id] = per_user.get(record.user_id, 0) + 1
    labels = {label.value: sum(1 for r in records if r.label is label) for label in HubLabel}
    stats: Dict[str, object] = {
        "hubs": len(records),
        "users_with_hubs": len(per_user),
        "hubs_per_user": summarize(list(per_user.values())),
        "labels": labels,
    }
    if n_users:
        stats["unclusterable_rate"] = 1.0 - len(per_user) / n_users
    return stats
