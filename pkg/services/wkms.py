"""
Взвешенный ядерный MeanShift (WKMS) по ресторанам одного пользователя

Каждый ресторан весит 1 / (среднее время доставки), ядро гауссово по
расстоянию haversine, окрестность обрезана на truncation_sigmas * sigma.
"""

import logging
import math
from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from config.pipeline import KernelConfig
from models.domain import ClusterOutcome, DiningHub, GeoPoint, Order, WeightedSite
from utils.exceptions import InsufficientDataError
from utils.geo import (
    haversine_km,
    haversine_km_arrays,
    local_km_grid,
    offset_km,
    pairwise_km,
    weighted_centroid,
)

logger = logging.getLogger(__name__)

# доводка мод методом Ньютона
_REFINE_ITERATIONS = 50
_REFINE_TOL_KM = 1e-6


def restaurant_weights(orders_of_user: Sequence[Order], epsilon_minutes: float = 1.0) -> List[WeightedSite]:
    """Один WeightedSite на ресторан, вес = 1 / max(среднее время доставки, epsilon)"""
    grouped: "OrderedDict[str, List[Order]]" = OrderedDict()
    for order in orders_of_user:
        grouped.setdefault(order.restaurant_id, []).append(order)

    sites = []
    for restaurant_id in sorted(grouped):
        items = grouped[restaurant_id]
        mean_minutes = sum(o.delivery_minutes for o in items) / len(items)
        sites.append(
            WeightedSite(
                location=items[0].location,
                weight=1.0 / max(mean_minutes, epsilon_minutes),
                restaurant_id=restaurant_id,
                order_count=len(items),
            )
        )
    return sites


@dataclass(frozen=True)
class MeanShiftResult:
    modes: Tuple[GeoPoint, ...]
    seed_points: Tuple[GeoPoint, ...]
    nonconverged: frozenset


class WeightedMeanShift:
    """
    Mean-shift over weighted sites; every site is a seed

    Seeds are iterated together in restaurant_id order, so the result does
    not depend on how users are scheduled across workers.
    """

    def __init__(self, sites: Sequence[WeightedSite], cfg: KernelConfig):
        if not sites:
            raise ValueError("mean shift needs at least one site")
        self.sites = sorted(sites, key=lambda s: s.restaurant_id)
        self.cfg = cfg
        self.lats = np.array([s.location.lat for s in self.sites])
        self.lons = np.array([s.location.lon for s in self.sites])
        self.weights = np.array([s.weight for s in self.sites])

    def kernel(self, distances_km: np.ndarray) -> np.ndarray:
        """Weighted Gaussian kernel, zero beyond the truncation radius"""
        sigma = self.cfg.sigma_km
        k = self.weights * np.exp(-0.5 * (distances_km / sigma) ** 2)
        k[distances_km > self.cfg.truncation_sigmas * sigma] = 0.0
        return k

    def density(self, lat: float, lon: float) -> float:
        d = haversine_km_arrays(lat, lon, self.lats, self.lons)
        return float(self.kernel(np.atleast_1d(d)).sum())

    def shift_seeds(self) -> Tuple[np.ndarray, np.ndarray]:
        """Iterate all seeds to convergence; returns (points (n, 2), converged mask)"""
        points = np.column_stack([self.lats, self.lons]).astype(float)
        active = np.ones(len(self.sites), dtype=bool)
        converged = np.zeros(len(self.sites), dtype=bool)

        for _ in range(self.cfg.max_iterations):
            idx = np.flatnonzero(active)
            if idx.size == 0:
                break
            d = pairwise_km(points[idx, 0], points[idx, 1], self.lats, self.lons)
            k = self.kernel(d)
            total = k.sum(axis=1)

            stranded = total <= 0
            converged[idx[stranded]] = True
            active[idx[stranded]] = False

            moving = idx[~stranded]
            k = k[~stranded]
            total = total[~stranded]
            new_lat = k @ self.lats / total
            new_lon = k @ self.lons / total
            shift = haversine_km_arrays(points[moving, 0], points[moving, 1], new_lat, new_lon)
            points[moving, 0] = new_lat
            points[moving, 1] = new_lon

            done = moving[shift < self.cfg.convergence_tol_km]
            converged[done] = True
            active[done] = False

        return points, converged

    def refine(self, lat: float, lon: float) -> Tuple[float, float, bool]:
        """
        Settle a shifted seed on the density maximum it is heading to

        Mean shift slows down on flat hilltops and can stop well short of the
        maximum. Newton steps on the kernel sum (local tangent plane) finish the
        climb; a step is taken only where the Hessian is negative definite and
        the density does not drop, otherwise a plain mean-shift step is used.
        """
        sigma2 = self.cfg.sigma_km ** 2
        for _ in range(_REFINE_ITERATIONS):
            here = GeoPoint(lat, lon)
            north, east = local_km_grid(here, self.lats, self.lons)
            k = self.kernel(np.atleast_1d(haversine_km_arrays(lat, lon, self.lats, self.lons)))
            total = k.sum()
            if total <= 0:
                return lat, lon, False

            offsets = np.column_stack([north, east])
            mean_step = k @ offsets / total
            gradient = k @ offsets / sigma2
            hessian = (offsets.T * k) @ offsets / sigma2 ** 2 - total / sigma2 * np.eye(2)
            step = mean_step
            if np.trace(hessian) < 0 and np.linalg.det(hessian) > 0:
                newton = -np.linalg.solve(hessian, gradient)
                if np.hypot(*newton) <= self.cfg.sigma_km:
                    target = offset_km(here, float(newton[0]), float(newton[1]))
                    if self.density(target.lat, target.lon) >= total * (1.0 - 1e-12):
                        step = newton

            target = offset_km(here, float(step[0]), float(step[1]))
            lat, lon = target.lat, target.lon
            if np.hypot(*step) < _REFINE_TOL_KM:
                return lat, lon, True
        return lat, lon, False

    def merge(self, points: np.ndarray, members: np.ndarray) -> List[GeoPoint]:
        """Greedy merge within mode_merge_km in seed order; mode = weighted centroid of its basin"""
        groups: List[List[int]] = []
        anchors: List[GeoPoint] = []
        for i in members:
            p = GeoPoint(float(points[i, 0]), float(points[i, 1]))
            for g, anchor in enumerate(anchors):
                if haversine_km(anchor, p) <= self.cfg.mode_merge_km:
                    groups[g].append(int(i))
                    break
            else:
                anchors.append(p)
                groups.append([int(i)])

        return [
            weighted_centroid(
                [GeoPoint(float(points[i, 0]), float(points[i, 1])) for i in g], self.weights[g]
            )
            for g in groups
        ]

    def run(self) -> MeanShiftResult:
        points, converged = self.shift_seeds()
        for i in range(len(self.sites)):
            lat, lon, settled = self.refine(float(points[i, 0]), float(points[i, 1]))
            points[i] = (lat, lon)
            converged[i] |= settled
        members = np.flatnonzero(converged)
        if members.size == 0:
            members = np.arange(len(self.sites))
        modes = self.merge(points, members)
        nonconverged = frozenset(self.sites[i].restaurant_id for i in np.flatnonzero(~converged))
        if nonconverged:
            logger.debug(f"{len(nonconverged)} seeds did not converge in {self.cfg.max_iterations} iterations")
        return MeanShiftResult(
            modes=tuple(modes),
            seed_points=tuple(GeoPoint(float(la), float(lo)) for la, lo in points),
            nonconverged=nonconverged,
        )


def mean_shift_modes(sites: Sequence[WeightedSite], cfg: KernelConfig) -> List[GeoPoint]:
    """Моды взвешенной плотности"""
    return list(WeightedMeanShift(sites, cfg).run().modes)


def nearest_mode_assignment(
    sites: Sequence[WeightedSite], modes: Sequence[GeoPoint], sigma_km: float
) -> Dict[str, int]:
    """restaurant_id -> index of the nearest mode within sigma (sites farther away are left out)"""
    if not modes:
        return {}
    lats = np.array([s.location.lat for s in sites])
    lons = np.array([s.location.lon for s in sites])
    d = pairwise_km(lats, lons, np.array([m.lat for m in modes]), np.array([m.lon for m in modes]))
    nearest = np.argmin(d, axis=1)
    return {
        s.restaurant_id: int(nearest[i])
        for i, s in enumerate(sites)
        if d[i, nearest[i]] <= sigma_km
    }


def assign_hubs(
    orders_of_user: Sequence[Order],
    modes: Sequence[GeoPoint],
    cfg: KernelConfig,
    nonconverged: Iterable[str] = (),
) -> ClusterOutcome:
    """Разбивает рестораны пользователя на хабы вокруг мод; остальные в выбросы"""
    if not orders_of_user:
        raise ValueError("assign_hubs needs a non-empty order sequence")
    user_id = orders_of_user[0].user_id
    sites = restaurant_weights(orders_of_user, cfg.epsilon_minutes)
    by_id = {s.restaurant_id: s for s in sites}

    groups: Dict[int, List[WeightedSite]] = {}
    for restaurant_id, mode_idx in nearest_mode_assignment(sites, modes, cfg.sigma_km).items():
        groups.setdefault(mode_idx, []).append(by_id[restaurant_id])

    hubs_members: List[Tuple[GeoPoint, List[WeightedSite]]] = []
    for mode_idx in sorted(groups):
        members = groups[mode_idx]
        while members:
            center = weighted_centroid([s.location for s in members], [s.weight for s in members])
            kept = [s for s in members if haversine_km(s.location, center) <= cfg.sigma_km]
            if len(kept) == len(members):
                hubs_members.append((center, members))
                break
            members = kept

    hubs_members.sort(key=lambda item: (item[0].lat, item[0].lon))
    assigned = {s.restaurant_id for _, members in hubs_members for s in members}

    hubs = []
    for n, (center, members) in enumerate(hubs_members, start=1):
        ids = {s.restaurant_id for s in members}
        hubs.append(
            DiningHub(
                user_id=user_id,
                hub_id=f"{user_id}#{n}",
                center=center,
                members=frozenset(ids),
                orders=tuple(o for o in orders_of_user if o.restaurant_id in ids),
            )
        )

    outliers = frozenset(by_id) - assigned
    return ClusterOutcome(
        user_id=user_id,
        hubs=tuple(hubs),
        outliers=outliers,
        outlier_orders=tuple(o for o in orders_of_user if o.restaurant_id in outliers),
        clusterable=bool(hubs),
        nonconverged=frozenset(nonconverged),
    )


def cluster_user(orders_of_user: Sequence[Order], cfg: KernelConfig) -> ClusterOutcome:
    """Полный WKMS для одного пользователя: веса -> моды -> хабы"""
    sites = restaurant_weights(orders_of_user, cfg.epsilon_minutes)
    result = WeightedMeanShift(sites, cfg).run()
    return assign_hubs(orders_of_user, result.modes, cfg, result.nonconverged)


def _nearest_rank(sorted_values: np.ndarray, percentile: float) -> float:
    n = sorted_values.size
    rank = max(1, math.ceil(round(percentile * n / 100.0, 9)))
    return float(sorted_values[min(rank, n) - 1])


def estimate_bandwidth(delivery_distances: Sequence[Tuple[str, float]], percentile: float = 95) -> float:
    """Перцентиль (nearest-rank) объединённых дистанций доставки, км"""
    if not 0 < percentile < 100:
        raise ValueError(f"percentile must be in (0, 100), got {percentile}")
    if len(delivery_distances) == 0:
        raise InsufficientDataError("estimate_bandwidth needs at least one delivery distance")
    values = np.sort(np.array([d for _, d in delivery_distances], dtype=float))
    return _nearest_rank(values, percentile)


def bandwidth_table(
    delivery_distances: Sequence[Tuple[str, float]], percentiles: Sequence[float] = (95, 99)
) -> List[Dict[str, object]]:
    """Доля и перцентили дистанций по способам доставки плюс строка 'all'"""
    if len(delivery_distances) == 0:
        raise InsufficientDataError("bandwidth_table needs at least one delivery distance")
    by_method: Dict[str, List[float]] = {}
    for method, distance in delivery_distances:
        by_method.setdefault(method, []).append(distance)

    total = len(delivery_distances)
    rows = []
    for method in sorted(by_method) + ["all"]:
        values = [d for _, d in delivery_distances] if method == "all" else by_method[method]
        ordered = np.sort(np.array(values, dtype=float))
        row: Dict[str, object] = {"method": method, "share": len(values) / total, "n": len(values)}
        for p in percentiles:
            row[f"p{p:g}_km"] = _nearest_rank(ordered, p)
        rows.append(row)
    return rows
