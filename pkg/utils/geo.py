"""Геодезия: расстояния по большому кругу и локальные смещения"""

import math
from typing import Sequence, Tuple

import numpy as np

from models.domain import GeoPoint

EARTH_RADIUS_KM = 6371.0


def haversine_km(a: GeoPoint, b: GeoPoint) -> float:
    """Great-circle distance between two WGS84 points, km"""
    if a == b:
        return 0.0
    phi1 = math.radians(a.lat)
    phi2 = math.radians(b.lat)
    dphi = math.radians(b.lat - a.lat)
    dlambda = math.radians(b.lon - a.lon)
    h = math.sin(dphi / 2) ** 2 + math.cos(phi1) * math.cos(phi2) * math.sin(dlambda / 2) ** 2
    return 2 * EARTH_RADIUS_KM * math.asin(min(1.0, math.sqrt(h)))


def haversine_km_arrays(lat1, lon1, lat2, lon2) -> np.ndarray:
    """Векторизованный haversine; аргументы транслируются по правилам numpy"""
    lat1 = np.radians(np.asarray(lat1, dtype=float))
    lat2 = np.radians(np.asarray(lat2, dtype=float))
    dlat = lat2 - lat1
    dlon = np.radians(np.asarray(lon2, dtype=float) - np.asarray(lon1, dtype=float))
    h = np.sin(dlat / 2) ** 2 + np.cos(lat1) * np.cos(lat2) * np.sin(dlon / 2) ** 2
    return 2 * EARTH_RADIUS_KM * np.arcsin(np.minimum(1.0, np.sqrt(h)))


def pairwise_km(lats_a: np.ndarray, lons_a: np.ndarray, lats_b: np.ndarray, lons_b: np.ndarray) -> np.ndarray:
    """Matrix of distances, rows = a, columns = b"""
    return haversine_km_arrays(
        np.asarray(lats_a)[:, None],
        np.asarray(lons_a)[:, None],
        np.asarray(lats_b)[None, :],
        np.asarray(lons_b)[None, :],
    )


def weighted_centroid(points: Sequence[GeoPoint], weights: Sequence[float]) -> GeoPoint:
    """Weighted mean of coordinates (valid for city-scale extents)"""
    w = np.asarray(weights, dtype=float)
    lats = np.array([p.lat for p in points])
    lons = np.array([p.lon for p in points])
    total = w.sum()
    return GeoPoint(float(np.dot(w, lats) / total), float(np.dot(w, lons) / total))


def offset_km(origin: GeoPoint, north_km: float, east_km: float) -> GeoPoint:
    """Point displaced from origin along the local tangent plane"""
    dlat = math.degrees(north_km / EARTH_RADIUS_KM)
    dlon = math.degrees(east_km / (EARTH_RADIUS_KM * math.cos(math.radians(origin.lat))))
    return GeoPoint(origin.lat + dlat, origin.lon + dlon)


def destination(origin: GeoPoint, bearing_rad: float, distance_km: float) -> GeoPoint:
    """Точка на заданном расстоянии и азимуте (сфера)"""
    delta = distance_km / EARTH_RADIUS_KM
    phi1 = math.radians(origin.lat)
    lam1 = math.radians(origin.lon)
    phi2 = math.asin(
        math.sin(phi1) * math.cos(delta) + math.cos(phi1) * math.sin(delta) * math.cos(bearing_rad)
    )
    lam2 = lam1 + math.atan2(
        math.sin(bearing_rad) * math.sin(delta) * math.cos(phi1),
        math.cos(delta) - math.sin(phi1) * math.sin(phi2),
    )
    lon = (math.degrees(lam2) + 540.0) % 360.0 - 180.0
    return GeoPoint(math.degrees(phi2), lon)


def local_km_grid(
    center: GeoPoint, lats: np.ndarray, lons: np.ndarray
) -> Tuple[np.ndarray, np.ndarray]:
    """Equirectangular projection around center: (north_km, east_km)"""
    north = np.radians(np.asarray(lats) - center.lat) * EARTH_RADIUS_KM
    east = np.radians(np.asarray(lons) - center.lon) * EARTH_RADIUS_KM * math.cos(math.radians(center.lat))
    return north, east
