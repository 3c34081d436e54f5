from dataclasses import dataclass, field
from enum import Enum
from typing import Dict, List, Mapping, Optional, Tuple

from shapely.geometry import Point, shape
from shapely.geometry.base import BaseGeometry
from shapely.prepared import prep
from shapely.strtree import STRtree

from models.domain import GeoPoint


def id_sort_key(subdistrict_id: str) -> Tuple[int, int, str]:
    """Numeric ids sort numerically, the rest lexicographically after them"""
    text = str(subdistrict_id)
    if text.isdigit():
        return (0, int(text), text)
    return (1, 0, text)


def to_point(p: GeoPoint) -> Point:
    return Point(p.lon, p.lat)


@dataclass(frozen=True)
class SubdistrictSet:
    """Subdistrict polygons (lon/lat axis order) plus optional census reference"""

    polygons: Mapping[str, BaseGeometry]
    reference_series: Optional[Mapping[str, Tuple[float, float]]] = None
    _ids: Tuple[str, ...] = field(default=(), init=False, repr=False, compare=False)
    _tree: Optional[STRtree] = field(default=None, init=False, repr=False, compare=False)
    _prepared: Tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        for sid, geom in self.polygons.items():
            if geom.geom_type not in ("Polygon", "MultiPolygon"):
                raise ValueError(f"subdistrict {sid}: expected polygon geometry, got {geom.geom_type}")
            if geom.is_empty or not geom.is_valid:
                raise ValueError(f"subdistrict {sid}: polygon is empty or self-intersecting")
        ids = tuple(sorted(self.polygons, key=id_sort_key))
        geoms = [self.polygons[i] for i in ids]
        object.__setattr__(self, "_ids", ids)
        object.__setattr__(self, "_tree", STRtree(geoms) if geoms else None)
        object.__setattr__(self, "_prepared", tuple(prep(g) for g in geoms))

    @property
    def ids(self) -> Tuple[str, ...]:
        return self._ids

    def locate(self, p: GeoPoint) -> Optional[str]:
        """Subdistrict containing p (boundary counts as inside; lowest id wins); None = Outside"""
        if self._tree is None:
            return None
        point = to_point(p)
        candidates = sorted(int(i) for i in self._tree.query(point))
        for idx in candidates:
            if self._prepared[idx].covers(point):
                return self._ids[idx]
        return None

    def with_reference(self, reference: Mapping[str, Tuple[float, float]]) -> "SubdistrictSet":
        return SubdistrictSet(polygons=self.polygons, reference_series=dict(reference))


class Region(str, Enum):
    CITY_CORE = "CityCore"
    INNER_SUBURB = "InnerSuburb"
    OUTER_SUBURB = "OuterSuburb"
    OUTSIDE = "Outside"


RING_REGIONS = (Region.CITY_CORE, Region.INNER_SUBURB, Region.OUTER_SUBURB)


@dataclass(frozen=True)
class RingModel:
    """Three nested ring polygons, innermost first"""

    rings: Tuple[BaseGeometry, ...]
    ring_ids: Tuple[str, ...] = ()
    _prepared: Tuple = field(default=(), init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.rings) != len(RING_REGIONS):
            raise ValueError(f"ring model needs exactly {len(RING_REGIONS)} rings, got {len(self.rings)}")
        for inner, outer in zip(self.rings, self.rings[1:]):
            # допуск на совпадающие участки границ
            if not outer.buffer(1e-9).covers(inner):
                raise ValueError("rings must be nested")
        object.__setattr__(self, "_prepared", tuple(prep(r) for r in self.rings))

    @classmethod
    def from_polygons(cls, polygons: Mapping[str, BaseGeometry]) -> "RingModel":
        ordered = sorted(polygons.items(), key=lambda item: (item[1].area, id_sort_key(item[0])))
        return cls(rings=tuple(g for _, g in ordered), ring_ids=tuple(i for i, _ in ordered))

    def region_of(self, p: GeoPoint) -> Region:
        point = to_point(p)
        for region, ring in zip(RING_REGIONS, self._prepared):
            if ring.covers(point):
                return region
        return Region.OUTSIDE


def polygons_by_id(features: List[Dict]) -> Dict[str, BaseGeometry]:
    """GeoJSON features -> {id: geometry}; duplicate ids are an error"""
    result: Dict[str, BaseGeometry] = {}
    for n, feature in enumerate(features):
        props = feature.get("properties") or {}
        fid = props.get("id", feature.get("id"))
        if fid is None:
            raise ValueError(f"feature #{n} has no 'id' property")
        fid = str(fid)
        if fid in result:
            raise ValueError(f"duplicate id '{fid}'")
        result[fid] = shape(feature["geometry"])
    return result
