import csv
import json
import logging
from dataclasses import replace
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from shapely.geometry import mapping

from models.domain import (
    GeoPoint,
    HubLabel,
    HubRecord,
    LoadReport,
    Move,
    MoveKind,
    Order,
    OrderLog,
    Transaction,
    UserGroup,
    UserProfile,
    YearMonth,
)
from models.geography import RingModel, SubdistrictSet, polygons_by_id
from models.truth import GroundTruth
from utils.exceptions import DataError

logger = logging.getLogger(__name__)

TIMESTAMP_FORMAT = "%Y-%m-%d %H:%M"

ORDER_HEADER = ["user_id", "restaurant_id", "lat", "lon", "arrive_time", "cost_time_min"]
HUB_HEADER = [
    "user_id",
    "hub_id",
    "center_lat",
    "center_lon",
    "n_restaurants",
    "n_orders",
    "first_order",
    "last_order",
]
LABELED_HUB_HEADER = HUB_HEADER + ["label"]
MOVE_HEADER = [
    "user_id",
    "kind",
    "from_lat",
    "from_lon",
    "to_lat",
    "to_lon",
    "move_month",
    "displacement_km",
    "pre_commute_km",
    "post_commute_km",
]
MOVE_METRICS_HEADER = ["user_id", "kind", "move_month", "from_month", "pre_overtime_ratio", "post_overtime_ratio"]
GROUP_HEADER = ["user_id", "groups", "commute_km", "overtime_ratio", "home_lat", "home_lon", "home_month"]
CENSUS_HEADER = ["subdistrict_id", "employment", "population"]
TRANSACTION_HEADER = ["lat", "lon", "month", "price_per_m2"]

EXCLUDED = "Excluded"

PathLike = Union[str, Path]


def format_value(value: Any) -> str:
    """Serialize one CSV cell: shortest round-trip floats, empty for None"""
    if value is None:
        return ""
    if isinstance(value, Enum):
        return str(value.value)
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(float(value))
    if isinstance(value, datetime):
        return value.strftime(TIMESTAMP_FORMAT)
    return str(value)


def _optional_float(text: str) -> Optional[float]:
    return float(text) if text != "" else None


def _optional_month(text: str) -> Optional[YearMonth]:
    return YearMonth.parse(text) if text != "" else None


def _read_rows(path: Path, header: Sequence[str]) -> Iterable[Tuple[int, List[str]]]:
    """Yield (line number, row) after checking the exact header"""
    if not path.exists():
        raise DataError(f"file not found: {path}")
    with path.open(newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        found = next(reader, None)
        if found != list(header):
            raise DataError(f"{path}: header mismatch, expected {','.join(header)}, got {','.join(found or [])}")
        for row in reader:
            if not row:
                continue
            yield reader.line_num, row


def _write_rows(path: Path, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> int:
    path.parent.mkdir(parents=True, exist_ok=True)
    count = 0
    with path.open("w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_value(v) for v in row])
            count += 1
    return count


class OrderRepository:
    """Repository for the order CSV file"""

    def __init__(self, path: PathLike):
        self.path = Path(path)

    @staticmethod
    def parse_row(row: List[str]) -> Order:
        if len(row) != len(ORDER_HEADER):
            raise ValueError(f"expected {len(ORDER_HEADER)} fields, got {len(row)}")
        user_id, restaurant_id, lat, lon, arrive_time, cost_time = row
        if not user_id or not restaurant_id:
            raise ValueError("empty user_id or restaurant_id")
        return Order(
            user_id=user_id,
            restaurant_id=restaurant_id,
            location=GeoPoint(float(lat), float(lon)),
            delivered_at=datetime.strptime(arrive_time, TIMESTAMP_FORMAT),
            delivery_minutes=float(cost_time),
        )

    def load(self) -> Tuple[OrderLog, LoadReport]:
        """Load orders; bad rows are rejected with line numbers, exact duplicates dropped"""
        report = LoadReport()
        seen = set()
        orders: List[Order] = []
        for line, row in _read_rows(self.path, ORDER_HEADER):
            report.n_rows += 1
            try:
                order = self.parse_row(row)
            except ValueError as e:
                report.rejected.append((line, str(e)))
                logger.warning(f"{self.path}:{line}: rejected row: {e}")
                continue
            if order in seen:
                report.duplicates += 1
                continue
            seen.add(order)
            orders.append(order)

        report.n_loaded = len(orders)
        logger.info(
            f"Loaded {report.n_loaded} orders from {self.path} "
            f"({len(report.rejected)} rejected, {report.duplicates} duplicates)"
        )
        return OrderLog(tuple(orders)), report

    def save(self, log: OrderLog) -> int:
        """Write the log in its stable order"""
        rows = (
            (o.user_id, o.restaurant_id, o.location.lat, o.location.lon, o.delivered_at, o.delivery_minutes)
            for o in log
        )
        count = _write_rows(self.path, ORDER_HEADER, rows)
        logger.info(f"Saved {count} orders to {self.path}")
        return count


class HubRepository:
    """Repository for hub CSV files (plain or labeled)"""

    def __init__(self, path: PathLike, labeled: bool = False):
        self.path = Path(path)
        self.labeled = labeled

    @property
    def header(self) -> List[str]:
        return LABELED_HUB_HEADER if self.labeled else HUB_HEADER

    def save(self, records: Iterable[HubRecord]) -> int:
        def row(r: HubRecord):
            base = [
                r.user_id,
                r.hub_id,
                r.center.lat,
                r.center.lon,
                r.n_restaurants,
                r.n_orders,
                r.first_order,
                r.last_order,
            ]
            return base + [r.label] if self.labeled else base

        return _write_rows(self.path, self.header, (row(r) for r in records))

    def load(self) -> List[HubRecord]:
        records = []
        for line, row in _read_rows(self.path, self.header):
            try:
                records.append(
                    HubRecord(
                        user_id=row[0],
                        hub_id=row[1],
                        center=GeoPoint(float(row[2]), float(row[3])),
                        n_restaurants=int(row[4]),
                        n_orders=int(row[5]),
                        first_order=datetime.strptime(row[6], TIMESTAMP_FORMAT),
                        last_order=datetime.strptime(row[7], TIMESTAMP_FORMAT),
                        label=HubLabel(row[8]) if self.labeled else None,
                    )
                )
            except (ValueError, IndexError) as e:
                raise DataError(f"{self.path}:{line}: malformed hub row: {e}")
        return records


class MoveRepository:
    """Repository for moves.csv and its companion move_metrics.csv"""

    def __init__(self, moves_path: PathLike, metrics_path: Optional[PathLike] = None):
        self.moves_path = Path(moves_path)
        self.metrics_path = Path(metrics_path) if metrics_path else None

    def save(self, moves: Sequence[Move]) -> int:
        count = _write_rows(
            self.moves_path,
            MOVE_HEADER,
            (
                (
                    m.user_id,
                    m.kind,
                    m.from_center.lat,
                    m.from_center.lon,
                    m.to_center.lat,
                    m.to_center.lon,
                    str(m.move_month),
                    m.displacement_km,
                    m.pre_commute_km,
                    m.post_commute_km,
                )
                for m in moves
            ),
        )
        if self.metrics_path is not None:
            _write_rows(
                self.metrics_path,
                MOVE_METRICS_HEADER,
                (
                    (
                        m.user_id,
                        m.kind,
                        str(m.move_month),
                        str(m.from_month) if m.from_month else None,
                        m.pre_overtime_ratio,
                        m.post_overtime_ratio,
                    )
                    for m in moves
                ),
            )
        return count

    def load(self) -> List[Move]:
        moves = []
        for line, row in _read_rows(self.moves_path, MOVE_HEADER):
            try:
                moves.append(
                    Move(
                        user_id=row[0],
                        kind=MoveKind(row[1]),
                        from_hub="",
                        to_hub="",
                        from_center=GeoPoint(float(row[2]), float(row[3])),
                        to_center=GeoPoint(float(row[4]), float(row[5])),
                        move_month=YearMonth.parse(row[6]),
                        displacement_km=float(row[7]),
                        pre_commute_km=_optional_float(row[8]),
                        post_commute_km=_optional_float(row[9]),
                    )
                )
            except (ValueError, IndexError) as e:
                raise DataError(f"{self.moves_path}:{line}: malformed move row: {e}")

        if self.metrics_path is None or not self.metrics_path.exists():
            return moves

        metrics = list(_read_rows(self.metrics_path, MOVE_METRICS_HEADER))
        if len(metrics) != len(moves):
            raise DataError(f"{self.metrics_path}: {len(metrics)} rows for {len(moves)} moves")
        merged = []
        for move, (line, row) in zip(moves, metrics):
            if (row[0], row[1], row[2]) != (move.user_id, move.kind.value, str(move.move_month)):
                raise DataError(f"{self.metrics_path}:{line}: row does not match moves.csv")
            merged.append(
                replace(
                    move,
                    from_month=_optional_month(row[3]),
                    pre_overtime_ratio=_optional_float(row[4]),
                    post_overtime_ratio=_optional_float(row[5]),
                )
            )
        return merged


class ProfileRepository:
    """Repository for groups.csv"""

    def __init__(self, path: PathLike):
        self.path = Path(path)

    @staticmethod
    def groups_cell(profile: UserProfile) -> str:
        if profile.excluded:
            return EXCLUDED
        return "|".join(sorted(g.value for g in profile.groups))

    def save(self, profiles: Iterable[UserProfile]) -> int:
        return _write_rows(
            self.path,
            GROUP_HEADER,
            (
                (
                    p.user_id,
                    self.groups_cell(p),
                    p.commute_km,
                    p.overtime_ratio,
                    p.home_center.lat if p.home_center else None,
                    p.home_center.lon if p.home_center else None,
                    str(p.home_month) if p.home_month else None,
                )
                for p in profiles
            ),
        )

    def load(self) -> List[UserProfile]:
        profiles = []
        for line, row in _read_rows(self.path, GROUP_HEADER):
            try:
                user_id, groups, commute, overtime, home_lat, home_lon, home_month = row
                excluded = groups == EXCLUDED
                profiles.append(
                    UserProfile(
                        user_id=user_id,
                        groups=frozenset() if excluded or not groups else frozenset(
                            UserGroup(g) for g in groups.split("|")
                        ),
                        excluded_reason=EXCLUDED if excluded else None,
                        commute_km=_optional_float(commute),
                        overtime_ratio=_optional_float(overtime),
                        home_center=GeoPoint(float(home_lat), float(home_lon)) if home_lat else None,
                        home_month=_optional_month(home_month),
                    )
                )
            except ValueError as e:
                raise DataError(f"{self.path}:{line}: malformed group row: {e}")
        return profiles


class GroundTruthRepository:
    """Repository for the synthetic ground truth JSON"""

    def __init__(self, path: PathLike):
        self.path = Path(path)

    def save(self, truth: GroundTruth) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps(truth.to_dict(), indent=2) + "\n", encoding="utf-8")

    def load(self) -> GroundTruth:
        if not self.path.exists():
            raise DataError(f"ground truth not found: {self.path}")
        try:
            return GroundTruth.from_dict(json.loads(self.path.read_text(encoding="utf-8")))
        except (json.JSONDecodeError, KeyError, ValueError) as e:
            raise DataError(f"invalid ground truth {self.path}: {e}")


class GeoRepository:
    """Repository for geographic and reference inputs of the analysis stage"""

    @staticmethod
    def _features(path: PathLike) -> List[Dict]:
        path = Path(path)
        if not path.exists():
            raise DataError(f"file not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise DataError(f"{path} is not valid GeoJSON: {e}")
        if data.get("type") != "FeatureCollection":
            raise DataError(f"{path}: expected a FeatureCollection")
        return data.get("features", [])

    def load_subdistricts(self, path: PathLike, census_path: Optional[PathLike] = None) -> SubdistrictSet:
        try:
            polygons = polygons_by_id(self._features(path))
            reference = self.load_census(census_path) if census_path else None
            subdistricts = SubdistrictSet(polygons=polygons, reference_series=reference)
        except ValueError as e:
            raise DataError(f"{path}: {e}")
        logger.info(f"Loaded {len(polygons)} subdistricts from {path}")
        return subdistricts

    def load_rings(self, path: PathLike) -> RingModel:
        try:
            return RingModel.from_polygons(polygons_by_id(self._features(path)))
        except ValueError as e:
            raise DataError(f"{path}: {e}")

    def load_census(self, path: PathLike) -> Dict[str, Tuple[float, float]]:
        reference: Dict[str, Tuple[float, float]] = {}
        for line, row in _read_rows(Path(path), CENSUS_HEADER):
            try:
                sid, employment, population = row
                reference[sid] = (float(employment), float(population))
            except ValueError as e:
                raise DataError(f"{path}:{line}: malformed census row: {e}")
        return reference

    def load_transactions(self, path: PathLike) -> List[Transaction]:
        transactions = []
        for line, row in _read_rows(Path(path), TRANSACTION_HEADER):
            try:
                lat, lon, month, price = row
                transactions.append(
                    Transaction(
                        location=GeoPoint(float(lat), float(lon)), month=YearMonth.parse(month), price=float(price)
                    )
                )
            except ValueError as e:
                logger.warning(f"{path}:{line}: rejected transaction: {e}")
        logger.info(f"Loaded {len(transactions)} transactions from {path}")
        return transactions

    def save_features(self, path: PathLike, polygons: Dict[str, Any]) -> None:
        """Write {id: shapely geometry} as a GeoJSON FeatureCollection"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        collection = {
            "type": "FeatureCollection",
            "features": [
                {"type": "Feature", "properties": {"id": fid}, "geometry": mapping(geom)}
                for fid, geom in polygons.items()
            ],
        }
        path.write_text(json.dumps(collection) + "\n", encoding="utf-8")

    def save_census(self, path: PathLike, reference: Dict[str, Tuple[float, float]]) -> int:
        return _write_rows(
            Path(path), CENSUS_HEADER, ((sid, emp, pop) for sid, (emp, pop) in reference.items())
        )

    def save_transactions(self, path: PathLike, transactions: Iterable[Transaction]) -> int:
        return _write_rows(
            Path(path),
            TRANSACTION_HEADER,
            ((t.location.lat, t.location.lon, str(t.month), t.price) for t in transactions),
        )


class ReportWriter:
    """Writes report CSV/JSON files into the output directory"""

    def __init__(self, out_dir: PathLike):
        self.out_dir = Path(out_dir)

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        target = self.path(name)
        count = _write_rows(target, header, rows)
        logger.debug(f"Wrote {count} rows to {target}")
        return target

    def write_json(self, name: str, payload: Any) -> Path:
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        target.write_text(json.dumps(payload, indent=2, default=_json_default) + "\n", encoding="utf-8")
        return target


def _json_default(value: Any):
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, datetime):
        return format_value(value)
    if isinstance(value, YearMonth):
        return str(value)
    if hasattr(value, "item"):
        return value.item()
    raise TypeError(f"not JSON serializable: {type(value).__name__}")
