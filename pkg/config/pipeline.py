"""Типизированная конфигурация пайплайна (JSON-файл + флаги CLI)"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from config.settings import settings
from models.domain import N_SLOT_LABELS, YearMonth
from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

DELIVERY_METHODS = ("baidulogistics", "baiduzhongbao", "cityexpress", "self")

# Percentages of delivery methods among restaurants and their 95th percentile distances
_METHOD_PERCENT = {"baidulogistics": 60.11, "baiduzhongbao": 4.73, "cityexpress": 23.57, "self": 11.58}
_METHOD_P95_KM = {"baidulogistics": 3.35, "baiduzhongbao": 3.70, "cityexpress": 4.18, "self": 14.87}
_METHOD_SHAPE = {"baidulogistics": 0.15, "baiduzhongbao": 0.15, "cityexpress": 0.15, "self": 1.2}
_METHOD_CAP_KM = {"baidulogistics": 8.0, "baiduzhongbao": 8.0, "cityexpress": 8.0, "self": 21.7}

# weekday x5, weekend x5, holiday x5; slots: morning, noon, afternoon, evening, night
HOME_SLOT_PROFILE = [
    0.02, 0.03, 0.02, 0.20, 0.08,
    0.06, 0.16, 0.10, 0.14, 0.04,
    0.03, 0.05, 0.03, 0.03, 0.01,
]
WORK_SLOT_PROFILE = [
    0.12, 0.62, 0.14, 0.06, 0.01,
    0.00, 0.03, 0.01, 0.01, 0.00,
    0.00, 0.00, 0.00, 0.00, 0.00,
]
MOVE_MONTH_WEIGHTS = [0.06, 0.06, 0.16, 0.09, 0.07, 0.07, 0.11, 0.11, 0.07, 0.07, 0.07, 0.06]


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


def _check_shares(shares: Dict[str, float], name: str) -> Dict[str, float]:
    if any(v < 0 for v in shares.values()):
        raise ValueError(f"{name} must be non-negative")
    if abs(sum(shares.values()) - 1.0) > 1e-9:
        raise ValueError(f"{name} must sum to 1, got {sum(shares.values())}")
    return shares


def _check_profile(profile: List[float]) -> List[float]:
    if len(profile) != N_SLOT_LABELS:
        raise ValueError(f"slot profile must have {N_SLOT_LABELS} entries")
    if any(v < 0 for v in profile) or sum(profile) <= 0:
        raise ValueError("slot profile must be non-negative with positive mass")
    return profile


class KernelConfig(_Strict):
    """Параметры WKMS"""

    sigma_km: float = Field(default=4.4, gt=0)
    convergence_tol_km: float = Field(default=0.001, gt=0)
    max_iterations: int = Field(default=200, ge=1)
    mode_merge_km: float = Field(default=0.1, gt=0)
    truncation_sigmas: float = Field(default=3.0, gt=0)
    epsilon_minutes: float = Field(default=1.0, gt=0)

    @model_validator(mode="after")
    def _merge_below_sigma(self):
        if self.mode_merge_km >= self.sigma_km:
            raise ValueError("mode_merge_km must be smaller than sigma_km")
        return self


class ClassifierConfig(_Strict):
    """Параметры фильтра временных хабов и K-means"""

    min_order_share: float = Field(default=0.10, gt=0, lt=1)
    min_duration_days: int = Field(default=30, ge=1)
    k_min: int = Field(default=2, ge=2)
    k_max: int = Field(default=8, ge=2)
    fixed_k: Optional[int] = Field(default=4, ge=2)
    kmeans_restarts: int = Field(default=16, ge=1)
    seed: Optional[int] = None
    label_margin: float = Field(default=0.1, ge=0)
    silhouette_sample: int = Field(default=10_000, ge=2)

    @model_validator(mode="after")
    def _k_range(self):
        if self.k_min > self.k_max:
            raise ValueError("k_min must not exceed k_max")
        return self


class MoveConfig(_Strict):
    min_separation_km: float = Field(default=4.4, gt=0)


class BoundingBox(_Strict):
    min_lat: float = Field(ge=-90, le=90)
    min_lon: float = Field(ge=-180, le=180)
    max_lat: float = Field(ge=-90, le=90)
    max_lon: float = Field(ge=-180, le=180)

    @model_validator(mode="after")
    def _ordered(self):
        if self.min_lat >= self.max_lat or self.min_lon >= self.max_lon:
            raise ValueError("extent must have min < max on both axes")
        return self


class OrdersPerUser(_Strict):
    min: int = Field(default=10, ge=10)
    mean: float = Field(default=150.0, gt=0)

    @model_validator(mode="after")
    def _mean_above_min(self):
        if self.mean < self.min:
            raise ValueError("orders_per_user.mean must be >= min")
        return self


class ScenarioConfig(_Strict):
    """Параметры синтетического города"""

    seed: Optional[int] = None
    extent: BoundingBox
    n_users: int = Field(ge=1)
    n_restaurants: int = Field(ge=1)
    span_months: int = Field(ge=2)
    start_month: str = "2015-01"
    delivery_method_mix: Dict[str, float] = Field(
        default_factory=lambda: {k: v / sum(_METHOD_PERCENT.values()) for k, v in _METHOD_PERCENT.items()}
    )
    per_method_radius_p95_km: Dict[str, float] = Field(default_factory=lambda: dict(_METHOD_P95_KM))
    per_method_shape: Dict[str, float] = Field(default_factory=lambda: dict(_METHOD_SHAPE))
    per_method_cap_km: Dict[str, float] = Field(default_factory=lambda: dict(_METHOD_CAP_KM))
    archetype_shares: Dict[str, float] = Field(
        default_factory=lambda: {"stayer": 0.6, "job_hopper": 0.15, "home_mover": 0.15, "both": 0.1}
    )
    orders_per_user: OrdersPerUser = Field(default_factory=OrdersPerUser)
    move_month_weights: List[float] = Field(default_factory=lambda: list(MOVE_MONTH_WEIGHTS))
    home_slot_profile: List[float] = Field(default_factory=lambda: list(HOME_SLOT_PROFILE))
    work_slot_profile: List[float] = Field(default_factory=lambda: list(WORK_SLOT_PROFILE))
    work_share: float = Field(default=0.5, gt=0, lt=1)
    noise: float = Field(default=0.0, ge=0, lt=1)
    min_commute_km: float = Field(default=12.0, gt=0)
    max_commute_km: float = Field(default=25.0, gt=0)
    min_displacement_km: float = Field(default=12.0, gt=0)
    max_displacement_km: float = Field(default=20.0, gt=0)
    preference_scale_km: float = Field(default=0.5, gt=0)
    favorites_per_anchor: int = Field(default=10, ge=1)
    min_segment_share: float = Field(default=0.2, gt=0, lt=0.5)
    max_anchor_retries: int = Field(default=50, ge=1)
    moves_increase_commute: bool = False
    # synthetic geography and housing market
    subdistrict_grid: int = Field(default=6, ge=1)
    ring_fractions: List[float] = Field(default_factory=lambda: [0.25, 0.5, 0.8])
    transactions_per_cell_month: int = Field(default=20, ge=0)
    center_price_per_m2: float = Field(default=80_000.0, gt=0)
    price_decay_km: float = Field(default=20.0, gt=0)
    price_noise: float = Field(default=0.05, ge=0)

    @field_validator("start_month")
    @classmethod
    def _parse_start(cls, v: str) -> str:
        YearMonth.parse(v)
        return v

    @field_validator("delivery_method_mix")
    @classmethod
    def _mix(cls, v: Dict[str, float]) -> Dict[str, float]:
        return _check_shares(v, "delivery_method_mix")

    @field_validator("archetype_shares")
    @classmethod
    def _archetypes(cls, v: Dict[str, float]) -> Dict[str, float]:
        unknown = set(v) - {"stayer", "job_hopper", "home_mover", "both"}
        if unknown:
            raise ValueError(f"unknown archetypes: {sorted(unknown)}")
        return _check_shares(v, "archetype_shares")

    @field_validator("home_slot_profile", "work_slot_profile")
    @classmethod
    def _profiles(cls, v: List[float]) -> List[float]:
        return _check_profile(v)

    @field_validator("ring_fractions")
    @classmethod
    def _rings(cls, v: List[float]) -> List[float]:
        if len(v) != 3 or not all(0 < a < b for a, b in zip([0.0] + v, v)) or v[-1] > 1:
            raise ValueError("ring_fractions must be 3 increasing fractions in (0, 1]")
        return v

    @field_validator("move_month_weights")
    @classmethod
    def _months(cls, v: List[float]) -> List[float]:
        if len(v) != 12 or any(w < 0 for w in v) or sum(v) <= 0:
            raise ValueError("move_month_weights must be 12 non-negative weights with positive sum")
        return v

    @model_validator(mode="after")
    def _consistency(self):
        methods = set(self.delivery_method_mix)
        for name in ("per_method_radius_p95_km", "per_method_shape", "per_method_cap_km"):
            table = getattr(self, name)
            if set(table) != methods:
                raise ValueError(f"{name} must cover exactly the methods of delivery_method_mix")
            if any(v <= 0 for v in table.values()):
                raise ValueError(f"{name} values must be positive")
        for method in methods:
            if self.per_method_cap_km[method] <= self.per_method_radius_p95_km[method]:
                raise ValueError(f"per_method_cap_km[{method}] must exceed its 95th percentile radius")
        if self.min_commute_km > self.max_commute_km:
            raise ValueError("min_commute_km must not exceed max_commute_km")
        if self.min_displacement_km > self.max_displacement_km:
            raise ValueError("min_displacement_km must not exceed max_displacement_km")
        return self

    @property
    def first_month(self) -> YearMonth:
        return YearMonth.parse(self.start_month)


class AnalyticsConfig(_Strict):
    subdistricts: Optional[str] = None
    rings: Optional[str] = None
    transactions: Optional[str] = None
    census: Optional[str] = None
    kde_cell_km: float = Field(default=0.5, gt=0)
    kde_bandwidth_km: float = Field(default=2.0, gt=0)
    price_radius_km: float = Field(default=3.0, gt=0)
    commute_bin_km: float = Field(default=5.0, gt=0)
    overtime_bin: float = Field(default=0.1, gt=0)
    price_bin: float = Field(default=20_000.0, gt=0)


class EvaluationConfig(_Strict):
    match_radius_km: float = Field(default=2.0, gt=0)
    month_slack: int = Field(default=1, ge=0)


class PathsConfig(_Strict):
    orders: Optional[str] = None
    calendar: Optional[str] = None
    ground_truth: Optional[str] = None


# configured input files; outputs of earlier stages under out_dir are checked by the stage itself
_INPUT_FILES = ("orders", "calendar", "ground_truth", "subdistricts", "rings", "transactions", "census")
# synth writes these when a scenario is configured
_SYNTH_OUTPUTS = ("orders", "ground_truth")


class PipelineConfig(_Strict):
    """Полная конфигурация запуска"""

    kernel: KernelConfig = Field(default_factory=KernelConfig)
    classifier: ClassifierConfig = Field(default_factory=ClassifierConfig)
    moves: MoveConfig = Field(default_factory=MoveConfig)
    scenario: Optional[ScenarioConfig] = None
    analytics: AnalyticsConfig = Field(default_factory=AnalyticsConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    min_orders: int = Field(default=10, ge=1)
    workers: int = Field(default=1, ge=1)
    seed: int = 0
    out_dir: str = "out"

    @model_validator(mode="after")
    def _inputs_exist(self):
        """Явно заданные входные файлы должны существовать до запуска стадий"""
        produced = _SYNTH_OUTPUTS if self.scenario is not None else ()
        missing = [
            f"{section}.{name}: file not found: {value}"
            for section, values in (("paths", self.paths), ("analytics", self.analytics))
            for name, value in values.model_dump().items()
            if isinstance(value, str) and name in _INPUT_FILES and not Path(value).is_file()
            and not (section == "paths" and name in produced)
        ]
        if missing:
            raise ValueError("; ".join(missing))
        return self

    @property
    def out_path(self) -> Path:
        return Path(self.out_dir)

    @property
    def classifier_seed(self) -> int:
        return self.seed if self.classifier.seed is None else self.classifier.seed

    @property
    def scenario_seed(self) -> int:
        if self.scenario is None or self.scenario.seed is None:
            return self.seed
        return self.scenario.seed

    def orders_path(self) -> Path:
        return Path(self.paths.orders) if self.paths.orders else self.out_path / "orders.csv"

    def ground_truth_path(self) -> Path:
        return Path(self.paths.ground_truth) if self.paths.ground_truth else self.out_path / "ground_truth.json"

    def require_scenario(self) -> ScenarioConfig:
        if self.scenario is None:
            raise ConfigError("scenario: section required")
        return self.scenario


def format_validation_error(error: ValidationError) -> str:
    """'scenario.n_users: Field required; ...'"""
    parts = []
    for item in error.errors():
        location = ".".join(str(p) for p in item["loc"]) or "<root>"
        parts.append(f"{location}: {item['msg']}")
    return "; ".join(parts)


def load_pipeline_config(
    path: Optional[Union[str, Path]] = None, overrides: Optional[Dict[str, Any]] = None
) -> PipelineConfig:
    """
    Собирает конфигурацию: флаги CLI > JSON-файл > переменные окружения > значения по умолчанию

    Ключи overrides вида "kernel.sigma_km" задают поле вложенной секции.
    """
    data: Dict[str, Any] = {
        "workers": settings.workers,
        "seed": settings.seed,
        "out_dir": settings.out_dir,
    }
    if path is not None:
        try:
            loaded = json.loads(Path(path).read_text(encoding="utf-8"))
        except OSError as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        except json.JSONDecodeError as e:
            raise ConfigError(f"config {path} is not valid JSON: {e}")
        if not isinstance(loaded, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        data.update(loaded)

    for key, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, name = key.rpartition(".")
        if section:
            current = data.get(section)
            nested = dict(current) if isinstance(current, dict) else {}
            nested[name] = value
            data[section] = nested
        else:
            data[key] = value

    try:
        config = PipelineConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigError(f"invalid configuration: {format_validation_error(e)}")

    logger.debug(f"Pipeline config: workers={config.workers}, seed={config.seed}, out_dir={config.out_dir}")
    return config
