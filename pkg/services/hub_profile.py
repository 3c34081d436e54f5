"""Фильтр временных хабов, временные признаки, K-means и разметка H/W/O"""

import logging
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np
from sklearn.cluster import KMeans
from sklearn.metrics import silhouette_score

from config.pipeline import ClassifierConfig
from models.domain import (
    N_SLOT_LABELS,
    ClusterOutcome,
    DayType,
    DiningHub,
    HolidayCalendar,
    HubFeatures,
    HubLabel,
    Slot,
    SlotLabel,
)
from utils.exceptions import ClusteringError
from utils.timeslots import time_slot

logger = logging.getLogger(__name__)

WORK_SLOTS = (
    SlotLabel(DayType.WEEKDAY, Slot.NOON),
    SlotLabel(DayType.WEEKDAY, Slot.MORNING),
)
HOME_SLOTS = tuple(
    SlotLabel(day, slot) for day in (DayType.WEEKEND, DayType.HOLIDAY) for slot in Slot
) + (
    SlotLabel(DayType.WEEKDAY, Slot.EVENING),
    SlotLabel(DayType.WEEKDAY, Slot.NIGHT),
)

LABELING_KMEANS = "kmeans"
LABELING_PER_HUB = "per-hub"

# centroids are float means; equal leads differ by rounding only
_LEAD_TIE = 1e-12


def hub_duration_days(hub: DiningHub) -> int:
    first, last = hub.active_interval
    return (last.date() - first.date()).days


def filter_temporary_hubs(outcome: ClusterOutcome, cfg: ClassifierConfig) -> ClusterOutcome:
    """Убирает хабы с малой долей заказов или короткой активностью"""
    total = outcome.n_orders
    kept, dropped = [], []
    for hub in outcome.hubs:
        too_few = hub.n_orders < cfg.min_order_share * total - 1e-9
        too_short = hub_duration_days(hub) < cfg.min_duration_days
        (dropped if too_few or too_short else kept).append(hub)

    if dropped:
        logger.debug(f"User {outcome.user_id}: {len(dropped)} temporary hubs removed")
    return replace(
        outcome,
        hubs=tuple(kept),
        temporary=outcome.temporary + tuple(dropped),
        clusterable=outcome.clusterable and bool(kept),
    )


def hub_features(hub: DiningHub, cal: HolidayCalendar) -> HubFeatures:
    """Относительные частоты заказов хаба по 15 слотам"""
    counts = np.zeros(N_SLOT_LABELS)
    for order in hub.orders:
        counts[time_slot(order.delivered_at, cal).index] += 1
    return HubFeatures(hub_id=hub.hub_id, freq=tuple(float(c) for c in counts / counts.sum()))


@dataclass(frozen=True)
class KMeansResult:
    assignments: Dict[str, int]
    centroids: np.ndarray
    k: int
    silhouette: Optional[float]


def _fit(x: np.ndarray, k: int, cfg: ClassifierConfig, seed: int) -> KMeans:
    return KMeans(n_clusters=k, init="k-means++", n_init=cfg.kmeans_restarts, random_state=seed).fit(x)


def _silhouette(x: np.ndarray, labels: np.ndarray, cfg: ClassifierConfig, seed: int) -> Optional[float]:
    n_labels = len(set(labels.tolist()))
    if not 2 <= n_labels <= len(x) - 1:
        return None
    sample = cfg.silhouette_sample if len(x) > cfg.silhouette_sample else None
    return float(silhouette_score(x, labels, metric="euclidean", sample_size=sample, random_state=seed))


def kmeans_with_silhouette(
    features: Sequence[HubFeatures], cfg: ClassifierConfig, seed: int = 0
) -> KMeansResult:
    """
    K-means по векторам частот

    fixed_k задан -> используется он, иначе k из [k_min, k_max] с максимальным silhouette.
    """
    if not features:
        raise ClusteringError("no hub features to cluster")
    x = np.array([f.freq for f in features])
    n_distinct = len(np.unique(x, axis=0))

    if cfg.fixed_k is not None:
        candidates = [cfg.fixed_k]
    else:
        candidates = [k for k in range(cfg.k_min, cfg.k_max + 1) if k <= len(x) - 1]
        if not candidates:
            raise ClusteringError(f"{len(x)} features are too few for k >= {cfg.k_min}")

    if any(k < 2 for k in candidates):
        raise ClusteringError("silhouette is undefined for k < 2")
    if len(x) < candidates[0]:
        raise ClusteringError(f"{len(x)} features are fewer than k={candidates[0]}")
    if n_distinct < candidates[0]:
        raise ClusteringError(f"{n_distinct} distinct feature vectors are fewer than k={candidates[0]}")

    best: Optional[KMeansResult] = None
    for k in candidates:
        if k > n_distinct:
            break
        model = _fit(x, k, cfg, seed)
        score = _silhouette(x, model.labels_, cfg, seed)
        logger.info(f"K-means k={k}: inertia={model.inertia_:.6f}, silhouette={score}")
        result = KMeansResult(
            assignments={f.hub_id: int(label) for f, label in zip(features, model.labels_)},
            centroids=model.cluster_centers_,
            k=k,
            silhouette=score,
        )
        if best is None or (score is not None and (best.silhouette is None or score > best.silhouette)):
            best = result
    return best


def work_home_mass(vector: Sequence[float]) -> tuple:
    work = sum(vector[s.index] for s in WORK_SLOTS)
    home = sum(vector[s.index] for s in HOME_SLOTS)
    return work, home


def label_vector(vector: Sequence[float], margin: float = 0.1) -> HubLabel:
    """H/W/O по перевесу домашней или рабочей массы"""
    work, home = work_home_mass(vector)
    if work - home > margin:
        return HubLabel.WORK
    if home - work > margin:
        return HubLabel.HOME
    return HubLabel.OTHER


def label_clusters(
    centroids: np.ndarray, assignments: Dict[str, int], margin: float = 0.1
) -> Dict[str, HubLabel]:
    """
    Метка кластера по его центроиду; каждый хаб наследует метку своего кластера

    W получают только кластеры с максимальным перевесом work - home (при
    равенстве все такие), если он больше margin; H аналогично для home - work.
    Остальные кластеры O.
    """
    leads = np.array([work - home for work, home in (work_home_mass(c) for c in centroids)])
    cluster_labels = [HubLabel.OTHER] * len(leads)
    if leads.size:
        best_work, best_home = leads.max(), (-leads).max()
        for i, lead in enumerate(leads):
            if lead > margin and lead >= best_work - _LEAD_TIE:
                cluster_labels[i] = HubLabel.WORK
            elif -lead > margin and -lead >= best_home - _LEAD_TIE:
                cluster_labels[i] = HubLabel.HOME
    return {hub_id: cluster_labels[cluster] for hub_id, cluster in assignments.items()}


@dataclass
class HubProfile:
    features: Dict[str, HubFeatures] = field(default_factory=dict)
    labels: Dict[str, HubLabel] = field(default_factory=dict)
    k: Optional[int] = None
    silhouette: Optional[float] = None
    labeling_mode: str = LABELING_KMEANS
    centroids: List[List[float]] = field(default_factory=list)


def profile_hubs(
    hubs: Sequence[DiningHub], cal: HolidayCalendar, cfg: ClassifierConfig, seed: int = 0
) -> HubProfile:
    """Признаки -> K-means -> метки для всех хабов всех пользователей"""
    ordered = sorted(hubs, key=lambda h: (h.user_id, h.hub_id))
    features = [hub_features(h, cal) for h in ordered]
    profile = HubProfile(features={f.hub_id: f for f in features})
    if not features:
        return profile

    k_needed = cfg.fixed_k if cfg.fixed_k is not None else cfg.k_min
    n_distinct = len(np.unique(np.array([f.freq for f in features]), axis=0))
    if n_distinct < k_needed or len(features) < k_needed:
        logger.warning(
            f"Only {n_distinct} distinct hub profiles for k={k_needed}: labeling each hub by its own profile"
        )
        profile.labels = {f.hub_id: label_vector(f.freq, cfg.label_margin) for f in features}
        profile.labeling_mode = LABELING_PER_HUB
        return profile

    result = kmeans_with_silhouette(features, cfg, seed)
    profile.labels = label_clusters(result.centroids, result.assignments, cfg.label_margin)
    profile.k = result.k
    profile.silhouette = result.silhouette
    profile.centroids = [[float(v) for v in c] for c in result.centroids]
    counts = {label: sum(1 for v in profile.labels.values() if v is label) for label in HubLabel}
    logger.info(
        f"Labeled {len(features)} hubs with k={result.k}: "
        f"H={counts[HubLabel.HOME]}, W={counts[HubLabel.WORK]}, O={counts[HubLabel.OTHER]}"
    )
    return profile
