"""Сверка найденных хабов и переездов с истинным сценарием"""

import logging
from typing import Dict, List, Optional, Sequence, Tuple

from models.domain import HubRecord, Move, MoveKind
from models.truth import AnchorSpell, DistributionSummary, EvalReport, GroundTruth, TrueMove
from utils.exceptions import DataError
from utils.geo import haversine_km

logger = logging.getLogger(__name__)


def check_user_universe(detected_users: Sequence[str], truth: GroundTruth) -> None:
    """Найденные пользователи должны быть подмножеством пользователей сценария"""
    known = set(truth.user_ids())
    unknown = sorted(set(detected_users) - known)
    if unknown:
        shown = ", ".join(unknown[:5])
        more = f" (+{len(unknown) - 5} more)" if len(unknown) > 5 else ""
        raise DataError(f"{len(unknown)} detected users are not in the ground truth: {shown}{more}")


def _overlaps(hub: HubRecord, spell: AnchorSpell) -> bool:
    return hub.first_order.date() <= spell.end and spell.start <= hub.last_order.date()


def match_hub(hub: HubRecord, anchors: Sequence[AnchorSpell], radius_km: float) -> Optional[Tuple[AnchorSpell, float]]:
    """
    Ближайшая истинная точка пользователя, пересекающаяся с хабом по времени

    Возвращает (точка, ошибка в км) либо None, если ближайшая дальше radius_km.
    """
    best: Optional[Tuple[AnchorSpell, float]] = None
    for spell in anchors:
        if not _overlaps(hub, spell):
            continue
        error = haversine_km(hub.center, spell.location)
        if best is None or error < best[1]:
            best = (spell, error)
    if best is None or best[1] > radius_km:
        return None
    return best


def match_moves(
    detected: Sequence[Move], true_moves: Sequence[TrueMove], radius_km: float, month_slack: int
) -> List[Tuple[int, int, int]]:
    """
    Жадное сопоставление переездов: (индекс найденного, индекс истинного, ошибка в месяцах)

    Кандидаты: тот же пользователь и тип, оба конца в пределах radius_km,
    разница месяцев не больше month_slack. Пары берутся по возрастанию
    суммарной ошибки концов; каждый переезд участвует не более одного раза.
    """
    candidates = []
    for i, move in enumerate(detected):
        for j, truth in enumerate(true_moves):
            if move.user_id != truth.user_id or move.kind is not truth.kind:
                continue
            months = abs(truth.month.months_until(move.move_month))
            if months > month_slack:
                continue
            from_error = haversine_km(move.from_center, truth.from_location)
            to_error = haversine_km(move.to_center, truth.to_location)
            if from_error > radius_km or to_error > radius_km:
                continue
            candidates.append((from_error + to_error, months, i, j))

    candidates.sort()
    used_detected, used_true = set(), set()
    matches = []
    for _, months, i, j in candidates:
        if i in used_detected or j in used_true:
            continue
        used_detected.add(i)
        used_true.add(j)
        matches.append((i, j, months))
    return matches


def evaluate(
    detected_hubs: Sequence[HubRecord],
    detected_moves: Sequence[Move],
    truth: GroundTruth,
    match_radius_km: float = 2.0,
    month_slack: int = 1,
) -> EvalReport:
    """Оценивает найденные хабы, метки и переезды относительно истины"""
    if match_radius_km <= 0:
        raise ValueError("match_radius_km must be positive")
    if month_slack < 0:
        raise ValueError("month_slack must be non-negative")

    check_user_universe([h.user_id for h in detected_hubs] + [m.user_id for m in detected_moves], truth)

    anchors = {user.user_id: user.anchors for user in truth.users}
    center_errors: List[float] = []
    labels_correct = 0
    for hub in detected_hubs:
        matched = match_hub(hub, anchors.get(hub.user_id, ()), match_radius_km)
        if matched is None:
            continue
        spell, error = matched
        center_errors.append(error)
        labels_correct += int(hub.label is spell.kind)
    n_matched = len(center_errors)

    precision: Dict[str, Optional[float]] = {}
    recall: Dict[str, Optional[float]] = {}
    counts: Dict[str, Dict[str, int]] = {}
    month_errors: List[int] = []
    for kind in MoveKind:
        found = [m for m in detected_moves if m.kind is kind]
        scripted = [m for m in truth.moves if m.kind is kind]
        matches = match_moves(found, scripted, match_radius_km, month_slack)
        month_errors.extend(months for _, _, months in matches)
        precision[kind.value] = len(matches) / len(found) if found else None
        recall[kind.value] = len(matches) / len(scripted) if scripted else None
        counts[kind.value] = {"detected": len(found), "true": len(scripted), "matched": len(matches)}

    report = EvalReport(
        hub_center_error_km=DistributionSummary.of(center_errors),
        label_accuracy=labels_correct / n_matched if n_matched else None,
        n_matched_hubs=n_matched,
        move_precision=precision,
        move_recall=recall,
        move_counts=counts,
        move_month_error=DistributionSummary.of(month_errors),
        month_error_within_one=sum(1 for m in month_errors if m <= 1) / len(month_errors) if month_errors else None,
    )
    logger.info(
        f"Evaluation: {n_matched}/{len(detected_hubs)} hubs matched, "
        + ", ".join(f"{k}: {v['matched']}/{v['detected']} det, {v['true']} true" for k, v in counts.items())
    )
    return report
