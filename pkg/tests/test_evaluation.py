from datetime import date, datetime

import pytest

from models.domain import HubLabel, Move, MoveKind, YearMonth
from models.truth import NO_DETECTIONS, AnchorSpell, GroundTruth, TrueMove, UserTruth
from services.evaluation import evaluate, match_hub, match_moves
from tests.factories import ORIGIN, km_away, make_record
from utils.exceptions import DataError
from utils.geo import haversine_km

H, W = HubLabel.HOME, HubLabel.WORK


def true_move(i: int, kind=MoveKind.HOUSING) -> TrueMove:
    return TrueMove(
        user_id=f"u{i}",
        kind=kind,
        month=YearMonth(2015, 3 + i % 6),
        from_location=km_away(i, 0),
        to_location=km_away(i, 15),
    )


def detected_from(t: TrueMove, shift_km: float = 0.0, months: int = 0) -> Move:
    return Move(
        user_id=t.user_id,
        kind=t.kind,
        from_hub=f"{t.user_id}#1",
        to_hub=f"{t.user_id}#2",
        from_center=t.from_location,
        to_center=km_away(shift_km, 0, t.to_location),
        move_month=t.month.shift(months),
        displacement_km=haversine_km(t.from_location, t.to_location),
    )


def truth_of(moves, n_users: int = 10) -> GroundTruth:
    users = []
    for i in range(n_users):
        anchors = (
            AnchorSpell(H, km_away(i, 0), date(2015, 1, 1), date(2015, 12, 31)),
            AnchorSpell(W, km_away(i, 20), date(2015, 1, 1), date(2015, 12, 31)),
        )
        users.append(UserTruth(user_id=f"u{i}", archetype="home_mover", anchors=anchors))
    return GroundTruth(users=tuple(users), moves=tuple(moves))


class TestMatching:
    """Тесты сопоставления с эталоном"""

    def test_match_hub_needs_overlap(self):
        """Тест: хаб сопоставляется только с пересекающейся по времени точкой"""
        spells = [
            AnchorSpell(H, ORIGIN, date(2015, 1, 1), date(2015, 5, 31)),
            AnchorSpell(H, km_away(0.5), date(2015, 6, 1), date(2015, 12, 31)),
        ]
        hub = make_record("u0#1", H, km_away(0.1), datetime(2015, 7, 1), datetime(2015, 9, 1))
        spell, error = match_hub(hub, spells, 2.0)
        assert spell is spells[1]
        assert error == pytest.approx(0.4, abs=1e-6)
        assert match_hub(hub, spells, 0.3) is None

    def test_match_moves_is_one_to_one(self):
        """Тест: каждый переезд сопоставляется не более одного раза"""
        t = true_move(1)
        detected = [detected_from(t, 0.5), detected_from(t, 0.1)]
        assert match_moves(detected, [t], 2.0, 1) == [(1, 0, 0)]

    def test_month_slack(self):
        """Тест допуска по месяцу"""
        t = true_move(1)
        assert match_moves([detected_from(t, months=1)], [t], 2.0, 1) == [(0, 0, 1)]
        assert match_moves([detected_from(t, months=2)], [t], 2.0, 1) == []
        assert match_moves([detected_from(t, months=-2)], [t], 2.0, 2) == [(0, 0, 2)]


class TestEvaluate:
    """Тесты итогового отчёта"""

    def test_identity(self):
        """Тест: найденное совпадает с эталоном"""
        moves = [true_move(i) for i in range(10)]
        report = evaluate([], [detected_from(t) for t in moves], truth_of(moves))
        assert report.move_precision["Housing"] == 1.0
        assert report.move_recall["Housing"] == 1.0
        assert report.month_error_within_one == 1.0
        assert report.move_month_error.max == 0.0

    def test_no_detections(self):
        """Тест пустого результата"""
        moves = [true_move(i) for i in range(10)]
        report = evaluate([], [], truth_of(moves))
        assert report.move_precision["Housing"] is None
        assert report.move_recall["Housing"] == 0.0
        assert report.move_recall["Job"] is None
        assert report.as_dict()["move_precision"]["Housing"] == NO_DETECTIONS
        assert report.label_accuracy is None

    def test_spurious_detections(self):
        """Тест: 8 верных и 2 ложных переезда"""
        moves = [true_move(i) for i in range(10)]
        detected = [detected_from(t) for t in moves[:8]] + [detected_from(t, 5.0) for t in moves[8:]]
        report = evaluate([], detected, truth_of(moves))
        assert report.move_precision["Housing"] == pytest.approx(0.8)
        assert report.move_recall["Housing"] == pytest.approx(0.8)
        assert report.move_counts["Housing"] == {"detected": 10, "true": 10, "matched": 8}

    def test_recall_grows_with_radius(self):
        """Тест: полнота не убывает с радиусом"""
        moves = [true_move(i) for i in range(8)]
        detected = [detected_from(t, 0.5 * i) for i, t in enumerate(moves)]
        truth = truth_of(moves)
        recalls = [evaluate([], detected, truth, match_radius_km=r).move_recall["Housing"] for r in (0.5, 1, 2, 3, 4)]
        assert recalls == sorted(recalls)
        assert recalls[-1] == 1.0

    def test_hub_labels(self):
        """Тест точности меток хабов"""
        t0, t1 = datetime(2015, 2, 1), datetime(2015, 11, 1)
        hubs = [
            make_record("u0#1", H, km_away(0.2), t0, t1, user_id="u0"),
            make_record("u0#2", H, km_away(0, 20.3), t0, t1, user_id="u0"),
            make_record("u0#3", W, km_away(-9), t0, t1, user_id="u0"),
        ]
        report = evaluate(hubs, [], truth_of([]))
        assert report.n_matched_hubs == 2
        assert report.label_accuracy == pytest.approx(0.5)
        assert report.hub_center_error_km.max == pytest.approx(0.3, abs=1e-3)

    def test_unknown_users(self):
        """Тест: пользователи вне эталона - ошибка данных"""
        stranger = make_record("x#1", H, ORIGIN, datetime(2015, 1, 1), datetime(2015, 2, 1), user_id="x")
        with pytest.raises(DataError, match="x"):
            evaluate([stranger], [], truth_of([]))

    def test_invalid_parameters(self):
        """Тест недопустимых параметров"""
        with pytest.raises(ValueError):
            evaluate([], [], truth_of([]), match_radius_km=0)
        with pytest.raises(ValueError):
            evaluate([], [], truth_of([]), month_slack=-1)
