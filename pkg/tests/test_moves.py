from datetime import date, datetime, timedelta
from itertools import product

import numpy as np
import pytest

from config.pipeline import MoveConfig
from models.domain import HubLabel, MoveKind, UserGroup, UserProfile, YearMonth
from services.moves import (
    active_hub,
    analyze_user,
    classify_user,
    commuting_distance,
    detect_transitions,
    group_counts,
    move_metrics,
    overtime_ratio,
    regular_ratio,
    user_profile,
)
from tests.factories import ORIGIN, daily_orders, km_away, make_hub, make_record
from utils.exceptions import AmbiguityError, InsufficientDataError
from utils.geo import haversine_km

H, W, O = HubLabel.HOME, HubLabel.WORK, HubLabel.OTHER


def span(first_month: int, last_month: int, year: int = 2015):
    """Интервал активности с первого по последний месяц включительно"""
    first = datetime(year, first_month, 1, 12, 0)
    last = datetime(year, last_month, 28, 20, 0)
    return first, last


def brute_force_transitions(records, min_sep_km):
    """Оракул: перебор всех упорядоченных пар хабов"""
    found = set()
    for a, b in product(records, records):
        if a.label is not b.label or a.label is O or not a.last_order < b.first_order:
            continue
        if haversine_km(a.center, b.center) < min_sep_km:
            continue
        if any(a.last_order < c.first_order and c.last_order < b.first_order for c in records if c.label is a.label):
            continue
        found.add((a.hub_id, b.hub_id))
    return found


class TestDetectTransitions:
    """Тесты поиска переездов"""

    def test_housing_move(self):
        """Тест одного переезда H->H"""
        hubs = [
            make_record("u1#1", H, ORIGIN, *span(1, 5)),
            make_record("u1#2", H, km_away(12), *span(6, 12)),
            make_record("u1#3", W, km_away(0, 15), *span(1, 12)),
        ]
        moves = detect_transitions(hubs, MoveConfig())
        assert len(moves) == 1
        move = moves[0]
        assert move.kind is MoveKind.HOUSING
        assert (move.from_hub, move.to_hub) == ("u1#1", "u1#2")
        assert move.move_month == YearMonth(2015, 6)
        assert move.from_month == YearMonth(2015, 5)
        assert move.displacement_km == pytest.approx(12.0, abs=1e-3)

    def test_overlap_and_separation(self):
        """Тест: пересечение по времени или малое смещение не дают переезда"""
        overlapping = [make_record("a", W, ORIGIN, *span(1, 6)), make_record("b", W, km_away(20), *span(6, 12))]
        close = [make_record("a", W, ORIGIN, *span(1, 5)), make_record("b", W, km_away(3), *span(6, 12))]
        assert detect_transitions(overlapping, MoveConfig()) == []
        assert detect_transitions(close, MoveConfig()) == []

    def test_other_hubs_never_move(self):
        """Тест: хабы O не образуют переездов"""
        hubs = [make_record("a", O, ORIGIN, *span(1, 5)), make_record("b", O, km_away(20), *span(6, 12))]
        assert detect_transitions(hubs, MoveConfig()) == []

    def test_chain_links_only_neighbours(self):
        """Тест цепочки из трёх рабочих мест"""
        hubs = [
            make_record("u1#1", W, ORIGIN, *span(1, 3)),
            make_record("u1#2", W, km_away(10), *span(4, 7)),
            make_record("u1#3", W, km_away(20), *span(8, 12)),
        ]
        pairs = [(m.from_hub, m.to_hub) for m in detect_transitions(hubs, MoveConfig())]
        assert pairs == [("u1#1", "u1#2"), ("u1#2", "u1#3")]

    def test_matches_brute_force(self):
        """Тест против перебора на случайных наборах хабов"""
        rng = np.random.default_rng(5)
        cfg = MoveConfig()
        for _ in range(300):
            records = []
            for i in range(int(rng.integers(1, 7))):
                start = datetime(2015, 1, 1) + timedelta(days=int(rng.integers(0, 700)))
                end = start + timedelta(days=int(rng.integers(0, 200)))
                label = [H, W, O][int(rng.integers(0, 3))]
                records.append(make_record(f"u1#{i + 1}", label, km_away(*rng.uniform(-15, 15, 2)), start, end))
            ours = {(m.from_hub, m.to_hub) for m in detect_transitions(records, cfg)}
            assert ours == brute_force_transitions(records, cfg.min_separation_km)


class TestClassifyUser:
    """Тесты групп пользователей"""

    def test_groups(self):
        """Тест стайера, сменившего работу и обе группы"""
        hubs = [
            make_record("u1#1", H, ORIGIN, *span(1, 5)),
            make_record("u1#2", H, km_away(12), *span(6, 12)),
            make_record("u1#3", W, km_away(0, 15), *span(1, 12)),
        ]
        moves = detect_transitions(hubs, MoveConfig())
        assert classify_user(hubs, []) == frozenset({UserGroup.STAYER})
        assert classify_user(hubs, moves) == frozenset({UserGroup.HOME_MOVER})
        job = detect_transitions(
            [make_record("a", W, ORIGIN, *span(1, 5)), make_record("b", W, km_away(10), *span(6, 12))], MoveConfig()
        )
        assert classify_user(hubs, moves + job) == frozenset({UserGroup.HOME_MOVER, UserGroup.JOB_HOPPER})

    def test_missing_work_hub(self):
        """Тест: без W хаба пользователь исключается"""
        with pytest.raises(InsufficientDataError, match="W"):
            classify_user([make_record("a", H, ORIGIN, *span(1, 12))], [])


class TestCommute:
    """Тесты дистанции поездки"""

    def test_active_hub_rules(self):
        """Тест выбора активного хаба"""
        h1 = make_record("u1#1", H, ORIGIN, *span(1, 3))
        h2 = make_record("u1#2", H, km_away(12), *span(6, 8))
        assert active_hub([h1, h2], H, date(2015, 2, 10)) is h1
        assert active_hub([h1, h2], H, date(2015, 4, 5)) is h1
        assert active_hub([h1, h2], H, date(2015, 5, 25)) is h2
        with pytest.raises(InsufficientDataError):
            active_hub([h1, h2], W, date(2015, 2, 10))

    def test_ambiguity(self):
        """Тест неоднозначных случаев"""
        h1 = make_record("u1#1", H, ORIGIN, *span(1, 6))
        h2 = make_record("u1#2", H, km_away(12), *span(3, 8))
        with pytest.raises(AmbiguityError):
            active_hub([h1, h2], H, date(2015, 4, 1))
        a = make_record("a", H, ORIGIN, datetime(2015, 1, 1), datetime(2015, 1, 10))
        b = make_record("b", H, km_away(12), datetime(2015, 1, 20), datetime(2015, 1, 30))
        with pytest.raises(AmbiguityError):
            active_hub([a, b], H, date(2015, 1, 15))

    def test_commuting_distance_with_pin(self):
        """Тест закреплённой стороны"""
        home = make_record("u1#1", H, ORIGIN, *span(1, 12))
        w1 = make_record("u1#2", W, km_away(10), *span(1, 12))
        w2 = make_record("u1#3", W, km_away(20), *span(1, 12))
        assert commuting_distance([home, w1, w2], date(2015, 5, 1), {W: w2}) == pytest.approx(20.0, abs=1e-3)
        with pytest.raises(AmbiguityError):
            commuting_distance([home, w1, w2], date(2015, 5, 1))


class TestOvertime:
    """Тесты доли сверхурочных заказов"""

    def test_overtime_ratio(self, calendar):
        """Тест: будний обед - обычное время, выходной - сверхурочное"""
        orders = daily_orders("u1", "r1", ORIGIN, datetime(2015, 3, 2, 12, 0), 7)
        hub = make_hub("u1#1", orders)
        assert overtime_ratio(hub, calendar) == pytest.approx(2 / 7)
        assert regular_ratio(hub, calendar) == pytest.approx(5 / 7)

    def test_evening_and_holiday(self, calendar):
        """Тест вечера буднего дня и праздника"""
        orders = daily_orders("u1", "r1", ORIGIN, datetime(2015, 3, 2, 20, 0), 1)
        orders += daily_orders("u1", "r1", ORIGIN, datetime(2015, 5, 1, 12, 0), 1)
        orders += daily_orders("u1", "r1", ORIGIN, datetime(2015, 3, 3, 9, 0), 2)
        assert overtime_ratio(make_hub("u1#1", orders), calendar) == pytest.approx(0.5)


class TestUserMobility:
    """Тесты метрик переездов и профилей"""

    def _user(self):
        h1 = daily_orders("u1", "r1", ORIGIN, datetime(2015, 1, 1, 20, 0), 150)
        h2 = daily_orders("u1", "r2", km_away(12), datetime(2015, 6, 1, 20, 0), 150)
        w = daily_orders("u1", "r3", km_away(0, 15), datetime(2015, 1, 1, 12, 0), 330)
        hubs = [make_hub("u1#1", h1), make_hub("u1#2", h2), make_hub("u1#3", w)]
        labels = {"u1#1": H, "u1#2": H, "u1#3": W}
        records = [h.to_record(labels[h.hub_id]) for h in hubs]
        return records, {h.hub_id: h for h in hubs}

    def test_move_metrics(self, calendar):
        """Тест дистанций до и после переезда"""
        records, hub_orders = self._user()
        move = detect_transitions(records, MoveConfig())[0]
        enriched, ambiguous = move_metrics(move, records, hub_orders, calendar)
        assert ambiguous == 0
        assert enriched.pre_commute_km == pytest.approx(haversine_km(ORIGIN, km_away(0, 15)))
        assert enriched.post_commute_km == pytest.approx(haversine_km(km_away(12), km_away(0, 15)))
        assert enriched.pre_overtime_ratio is None

    def test_analyze_mover(self, calendar):
        """Тест пользователя, сменившего жильё"""
        records, hub_orders = self._user()
        result = analyze_user("u1", records, hub_orders, calendar, MoveConfig())
        assert result.profile.groups == frozenset({UserGroup.HOME_MOVER})
        assert result.profile.commute_km is None
        assert len(result.moves) == 1

    def test_stayer_profile(self, calendar):
        """Тест метрик стайера"""
        records, hub_orders = self._user()
        stayer = [r for r in records if r.hub_id != "u1#2"]
        profile, ambiguous = user_profile("u1", stayer, [], hub_orders, calendar)
        assert ambiguous == 0
        assert profile.groups == frozenset({UserGroup.STAYER})
        assert profile.commute_km == pytest.approx(haversine_km(ORIGIN, km_away(0, 15)))
        assert profile.home_center == ORIGIN
        assert profile.home_month == YearMonth(2015, 3)
        assert 0.0 <= profile.overtime_ratio <= 1.0

    def test_stayer_with_two_work_hubs_is_ambiguous(self, calendar):
        """Тест стайера с двумя W хабами"""
        records = [
            make_record("u1#1", H, ORIGIN, *span(1, 12)),
            make_record("u1#2", W, km_away(10), *span(1, 12)),
            make_record("u1#3", W, km_away(0, 10), *span(1, 12)),
        ]
        profile, ambiguous = user_profile("u1", records, [], {}, calendar)
        assert ambiguous == 1
        assert profile.commute_km is None

    def test_group_counts(self):
        """Тест счётчиков групп"""
        profiles = [
            UserProfile("a", frozenset({UserGroup.STAYER})),
            UserProfile("b", frozenset({UserGroup.JOB_HOPPER, UserGroup.HOME_MOVER})),
            UserProfile("c", excluded_reason="no W hub"),
        ]
        assert group_counts(profiles) == {"Stayer": 1, "JobHopper": 1, "HomeMover": 1, "Excluded": 1}
