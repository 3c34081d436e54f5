from datetime import datetime, timedelta

import numpy as np
import pytest

from models.domain import GeoPoint, OrderLog
from models.repositories import ORDER_HEADER, OrderRepository
from services.orders import filter_adhoc_users, load_orders, write_orders
from tests.factories import make_order
from utils.exceptions import DataError

HEADER_LINE = ",".join(ORDER_HEADER)


def _write(path, lines):
    path.write_text("\n".join([HEADER_LINE] + lines) + "\n", encoding="utf-8")


class TestOrderLog:
    """Тесты журнала заказов"""

    def test_sorted_by_user_time_restaurant(self):
        """Тест стабильного порядка"""
        late = make_order("u1", "r2", at=datetime(2015, 3, 2, 13, 0))
        early = make_order("u1", "r9", at=datetime(2015, 3, 2, 12, 0))
        other = make_order("u0", "r1", at=datetime(2015, 4, 1, 12, 0))
        log = OrderLog((late, other, early))
        assert list(log) == [other, early, late]
        assert log.users() == ["u0", "u1"]
        assert log.span == (datetime(2015, 3, 2, 12, 0), datetime(2015, 4, 1, 12, 0))

    def test_order_validation(self):
        """Тест проверок заказа"""
        with pytest.raises(ValueError):
            make_order(minutes=-1.0)
        with pytest.raises(ValueError):
            make_order(at=datetime(2015, 3, 2, 12, 0, 30))


class TestLoadOrders:
    """Тесты загрузки CSV"""

    def test_rejected_rows_and_duplicates(self, tmp_path):
        """Тест отчёта о загрузке"""
        path = tmp_path / "orders.csv"
        _write(
            path,
            [
                "u1,r1,39.9,116.4,2015-03-02 12:00,20.5",
                "u1,r1,39.9,116.4,2015-03-02 12:00,20.5",
                "u1,r2,95.0,116.4,2015-03-02 13:00,20.5",
                "u1,r2,39.9,116.4,2015-03-02 13:00",
                "u2,r3,39.95,116.45,2015-03-02T14:00,31",
                "u2,r3,39.95,116.45,2015-03-03 14:00,31",
            ],
        )
        log, report = load_orders(path)
        assert len(log) == 2
        assert report.n_rows == 6
        assert report.n_loaded == 2
        assert report.duplicates == 1
        assert [line for line, _ in report.rejected] == [4, 5, 6]

    def test_header_mismatch(self, tmp_path):
        """Тест неверного заголовка"""
        path = tmp_path / "orders.csv"
        path.write_text("user,restaurant\nu1,r1\n", encoding="utf-8")
        with pytest.raises(DataError, match="header"):
            load_orders(path)

    def test_missing_file(self, tmp_path):
        """Тест отсутствующего файла"""
        with pytest.raises(DataError):
            load_orders(tmp_path / "none.csv")

    def test_write_load_fixed_point(self, tmp_path):
        """Тест: запись -> загрузка -> запись даёт тот же файл"""
        orders = [
            make_order("u1", "r1", GeoPoint(39.912345678901234, 116.41), datetime(2015, 3, 2, 12, 0), 0.1 + 0.2),
            make_order("u2", "r7", GeoPoint(-33.5, 151.25), datetime(2015, 3, 3, 23, 59), 17.0),
        ]
        first, second = tmp_path / "a.csv", tmp_path / "b.csv"
        assert write_orders(OrderLog(tuple(orders)), first) == 2
        log, report = load_orders(first)
        write_orders(log, second)
        assert first.read_bytes() == second.read_bytes()
        assert list(log) == sorted(orders, key=lambda o: o.sort_key)
        assert report.rejected == []

    def test_parse_row(self):
        """Тест разбора строки"""
        order = OrderRepository.parse_row(["u1", "r1", "39.9", "116.4", "2015-03-02 12:00", "20"])
        assert order.delivery_minutes == 20.0
        with pytest.raises(ValueError):
            OrderRepository.parse_row(["", "r1", "39.9", "116.4", "2015-03-02 12:00", "20"])


class TestAdhocFilter:
    """Тесты фильтра случайных пользователей"""

    def test_threshold(self):
        """Тест порога числа заказов"""
        orders = [make_order("u1", f"r{i}", at=datetime(2015, 3, 1 + i, 12, 0)) for i in range(10)]
        orders += [make_order("u2", f"r{i}", at=datetime(2015, 3, 1 + i, 12, 0)) for i in range(9)]
        kept = filter_adhoc_users(OrderLog(tuple(orders)), min_orders=10)
        assert kept.users() == ["u1"]
        assert len(kept) == 10

    def test_invalid_threshold(self):
        """Тест недопустимого порога"""
        with pytest.raises(ValueError):
            filter_adhoc_users(OrderLog(), min_orders=0)

    def test_empty_log(self):
        """Тест пустого журнала"""
        assert len(filter_adhoc_users(OrderLog())) == 0

    def test_idempotent_and_monotone(self):
        """Тест: повторный фильтр ничего не меняет, рост порога не добавляет пользователей"""
        rng = np.random.default_rng(5)
        orders = [
            make_order(f"u{u:02d}", f"r{i}", at=datetime(2015, 1, 1, 12, 0) + timedelta(days=i))
            for u in range(30)
            for i in range(int(rng.integers(1, 25)))
        ]
        log = OrderLog(tuple(orders))
        previous = log
        for threshold in range(1, 26):
            kept = filter_adhoc_users(log, min_orders=threshold)
            assert list(filter_adhoc_users(kept, min_orders=threshold)) == list(kept)
            assert set(kept.users()) <= set(previous.users())
            assert len(kept) <= len(previous)
            assert all(len(user_orders) >= threshold for user_orders in kept.by_user().values())
            previous = kept
