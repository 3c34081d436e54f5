from datetime import date

import pytest

from models.domain import HolidayCalendar
from tests.factories import make_order, make_record


@pytest.fixture
def calendar():
    """Календарь с двумя праздниками"""
    return HolidayCalendar(holiday_dates=frozenset({date(2015, 1, 1), date(2015, 5, 1)}))


@pytest.fixture
def out_dir(tmp_path):
    path = tmp_path / "out"
    path.mkdir()
    return path


@pytest.fixture
def order_factory():
    return make_order


@pytest.fixture
def record_factory():
    return make_record
