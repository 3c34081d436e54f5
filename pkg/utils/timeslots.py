"""Временные слоты заказов: утро, обед, день, вечер, ночь по типу дня"""

import json
import logging
from datetime import date, datetime
from pathlib import Path
from typing import Union

from models.domain import DayType, HolidayCalendar, Slot, SlotLabel
from utils.exceptions import ConfigError

logger = logging.getLogger(__name__)

# [start_hour, end_hour); night wraps midnight
SLOT_HOURS = (
    (Slot.MORNING, 6, 11),
    (Slot.NOON, 11, 15),
    (Slot.AFTERNOON, 15, 19),
    (Slot.EVENING, 19, 22),
)


def slot_of(ts: datetime) -> Slot:
    """Слот суток по часу заказа"""
    for slot, start, end in SLOT_HOURS:
        if start <= ts.hour < end:
            return slot
    return Slot.NIGHT


def day_type_of(day: date, cal: HolidayCalendar) -> DayType:
    """Тип дня; праздник важнее выходного"""
    if cal.is_holiday(day):
        return DayType.HOLIDAY
    if cal.is_weekend(day):
        return DayType.WEEKEND
    return DayType.WEEKDAY


def time_slot(ts: datetime, cal: HolidayCalendar) -> SlotLabel:
    """Метка слота; ночь относится к календарной дате самого заказа"""
    return SlotLabel(day_type_of(ts.date(), cal), slot_of(ts))


def load_calendar(path: Union[str, Path]) -> HolidayCalendar:
    """
    Загружает календарь праздников из JSON

    Принимает либо список дат "YYYY-MM-DD", либо объект
    {"holidays": [...], "weekend_days": [5, 6]}.
    """
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read holiday calendar {path}: {e}")

    if isinstance(raw, list):
        holidays, weekend_days = raw, None
    elif isinstance(raw, dict):
        holidays, weekend_days = raw.get("holidays", []), raw.get("weekend_days")
    else:
        raise ConfigError(f"holiday calendar {path} must be a list or an object")

    try:
        dates = frozenset(date.fromisoformat(str(d)) for d in holidays)
        if weekend_days is None:
            cal = HolidayCalendar(holiday_dates=dates)
        else:
            cal = HolidayCalendar(holiday_dates=dates, weekend_days=frozenset(int(d) for d in weekend_days))
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid holiday calendar {path}: {e}")

    logger.info(f"Loaded holiday calendar: {len(cal.holiday_dates)} holidays, weekend days {sorted(cal.weekend_days)}")
    return cal
