import logging
from pathlib import Path
from typing import Tuple, Union

from models.domain import LoadReport, OrderLog
from models.repositories import OrderRepository

logger = logging.getLogger(__name__)


def load_orders(path: Union[str, Path]) -> Tuple[OrderLog, LoadReport]:
    """Загружает журнал заказов из CSV с отчётом о загрузке"""
    return OrderRepository(path).load()


def write_orders(log: OrderLog, path: Union[str, Path]) -> int:
    """Сохраняет журнал заказов в CSV (load -> write -> load даёт тот же журнал)"""
    return OrderRepository(path).save(log)


def filter_adhoc_users(log: OrderLog, min_orders: int = 10) -> OrderLog:
    """Оставляет только пользователей с не менее чем min_orders заказами"""
    if min_orders < 1:
        raise ValueError(f"min_orders must be >= 1, got {min_orders}")

    by_user = log.by_user()
    kept = tuple(o for orders in by_user.values() if len(orders) >= min_orders for o in orders)
    n_kept = len({o.user_id for o in kept})
    logger.info(f"Ad-hoc filter: kept {n_kept} of {len(by_user)} users (min_orders={min_orders})")
    return OrderLog(kept)
