from datetime import datetime

import numpy as np
import pytest
from shapely.geometry import box

from models.domain import GeoPoint, HubLabel, Move, MoveKind, Transaction, UserGroup, UserProfile, YearMonth
from models.geography import Region, RingModel, SubdistrictSet
from services.analytics import (
    HousingMoveOutcome,
    PriceMatcher,
    binned_post_pre_diff,
    destination_shares,
    flow_graph,
    group_comparisons,
    hub_statistics,
    kde_hotspot_grid,
    match_housing_price,
    match_prices,
    monthly_move_counts,
    region_transitions,
    seasonal_profile,
    work_home_ratio_correlation,
    work_home_ratios,
)
from tests.factories import ORIGIN, km_away, make_record
from utils.exceptions import InsufficientDataError

# две полосы по долготе и одна над ними
SUBDISTRICTS = {
    "1": box(116.3, 39.8, 116.4, 39.9),
    "2": box(116.4, 39.8, 116.5, 39.9),
    "10": box(116.3, 39.9, 116.5, 40.0),
}

IN_1 = GeoPoint(39.85, 116.35)
IN_2 = GeoPoint(39.85, 116.45)
IN_10 = GeoPoint(39.95, 116.40)
FAR = GeoPoint(41.0, 118.0)


def make_move(kind=MoveKind.HOUSING, src=IN_1, dst=IN_2, month=YearMonth(2015, 6), user_id="u1", **extra):
    return Move(
        user_id=user_id,
        kind=kind,
        from_hub=f"{user_id}#1",
        to_hub=f"{user_id}#2",
        from_center=src,
        to_center=dst,
        move_month=month,
        displacement_km=10.0,
        **extra,
    )


@pytest.fixture
def subdistricts():
    return SubdistrictSet(polygons=SUBDISTRICTS)


@pytest.fixture
def rings():
    return RingModel(
        rings=(
            box(116.38, 39.88, 116.42, 39.92),
            box(116.3, 39.8, 116.5, 40.0),
            box(116.0, 39.5, 116.8, 40.3),
        )
    )


class TestMonthlySeries:
    """Тесты помесячных рядов"""

    def test_zero_fill(self):
        """Тест заполнения пустых месяцев нулями"""
        moves = [
            make_move(month=YearMonth(2015, 1)),
            make_move(month=YearMonth(2015, 4)),
            make_move(MoveKind.JOB, month=YearMonth(2015, 4)),
        ]
        series = monthly_move_counts(moves)
        assert list(series[MoveKind.HOUSING].values()) == [1, 0, 0, 1]
        assert list(series[MoveKind.JOB].values()) == [0, 0, 0, 1]
        assert list(series[MoveKind.JOB]) == [YearMonth(2015, m) for m in range(1, 5)]

    def test_span_extends_axis(self):
        """Тест явного диапазона месяцев"""
        series = monthly_move_counts([], span=(YearMonth(2014, 11), YearMonth(2015, 2)))
        assert list(series[MoveKind.HOUSING].values()) == [0, 0, 0, 0]

    def test_seasonal_profile(self):
        """Тест свёртки по месяцам года"""
        moves = [make_move(month=YearMonth(2014, 3)), make_move(month=YearMonth(2015, 3))]
        profile = seasonal_profile(monthly_move_counts(moves)[MoveKind.HOUSING])
        assert len(profile) == 12
        assert profile[2] == 2
        assert sum(profile) == 2


class TestFlows:
    """Тесты потоков между подрайонами"""

    def test_flow_graph(self, subdistricts):
        """Тест рёбер, узлов и spill"""
        moves = [make_move(), make_move(), make_move(src=IN_2, dst=IN_10), make_move(dst=FAR)]
        flows = flow_graph(moves, subdistricts)
        assert flows.spill == 1
        assert flows.edges() == {("1", "2"): 2, ("2", "10"): 1}
        assert flows.nodes() == {"1": (2, -2), "2": (3, 1), "10": (1, 1)}

    def test_boundary_goes_to_lower_id(self, subdistricts):
        """Тест точки на общей границе"""
        assert subdistricts.locate(GeoPoint(39.85, 116.4)) == "1"
        assert subdistricts.locate(FAR) is None

    def test_work_home_ratios(self, subdistricts):
        """Тест отношения W/H и исключения подрайонов без H"""
        t0, t1 = datetime(2015, 1, 1), datetime(2015, 12, 1)
        hubs = [
            make_record("a#1", HubLabel.WORK, IN_1, t0, t1),
            make_record("a#2", HubLabel.WORK, IN_1, t0, t1),
            make_record("a#3", HubLabel.HOME, IN_1, t0, t1),
            make_record("b#1", HubLabel.WORK, IN_2, t0, t1),
            make_record("b#2", HubLabel.OTHER, IN_10, t0, t1),
        ]
        result = work_home_ratios(hubs, subdistricts)
        assert result.ratios == {"1": 2.0}
        assert result.excluded == ["2"]
        assert result.counts["2"] == (1, 0)

    def test_ratio_correlation(self):
        """Тест корреляции с переписью"""
        polygons = {str(i): box(116.0 + 0.1 * i, 39.0, 116.1 + 0.1 * i, 39.1) for i in range(4)}
        census = {str(i): (float(10 * (i + 1)), 10.0) for i in range(4)}
        s = SubdistrictSet(polygons=polygons, reference_series=census)
        t0, t1 = datetime(2015, 1, 1), datetime(2015, 12, 1)
        hubs = []
        for i in range(4):
            center = GeoPoint(39.05, 116.05 + 0.1 * i)
            hubs.append(make_record(f"h{i}", HubLabel.HOME, center, t0, t1))
            hubs += [make_record(f"w{i}-{k}", HubLabel.WORK, center, t0, t1) for k in range(i + 1)]
        result = work_home_ratio_correlation(hubs, s)
        assert result.n_common == 4
        assert result.r == pytest.approx(1.0)

    def test_correlation_needs_census(self, subdistricts):
        """Тест: без переписи корреляция не считается"""
        with pytest.raises(InsufficientDataError):
            work_home_ratio_correlation([], subdistricts)


class TestPrices:
    """Тесты сопоставления цен жилья"""

    def test_median_within_radius_and_month(self):
        """Тест медианы сделок того же месяца в радиусе"""
        month = YearMonth(2015, 6)
        txns = [
            Transaction(km_away(0.5), month, 100.0),
            Transaction(km_away(-1.0), month, 300.0),
            Transaction(km_away(0, 2.0), month, 200.0),
            Transaction(km_away(5.0), month, 10_000.0),
            Transaction(ORIGIN, YearMonth(2015, 7), 50_000.0),
        ]
        assert match_housing_price(ORIGIN, month, txns) == pytest.approx(200.0)
        assert match_housing_price(ORIGIN, YearMonth(2015, 5), txns) is None
        assert match_housing_price(km_away(30), month, txns) is None

    def test_match_prices_sides(self):
        """Тест: до переезда берётся from_month, после - месяц переезда"""
        matcher = PriceMatcher(
            [
                Transaction(IN_1, YearMonth(2015, 5), 100.0),
                Transaction(IN_2, YearMonth(2015, 6), 150.0),
                Transaction(IN_10, YearMonth(2015, 3), 90.0),
            ]
        )
        move = make_move(from_month=YearMonth(2015, 5))
        job = make_move(MoveKind.JOB)
        stayer = UserProfile("s", frozenset({UserGroup.STAYER}), home_center=IN_10, home_month=YearMonth(2015, 3))
        context = match_prices([stayer], [move, job], matcher, 3.0)
        assert context.stayer_prices == {"s": 90.0}
        assert context.move_prices == [(move, 100.0, 150.0)]
        assert context.matched_rate == 1.0


class TestBinnedDiffs:
    """Тесты средних разностей по корзинам"""

    def test_reproduces_global_mean(self):
        """Тест: взвешенные средние корзин дают общее среднее"""
        rng = np.random.default_rng(3)
        pre = rng.uniform(0, 30, 500)
        post = pre + rng.normal(1.0, 4.0, 500)
        bins = binned_post_pre_diff(zip(pre, post), 2.0)
        total = sum(b.count for b in bins)
        assert total == 500
        weighted = sum(b.mean_diff * b.count for b in bins) / total
        assert weighted == pytest.approx(float(np.mean(post - pre)), abs=1e-9)
        assert all(b.upper - b.lower == pytest.approx(2.0) for b in bins)

    def test_bin_edges(self):
        """Тест границ корзин"""
        bins = binned_post_pre_diff([(0.0, 1.0), (1.99, 3.99), (2.0, 1.0)], 2.0)
        assert [(b.index, b.count) for b in bins] == [(0, 2), (1, 1)]
        assert bins[0].mean_diff == pytest.approx(1.5)
        with pytest.raises(ValueError):
            binned_post_pre_diff([], 0.0)


class TestRegions:
    """Тесты переходов между кольцами"""

    def test_region_of(self, rings):
        """Тест принадлежности кольцам"""
        assert rings.region_of(ORIGIN) is Region.CITY_CORE
        assert rings.region_of(IN_1) is Region.INNER_SUBURB
        assert rings.region_of(GeoPoint(39.6, 116.1)) is Region.OUTER_SUBURB
        assert rings.region_of(FAR) is Region.OUTSIDE

    def test_nested_rings_required(self):
        """Тест: кольца должны быть вложенными"""
        with pytest.raises(ValueError):
            RingModel(rings=(box(0, 0, 2, 2), box(0, 0, 1, 1), box(0, 0, 3, 3)))

    def test_transition_table(self, rings):
        """Тест средних по ячейкам и spill"""

        def outcome(src, dst, dprice, dcommute):
            return HousingMoveOutcome("u", src, dst, 100.0, 100.0 + dprice, 10.0, 10.0 + dcommute)

        table, spill = region_transitions(
            [
                outcome(ORIGIN, IN_1, -20.0, 4.0),
                outcome(ORIGIN, IN_1, -40.0, 2.0),
                outcome(IN_1, ORIGIN, 30.0, -3.0),
                outcome(IN_1, FAR, 1.0, 1.0),
            ],
            rings,
        )
        assert spill == 1
        assert [(c.from_region, c.to_region, c.count) for c in table] == [
            (Region.CITY_CORE, Region.INNER_SUBURB, 2),
            (Region.INNER_SUBURB, Region.CITY_CORE, 1),
        ]
        assert table[0].mean_price_diff == pytest.approx(-30.0)
        assert table[0].mean_commute_diff == pytest.approx(3.0)

    def test_destination_shares(self, rings):
        """Тест долей по региону назначения"""
        shares = destination_shares([make_move(dst=ORIGIN), make_move(dst=IN_2), make_move(dst=FAR)], rings)
        assert shares["CityCore"] == pytest.approx(1 / 3)
        assert shares["InnerSuburb"] == pytest.approx(1 / 3)
        assert shares["Outside"] == pytest.approx(1 / 3)
        assert shares["OuterSuburb"] == 0.0
        assert destination_shares([], rings)["CityCore"] == 0.0


class TestKde:
    """Тесты карты плотности"""

    def test_integral_and_peak(self):
        """Тест нормировки и положения максимума"""
        points = [ORIGIN] * 5 + [km_away(8)]
        grid = kde_hotspot_grid(points, cell_km=0.5, bandwidth_km=1.0)
        assert grid.integral() == pytest.approx(1.0, abs=1e-9)
        i, j = np.unravel_index(np.argmax(grid.density), grid.density.shape)
        assert abs(grid.lats[i] - ORIGIN.lat) < 0.01
        assert abs(grid.lons[j] - ORIGIN.lon) < 0.01
        assert len(list(grid.rows())) == grid.density.size

    def test_empty(self):
        """Тест пустого набора точек"""
        with pytest.raises(InsufficientDataError):
            kde_hotspot_grid([])


class TestComparisons:
    """Тесты сравнения групп"""

    def test_group_comparisons(self):
        """Тест сравнения стайеров и переезжающих"""
        stayers = [
            UserProfile(f"s{i}", frozenset({UserGroup.STAYER}), commute_km=c, overtime_ratio=o)
            for i, (c, o) in enumerate([(5.0, 0.1), (6.0, 0.2), (7.0, 0.15), (5.5, 0.12)])
        ]
        moves = [
            make_move(
                MoveKind.JOB,
                user_id=f"j{i}",
                pre_commute_km=pre,
                post_commute_km=post,
                pre_overtime_ratio=0.3 + 0.05 * i,
                post_overtime_ratio=0.2,
            )
            for i, (pre, post) in enumerate([(10.0, 6.0), (12.0, 7.0), (11.0, 8.0)])
        ]
        result = group_comparisons(stayers, moves)
        commute = result["commute_km"]
        assert commute["groups"]["Stayer"]["n"] == 4
        assert commute["groups"]["JobHopper"]["mean"] == pytest.approx(11.0)
        assert "t" in commute["tests"]["JobHopper"]
        assert "error" in commute["tests"]["HomeMover"]
        assert result["paired"]["commute_km_job"]["t"] < 0
        assert "housing_price" not in result

    def test_hub_statistics(self):
        """Тест статистики хабов"""
        t0, t1 = datetime(2015, 1, 1), datetime(2015, 12, 1)
        records = [
            make_record("a#1", HubLabel.HOME, ORIGIN, t0, t1, user_id="a"),
            make_record("a#2", HubLabel.WORK, IN_1, t0, t1, user_id="a"),
            make_record("b#1", HubLabel.OTHER, IN_2, t0, t1, user_id="b"),
        ]
        stats = hub_statistics(records, n_users=4)
        assert stats["hubs"] == 3
        assert stats["users_with_hubs"] == 2
        assert stats["labels"] == {"H": 1, "W": 1, "O": 1}
        assert stats["unclusterable_rate"] == pytest.approx(0.5)
