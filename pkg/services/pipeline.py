"""
Стадии пайплайна: synth -> detect -> analyze -> evaluate

Каждая стадия читает и пишет обычные файлы в out_dir, поэтому их можно
запускать по отдельности и перезапускать с любого места.
"""

import logging
from contextlib import contextmanager
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

from config.pipeline import PipelineConfig
from models.domain import (
    ClusterOutcome,
    DiningHub,
    HolidayCalendar,
    HubLabel,
    HubRecord,
    Move,
    MoveKind,
    Order,
    UserProfile,
    YearMonth,
    group_by_user,
)
from models.geography import RingModel, SubdistrictSet
from models.repositories import (
    GeoRepository,
    GroundTruthRepository,
    HubRepository,
    MoveRepository,
    OrderRepository,
    ProfileRepository,
    ReportWriter,
)
from services import analytics
from services.evaluation import evaluate
from services.hub_profile import filter_temporary_hubs, profile_hubs
from services.moves import UserMobility, analyze_user, group_counts
from services.orders import filter_adhoc_users
from services.synthcity import SyntheticCityGenerator
from services.wkms import cluster_user
from utils.exceptions import InsufficientDataError, StageError
from utils.parallel import parallel_map, worker_context
from utils.timeslots import load_calendar

logger = logging.getLogger(__name__)

SUBDISTRICTS_FILE = "subdistricts.geojson"
RINGS_FILE = "rings.geojson"
CENSUS_FILE = "census.csv"
TRANSACTIONS_FILE = "transactions.csv"


@contextmanager
def stage(name: str):
    """Логирует начало и конец стадии; любой сбой превращается в StageError"""
    logger.info(f"Stage '{name}' started")
    try:
        yield
    except StageError:
        raise
    except Exception as e:
        logger.error(f"Stage '{name}' failed: {e}", exc_info=True)
        raise StageError(name, e) from e
    logger.info(f"Stage '{name}' finished")


def calendar_of(config: PipelineConfig) -> HolidayCalendar:
    if config.paths.calendar:
        return load_calendar(config.paths.calendar)
    return HolidayCalendar()


# --- synth ---


def run_synth(config: PipelineConfig) -> Dict[str, object]:
    """Генерирует сценарий: заказы, эталон, подрайоны, кольца, перепись, сделки"""
    scenario = config.require_scenario()
    out = config.out_path
    with stage("synth"):
        generator = SyntheticCityGenerator(scenario, config.scenario_seed, calendar_of(config))
        city = generator.build(config.workers)

        n_orders = OrderRepository(config.orders_path()).save(city.orders)
        GroundTruthRepository(config.ground_truth_path()).save(city.truth)
        geo = GeoRepository()
        geo.save_features(out / SUBDISTRICTS_FILE, city.subdistricts)
        geo.save_features(out / RINGS_FILE, city.rings)
        geo.save_census(out / CENSUS_FILE, city.census)
        n_transactions = geo.save_transactions(out / TRANSACTIONS_FILE, city.transactions)

    return {
        "users": len(city.truth.users),
        "orders": n_orders,
        "moves": len(city.truth.moves),
        "transactions": n_transactions,
    }


# --- detect ---


def _cluster_user_task(orders: Tuple[Order, ...]) -> ClusterOutcome:
    context = worker_context()
    outcome = cluster_user(orders, context["kernel"])
    return filter_temporary_hubs(outcome, context["classifier"])


def _analyze_user_task(item: Tuple[str, List[HubRecord], Dict[str, DiningHub]]) -> UserMobility:
    user_id, records, hub_orders = item
    context = worker_context()
    return analyze_user(user_id, records, hub_orders, context["calendar"], context["moves"])


def run_detection(config: PipelineConfig) -> Dict[str, object]:
    """Фильтр -> WKMS -> временные хабы -> K-means -> метки -> переезды -> группы"""
    out = config.out_path
    cal = calendar_of(config)

    with stage("load"):
        log, load_report = OrderRepository(config.orders_path()).load()
        users_in = len(log.users())
        log = filter_adhoc_users(log, config.min_orders)

    with stage("cluster"):
        per_user = list(log.by_user().values())
        outcomes: List[ClusterOutcome] = parallel_map(
            _cluster_user_task,
            per_user,
            config.workers,
            context={"kernel": config.kernel, "classifier": config.classifier},
        )
        hubs = [hub for outcome in outcomes for hub in outcome.hubs]
        HubRepository(out / "hubs.csv").save(hub.to_record() for hub in hubs)

    with stage("label"):
        profile = profile_hubs(hubs, cal, config.classifier, config.classifier_seed)
        records = [hub.to_record(profile.labels[hub.hub_id]) for hub in hubs]
        HubRepository(out / "labeled_hubs.csv", labeled=True).save(records)

    with stage("moves"):
        records_by_user = group_by_user(records)
        hubs_by_user = group_by_user(hubs)
        items = [
            (
                outcome.user_id,
                records_by_user.get(outcome.user_id, []),
                {hub.hub_id: hub for hub in hubs_by_user.get(outcome.user_id, [])},
            )
            for outcome in outcomes
        ]
        results: List[UserMobility] = parallel_map(
            _analyze_user_task, items, config.workers, context={"calendar": cal, "moves": config.moves}
        )
        moves = sorted((m for r in results for m in r.moves), key=lambda m: m.sort_key)
        profiles = [r.profile for r in results]
        MoveRepository(out / "moves.csv", out / "move_metrics.csv").save(moves)
        ProfileRepository(out / "groups.csv").save(profiles)

    labels = {label.value: sum(1 for r in records if r.label is label) for label in HubLabel}
    report = {
        "users_in": users_in,
        "users_after_filter": len(outcomes),
        "users_unclusterable": sum(1 for o in outcomes if not o.clusterable),
        "hubs": len(hubs),
        "temporary_hubs_removed": sum(len(o.temporary) for o in outcomes),
        "nonconverged_seeds": sum(len(o.nonconverged) for o in outcomes),
        "labels": labels,
        "labeling_mode": profile.labeling_mode,
        "k": profile.k,
        "silhouette": profile.silhouette,
        "centroids": profile.centroids,
        "users_with_home_and_work": sum(
            1
            for user_records in records_by_user.values()
            if {HubLabel.HOME, HubLabel.WORK} <= {r.label for r in user_records}
        ),
        "moves": {kind.value: sum(1 for m in moves if m.kind is kind) for kind in MoveKind},
        "groups": group_counts(profiles),
        "ambiguous_commutes": sum(r.ambiguous_commutes for r in results),
        "load_report": load_report.as_dict(),
    }
    ReportWriter(out).write_json("run_report.json", report)
    logger.info(
        f"Detection: {report['users_after_filter']} users, {len(hubs)} hubs "
        f"(H={labels['H']}, W={labels['W']}, O={labels['O']}), {len(moves)} moves"
    )
    return report


# --- analyze ---


def _optional_input(configured: Optional[str], default: Path) -> Optional[Path]:
    if configured:
        return Path(configured)
    return default if default.exists() else None


def _hub_span(records: Sequence[HubRecord]) -> Optional[Tuple[YearMonth, YearMonth]]:
    if not records:
        return None
    return (
        YearMonth.of(min(r.first_order for r in records)),
        YearMonth.of(max(r.last_order for r in records)),
    )


class _Notices:
    """Отчёты, пропущенные из-за отсутствующих входных данных"""

    def __init__(self):
        self.items: List[str] = []

    def skip(self, report: str, reason: str) -> None:
        message = f"{report} skipped: {reason}"
        logger.warning(message)
        self.items.append(message)


def run_analysis(config: PipelineConfig) -> Dict[str, object]:
    """Все агрегированные отчёты; отчёт без своих входных данных пропускается"""
    out = config.out_path
    options = config.analytics
    writer = ReportWriter(out)
    notices = _Notices()
    summary: Dict[str, object] = {}

    with stage("analyze"):
        records = HubRepository(out / "labeled_hubs.csv", labeled=True).load()
        moves = MoveRepository(out / "moves.csv", out / "move_metrics.csv").load()
        profiles = ProfileRepository(out / "groups.csv").load()
        summary["hub_statistics"] = analytics.hub_statistics(records, len(profiles))
        summary["groups"] = group_counts(profiles)

        _write_monthly(writer, moves, _hub_span(records))
        _write_commute_bins(writer, moves, options.commute_bin_km, options.overtime_bin)
        _write_kde(writer, records, options.kde_cell_km, options.kde_bandwidth_km, notices)

        geo = GeoRepository()
        subdistricts_path = _optional_input(options.subdistricts, out / SUBDISTRICTS_FILE)
        rings_path = _optional_input(options.rings, out / RINGS_FILE)
        census_path = _optional_input(options.census, out / CENSUS_FILE)
        transactions_path = _optional_input(options.transactions, out / TRANSACTIONS_FILE)

        subdistricts = None
        if subdistricts_path is None:
            notices.skip("flow graphs and work-home ratios", "no subdistricts file")
        else:
            subdistricts = geo.load_subdistricts(subdistricts_path, census_path)
            summary["flow_spill"] = _write_flows(writer, moves, subdistricts)
            summary["work_home_ratio"] = _write_ratios(writer, records, subdistricts, notices)

        rings = None
        if rings_path is None:
            notices.skip("region transitions and destination shares", "no rings file")
        else:
            rings = geo.load_rings(rings_path)
            summary["destination_shares"] = analytics.destination_shares(
                (m for m in moves if m.kind is MoveKind.HOUSING), rings
            )

        prices = None
        if transactions_path is None:
            notices.skip("housing price reports", "no transactions file")
        else:
            matcher = analytics.PriceMatcher(geo.load_transactions(transactions_path))
            prices = analytics.match_prices(profiles, moves, matcher, options.price_radius_km)
            _write_prices(writer, profiles, prices, options.price_bin)
            if rings is not None:
                summary["region_spill"] = _write_regions(writer, prices, rings)

        summary["comparisons"] = analytics.group_comparisons(profiles, moves, prices)
        summary["notices"] = notices.items
        writer.write_json("analysis_summary.json", summary)

    return summary


def _write_monthly(writer: ReportWriter, moves: Sequence[Move], span) -> None:
    series = analytics.monthly_move_counts(moves, span)
    kinds = list(MoveKind)
    months = list(series[kinds[0]].keys())
    writer.write_csv(
        "monthly_moves.csv",
        ["month"] + [k.value for k in kinds],
        ([str(ym)] + [series[k][ym] for k in kinds] for ym in months),
    )
    seasonal = {k: analytics.seasonal_profile(series[k]) for k in kinds}
    writer.write_csv(
        "seasonal_moves.csv",
        ["month_of_year"] + [k.value for k in kinds],
        ([i + 1] + [seasonal[k][i] for k in kinds] for i in range(12)),
    )


def _bin_rows(bins):
    return ((b.index, b.lower, b.upper, b.mean_diff, b.count) for b in bins)


BIN_HEADER = ["bin", "lower", "upper", "mean_post_minus_pre", "count"]


def _write_commute_bins(
    writer: ReportWriter, moves: Sequence[Move], commute_width: float, overtime_width: float
) -> None:
    for kind in MoveKind:
        pairs = [
            (m.pre_commute_km, m.post_commute_km)
            for m in moves
            if m.kind is kind and m.pre_commute_km is not None and m.post_commute_km is not None
        ]
        bins = analytics.binned_post_pre_diff(pairs, commute_width)
        writer.write_csv(f"bins_commute_{kind.value.lower()}.csv", BIN_HEADER, _bin_rows(bins))
    overtime = [
        (m.pre_overtime_ratio, m.post_overtime_ratio)
        for m in moves
        if m.pre_overtime_ratio is not None and m.post_overtime_ratio is not None
    ]
    bins = analytics.binned_post_pre_diff(overtime, overtime_width)
    writer.write_csv("bins_overtime.csv", BIN_HEADER, _bin_rows(bins))


def _write_kde(
    writer: ReportWriter, records: Sequence[HubRecord], cell_km: float, bandwidth_km: float, notices: "_Notices"
) -> None:
    for label, name in ((HubLabel.HOME, "kde_home.csv"), (HubLabel.WORK, "kde_work.csv")):
        points = [r.center for r in records if r.label is label]
        try:
            grid = analytics.kde_hotspot_grid(points, cell_km, bandwidth_km)
        except InsufficientDataError as e:
            notices.skip(name, str(e))
            continue
        writer.write_csv(name, ["lat", "lon", "density_per_km2"], grid.rows())


def _write_flows(writer: ReportWriter, moves: Sequence[Move], subdistricts: SubdistrictSet) -> Dict[str, int]:
    spill = {}
    for kind in MoveKind:
        flows = analytics.flow_graph((m for m in moves if m.kind is kind), subdistricts)
        suffix = kind.value.lower()
        writer.write_csv(
            f"flow_nodes_{suffix}.csv",
            ["subdistrict_id", "total", "net_inflow"],
            ((sid, total, net) for sid, (total, net) in flows.nodes().items()),
        )
        writer.write_csv(
            f"flow_edges_{suffix}.csv",
            ["from_subdistrict", "to_subdistrict", "count"],
            ((u, v, c) for (u, v), c in flows.edges().items()),
        )
        spill[kind.value] = flows.spill
    return spill


def _write_ratios(
    writer: ReportWriter, records: Sequence[HubRecord], subdistricts: SubdistrictSet, notices: "_Notices"
) -> Dict[str, object]:
    try:
        result = analytics.work_home_ratio_correlation(records, subdistricts)
    except InsufficientDataError as e:
        notices.skip("work-home ratio correlation", str(e))
        result = analytics.work_home_ratios(records, subdistricts)

    reference = subdistricts.reference_series or {}

    def census_ratio(sid: str):
        if sid not in reference or reference[sid][1] <= 0:
            return None
        return reference[sid][0] / reference[sid][1]

    writer.write_csv(
        "work_home_ratio.csv",
        ["subdistrict_id", "w_hubs", "h_hubs", "ratio", "census_ratio"],
        ((sid, w, h, result.ratios.get(sid), census_ratio(sid)) for sid, (w, h) in result.counts.items()),
    )
    return {"r": result.r, "p": result.p, "n_common": result.n_common, "excluded": result.excluded}


def _write_prices(writer: ReportWriter, profiles: Sequence[UserProfile], prices, price_bin: float) -> None:
    homes = {p.user_id: p for p in profiles}
    rows = []
    for user_id, price in prices.stayer_prices.items():
        profile = homes[user_id]
        home = profile.home_center
        rows.append((user_id, "stayer", home.lat, home.lon, profile.home_month, price))
    for move, pre, post in prices.move_prices:
        rows.append((move.user_id, "pre", move.from_center.lat, move.from_center.lon, move.from_month, pre))
        rows.append((move.user_id, "post", move.to_center.lat, move.to_center.lon, move.move_month, post))
    writer.write_csv("price_matches.csv", ["user_id", "role", "lat", "lon", "month", "price_per_m2"], rows)

    pairs = [(pre, post) for _, pre, post in prices.move_prices if pre is not None and post is not None]
    writer.write_csv("bins_price.csv", BIN_HEADER, _bin_rows(analytics.binned_post_pre_diff(pairs, price_bin)))


def _write_regions(writer: ReportWriter, prices, rings: RingModel) -> int:
    outcomes = [
        analytics.HousingMoveOutcome(
            user_id=move.user_id,
            from_location=move.from_center,
            to_location=move.to_center,
            pre_price=pre,
            post_price=post,
            pre_commute_km=move.pre_commute_km,
            post_commute_km=move.post_commute_km,
        )
        for move, pre, post in prices.move_prices
        if None not in (pre, post, move.pre_commute_km, move.post_commute_km)
    ]
    cells, spill = analytics.region_transitions(outcomes, rings)
    writer.write_csv(
        "region_transitions.csv",
        ["from_region", "to_region", "mean_price_diff", "mean_commute_diff_km", "count"],
        ((c.from_region, c.to_region, c.mean_price_diff, c.mean_commute_diff, c.count) for c in cells),
    )
    return spill


# --- evaluate ---


def run_evaluation(
    config: PipelineConfig, match_radius_km: Optional[float] = None, month_slack: Optional[int] = None
) -> Dict[str, object]:
    out = config.out_path
    radius = match_radius_km if match_radius_km is not None else config.evaluation.match_radius_km
    slack = month_slack if month_slack is not None else config.evaluation.month_slack
    with stage("evaluate"):
        truth = GroundTruthRepository(config.ground_truth_path()).load()
        records = HubRepository(out / "labeled_hubs.csv", labeled=True).load()
        moves = MoveRepository(out / "moves.csv", out / "move_metrics.csv").load()
        report = evaluate(records, moves, truth, radius, slack).as_dict()
        report["match_radius_km"] = radius
        report["month_slack"] = slack
        ReportWriter(out).write_json("eval_report.json", report)
    return report


def run_all(config: PipelineConfig) -> Dict[str, object]:
    """synth (если есть сценарий) -> detect -> analyze -> evaluate (если есть эталон)"""
    summary: Dict[str, object] = {}
    if config.scenario is not None:
        summary["synth"] = run_synth(config)
    summary["detect"] = run_detection(config)
    summary["analyze"] = run_analysis(config)
    if config.ground_truth_path().exists():
        summary["evaluate"] = run_evaluation(config)
    else:
        logger.warning(f"Evaluation skipped: no ground truth at {config.ground_truth_path()}")
    return summary

