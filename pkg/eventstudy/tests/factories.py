"""Construtores de dados sintéticos para os testes."""
import csv
from datetime import date, timedelta
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from eventstudy.models import (
    CarResult,
    CarTable,
    Category,
    Event,
    EventSet,
    ModelKind,
    ReturnPanel,
    Selection,
)

START = date(2020, 1, 1)


def random_returns(assets: Sequence[str], days: int, seed: int = 0, sd: float = 0.02, start=START) -> ReturnPanel:
    rng = np.random.default_rng(seed)
    index = pd.date_range(start, periods=days, freq="D", name="date")
    frame = pd.DataFrame(rng.normal(0.0, sd, size=(days, len(assets))), index=index, columns=list(assets))
    frame.columns.name = "asset"
    return ReturnPanel(returns=frame)


def random_walk_closes(assets: Sequence[str], days: int, seed: int = 0, sd: float = 0.03) -> Dict[str, pd.Series]:
    rng = np.random.default_rng(seed)
    index = pd.date_range(START, periods=days, freq="D")
    closes = {}
    for asset in assets:
        path = 100.0 * np.cumprod(1.0 + rng.normal(0.0, sd, size=days))
        closes[asset] = pd.Series(path, index=index)
    return closes


def write_prices_csv(path, closes: Dict[str, pd.Series]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(["asset", "date", "close"])
        for asset, series in closes.items():
            for day, value in series.items():
                writer.writerow([asset, day.strftime("%Y-%m-%d"), repr(float(value))])


EVENT_HEADER = ["id", "date", "name", "category", "selection", "impact_usd", "affected_users", "tags"]


def write_events_csv(path, rows: Iterable[Sequence]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle)
        writer.writerow(EVENT_HEADER)
        for row in rows:
            writer.writerow(row)


def make_event(
    event_id: str,
    day: date,
    category: Category = Category.INFRA_NEGATIVE,
    selection: Selection = Selection.EXOGENOUS,
    tags: Tuple[str, ...] = (),
    overlap_ids: Tuple[str, ...] = (),
) -> Event:
    return Event(
        id=event_id,
        date=day,
        name=event_id,
        category=category,
        selection=selection,
        tags=tags,
        overlap_ids=overlap_ids,
    )


def make_table(
    rows: List[Tuple[str, Category, str, float]],
    event_overrides: Optional[Dict[str, Dict]] = None,
) -> CarTable:
    """
    CarTable a partir de tuplas (evento, categoria, ativo, car).

    Os eventos recebem datas espaçadas de 40 dias na ordem de aparição.
    """
    event_overrides = event_overrides or {}
    events: Dict[str, Event] = {}
    results = []
    for event_id, category, asset, car in rows:
        if event_id not in events:
            day = START + timedelta(days=40 * len(events))
            events[event_id] = make_event(event_id, day, category, **event_overrides.get(event_id, {}))
        results.append(
            CarResult(
                event_id=event_id,
                asset=asset,
                category=category,
                car=car,
                window=(0, 5),
                model=ModelKind.CONSTANT_MEAN,
                sigma_car=0.01,
                significant=abs(car) > 0.02,
                n_days=6,
            )
        )
    return CarTable(rows=tuple(results), events=events)


def two_group_table(values_a: Sequence[Sequence[float]], values_b: Sequence[Sequence[float]]) -> CarTable:
    """Cada item de values_x é a lista de CARs (um por ativo) de um evento."""
    rows = []
    for prefix, category, groups in (
        ("A", Category.INFRA_NEGATIVE, values_a),
        ("B", Category.REG_NEGATIVE, values_b),
    ):
        for i, cars in enumerate(groups, start=1):
            for j, car in enumerate(cars):
                rows.append((f"{prefix}{i}", category, f"X{j}", car))
    return make_table(rows)


def event_set(events: Iterable[Event], period=None) -> EventSet:
    return EventSet.build(list(events), period)
