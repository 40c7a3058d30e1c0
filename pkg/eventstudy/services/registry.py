import csv
import logging
from dataclasses import replace
from datetime import date, timedelta
from typing import Dict, List, Optional, Tuple

import pandas as pd

from ..exceptions import ConflictError, InvalidArgumentError, ParseError
from ..models import (
    Event,
    EventSet,
    ReturnPanel,
    SelectionAudit,
    SelectionAuditRow,
)
from ..serializers import EventRowSerializer, flatten_errors

logger = logging.getLogger(__name__)

EVENT_COLUMNS = [
    "id",
    "date",
    "name",
    "category",
    "selection",
    "impact_usd",
    "affected_users",
    "tags",
]


class EventRegistryService:
    """
    Registro de eventos: carga, sobreposições e auditoria de seleção.

    Eventos `Excluded` permanecem no registro (reprodutibilidade da lista
    completa), mas são filtrados de todas as análises.
    """

    IMPACT_THRESHOLD_USD = 1e8
    USERS_THRESHOLD = 1e5

    @classmethod
    def load_events(
        cls, path, delimiter: str = ",", study_period: Optional[Tuple[date, date]] = None
    ) -> EventSet:
        """
        Lê o arquivo de eventos.

        Raises:
            ParseError: linha malformada ou enumeração desconhecida (com a linha)
            ConflictError: id duplicado
        """
        events: List[Event] = []
        seen: Dict[str, int] = {}
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle, delimiter=delimiter)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ParseError("arquivo vazio, cabeçalho ausente.", line=1)
            if sorted(header) != sorted(EVENT_COLUMNS):
                raise ParseError(
                    f"cabeçalho esperado: {','.join(EVENT_COLUMNS)}.", line=1
                )

            for row in reader:
                line = reader.line_num
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise ParseError(
                        f"esperadas {len(header)} colunas, encontradas {len(row)}.", line=line
                    )
                raw = {name: cell.strip() for name, cell in zip(header, row)}
                for optional in ("impact_usd", "affected_users"):
                    if raw[optional] == "":
                        raw[optional] = None

                serializer = EventRowSerializer(data=raw)
                if not serializer.is_valid():
                    detail = flatten_errors(serializer.errors)
                    raise ParseError(f"evento {raw.get('id') or '?'}: {detail}", line=line)

                event = serializer.to_event()
                if event.id in seen:
                    raise ConflictError(
                        f"Linha {line}: id {event.id} duplicado (já definido na linha {seen[event.id]})."
                    )
                seen[event.id] = line
                events.append(event)

        event_set = EventSet.build(events, study_period)
        logger.info(f"Registro carregado de {path}: {len(event_set)} eventos")
        return event_set

    @classmethod
    def detect_overlaps(cls, event_set: EventSet, horizon_days: int) -> EventSet:
        """
        Marca pares de eventos distintos a até `horizon_days` dias de distância.

        A comparação ignora categoria: um evento regulatório pode sobrepor um
        de infraestrutura.
        """
        if horizon_days < 1:
            raise InvalidArgumentError("horizon_days deve ser >= 1.")

        events = list(event_set.events)
        overlaps: Dict[str, List[str]] = {e.id: [] for e in events}
        for i, first in enumerate(events):
            for second in events[i + 1 :]:
                if first.id == second.id:
                    continue
                if abs((second.date - first.date).days) <= horizon_days:
                    overlaps[first.id].append(second.id)
                    overlaps[second.id].append(first.id)

        order = {e.id: (e.date, e.id) for e in events}
        annotated = tuple(
            replace(e, overlap_ids=tuple(sorted(overlaps[e.id], key=order.__getitem__)))
            for e in events
        )
        flagged = sum(1 for e in annotated if e.overlap_ids)
        logger.info(f"Sobreposições (horizonte {horizon_days}d): {flagged} eventos marcados")
        return replace(event_set, events=annotated)

    @classmethod
    def audit_selection(
        cls,
        event_set: EventSet,
        btc_returns: ReturnPanel,
        threshold: float,
        asset: str = "BTC",
        impact_threshold: Optional[float] = None,
        users_threshold: Optional[float] = None,
    ) -> SelectionAudit:
        """
        Recalcula os critérios de impacto de cada evento.

        Retorno de 3 dias = retorno composto nos dias [0, +2] relativos ao
        evento. Falta de dados marca a linha como incompleta, sem erro.
        """
        if not threshold > 0:
            raise InvalidArgumentError("threshold deve ser positivo.")
        impact_threshold = cls.IMPACT_THRESHOLD_USD if impact_threshold is None else impact_threshold
        users_threshold = cls.USERS_THRESHOLD if users_threshold is None else users_threshold

        if asset not in btc_returns.assets:
            logger.warning(f"[AUDIT] série {asset} ausente do painel; todas as linhas ficam incompletas")
        series = btc_returns.series(asset)
        rows = []
        for event in event_set:
            days = [pd.Timestamp(event.date + timedelta(days=k)) for k in range(3)]
            values = [series.get(day) for day in days]
            values = [None if v is None or pd.isna(v) else float(v) for v in values]
            same_day = values[0]
            three_day = None
            if all(v is not None for v in values):
                compound = 1.0
                for v in values:
                    compound *= 1.0 + v
                three_day = compound - 1.0
            complete = three_day is not None
            if not complete:
                logger.info(f"[AUDIT] evento={event.id} | série {asset} incompleta em {event.date}")

            rows.append(
                SelectionAuditRow(
                    event_id=event.id,
                    same_day_btc_return=same_day,
                    three_day_btc_return=three_day,
                    met_same_day=bool(same_day is not None and abs(same_day) > threshold),
                    met_three_day=bool(three_day is not None and abs(three_day) > threshold),
                    met_impact=event.impact_usd is not None
                    and event.impact_usd > impact_threshold,
                    met_users=event.affected_users is not None
                    and event.affected_users > users_threshold,
                    complete=complete,
                )
            )
        return SelectionAudit(rows=tuple(rows), threshold=threshold)
