import csv
import io
import logging
from typing import Dict, List, Optional, Tuple, Union

import numpy as np
import pandas as pd

from ..exceptions import ConflictError, InvalidArgumentError, ParseError
from ..models import PricePanel, ReturnPanel
from ..serializers import PriceRowSerializer, flatten_errors
from .reporting import atomic_write_text

logger = logging.getLogger(__name__)

PRICE_COLUMNS = ["asset", "date", "open", "high", "low", "close", "volume"]
OPTIONAL_COLUMNS = ["open", "high", "low", "volume"]


class IngestService:
    """
    Carga de preços diários, alinhamento de calendário e retornos.

    Regras:
    - Datas são dias UTC; o painel é ordenado por data.
    - Ausência de preço é NaN, nunca zero. Nada é imputado.
    - Retornos simples: close[t] / close[t-1] - 1, só entre dias adjacentes.
    """

    @classmethod
    def load_price_panel(cls, path, delimiter: str = ",") -> PricePanel:
        """
        Lê o arquivo de preços e valida linha a linha via `PriceRowSerializer`.

        Raises:
            ParseError: linha malformada ou valor inválido (com número da linha)
            ConflictError: par (ativo, data) duplicado
        """
        with open(path, newline="", encoding="utf-8") as handle:
            reader = csv.reader(handle, delimiter=delimiter)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise ParseError("arquivo vazio, cabeçalho ausente.", line=1)

            missing = [c for c in ("asset", "date", "close") if c not in header]
            if missing:
                raise ParseError(f"cabeçalho sem colunas obrigatórias: {', '.join(missing)}.", line=1)
            unknown = [c for c in header if c not in PRICE_COLUMNS]
            if unknown:
                raise ParseError(f"colunas desconhecidas: {', '.join(unknown)}.", line=1)

            records: Dict[Tuple[str, pd.Timestamp], Dict] = {}
            for row in reader:
                line = reader.line_num
                if not row or all(not cell.strip() for cell in row):
                    continue
                if len(row) != len(header):
                    raise ParseError(
                        f"esperadas {len(header)} colunas, encontradas {len(row)}.", line=line
                    )
                raw = {name: (cell.strip() or None) for name, cell in zip(header, row)}
                serializer = PriceRowSerializer(data=raw)
                if not serializer.is_valid():
                    raise ParseError(flatten_errors(serializer.errors), line=line)

                data = serializer.validated_data
                key = (data["asset"], pd.Timestamp(data["date"]))
                if key in records:
                    raise ConflictError(
                        f"Linha {line}: preço duplicado para {data['asset']} em {data['date']}."
                    )
                records[key] = data

        columns = [c for c in OPTIONAL_COLUMNS if c in header]
        panel = cls._build_panel(records, columns)
        logger.info(
            f"Painel carregado de {path}: {len(panel.assets)} ativos, {len(panel.dates)} datas"
        )
        return panel

    @staticmethod
    def _build_panel(records: Dict, optional: List[str]) -> PricePanel:
        if not records:
            empty = pd.DataFrame(index=pd.DatetimeIndex([], name="date"), dtype=float)
            return PricePanel(close=empty, **{c: empty.copy() for c in optional})

        assets = sorted({asset for asset, _ in records})
        dates = pd.DatetimeIndex(sorted({d for _, d in records}), name="date")

        def matrix(column: str) -> pd.DataFrame:
            frame = pd.DataFrame(np.nan, index=dates, columns=assets, dtype=float)
            for (asset, day), data in records.items():
                value = data.get(column)
                if value is not None:
                    frame.at[day, asset] = float(value)
            frame.columns.name = "asset"
            return frame

        close = matrix("close")
        coverage = {}
        for asset in assets:
            present = close[asset].dropna().index
            coverage[asset] = (present[0].date(), present[-1].date())
        return PricePanel(close=close, coverage=coverage, **{c: matrix(c) for c in optional})

    @classmethod
    def dump_price_panel(cls, panel: PricePanel, path, delimiter: str = ",") -> None:
        """Emite o painel no formato de entrada (floats em repr, releitura exata)."""
        columns = ["asset", "date"]
        optional = [c for c in OPTIONAL_COLUMNS if getattr(panel, c) is not None]
        for name in ("open", "high", "low", "close", "volume"):
            if name == "close" or name in optional:
                columns.append(name)

        buffer = io.StringIO()
        writer = csv.writer(buffer, delimiter=delimiter, lineterminator="\n")
        writer.writerow(columns)
        for day in panel.dates:
            for asset in panel.assets:
                close = panel.close.at[day, asset]
                if np.isnan(close):
                    continue
                row = [asset, day.strftime("%Y-%m-%d")]
                for name in columns[2:]:
                    value = getattr(panel, name).at[day, asset]
                    row.append("" if np.isnan(value) else repr(float(value)))
                writer.writerow(row)
        atomic_write_text(path, buffer.getvalue())

    @classmethod
    def compute_returns(cls, panel: PricePanel) -> ReturnPanel:
        """
        Retornos percentuais simples por ativo.

        O cálculo é feito sobre o calendário diário completo, de modo que um
        dia ausente nunca gera retorno "atravessando" a lacuna; depois o
        resultado volta para o calendário do painel.
        """
        close = panel.close
        if close.empty:
            return ReturnPanel(returns=close.copy())

        full_index = pd.date_range(close.index[0], close.index[-1], freq="D", name="date")
        full = close.reindex(full_index)
        returns = (full / full.shift(1) - 1.0).reindex(close.index)
        returns.columns.name = "asset"

        for asset in close.columns:
            if close[asset].count() < 2:
                logger.info(f"Ativo {asset} com menos de 2 preços: série de retornos vazia")
        return ReturnPanel(returns=returns)

    @classmethod
    def winsorize(cls, panel: ReturnPanel, cap: Optional[float]) -> ReturnPanel:
        """Capping simétrico: max(min(R, cap), -cap). `cap=None` é a identidade."""
        if cap is None:
            return panel
        cls._validate_cap(cap)
        return ReturnPanel(returns=panel.returns.clip(lower=-cap, upper=cap))

    @classmethod
    def winsorize_series(cls, series: pd.Series, cap: Optional[float]) -> pd.Series:
        if cap is None:
            return series
        cls._validate_cap(cap)
        return series.clip(lower=-cap, upper=cap)

    @staticmethod
    def _validate_cap(cap: Union[float, int]) -> None:
        if not cap > 0:
            raise InvalidArgumentError(f"cap deve ser positivo (recebido {cap}).")
