import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import Dict, List, Optional, Tuple

import numpy as np
import pandas as pd

from ..exceptions import (
    DegenerateRegressorError,
    InsufficientDataError,
    InvalidArgumentError,
)
from ..models import (
    CarResult,
    CarTable,
    Category,
    Event,
    EventSet,
    ModelFit,
    ModelKind,
    ReturnPanel,
    SkipRecord,
    WindowConfig,
)
from .ingest import IngestService

logger = logging.getLogger(__name__)

SIGNIFICANCE_MULTIPLIER = 2.0


class AbnormalReturnService:
    """
    Modelos de referência, retornos anormais (AR) e CARs.

    Janela de estimação: os `estimation_length` últimos dias com retorno
    realizado até (evento - gap - 1). Dias sem dado são pulados, nunca
    imputados, e só retornos realizados contam para `estimation_min`.
    """

    # ------------------------------------------------------------------
    # Ajuste dos modelos
    # ------------------------------------------------------------------

    @staticmethod
    def _estimation_cutoff(event_date, cfg: WindowConfig) -> pd.Timestamp:
        return pd.Timestamp(event_date) - pd.Timedelta(days=cfg.gap_length + 1)

    @classmethod
    def _estimation_sample(
        cls, frame: pd.DataFrame, event_date, cfg: WindowConfig
    ) -> pd.DataFrame:
        cutoff = cls._estimation_cutoff(event_date, cfg)
        realized = frame.loc[frame.index <= cutoff].dropna()
        sample = realized.iloc[-cfg.estimation_length :] if len(realized) else realized
        if len(sample) < cfg.estimation_min:
            raise InsufficientDataError(
                f"{len(sample)} retornos na janela de estimação (mínimo {cfg.estimation_min}).",
                realized=len(sample),
            )
        # Estimação nunca invade [evento - gap, evento + tau2]
        assert sample.index[-1] < pd.Timestamp(event_date) - pd.Timedelta(days=cfg.gap_length)
        return sample

    @classmethod
    def fit_constant_mean(cls, returns: pd.Series, event_date, cfg: WindowConfig) -> ModelFit:
        """
        Modelo de média constante: AR = R - média da janela de estimação.

        Raises:
            InsufficientDataError: menos de `estimation_min` retornos realizados
        """
        sample = cls._estimation_sample(returns.to_frame("r"), event_date, cfg)["r"]
        values = sample.to_numpy(dtype=float)
        resid_sd = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
        return ModelFit(
            kind=ModelKind.CONSTANT_MEAN,
            mean=float(np.mean(values)),
            resid_sd=resid_sd,
            n_obs=len(values),
            estimation_start=sample.index[0],
            estimation_end=sample.index[-1],
        )

    @classmethod
    def fit_market_model(
        cls,
        returns: pd.Series,
        proxy_returns: pd.Series,
        event_date,
        cfg: WindowConfig,
        proxy: Optional[str] = None,
    ) -> ModelFit:
        """
        Modelo de mercado por MQO: R = alpha + beta * R_proxy + e.

        Usa apenas dias em que ativo e proxy têm retorno.

        `resid_sd` = sqrt(soma(e^2) / (n - 2)): dois parâmetros estimados
        (alpha e beta), contra n - 1 no modelo de média constante. É o
        sigma que entra em sigma_car = resid_sd * sqrt(dias realizados na janela).

        Raises:
            InsufficientDataError: sobreposição menor que `estimation_min`
            DegenerateRegressorError: proxy sem variância na janela
        """
        frame = pd.concat({"y": returns, "x": proxy_returns}, axis=1)
        sample = cls._estimation_sample(frame, event_date, cfg)
        y = sample["y"].to_numpy(dtype=float)
        x = sample["x"].to_numpy(dtype=float)

        if np.ptp(x) == 0.0:
            raise DegenerateRegressorError("Proxy de mercado sem variância na janela de estimação.")
        x_mean, y_mean = x.mean(), y.mean()
        dx = x - x_mean
        sxx = float(dx @ dx)
        beta = float(dx @ (y - y_mean)) / sxx
        alpha = float(y_mean - beta * x_mean)

        resid = y - alpha - beta * x
        n = len(y)
        resid_sd = float(math.sqrt(resid @ resid / (n - 2))) if n > 2 else 0.0
        return ModelFit(
            kind=ModelKind.MARKET_PROXY,
            alpha=alpha,
            beta=beta,
            resid_sd=resid_sd,
            n_obs=n,
            proxy=proxy,
            estimation_start=sample.index[0],
            estimation_end=sample.index[-1],
        )

    @classmethod
    def build_ew_proxy(cls, panel: ReturnPanel, exclude_asset: Optional[str]) -> pd.Series:
        """Índice igualmente ponderado, leave-one-out: média dos demais ativos no dia."""
        if len(panel.assets) < 2:
            raise InvalidArgumentError("Proxy EW exige ao menos 2 ativos no painel.")
        others = [a for a in panel.assets if a != exclude_asset]
        proxy = panel.returns[others].mean(axis=1, skipna=True)
        proxy.name = f"EW-ex-{exclude_asset}" if exclude_asset else "EW"
        return proxy

    # ------------------------------------------------------------------
    # CAR
    # ------------------------------------------------------------------

    @classmethod
    def compute_car(
        cls,
        fit: ModelFit,
        returns: pd.Series,
        event_date,
        window: Tuple[int, int],
        proxy_returns: Optional[pd.Series] = None,
        event_id: str = "",
        asset: str = "",
        category: Optional[Category] = None,
        multiplier: float = SIGNIFICANCE_MULTIPLIER,
    ) -> CarResult:
        """
        Soma dos ARs nos dias realizados de [tau1, tau2] (dia 0 incluído).

        sigma_car usa o número de dias realizados, não o nominal: um ativo
        que some no meio da janela não ganha crédito de variância.

        Raises:
            InsufficientDataError: nenhum dia realizado na janela
        """
        tau1, tau2 = window
        event_ts = pd.Timestamp(event_date)
        offsets = list(range(tau1, tau2 + 1))
        days = pd.DatetimeIndex([event_ts + pd.Timedelta(days=k) for k in offsets])

        observed = returns.reindex(days)
        if fit.kind == ModelKind.MARKET_PROXY:
            if proxy_returns is None:
                raise InvalidArgumentError("Modelo de mercado exige a série do proxy.")
            proxy_window = proxy_returns.reindex(days)
            mask = observed.notna() & proxy_window.notna()
        else:
            proxy_window = None
            mask = observed.notna()

        realized_days = days[mask.to_numpy()]
        if len(realized_days) == 0:
            raise InsufficientDataError("Nenhum retorno realizado na janela de evento.", realized=0)

        expected = fit.expected(proxy_window, realized_days)
        abnormal = observed.loc[realized_days] - expected
        abnormal.index = pd.Index(
            [int((d - event_ts).days) for d in realized_days], name="tau"
        )

        car = float(abnormal.sum())
        n_days = len(abnormal)
        sigma_car = fit.resid_sd * math.sqrt(n_days)
        return CarResult(
            event_id=event_id,
            asset=asset,
            category=category,
            car=car,
            window=(tau1, tau2),
            model=fit.kind,
            sigma_car=sigma_car,
            significant=abs(car) > multiplier * sigma_car,
            n_days=n_days,
            beta=fit.beta,
            abnormal=abnormal,
        )

    # ------------------------------------------------------------------
    # Montagem do painel de CARs
    # ------------------------------------------------------------------

    @classmethod
    def event_panel_cars(
        cls,
        panel: ReturnPanel,
        events: EventSet,
        cfg: WindowConfig,
        model: str = "constant-mean",
        cap: Optional[float] = None,
        assets: Optional[List[str]] = None,
        workers: int = 1,
        multiplier: float = SIGNIFICANCE_MULTIPLIER,
    ) -> CarTable:
        """
        CAR para cada par (evento analisável, ativo com dados suficientes).

        O capping é aplicado antes do ajuste e do CAR, no ativo e no proxy.
        Pares descartados viram `SkipRecord` e uma linha de log; nada aqui é
        fatal. A ordem final é (data do evento, id, ativo) qualquer que seja
        o número de workers.
        """
        capped = IngestService.winsorize(panel, cap)
        assets = sorted(assets if assets is not None else capped.assets)
        proxy_asset = cls._parse_model(model, capped)
        analyzable = events.analyzable()

        jobs = [(event, asset) for event in analyzable for asset in assets]

        def run(job):
            event, asset = job
            return cls._car_for_pair(capped, event, asset, cfg, model, proxy_asset, multiplier)

        if workers > 1 and len(jobs) > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                outcomes = list(executor.map(run, jobs))
        else:
            outcomes = [run(job) for job in jobs]

        rows: List[CarResult] = []
        skipped: List[SkipRecord] = []
        for outcome in outcomes:
            if isinstance(outcome, SkipRecord):
                skipped.append(outcome)
                logger.info(
                    f"[SKIP] event={outcome.event_id} asset={outcome.asset} "
                    f"reason={outcome.reason} realized={outcome.realized}"
                )
            else:
                rows.append(outcome)

        order = {e.id: (e.date, e.id) for e in analyzable}
        rows.sort(key=lambda r: (order[r.event_id], r.asset))
        logger.info(
            f"CARs ({model}, janela {cfg.event_window}, cap {cap}): "
            f"{len(rows)} observações, {len(skipped)} pares descartados"
        )
        return CarTable(rows=tuple(rows), events=analyzable.by_id(), skipped=tuple(skipped))

    @staticmethod
    def _parse_model(model: str, panel: ReturnPanel) -> Optional[str]:
        if model == "constant-mean":
            return None
        if model == "market-ew":
            if len(panel.assets) < 2:
                raise InvalidArgumentError("market-ew exige ao menos 2 ativos no painel.")
            return None
        if model.startswith("market-proxy:"):
            proxy = model.split(":", 1)[1]
            if proxy not in panel.assets:
                raise InvalidArgumentError(f"Proxy {proxy} ausente do painel de preços.")
            return proxy
        raise InvalidArgumentError(f"Modelo desconhecido: {model}.")

    @classmethod
    def _car_for_pair(
        cls,
        panel: ReturnPanel,
        event: Event,
        asset: str,
        cfg: WindowConfig,
        model: str,
        proxy_asset: Optional[str],
        multiplier: float,
    ):
        returns = panel.series(asset)
        if returns.empty:
            return SkipRecord(event.id, asset, "no-returns", 0)

        proxy_series = None
        try:
            if model == "market-ew":
                proxy_series = cls.build_ew_proxy(panel, asset).dropna()
                fit = cls.fit_market_model(returns, proxy_series, event.date, cfg, proxy="EW")
            elif proxy_asset is not None and asset != proxy_asset:
                proxy_series = panel.series(proxy_asset)
                fit = cls.fit_market_model(
                    returns, proxy_series, event.date, cfg, proxy=proxy_asset
                )
            else:
                # O próprio proxy (ex.: BTC) usa média constante
                fit = cls.fit_constant_mean(returns, event.date, cfg)
        except InsufficientDataError as exc:
            return SkipRecord(event.id, asset, "insufficient-estimation-data", exc.realized)
        except DegenerateRegressorError:
            return SkipRecord(event.id, asset, "degenerate-proxy", 0)

        try:
            return cls.compute_car(
                fit,
                returns,
                event.date,
                cfg.event_window,
                proxy_returns=proxy_series,
                event_id=event.id,
                asset=asset,
                category=event.category,
                multiplier=multiplier,
            )
        except InsufficientDataError:
            return SkipRecord(event.id, asset, "empty-event-window", 0)

    # ------------------------------------------------------------------
    # Resumos
    # ------------------------------------------------------------------

    @classmethod
    def category_summary(cls, table: CarTable) -> List[Dict]:
        """Média de CAR, N significativos e N observações por categoria."""
        summary = []
        for category in Category:
            rows = [r for r in table.rows if r.category == category]
            if not rows:
                continue
            summary.append(
                {
                    "category": category,
                    "mean_car": float(np.mean([r.car for r in rows])),
                    "n_sig": sum(1 for r in rows if r.significant),
                    "n_obs": len(rows),
                    "n_events": len({r.event_id for r in rows}),
                }
            )
        return summary

    @classmethod
    def mean_betas(cls, table: CarTable) -> Dict[str, float]:
        betas: Dict[str, List[float]] = {}
        for row in table.rows:
            if row.beta is not None:
                betas.setdefault(row.asset, []).append(row.beta)
        return {asset: float(np.mean(values)) for asset, values in sorted(betas.items())}
