"""
Tipos de domínio do estudo de eventos.

As enumerações fechadas seguem o padrão TextChoices do Django; os demais tipos
são dataclasses imutáveis (não há persistência em banco).
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from datetime import date
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import numpy as np
import pandas as pd
from django.db import models

from .exceptions import InvalidArgumentError


class Category(models.TextChoices):
    # label = token usado no arquivo de eventos
    INFRA_NEGATIVE = "InfraNegative", "Infra_Neg"
    INFRA_POSITIVE = "InfraPositive", "Infra_Pos"
    REG_NEGATIVE = "RegNegative", "Reg_Neg"
    REG_POSITIVE = "RegPositive", "Reg_Pos"
    EXCLUDED = "Excluded", "Excluded"
    PLACEBO = "Placebo", "Placebo"

    @classmethod
    def from_token(cls, token: str) -> "Category":
        for member in cls:
            if member.label == token and member is not cls.PLACEBO:
                return member
        raise ValueError(token)

    @classmethod
    def file_tokens(cls) -> List[str]:
        return [m.label for m in cls if m is not cls.PLACEBO]


class Selection(models.TextChoices):
    EXOGENOUS = "Exogenous", "Exogenous"
    RETURN_THRESHOLD = "ReturnThreshold", "Return"
    BOTH = "Both", "Both"

    @classmethod
    def from_token(cls, token: str) -> "Selection":
        for member in cls:
            if member.label == token:
                return member
        raise ValueError(token)


class ModelKind(models.TextChoices):
    CONSTANT_MEAN = "ConstantMean", "Constant mean"
    MARKET_PROXY = "MarketProxy", "Market model"


class WeightingScheme(models.TextChoices):
    OBSERVATION_WEIGHTED = "ObservationWeighted", "Observation-weighted"
    EVENT_EQUAL_WEIGHTED = "EventEqualWeighted", "Event-equal-weighted"


class SubsampleFilter(models.TextChoices):
    NONE = "none", "All events"
    EXOGENOUS_ONLY = "exogenous-only", "Exogenous events only"
    NON_OVERLAPPING = "non-overlapping", "Independent events only"
    EXCLUDE_IDS = "exclude-ids", "Excluding listed events"


# ---------------------------------------------------------------------------
# Ingestão
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PricePanel:
    """
    Preços diários por ativo, indexados por dia UTC.

    `close` é um DataFrame (datas x ativos); NaN marca preço ausente.
    Os DataFrames são tratados como somente leitura pelos services.
    """

    close: pd.DataFrame
    open: Optional[pd.DataFrame] = None
    high: Optional[pd.DataFrame] = None
    low: Optional[pd.DataFrame] = None
    volume: Optional[pd.DataFrame] = None
    coverage: Dict[str, Tuple[date, date]] = field(default_factory=dict)

    @property
    def assets(self) -> List[str]:
        return list(self.close.columns)

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.close.index


@dataclass(frozen=True)
class ReturnPanel:
    """Retornos simples (0.05 = 5%) por ativo; NaN onde não há retorno."""

    returns: pd.DataFrame

    @property
    def assets(self) -> List[str]:
        return list(self.returns.columns)

    @property
    def dates(self) -> pd.DatetimeIndex:
        return self.returns.index

    def series(self, asset: str) -> pd.Series:
        """Série realizada (sem ausências) de um ativo."""
        if asset not in self.returns.columns:
            return pd.Series(dtype=float)
        return self.returns[asset].dropna()


# ---------------------------------------------------------------------------
# Registro de eventos
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Event:
    id: str
    date: date
    name: str
    category: Category
    selection: Selection
    impact_usd: Optional[float] = None
    affected_users: Optional[int] = None
    overlap_ids: Tuple[str, ...] = ()
    tags: Tuple[str, ...] = ()

    @property
    def timestamp(self) -> pd.Timestamp:
        return pd.Timestamp(self.date)

    @property
    def is_analyzable(self) -> bool:
        return self.category != Category.EXCLUDED


@dataclass(frozen=True)
class EventSet:
    events: Tuple[Event, ...]
    study_period: Tuple[date, date]

    def __post_init__(self):
        start, end = self.study_period
        if start > end:
            raise InvalidArgumentError("Período de estudo com início posterior ao fim.")
        keys = [(e.date, e.id) for e in self.events]
        if keys != sorted(keys):
            raise InvalidArgumentError("Eventos devem estar ordenados por data.")
        for event in self.events:
            if not start <= event.date <= end:
                raise InvalidArgumentError(
                    f"Evento {event.id} ({event.date}) fora do período de estudo {start}..{end}."
                )

    def __iter__(self) -> Iterator[Event]:
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def by_id(self) -> Dict[str, Event]:
        return {e.id: e for e in self.events}

    def filter(self, predicate: Callable[[Event], bool]) -> "EventSet":
        return replace(self, events=tuple(e for e in self.events if predicate(e)))

    def analyzable(self) -> "EventSet":
        return self.filter(lambda e: e.is_analyzable)

    def in_category(self, category: Category) -> List[Event]:
        return [e for e in self.events if e.category == category]

    @classmethod
    def build(cls, events, study_period: Optional[Tuple[date, date]] = None) -> "EventSet":
        ordered = tuple(sorted(events, key=lambda e: (e.date, e.id)))
        if study_period is None:
            if ordered:
                study_period = (ordered[0].date, ordered[-1].date)
            else:
                study_period = (date(1970, 1, 1), date(1970, 1, 1))
        return cls(events=ordered, study_period=study_period)


@dataclass(frozen=True)
class SelectionAuditRow:
    event_id: str
    same_day_btc_return: Optional[float]
    three_day_btc_return: Optional[float]
    met_same_day: bool
    met_three_day: bool
    met_impact: bool
    met_users: bool
    complete: bool = True

    @property
    def qualifies(self) -> bool:
        return self.met_same_day or self.met_three_day or self.met_impact or self.met_users


@dataclass(frozen=True)
class SelectionAudit:
    rows: Tuple[SelectionAuditRow, ...]
    threshold: float

    def by_event(self) -> Dict[str, SelectionAuditRow]:
        return {r.event_id: r for r in self.rows}


# ---------------------------------------------------------------------------
# Retornos anormais
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class WindowConfig:
    estimation_length: int = 250
    estimation_min: int = 120
    gap_length: int = 30
    event_window: Tuple[int, int] = (-5, 30)

    def __post_init__(self):
        object.__setattr__(self, "event_window", tuple(self.event_window))
        tau1, tau2 = self.event_window
        if self.estimation_min < 1 or self.estimation_min > self.estimation_length:
            raise InvalidArgumentError(
                "estimation_min deve estar entre 1 e estimation_length."
            )
        if self.gap_length < 0:
            raise InvalidArgumentError("gap_length não pode ser negativo.")
        if tau1 > tau2:
            raise InvalidArgumentError(f"Janela inválida: tau1={tau1} > tau2={tau2}.")
        # A janela de evento não pode invadir a janela de estimação
        if tau1 < -self.gap_length:
            raise InvalidArgumentError(
                f"tau1={tau1} anterior ao gap de {self.gap_length} dias."
            )

    @property
    def window_length(self) -> int:
        tau1, tau2 = self.event_window
        return tau2 - tau1 + 1

    def with_window(self, window: Tuple[int, int]) -> "WindowConfig":
        return replace(self, event_window=tuple(window))


@dataclass(frozen=True)
class ModelFit:
    kind: ModelKind
    resid_sd: float
    n_obs: int
    mean: Optional[float] = None
    alpha: Optional[float] = None
    beta: Optional[float] = None
    proxy: Optional[str] = None
    estimation_start: Optional[pd.Timestamp] = None
    estimation_end: Optional[pd.Timestamp] = None

    def expected(self, proxy_returns: Optional[pd.Series], index: pd.Index) -> pd.Series:
        """Retorno esperado pelo modelo nas datas `index`."""
        if self.kind == ModelKind.CONSTANT_MEAN:
            return pd.Series(self.mean, index=index, dtype=float)
        return self.alpha + self.beta * proxy_returns.reindex(index)


@dataclass(frozen=True)
class CarResult:
    event_id: str
    asset: str
    category: Category
    car: float
    window: Tuple[int, int]
    model: ModelKind
    sigma_car: float
    significant: bool
    n_days: int
    beta: Optional[float] = None
    abnormal: pd.Series = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class SkipRecord:
    event_id: str
    asset: str
    reason: str
    realized: int = 0


@dataclass(frozen=True)
class CarTable:
    rows: Tuple[CarResult, ...]
    events: Dict[str, Event] = field(default_factory=dict, compare=False)
    skipped: Tuple[SkipRecord, ...] = field(default=(), compare=False)

    def __post_init__(self):
        unknown = {r.event_id for r in self.rows} - set(self.events)
        if unknown:
            raise InvalidArgumentError(
                f"CARs referenciam eventos fora do registro: {', '.join(sorted(unknown))}"
            )

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def grouping(self) -> Dict[str, Tuple[CarResult, ...]]:
        groups: Dict[str, List[CarResult]] = {}
        for row in self.rows:
            groups.setdefault(row.event_id, []).append(row)
        return {k: tuple(v) for k, v in groups.items()}

    def event_ids(self) -> List[str]:
        return list(self.grouping)

    def select(self, predicate: Callable[[CarResult], bool]) -> "CarTable":
        return replace(self, rows=tuple(r for r in self.rows if predicate(r)))

    def for_category(self, category: Optional[Category]) -> "CarTable":
        if category is None:
            return self
        return self.select(lambda r: r.category == category)

    def for_events(self, predicate: Callable[[Event], bool]) -> "CarTable":
        keep = {eid for eid, ev in self.events.items() if predicate(ev)}
        return self.select(lambda r: r.event_id in keep)

    def cars(self) -> np.ndarray:
        return np.array([r.car for r in self.rows], dtype=float)


# ---------------------------------------------------------------------------
# Inferência
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BootstrapResult:
    estimate: float
    se: float
    ci_low: float
    ci_high: float
    p_value: float
    replications: int
    scheme: WeightingScheme
    seed: int
    ci_level: float
    n_events: Tuple[int, ...] = ()
    n_obs: Tuple[int, ...] = ()
    distribution: np.ndarray = field(default=None, repr=False, compare=False)


@dataclass(frozen=True)
class PermResult:
    observed_diff: float
    n_assignments: int
    p_value: float
    exact: bool


@dataclass(frozen=True)
class TTestResult:
    diff: float
    t_stat: float
    df: float
    p_value: float
    ci_low: float
    ci_high: float
    n_a: int = 0
    n_b: int = 0


@dataclass(frozen=True)
class KPReport:
    t_unadj: float
    n: int
    rho_bar: float
    t_kp: float


# ---------------------------------------------------------------------------
# Robustez
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PlaceboSpec:
    n_events: int = 200
    exclusion_horizon: int = 30
    period: Optional[Tuple[date, date]] = None
    weekday_target: Optional[Tuple[int, ...]] = None
    seed: int = 0

    def __post_init__(self):
        if self.n_events < 1:
            raise InvalidArgumentError("n_events deve ser >= 1.")
        if self.exclusion_horizon < 0:
            raise InvalidArgumentError("exclusion_horizon não pode ser negativo.")
        if self.weekday_target is not None and len(self.weekday_target) != 7:
            raise InvalidArgumentError("weekday_target precisa de 7 contagens (seg..dom).")


@dataclass(frozen=True)
class PipelineInputs:
    """Entradas completas de uma rodada CAR + diff, reexecutada pelas varreduras."""

    panel: ReturnPanel
    events: EventSet
    window: WindowConfig
    model: str = "constant-mean"
    cap: Optional[float] = None
    assets: Optional[Tuple[str, ...]] = None
    group_a: Category = Category.INFRA_NEGATIVE
    group_b: Category = Category.REG_NEGATIVE
    scheme: WeightingScheme = WeightingScheme.OBSERVATION_WEIGHTED
    B: int = 5000
    seed: int = 0
    ci_level: float = 0.95
    workers: int = 1


@dataclass(frozen=True)
class PreEventReport:
    window: Tuple[int, int]
    means: Dict[str, float]
    n_obs: Dict[str, int]
    test: TTestResult


@dataclass(frozen=True)
class LeaveOneOutRow:
    event_id: str
    event_mean: float
    mean_excl: float
    change: float
    sign_flip: bool


@dataclass(frozen=True)
class LeaveOneOutReport:
    category: Category
    scheme: WeightingScheme
    baseline_mean: float
    n_events: int
    rows: Tuple[LeaveOneOutRow, ...]


@dataclass(frozen=True)
class SweepSetting:
    label: str
    means: Dict[str, float]
    n_events: Dict[str, int]
    delta: float
    p_value: float
    ci_low: float
    ci_high: float

    @property
    def null(self) -> bool:
        return self.ci_low <= 0.0 <= self.ci_high


@dataclass(frozen=True)
class SweepReport:
    axis: str
    settings: Tuple[SweepSetting, ...]
    baseline: SweepSetting
    sign_consistent: Dict[str, bool]


@dataclass(frozen=True)
class SubsampleReport:
    filter: SubsampleFilter
    excluded_ids: Tuple[str, ...]
    n_events: Dict[str, int]
    n_obs: Dict[str, int]
    means: Dict[str, float]
    bootstrap: BootstrapResult
    permutation: PermResult


@dataclass(frozen=True)
class DecompositionRow:
    label: str
    cells: Dict[str, float]
    counts: Dict[str, int]

    @property
    def spread(self) -> float:
        if not self.cells:
            return 0.0
        values = list(self.cells.values())
        return max(values) - min(values)


@dataclass(frozen=True)
class Decomposition:
    by: str
    columns: Tuple[str, ...]
    rows: Tuple[DecompositionRow, ...]


@dataclass(frozen=True)
class PlaceboReport:
    n_generated: int
    n_analyzed: int
    n_obs: int
    bootstrap: BootstrapResult


# ---------------------------------------------------------------------------
# Poder e calibração
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PowerInput:
    alpha: float = 0.05
    power: float = 0.80
    d: Optional[float] = None
    sigma_pooled: Optional[float] = None
    n1: Optional[int] = None
    n2: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise InvalidArgumentError("alpha deve estar em (0, 1).")
        if not 0 < self.power < 1:
            raise InvalidArgumentError("power deve estar em (0, 1).")
        if self.sigma_pooled is not None and self.sigma_pooled < 0:
            raise InvalidArgumentError("sigma_pooled não pode ser negativo.")
        for n in (self.n1, self.n2):
            if n is not None and n < 1:
                raise InvalidArgumentError("Tamanhos de grupo devem ser >= 1.")


@dataclass(frozen=True)
class SimSpec:
    n_assets: int = 4
    n_events: int = 8
    days_per_event: int = 160
    rho: float = 0.0
    daily_sd: float = 0.03
    delta: float = 0.0
    trials: int = 200
    seed: int = 0
    window: WindowConfig = field(
        default_factory=lambda: WindowConfig(
            estimation_length=120, estimation_min=100, gap_length=10, event_window=(0, 5)
        )
    )
    alpha: float = 0.05
    B: int = 1000
    ci_level: float = 0.95
    calendar_days: Optional[int] = None

    def __post_init__(self):
        if not 0 <= self.rho < 1:
            raise InvalidArgumentError("rho deve estar em [0, 1).")
        if self.trials < 1:
            raise InvalidArgumentError("trials deve ser >= 1.")
        if self.daily_sd <= 0:
            raise InvalidArgumentError("daily_sd deve ser positivo.")
        if self.n_assets < 1 or self.n_events < 1:
            raise InvalidArgumentError("n_assets e n_events devem ser >= 1.")


@dataclass(frozen=True)
class CoverageReport:
    trials: int
    naive_rejection_rate: float
    bootstrap_rejection_rate: float
    bootstrap_ci_coverage: float
    naive_ci_coverage: float
    mean_car: float
    mean_car_se: float


# ---------------------------------------------------------------------------
# Execução (CLI)
# ---------------------------------------------------------------------------


@dataclass
class StudyReport:
    """Tudo o que o relatório Markdown consome; seções ausentes ficam None."""

    events: EventSet
    table: CarTable
    group_a: Category
    group_b: Category
    scheme: WeightingScheme
    summary: List[Dict] = field(default_factory=list)
    audit: Optional[SelectionAudit] = None
    group_means: Dict[str, BootstrapResult] = field(default_factory=dict)
    diffs: Dict[str, BootstrapResult] = field(default_factory=dict)
    pre_event: Optional[PreEventReport] = None
    market_models: Dict[str, Tuple[List[Dict], Dict[str, float]]] = field(default_factory=dict)
    decomposition: Optional[Decomposition] = None
    window_sweep: Optional[SweepReport] = None
    cap_sweep: Optional[SweepReport] = None
    leave_one_out: Optional[LeaveOneOutReport] = None
    placebo: Optional[PlaceboReport] = None
    permutation: Optional[PermResult] = None
    im_test: Optional[TTestResult] = None
    kp: Dict[str, KPReport] = field(default_factory=dict)
    subsamples: List[SubsampleReport] = field(default_factory=list)
    power: List[str] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)


@dataclass(frozen=True)
class RunConfig:
    prices: str
    events: str
    assets: Tuple[str, ...]
    model: str = "constant-mean"
    window: Tuple[int, int] = (-5, 30)
    estimation_length: int = 250
    estimation_min: int = 120
    gap_length: int = 30
    cap: Optional[float] = None
    weighting: WeightingScheme = WeightingScheme.OBSERVATION_WEIGHTED
    B: int = 5000
    seed: int = 0
    ci_level: float = 0.95
    out: str = "out"
    group_a: Category = Category.INFRA_NEGATIVE
    group_b: Category = Category.REG_NEGATIVE
    workers: int = 1

    def window_config(self) -> WindowConfig:
        return WindowConfig(
            estimation_length=self.estimation_length,
            estimation_min=self.estimation_min,
            gap_length=self.gap_length,
            event_window=self.window,
        )

    def canonical(self) -> str:
        """Renderização key=value ordenada (base do hash). `out` e `workers` não entram."""
        values = {
            "prices": self.prices,
            "events": self.events,
            "assets": ",".join(self.assets),
            "model": self.model,
            "window": f"{self.window[0]}:{self.window[1]}",
            "estimation_length": self.estimation_length,
            "estimation_min": self.estimation_min,
            "gap_length": self.gap_length,
            "cap": "none" if self.cap is None else repr(self.cap),
            "weighting": str(self.weighting),
            "B": self.B,
            "seed": self.seed,
            "ci_level": repr(self.ci_level),
            "group_a": str(self.group_a),
            "group_b": str(self.group_b),
        }
        return "\n".join(f"{k}={values[k]}" for k in sorted(values))

    @property
    def config_hash(self) -> str:
        return hashlib.sha256(self.canonical().encode("utf-8")).hexdigest()[:12]
