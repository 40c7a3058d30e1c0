import logging
import math
from dataclasses import replace
from datetime import date, timedelta
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from ..exceptions import FeasibilityError, InsufficientClustersError, InvalidArgumentError
from ..models import (
    CarTable,
    Category,
    Decomposition,
    DecompositionRow,
    Event,
    EventSet,
    LeaveOneOutReport,
    LeaveOneOutRow,
    PipelineInputs,
    PlaceboReport,
    PlaceboSpec,
    PreEventReport,
    Selection,
    SubsampleFilter,
    SubsampleReport,
    SweepReport,
    SweepSetting,
    WeightingScheme,
)
from .abnormal import AbnormalReturnService
from .inference import EventClusters, InferenceService, generator

logger = logging.getLogger(__name__)

STREAM_PLACEBO = 3
WEEKDAYS = ("segunda", "terça", "quarta", "quinta", "sexta", "sábado", "domingo")
PRE_EVENT_WINDOW = (-30, -1)
REAL_CATEGORIES = (
    Category.INFRA_NEGATIVE,
    Category.INFRA_POSITIVE,
    Category.REG_NEGATIVE,
    Category.REG_POSITIVE,
)


def apportion(histogram: Sequence[int], total: int) -> List[int]:
    """Método dos maiores restos: distribui `total` proporcionalmente ao histograma."""
    weight = sum(histogram)
    if weight <= 0:
        raise InvalidArgumentError("Histograma alvo sem nenhuma contagem.")
    quotas = [total * h / weight for h in histogram]
    counts = [math.floor(q) for q in quotas]
    remainders = sorted(
        range(len(histogram)), key=lambda i: (-(quotas[i] - counts[i]), i)
    )
    for i in remainders[: total - sum(counts)]:
        counts[i] += 1
    return counts


class RobustnessService:
    """Baterias de robustez: placebo, leave-one-out, varreduras, subamostras e decomposições."""

    # ------------------------------------------------------------------
    # Placebo
    # ------------------------------------------------------------------

    @classmethod
    def generate_placebos(cls, real_events: EventSet, spec: PlaceboSpec) -> EventSet:
        """
        Pseudo-eventos em datas sem evento real a até `exclusion_horizon` dias.

        A distribuição por dia da semana segue a dos eventos reais analisáveis
        (ou `spec.weekday_target`), repartida pelos maiores restos. O sorteio é
        sem reposição dentro de cada dia da semana.

        Raises:
            FeasibilityError: dia da semana exigido sem datas elegíveis suficientes
        """
        start, end = spec.period or real_events.study_period
        horizon = spec.exclusion_horizon
        blocked = set()
        for event in real_events:
            for k in range(-horizon, horizon + 1):
                blocked.add(event.date + timedelta(days=k))

        pool: List[date] = []
        day = start
        while day <= end:
            if day not in blocked:
                pool.append(day)
            day += timedelta(days=1)
        if not pool:
            raise FeasibilityError(
                f"Nenhuma data elegível em {start}..{end} com horizonte de exclusão {horizon}."
            )

        if spec.weekday_target is not None:
            target = list(spec.weekday_target)
        else:
            target = [0] * 7
            for event in real_events.analyzable():
                target[event.date.weekday()] += 1
            if sum(target) == 0:
                target = [1] * 7
        counts = apportion(target, spec.n_events)

        rng = generator(spec.seed, STREAM_PLACEBO)
        chosen: List[date] = []
        for weekday, needed in enumerate(counts):
            if needed == 0:
                continue
            eligible = [d for d in pool if d.weekday() == weekday]
            if len(eligible) < needed:
                raise FeasibilityError(
                    f"Estrato {WEEKDAYS[weekday]} inviável: {needed} pseudo-eventos pedidos, "
                    f"{len(eligible)} datas elegíveis."
                )
            picks = rng.choice(len(eligible), size=needed, replace=False)
            chosen.extend(eligible[i] for i in sorted(picks))

        chosen.sort()
        assert not blocked.intersection(chosen)
        placebos = [
            Event(
                id=f"PLACEBO-{k:04d}",
                date=day,
                name="Placebo",
                category=Category.PLACEBO,
                selection=Selection.EXOGENOUS,
            )
            for k, day in enumerate(chosen, start=1)
        ]
        logger.info(f"Placebos: {len(placebos)} pseudo-eventos, alvo semanal {counts}")
        return EventSet.build(placebos, (start, end))

    @classmethod
    def placebo_run(cls, inputs: PipelineInputs, spec: PlaceboSpec) -> Tuple[PlaceboReport, CarTable]:
        """Pipeline completo sobre os pseudo-eventos + bootstrap da média placebo."""
        placebos = cls.generate_placebos(inputs.events, spec)
        table = AbnormalReturnService.event_panel_cars(
            inputs.panel,
            placebos,
            inputs.window,
            model=inputs.model,
            cap=inputs.cap,
            assets=inputs.assets,
            workers=inputs.workers,
        )
        bootstrap = InferenceService.block_bootstrap_mean(
            table,
            Category.PLACEBO,
            inputs.scheme,
            inputs.B,
            inputs.seed,
            inputs.ci_level,
            workers=inputs.workers,
        )
        report = PlaceboReport(
            n_generated=len(placebos),
            n_analyzed=len(table.grouping),
            n_obs=len(table),
            bootstrap=bootstrap,
        )
        return report, table

    # ------------------------------------------------------------------
    # Leave-one-out
    # ------------------------------------------------------------------

    @classmethod
    def leave_one_out(
        cls,
        table: CarTable,
        category: Category,
        scheme: WeightingScheme = WeightingScheme.OBSERVATION_WEIGHTED,
    ) -> LeaveOneOutReport:
        """
        Média da categoria recalculada sem cada evento.

        `baseline_mean` é a estatística do bootstrap no mesmo esquema.
        change = (média_sem_e - média_base) / |média_base|.
        """
        clusters = EventClusters(table, category)
        n = len(clusters)
        if n < 2:
            raise InsufficientClustersError(
                f"Leave-one-out em {category.value} exige ao menos 2 eventos (há {n})."
            )
        baseline = clusters.estimate(scheme)
        everything = np.arange(n)

        rows = []
        for i, event_id in enumerate(clusters.ids):
            mean_excl = float(clusters.statistic(everything[everything != i], scheme))
            if baseline != 0.0:
                change = (mean_excl - baseline) / abs(baseline)
            else:
                change = 0.0 if mean_excl == 0.0 else math.copysign(math.inf, mean_excl)
            rows.append(
                LeaveOneOutRow(
                    event_id=event_id,
                    event_mean=float(clusters.means[i]),
                    mean_excl=mean_excl,
                    change=change,
                    sign_flip=bool(np.sign(mean_excl) * np.sign(baseline) < 0),
                )
            )
        return LeaveOneOutReport(
            category=category,
            scheme=WeightingScheme(scheme),
            baseline_mean=baseline,
            n_events=n,
            rows=tuple(rows),
        )

    # ------------------------------------------------------------------
    # Varreduras
    # ------------------------------------------------------------------

    @classmethod
    def _setting(cls, inputs: PipelineInputs, label: str) -> SweepSetting:
        table = AbnormalReturnService.event_panel_cars(
            inputs.panel,
            inputs.events,
            inputs.window,
            model=inputs.model,
            cap=inputs.cap,
            assets=inputs.assets,
            workers=inputs.workers,
        )
        means, n_events = cls._group_summaries(table, inputs.scheme)
        try:
            diff = InferenceService.block_bootstrap_diff(
                table,
                inputs.group_a,
                inputs.group_b,
                inputs.scheme,
                inputs.B,
                inputs.seed,
                inputs.ci_level,
                workers=inputs.workers,
            )
            delta, p_value, ci_low, ci_high = diff.estimate, diff.p_value, diff.ci_low, diff.ci_high
        except InsufficientClustersError as exc:
            logger.warning(f"Varredura {label}: diff indisponível ({exc.messages[0]})")
            delta = p_value = ci_low = ci_high = math.nan
        return SweepSetting(
            label=label,
            means=means,
            n_events=n_events,
            delta=delta,
            p_value=p_value,
            ci_low=ci_low,
            ci_high=ci_high,
        )

    @staticmethod
    def _group_summaries(
        table: CarTable, scheme: WeightingScheme
    ) -> Tuple[Dict[str, float], Dict[str, int]]:
        means, counts = {}, {}
        for category in REAL_CATEGORIES:
            clusters = EventClusters(table, category)
            if len(clusters):
                means[category.value] = clusters.estimate(scheme)
                counts[category.value] = len(clusters)
        return means, counts

    @staticmethod
    def _sign_consistency(settings: Iterable[SweepSetting], baseline: SweepSetting) -> Dict[str, bool]:
        settings = list(settings)
        consistent = {}
        for category, base in baseline.means.items():
            signs = [np.sign(s.means[category]) for s in settings if category in s.means]
            consistent[category] = bool(base != 0 and all(sign == np.sign(base) for sign in signs))
        return consistent

    @classmethod
    def _sweep(cls, axis: str, jobs: List[Tuple[str, PipelineInputs]], baseline_job) -> SweepReport:
        if not jobs:
            raise InvalidArgumentError(f"Varredura de {axis} sem nenhuma configuração.")
        settings = []
        baseline = None
        for label, job_inputs in jobs:
            setting = cls._setting(job_inputs, label)
            settings.append(setting)
            if label == baseline_job[0]:
                baseline = setting
        if baseline is None:
            baseline = cls._setting(baseline_job[1], baseline_job[0])
        return SweepReport(
            axis=axis,
            settings=tuple(settings),
            baseline=baseline,
            sign_consistent=cls._sign_consistency(settings, baseline),
        )

    @staticmethod
    def window_label(window: Tuple[int, int]) -> str:
        return f"{window[0]}:{window[1]}"

    @staticmethod
    def cap_label(cap: Optional[float]) -> str:
        return "none" if cap is None else f"{cap:g}"

    @classmethod
    def window_sweep(cls, inputs: PipelineInputs, windows: Sequence[Tuple[int, int]]) -> SweepReport:
        """Recalcula CARs e médias por grupo para cada janela de evento."""
        jobs = [
            (cls.window_label(w), replace(inputs, window=inputs.window.with_window(w)))
            for w in windows
        ]
        baseline = (cls.window_label(inputs.window.event_window), inputs)
        return cls._sweep("window", jobs, baseline)

    @classmethod
    def cap_sweep(cls, inputs: PipelineInputs, caps: Sequence[Optional[float]]) -> SweepReport:
        """Recalcula tudo por nível de capping (aplicado antes do ajuste e do CAR)."""
        jobs = [(cls.cap_label(c), replace(inputs, cap=c)) for c in caps]
        baseline = (cls.cap_label(inputs.cap), inputs)
        return cls._sweep("cap", jobs, baseline)

    # ------------------------------------------------------------------
    # Subamostras
    # ------------------------------------------------------------------

    @staticmethod
    def subsample_predicate(filter: SubsampleFilter, exclude_ids: Sequence[str] = ()):
        if filter == SubsampleFilter.EXOGENOUS_ONLY:
            return lambda e: e.selection in (Selection.EXOGENOUS, Selection.BOTH)
        if filter == SubsampleFilter.NON_OVERLAPPING:
            return lambda e: not e.overlap_ids
        if filter == SubsampleFilter.EXCLUDE_IDS:
            if not exclude_ids:
                raise InvalidArgumentError("Filtro exclude-ids exige ao menos um id.")
            excluded = set(exclude_ids)
            return lambda e: e.id not in excluded
        return lambda e: True

    @classmethod
    def subsample_run(
        cls,
        table: CarTable,
        filter: SubsampleFilter,
        group_a: Category,
        group_b: Category,
        exclude_ids: Sequence[str] = (),
        scheme: WeightingScheme = WeightingScheme.OBSERVATION_WEIGHTED,
        B: int = 5000,
        seed: int = 0,
        ci_level: float = 0.95,
        max_exact: int = 100_000,
        workers: int = 1,
    ) -> SubsampleReport:
        """
        Refaz médias, bootstrap da diferença e permutação numa subamostra.

        Raises:
            InsufficientClustersError: grupo com menos de 2 eventos após o filtro
        """
        filter = SubsampleFilter(filter)
        unknown = set(exclude_ids) - set(table.events)
        if unknown:
            logger.warning(f"Ids a excluir ausentes da tabela: {', '.join(sorted(unknown))}")

        filtered = table.for_events(cls.subsample_predicate(filter, exclude_ids))
        kept = set(filtered.event_ids())
        excluded = tuple(eid for eid in table.event_ids() if eid not in kept)

        clusters = {c: EventClusters(filtered, c) for c in (group_a, group_b)}
        try:
            bootstrap = InferenceService.block_bootstrap_diff(
                filtered, group_a, group_b, scheme, B, seed, ci_level, workers=workers
            )
            permutation = InferenceService.permutation_test(
                clusters[group_a].means, clusters[group_b].means, max_exact=max_exact, seed=seed
            )
        except (InsufficientClustersError, InvalidArgumentError) as exc:
            raise InsufficientClustersError(f"Filtro {filter.value}: {exc.messages[0]}")

        logger.info(
            f"Subamostra {filter.value}: {len(excluded)} eventos excluídos, "
            f"N={len(clusters[group_a])}/{len(clusters[group_b])}"
        )
        return SubsampleReport(
            filter=filter,
            excluded_ids=excluded,
            n_events={c.value: len(cl) for c, cl in clusters.items()},
            n_obs={c.value: cl.n_obs for c, cl in clusters.items()},
            means={c.value: cl.estimate(scheme) for c, cl in clusters.items()},
            bootstrap=bootstrap,
            permutation=permutation,
        )

    # ------------------------------------------------------------------
    # Decomposição
    # ------------------------------------------------------------------

    @classmethod
    def group_decompose(cls, table: CarTable, by: str) -> Decomposition:
        """
        CAR médio por célula (linha = categoria) e spread = max - min entre células.

        `by`: "asset" (colunas = ativos), "tag" (colunas = tags; evento com
        várias tags conta em cada uma, sem tag vai para "untagged") ou
        "category" (uma linha "all" com uma coluna por categoria).
        """
        if by not in ("asset", "category", "tag"):
            raise InvalidArgumentError(f"Decomposição desconhecida: {by}.")

        def keys_of(row) -> Tuple[str, ...]:
            if by == "asset":
                return (row.asset,)
            if by == "category":
                return (row.category.value,)
            return table.events[row.event_id].tags or ("untagged",)

        columns = sorted({k for row in table.rows for k in keys_of(row)})
        if by == "category":
            order = [c.value for c in Category]
            columns = sorted(columns, key=order.index)
            row_groups = [("all", table.rows)]
        else:
            row_groups = [
                (c.value, table.for_category(c).rows)
                for c in Category
                if table.for_category(c).rows
            ]
            if row_groups:
                row_groups.append(("all", table.rows))

        rows = []
        for label, members in row_groups:
            buckets: Dict[str, List[float]] = {}
            for row in members:
                for key in keys_of(row):
                    buckets.setdefault(key, []).append(row.car)
            rows.append(
                DecompositionRow(
                    label=label,
                    cells={k: math.fsum(v) / len(v) for k, v in sorted(buckets.items())},
                    counts={k: len(v) for k, v in sorted(buckets.items())},
                )
            )
        return Decomposition(by=by, columns=tuple(columns), rows=tuple(rows))

    # ------------------------------------------------------------------
    # Antecipação pré-evento
    # ------------------------------------------------------------------

    @classmethod
    def pre_event(
        cls, inputs: PipelineInputs, window: Tuple[int, int] = PRE_EVENT_WINDOW
    ) -> Tuple[PreEventReport, CarTable]:
        """CARs em [-30, -1] por categoria e Welch entre os CARs dos dois grupos."""
        cfg = inputs.window.with_window(window)
        table = AbnormalReturnService.event_panel_cars(
            inputs.panel,
            inputs.events,
            cfg,
            model=inputs.model,
            cap=inputs.cap,
            assets=inputs.assets,
            workers=inputs.workers,
        )
        values = {c: table.for_category(c).cars() for c in (inputs.group_a, inputs.group_b)}
        test = InferenceService.welch_t(values[inputs.group_a], values[inputs.group_b])
        report = PreEventReport(
            window=tuple(window),
            means={
                c.value: float(table.for_category(c).cars().mean())
                for c in REAL_CATEGORIES
                if len(table.for_category(c))
            },
            n_obs={c.value: len(table.for_category(c)) for c in REAL_CATEGORIES},
            test=test,
        )
        return report, table
