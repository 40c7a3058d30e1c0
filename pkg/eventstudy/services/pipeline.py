import logging
import math
import os
from typing import Dict, List, Optional, Tuple

import numpy as np
from django.conf import settings

from ..exceptions import (
    FeasibilityError,
    InsufficientClustersError,
    InvalidArgumentError,
    ParseError,
)
from ..models import (
    Category,
    EventSet,
    PipelineInputs,
    PlaceboSpec,
    ReturnPanel,
    RunConfig,
    SimSpec,
    StudyReport,
    SubsampleFilter,
    WeightingScheme,
)
from ..serializers import CapField, RunConfigSerializer, WindowField, flatten_errors
from .abnormal import AbnormalReturnService
from .calibration import CalibrationService
from .inference import InferenceService
from .ingest import IngestService
from .power import PowerService
from .registry import EventRegistryService
from .reporting import CAR_COLUMNS, INFERENCE_COLUMNS, ReportingService
from .robustness import RobustnessService

logger = logging.getLogger(__name__)

CONFIG_KEYS = (
    "prices",
    "events",
    "assets",
    "model",
    "window",
    "estimation_length",
    "estimation_min",
    "gap_length",
    "cap",
    "weighting",
    "B",
    "seed",
    "ci_level",
    "out",
    "group_a",
    "group_b",
    "workers",
)
KEY_ALIASES = {"level": "ci_level"}
NO_DATA_SUBCOMMANDS = ("power", "calibrate")

Outputs = Dict[str, str]


def _split_list(value):
    if isinstance(value, str):
        return [v.strip() for v in value.split(",") if v.strip()]
    return value


class RunConfigService:
    """Monta a RunConfig: padrões do settings < arquivo key=value < flags."""

    @classmethod
    def read_config_file(cls, path) -> Dict[str, str]:
        """
        Lê um arquivo `chave=valor` plano; `#` inicia comentário.

        Raises:
            ParseError: linha sem `=` ou chave desconhecida (com a linha)
        """
        values: Dict[str, str] = {}
        with open(path, encoding="utf-8") as handle:
            for number, raw in enumerate(handle, start=1):
                line = raw.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ParseError(f"esperado chave=valor em {path}.", line=number)
                key, value = (part.strip() for part in line.split("=", 1))
                key = KEY_ALIASES.get(key, key)
                if key not in CONFIG_KEYS:
                    raise ParseError(f"chave desconhecida '{key}' em {path}.", line=number)
                values[key] = value
        return values

    @classmethod
    def build(
        cls,
        flags: Optional[Dict] = None,
        config_path: Optional[str] = None,
        require_paths: bool = True,
        environ=None,
    ) -> RunConfig:
        environ = os.environ if environ is None else environ
        defaults = settings.EVENTKIT
        merged = {k: defaults[k] for k in CONFIG_KEYS if k in defaults}
        merged.setdefault("prices", "")
        merged.setdefault("events", "")

        file_values = cls.read_config_file(config_path) if config_path else {}
        flag_values = {
            KEY_ALIASES.get(k, k): v for k, v in (flags or {}).items() if v is not None
        }
        flag_values = {k: v for k, v in flag_values.items() if k in CONFIG_KEYS}

        if "seed" not in file_values and "seed" not in flag_values and environ.get("EVENTKIT_SEED"):
            merged["seed"] = environ["EVENTKIT_SEED"]
        merged.update(file_values)
        merged.update(flag_values)
        merged["assets"] = _split_list(merged["assets"])

        serializer = RunConfigSerializer(data=merged, context={"require_paths": require_paths})
        if not serializer.is_valid():
            raise InvalidArgumentError(f"Configuração inválida: {flatten_errors(serializer.errors)}")
        cfg = serializer.to_run_config()
        logger.info(f"Configuração {cfg.config_hash} (seed {cfg.seed})")
        return cfg


class PipelineService:
    """
    Liga ingestão, registro, CARs, inferência e robustez para cada subcomando.

    Os métodos `run_*` devolvem (saídas, mensagens): saídas é um dicionário
    nome de arquivo -> conteúdo, todo calculado em memória antes da escrita.
    """

    @classmethod
    def load(cls, cfg: RunConfig) -> Tuple[ReturnPanel, EventSet]:
        prices = IngestService.load_price_panel(cfg.prices)
        returns = IngestService.compute_returns(prices)
        present = [a for a in cfg.assets if a in returns.assets]
        missing = [a for a in cfg.assets if a not in returns.assets]
        if missing:
            logger.warning(f"Ativos sem preços no painel: {', '.join(missing)}")
        if not present:
            raise InvalidArgumentError("Nenhum dos ativos configurados existe no arquivo de preços.")
        panel = ReturnPanel(returns=returns.returns[sorted(present)])

        events = EventRegistryService.load_events(cfg.events)
        events = EventRegistryService.detect_overlaps(events, settings.EVENTKIT["overlap_horizon"])
        return panel, events

    @staticmethod
    def inputs(cfg: RunConfig, panel: ReturnPanel, events: EventSet) -> PipelineInputs:
        return PipelineInputs(
            panel=panel,
            events=events,
            window=cfg.window_config(),
            model=cfg.model,
            cap=cfg.cap,
            assets=tuple(panel.assets),
            group_a=cfg.group_a,
            group_b=cfg.group_b,
            scheme=cfg.weighting,
            B=cfg.B,
            seed=cfg.seed,
            ci_level=cfg.ci_level,
            workers=cfg.workers,
        )

    @staticmethod
    def cars(inputs: PipelineInputs, window=None):
        return AbnormalReturnService.event_panel_cars(
            inputs.panel,
            inputs.events,
            window or inputs.window,
            model=inputs.model,
            cap=inputs.cap,
            assets=inputs.assets,
            workers=inputs.workers,
        )

    @classmethod
    def execute(cls, subcommand: str, cfg: RunConfig, options: Dict) -> Tuple[Outputs, List[str]]:
        runner = getattr(cls, "run_" + subcommand.replace("-", "_"), None)
        if runner is None:
            raise InvalidArgumentError(f"Subcomando desconhecido: {subcommand}.")
        if subcommand in NO_DATA_SUBCOMMANDS:
            return runner(cfg, options)
        panel, events = cls.load(cfg)
        return runner(cfg, options, cls.inputs(cfg, panel, events))

    # ------------------------------------------------------------------
    # Subcomandos
    # ------------------------------------------------------------------

    @classmethod
    def _car_outputs(cls, cfg: RunConfig, table) -> Outputs:
        header = ReportingService.header(cfg)
        return {
            "cars.csv": ReportingService.render(header, CAR_COLUMNS, ReportingService.car_rows(table)),
            "skipped.csv": ReportingService.render(
                header, ["event_id", "asset", "reason", "realized"], ReportingService.skip_rows(table)
            ),
        }

    @classmethod
    def run_cars(cls, cfg, options, inputs):
        table = cls.cars(inputs)
        messages = [
            f"{row['category'].label}: CAR médio {row['mean_car']:+.4f}, "
            f"{row['n_sig']}/{row['n_obs']} significativos, {row['n_events']} eventos"
            for row in AbnormalReturnService.category_summary(table)
        ]
        messages.append(f"{len(table)} CARs, {len(table.skipped)} pares descartados")
        return cls._car_outputs(cfg, table), messages

    @staticmethod
    def _category(options, default: Category) -> Category:
        value = options.get("category")
        if not value:
            return default
        if value in Category.values:
            return Category(value)
        try:
            return Category.from_token(value)
        except ValueError:
            raise InvalidArgumentError(f"Categoria desconhecida: {value}.")

    @classmethod
    def _inference_table(cls, cfg, rows, scheme=None) -> str:
        return ReportingService.render(ReportingService.header(cfg, scheme), INFERENCE_COLUMNS, rows)

    @classmethod
    def run_bootstrap(cls, cfg, options, inputs):
        category = cls._category(options, cfg.group_a)
        result = InferenceService.block_bootstrap_mean(
            cls.cars(inputs), category, cfg.weighting, cfg.B, cfg.seed, cfg.ci_level, cfg.workers
        )
        row = ReportingService.bootstrap_row("bootstrap-mean", result, category)
        return {"bootstrap.csv": cls._inference_table(cfg, [row])}, [
            f"{category.label}: {result.estimate:+.4f} IC [{result.ci_low:+.4f}, {result.ci_high:+.4f}] "
            f"p={result.p_value:.3f}"
        ]

    @classmethod
    def run_diff(cls, cfg, options, inputs):
        result = InferenceService.block_bootstrap_diff(
            cls.cars(inputs), cfg.group_a, cfg.group_b, cfg.weighting, cfg.B, cfg.seed, cfg.ci_level, cfg.workers
        )
        row = ReportingService.bootstrap_row("bootstrap-diff", result, cfg.group_a, cfg.group_b)
        return {"diff.csv": cls._inference_table(cfg, [row])}, [
            f"Delta {result.estimate:+.4f} IC [{result.ci_low:+.4f}, {result.ci_high:+.4f}] p={result.p_value:.3f}"
        ]

    @classmethod
    def _group_values(cls, table, cfg, unit: str):
        if unit == "observation":
            return table.for_category(cfg.group_a).cars(), table.for_category(cfg.group_b).cars()
        means_a = [m for _, m in InferenceService.event_level_means(table, cfg.group_a)]
        means_b = [m for _, m in InferenceService.event_level_means(table, cfg.group_b)]
        return means_a, means_b

    @classmethod
    def run_permute(cls, cfg, options, inputs):
        unit = options.get("perm_unit") or "event"
        values_a, values_b = cls._group_values(cls.cars(inputs), cfg, unit)
        result = InferenceService.permutation_test(
            values_a, values_b, max_exact=settings.EVENTKIT["max_exact"], seed=cfg.seed
        )
        row = ReportingService.permutation_row(result, cfg.group_a, cfg.group_b, f"unit={unit}")
        return {"permutation.csv": cls._inference_table(cfg, [row])}, [
            f"diff {result.observed_diff:+.4f}, {result.n_assignments} atribuições, p={result.p_value:.3f}"
        ]

    @classmethod
    def run_im(cls, cfg, options, inputs):
        means_a, means_b = cls._group_values(cls.cars(inputs), cfg, "event")
        result = InferenceService.im_t_test(means_a, means_b)
        row = ReportingService.ttest_row("ibragimov-muller", result, cfg.group_a, cfg.group_b)
        return {"im_test.csv": cls._inference_table(cfg, [row], WeightingScheme.EVENT_EQUAL_WEIGHTED)}, [
            f"t={result.t_stat:.3f} df={result.df:.2f} p={result.p_value:.3f}"
        ]

    @classmethod
    def run_welch(cls, cfg, options, inputs):
        report, _ = RobustnessService.pre_event(inputs, tuple(settings.EVENTKIT["pre_event_window"]))
        meta_means = ";".join(f"mean_{c}={m!r}" for c, m in report.means.items())
        row = ReportingService.ttest_row("welch-pre-event", report.test, cfg.group_a, cfg.group_b)
        row[-1] = f"{row[-1]};window={report.window[0]}:{report.window[1]};{meta_means}"
        return {"pre_event.csv": cls._inference_table(cfg, [row])}, [
            f"Welch pré-evento: t={report.test.t_stat:.3f} p={report.test.p_value:.3f}"
        ]

    @classmethod
    def run_kp(cls, cfg, options, inputs):
        table = cls.cars(inputs)
        rows, messages = [], []
        for group in (cfg.group_a, cfg.group_b):
            result = InferenceService.kp_report(table, group)
            rows.append(ReportingService.kp_row(result, group))
            messages.append(f"{group.label}: t={result.t_unadj:.3f} -> t_KP={result.t_kp:.3f}")
        return {"kp.csv": cls._inference_table(cfg, rows)}, messages

    @classmethod
    def _placebo_spec(cls, cfg, options, inputs) -> PlaceboSpec:
        """Período = calendário do painel de retornos."""
        dates = inputs.panel.dates
        return PlaceboSpec(
            n_events=options.get("placebo_n") or settings.EVENTKIT["placebo_events"],
            exclusion_horizon=settings.EVENTKIT["overlap_horizon"],
            period=(dates[0].date(), dates[-1].date()) if len(dates) else None,
            seed=cfg.seed,
        )

    @classmethod
    def run_placebo(cls, cfg, options, inputs):
        report, table = RobustnessService.placebo_run(inputs, cls._placebo_spec(cfg, options, inputs))
        extra = f"generated={report.n_generated};analyzed={report.n_analyzed}"
        row = ReportingService.bootstrap_row("placebo-mean", report.bootstrap, Category.PLACEBO, "", extra)
        outputs = {"placebo.csv": cls._inference_table(cfg, [row])}
        outputs["placebo_cars.csv"] = ReportingService.render(
            ReportingService.header(cfg), CAR_COLUMNS, ReportingService.car_rows(table)
        )
        return outputs, [
            f"{report.n_analyzed}/{report.n_generated} placebos analisados: "
            f"{report.bootstrap.estimate:+.4f} p={report.bootstrap.p_value:.3f}"
        ]

    @classmethod
    def run_loo(cls, cfg, options, inputs):
        category = cls._category(options, cfg.group_a)
        scheme = WeightingScheme(options.get("loo_weighting") or cfg.weighting)
        report = RobustnessService.leave_one_out(cls.cars(inputs), category, scheme)
        columns = ["category", "event_id", "event_mean", "mean_excl", "change", "sign_flip"]
        text = ReportingService.render(
            ReportingService.header(cfg, scheme), columns, ReportingService.loo_rows(report)
        )
        flips = sum(r.sign_flip for r in report.rows)
        return {"leave_one_out.csv": text}, [
            f"{category.label}: base {report.baseline_mean:+.4f}, {flips} troca(s) de sinal"
        ]

    SWEEP_COLUMNS = [
        "axis",
        "setting",
        "category",
        "mean",
        "n_events",
        "delta",
        "ci_low",
        "ci_high",
        "p",
        "null",
        "sign_consistent",
    ]

    @classmethod
    def _parse_windows(cls, value) -> List[Tuple[int, int]]:
        if not value:
            return [tuple(w) for w in settings.EVENTKIT["sweep_windows"]]
        field = WindowField()
        try:
            return [field.to_internal_value(item) for item in _split_list(value)]
        except Exception as exc:
            raise InvalidArgumentError(f"Lista de janelas inválida '{value}': {exc}")

    @classmethod
    def _parse_caps(cls, value) -> List[Optional[float]]:
        if not value:
            return list(settings.EVENTKIT["sweep_caps"])
        field = CapField()
        try:
            return [field.to_internal_value(item) for item in _split_list(value)]
        except Exception as exc:
            raise InvalidArgumentError(f"Lista de caps inválida '{value}': {exc}")

    @classmethod
    def _sweep_output(cls, cfg, name, report):
        text = ReportingService.render(
            ReportingService.header(cfg), cls.SWEEP_COLUMNS, ReportingService.sweep_rows(report)
        )
        consistent = ", ".join(f"{c}={'sim' if v else 'não'}" for c, v in report.sign_consistent.items())
        return {name: text}, [f"{len(report.settings)} configurações; sinal consistente: {consistent}"]

    @classmethod
    def run_sweep_window(cls, cfg, options, inputs):
        report = RobustnessService.window_sweep(inputs, cls._parse_windows(options.get("windows")))
        return cls._sweep_output(cfg, "sweep_window.csv", report)

    @classmethod
    def run_sweep_cap(cls, cfg, options, inputs):
        report = RobustnessService.cap_sweep(inputs, cls._parse_caps(options.get("caps")))
        return cls._sweep_output(cfg, "sweep_cap.csv", report)

    @classmethod
    def run_subsample(cls, cfg, options, inputs):
        try:
            filter = SubsampleFilter(options.get("filter") or SubsampleFilter.EXOGENOUS_ONLY)
        except ValueError:
            raise InvalidArgumentError(f"Filtro desconhecido: {options.get('filter')}.")
        exclude = _split_list(options.get("exclude") or "")
        report = RobustnessService.subsample_run(
            cls.cars(inputs),
            filter,
            cfg.group_a,
            cfg.group_b,
            exclude_ids=exclude,
            scheme=cfg.weighting,
            B=cfg.B,
            seed=cfg.seed,
            ci_level=cfg.ci_level,
            max_exact=settings.EVENTKIT["max_exact"],
            workers=cfg.workers,
        )
        rows = ReportingService.subsample_rows(report, cfg.group_a, cfg.group_b)
        return {"subsample.csv": cls._inference_table(cfg, rows)}, [
            f"{filter.label}: N={report.n_events[cfg.group_a.value]}/{report.n_events[cfg.group_b.value]}, "
            f"Delta {report.bootstrap.estimate:+.4f} p={report.bootstrap.p_value:.3f}"
        ]

    @classmethod
    def run_decompose(cls, cfg, options, inputs):
        by = options.get("by") or "asset"
        report = RobustnessService.group_decompose(cls.cars(inputs), by)
        text = ReportingService.render(
            ReportingService.header(cfg),
            ["row", *report.columns, "spread"],
            ReportingService.decomposition_rows(report),
        )
        return {"decomposition.csv": text}, [f"Decomposição por {by}: {len(report.rows)} linhas"]

    @classmethod
    def run_power(cls, cfg, options):
        alpha = options.get("alpha") or 0.05
        power = options.get("power") or 0.80
        d, sigma = options.get("d"), options.get("sigma")
        n1, n2 = options.get("n1"), options.get("n2")
        if d is None and (sigma is None or n1 is None or n2 is None):
            raise InvalidArgumentError("Informe --d ou o trio --sigma --n1 --n2.")

        rows = [["alpha", alpha], ["power", power]]
        if d is not None:
            rows += [
                ["d", d],
                ["n_per_group_value", PowerService.required_n_value(alpha, power, d)],
                ["n_per_group", PowerService.required_n_per_group(alpha, power, d)],
            ]
        if sigma is not None and n1 is not None and n2 is not None:
            rows += [
                ["sigma_pooled", sigma],
                ["n1", n1],
                ["n2", n2],
                ["mde", PowerService.mde(alpha, power, sigma, n1, n2)],
            ]
        text = ReportingService.render(ReportingService.header(cfg), ["quantity", "value"], rows)
        return {"power.csv": text}, PowerService.formula_text(alpha, power, d, sigma, n1, n2)

    CALIBRATION_COLUMNS = [
        "trials",
        "rho",
        "delta",
        "n_assets",
        "n_events",
        "naive_rejection",
        "bootstrap_rejection",
        "bootstrap_coverage",
        "naive_coverage",
        "mean_car",
        "mean_car_se",
    ]

    @classmethod
    def run_calibrate(cls, cfg, options):
        params = {
            key: options[key]
            for key in ("n_assets", "n_events", "days_per_event", "rho", "daily_sd", "delta", "trials")
            if options.get(key) is not None
        }
        spec = SimSpec(seed=cfg.seed, B=cfg.B, ci_level=cfg.ci_level, **params)
        report = CalibrationService.coverage_study(spec, workers=cfg.workers)
        text = ReportingService.render(
            ReportingService.header(cfg), cls.CALIBRATION_COLUMNS, [ReportingService.coverage_row(spec, report)]
        )
        return {"calibration.csv": text}, [
            f"rejeição ingênua {report.naive_rejection_rate:.3f}, bootstrap {report.bootstrap_rejection_rate:.3f}, "
            f"cobertura {report.bootstrap_ci_coverage:.3f} ({report.trials} trials)"
        ]

    @classmethod
    def _audit(cls, cfg, inputs):
        btc = settings.EVENTKIT["btc_asset"]
        if btc not in inputs.panel.assets:
            raise InvalidArgumentError(
                f"Auditoria de seleção requer a série {btc}; inclua-a em assets."
            )
        return EventRegistryService.audit_selection(
            inputs.events,
            inputs.panel,
            settings.EVENTKIT["selection_threshold"],
            asset=btc,
            impact_threshold=settings.EVENTKIT["impact_threshold_usd"],
            users_threshold=settings.EVENTKIT["users_threshold"],
        )

    @classmethod
    def run_audit(cls, cfg, options, inputs):
        audit = cls._audit(cfg, inputs)
        columns = [
            "event_id",
            "same_day_btc_return",
            "three_day_btc_return",
            "met_same_day",
            "met_three_day",
            "met_impact",
            "met_users",
            "qualifies",
            "complete",
        ]
        text = ReportingService.render(ReportingService.header(cfg), columns, ReportingService.audit_rows(audit))
        qualifying = sum(r.qualifies for r in audit.rows)
        return {"selection_audit.csv": text}, [f"{qualifying}/{len(audit.rows)} eventos atendem a algum critério"]

    @classmethod
    def run_overlaps(cls, cfg, options, inputs):
        columns = ["event_id", "date", "category", "selection", "overlap_ids"]
        text = ReportingService.render(
            ReportingService.header(cfg), columns, ReportingService.overlap_rows(inputs.events)
        )
        flagged = sum(1 for e in inputs.events if e.overlap_ids)
        return {"overlaps.csv": text}, [f"{flagged}/{len(inputs.events)} eventos com sobreposição"]

    # ------------------------------------------------------------------
    # Relatório completo
    # ------------------------------------------------------------------

    @classmethod
    def run_report(cls, cfg, options, inputs):
        """
        Roda todas as baterias e emite report.md, tabelas e dados de gráfico.

        Baterias sem eventos suficientes (ou placebo inviável) viram nota no
        relatório em vez de abortar a execução.
        """
        a, b = cfg.group_a, cfg.group_b
        table = cls.cars(inputs)
        study = StudyReport(
            events=inputs.events,
            table=table,
            group_a=a,
            group_b=b,
            scheme=cfg.weighting,
            summary=AbnormalReturnService.category_summary(table),
        )
        rows: List[List] = []

        def attempt(label, func):
            try:
                return func()
            except (InsufficientClustersError, FeasibilityError, InvalidArgumentError) as exc:
                study.notes.append(f"{label}: {exc.messages[0]}")
                logger.warning(f"Relatório, seção {label} omitida: {exc.messages[0]}")
                return None

        if settings.EVENTKIT["btc_asset"] in inputs.panel.assets:
            study.audit = cls._audit(cfg, inputs)
        else:
            study.notes.append("Auditoria de seleção omitida: série BTC ausente.")

        for group in (a, b):
            result = attempt(
                f"bootstrap {group.value}",
                lambda g=group: InferenceService.block_bootstrap_mean(
                    table, g, cfg.weighting, cfg.B, cfg.seed, cfg.ci_level, cfg.workers
                ),
            )
            if result is not None:
                study.group_means[f"Média {group.label}"] = result
                rows.append(ReportingService.bootstrap_row("bootstrap-mean", result, group))
        for scheme in (WeightingScheme.OBSERVATION_WEIGHTED, WeightingScheme.EVENT_EQUAL_WEIGHTED):
            result = attempt(
                f"diff {scheme.value}",
                lambda s=scheme: InferenceService.block_bootstrap_diff(
                    table, a, b, s, cfg.B, cfg.seed, cfg.ci_level, cfg.workers
                ),
            )
            if result is not None:
                study.diffs[f"Delta {a.label} - {b.label} ({scheme.label})"] = result
                rows.append(ReportingService.bootstrap_row("bootstrap-diff", result, a, b))

        study.pre_event = attempt(
            "pré-evento",
            lambda: RobustnessService.pre_event(inputs, tuple(settings.EVENTKIT["pre_event_window"]))[0],
        )
        if study.pre_event is not None:
            rows.append(ReportingService.ttest_row("welch-pre-event", study.pre_event.test, a, b))

        if cfg.model == "constant-mean" and len(inputs.panel.assets) >= 2:
            btc = settings.EVENTKIT["btc_asset"]
            models = [("market-ew", "EW leave-one-out")]
            if btc in inputs.panel.assets:
                models.insert(0, (f"market-proxy:{btc}", f"proxy {btc}"))
            for model, label in models:
                market = AbnormalReturnService.event_panel_cars(
                    inputs.panel,
                    inputs.events,
                    inputs.window,
                    model=model,
                    cap=inputs.cap,
                    assets=inputs.assets,
                    workers=inputs.workers,
                )
                study.market_models[label] = (
                    AbnormalReturnService.category_summary(market),
                    AbnormalReturnService.mean_betas(market),
                )

        if len(table):
            study.decomposition = RobustnessService.group_decompose(table, "asset")
        study.window_sweep = attempt(
            "varredura de janela",
            lambda: RobustnessService.window_sweep(inputs, cls._parse_windows(None)),
        )
        study.cap_sweep = attempt(
            "varredura de cap", lambda: RobustnessService.cap_sweep(inputs, cls._parse_caps(None))
        )
        study.leave_one_out = attempt(
            "leave-one-out", lambda: RobustnessService.leave_one_out(table, a, cfg.weighting)
        )
        placebo = attempt(
            "placebo", lambda: RobustnessService.placebo_run(inputs, cls._placebo_spec(cfg, options, inputs))
        )
        if placebo is not None:
            study.placebo = placebo[0]
            rows.append(ReportingService.bootstrap_row("placebo-mean", placebo[0].bootstrap, Category.PLACEBO))

        means_a, means_b = cls._group_values(table, cfg, "event")
        if means_a and means_b:
            study.permutation = InferenceService.permutation_test(
                means_a, means_b, max_exact=settings.EVENTKIT["max_exact"], seed=cfg.seed
            )
            rows.append(ReportingService.permutation_row(study.permutation, a, b, "unit=event"))
        study.im_test = attempt("Ibragimov-Müller", lambda: InferenceService.im_t_test(means_a, means_b))
        if study.im_test is not None:
            rows.append(ReportingService.ttest_row("ibragimov-muller", study.im_test, a, b))
        for group in (a, b):
            kp = attempt(f"KP {group.value}", lambda g=group: InferenceService.kp_report(table, g))
            if kp is not None:
                study.kp[group.label] = kp
                rows.append(ReportingService.kp_row(kp, group))

        for filter in (SubsampleFilter.EXOGENOUS_ONLY, SubsampleFilter.NON_OVERLAPPING):
            sub = attempt(
                f"subamostra {filter.value}",
                lambda f=filter: RobustnessService.subsample_run(
                    table,
                    f,
                    a,
                    b,
                    scheme=cfg.weighting,
                    B=cfg.B,
                    seed=cfg.seed,
                    ci_level=cfg.ci_level,
                    max_exact=settings.EVENTKIT["max_exact"],
                    workers=cfg.workers,
                ),
            )
            if sub is not None:
                study.subsamples.append(sub)
                rows.extend(ReportingService.subsample_rows(sub, a, b))

        study.power = cls._observed_power(means_a, means_b)

        outputs = cls._car_outputs(cfg, table)
        outputs["inference.csv"] = cls._inference_table(cfg, rows)
        outputs["plot_car_paths.csv"] = ReportingService.render(
            ReportingService.header(cfg), ["series", "x", "y"], ReportingService.plot_rows(table)
        )
        outputs["report.md"] = ReportingService.markdown(cfg, study)
        return outputs, [f"Relatório com {len(rows)} linhas de inferência e {len(study.notes)} nota(s)"]

    @staticmethod
    def _observed_power(means_a, means_b) -> List[str]:
        """d observado = Delta / sigma_pooled nas médias por evento; N necessário e MDE."""
        n1, n2 = len(means_a), len(means_b)
        if n1 < 2 or n2 < 2:
            return []
        va, vb = np.var(means_a, ddof=1), np.var(means_b, ddof=1)
        sigma = math.sqrt(((n1 - 1) * va + (n2 - 1) * vb) / (n1 + n2 - 2))
        delta = float(np.mean(means_a) - np.mean(means_b))
        lines = [f"Delta observado {delta:+.4f}, sigma agrupado {sigma:.4f}"]
        if sigma > 0 and delta != 0:
            lines += PowerService.formula_text(0.05, 0.80, d=abs(delta) / sigma)
        lines += PowerService.formula_text(0.05, 0.80, sigma_pooled=sigma, n1=n1, n2=n2)
        return lines
