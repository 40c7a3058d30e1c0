import csv
import io
import math
import os
import shutil
import tempfile
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..models import (
    BootstrapResult,
    CarTable,
    Category,
    CoverageReport,
    Decomposition,
    EventSet,
    KPReport,
    LeaveOneOutReport,
    PermResult,
    RunConfig,
    SelectionAudit,
    SimSpec,
    StudyReport,
    SubsampleReport,
    SweepReport,
    TTestResult,
)

CAR_COLUMNS = ["event_id", "asset", "category", "model", "tau1", "tau2", "car", "sigma_car", "significant"]
INFERENCE_COLUMNS = ["test", "groupA", "groupB", "estimate", "se", "ci_low", "ci_high", "p", "meta"]


def atomic_write_text(path, text: str) -> None:
    """Grava via arquivo temporário + os.replace: nunca deixa arquivo parcial."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=".part")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as handle:
            handle.write(text)
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise


def write_outputs(directory, outputs: Dict[str, str]) -> None:
    """
    Grava o conjunto de saídas de uma execução.

    Tudo é escrito primeiro num diretório de staging dentro de `directory`;
    só depois que todos os arquivos existem eles são movidos com os.replace.
    Uma falha na escrita não altera nenhum arquivo do diretório de saída.
    """
    os.makedirs(directory, exist_ok=True)
    staging = tempfile.mkdtemp(dir=directory, prefix=".staging-")
    try:
        staged = []
        for name, text in outputs.items():
            staged_path = os.path.join(staging, name)
            with open(staged_path, "w", encoding="utf-8", newline="") as handle:
                handle.write(text)
            staged.append((staged_path, os.path.join(directory, name)))
        for staged_path, final_path in staged:
            os.replace(staged_path, final_path)
    finally:
        shutil.rmtree(staging, ignore_errors=True)


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def pct(value: Optional[float], digits: int = 1) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return "n/a"
    return f"{100 * value:+.{digits}f}%"


class ReportingService:
    """
    Renderização das tabelas de saída (texto delimitado) e do relatório Markdown.

    Toda tabela começa com a linha `# config=<hash> seed=<s> scheme=<esquema>`.
    """

    @staticmethod
    def header(cfg: RunConfig, scheme=None) -> str:
        scheme = scheme if scheme is not None else cfg.weighting
        return f"# config={cfg.config_hash} seed={cfg.seed} scheme={scheme}"

    @classmethod
    def render(
        cls,
        header: str,
        columns: Sequence[str],
        rows: Iterable[Sequence],
        delimiter: str = ",",
    ) -> str:
        buffer = io.StringIO()
        buffer.write(header + "\n")
        writer = csv.writer(buffer, delimiter=delimiter, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(v) for v in row])
        return buffer.getvalue()

    # ------------------------------------------------------------------
    # Linhas por tipo de resultado
    # ------------------------------------------------------------------

    @staticmethod
    def car_rows(table: CarTable) -> List[List]:
        return [
            [r.event_id, r.asset, r.category, r.model, r.window[0], r.window[1], r.car, r.sigma_car, r.significant]
            for r in table.rows
        ]

    @staticmethod
    def skip_rows(table: CarTable) -> List[List]:
        return [[s.event_id, s.asset, s.reason, s.realized] for s in table.skipped]

    @staticmethod
    def bootstrap_row(test: str, result: BootstrapResult, group_a="", group_b="", extra: str = "") -> List:
        meta = (
            f"B={result.replications};level={result.ci_level};scheme={result.scheme};"
            f"n_events={'/'.join(map(str, result.n_events))};n_obs={'/'.join(map(str, result.n_obs))}"
        )
        if extra:
            meta = f"{meta};{extra}"
        return [test, group_a, group_b, result.estimate, result.se, result.ci_low, result.ci_high, result.p_value, meta]

    @staticmethod
    def permutation_row(result: PermResult, group_a, group_b, extra: str = "") -> List:
        meta = f"assignments={result.n_assignments};exact={fmt(result.exact)}"
        if extra:
            meta = f"{meta};{extra}"
        return ["permutation", group_a, group_b, result.observed_diff, "", "", "", result.p_value, meta]

    @staticmethod
    def ttest_row(test: str, result: TTestResult, group_a, group_b) -> List:
        meta = f"t={fmt(result.t_stat)};df={fmt(result.df)};n={result.n_a}/{result.n_b}"
        return [test, group_a, group_b, result.diff, "", result.ci_low, result.ci_high, result.p_value, meta]

    @staticmethod
    def kp_row(result: KPReport, group) -> List:
        meta = f"t_unadj={fmt(result.t_unadj)};n={result.n};rho_bar={fmt(result.rho_bar)};t_kp={fmt(result.t_kp)}"
        return ["kolari-pynnonen", group, "", result.t_kp, "", "", "", "", meta]

    @staticmethod
    def loo_rows(report: LeaveOneOutReport) -> List[List]:
        return [
            [report.category, row.event_id, row.event_mean, row.mean_excl, row.change, row.sign_flip]
            for row in report.rows
        ]

    @staticmethod
    def sweep_rows(report: SweepReport) -> List[List]:
        rows = []
        for setting in report.settings:
            for category, mean in setting.means.items():
                rows.append(
                    [
                        report.axis,
                        setting.label,
                        category,
                        mean,
                        setting.n_events[category],
                        setting.delta,
                        setting.ci_low,
                        setting.ci_high,
                        setting.p_value,
                        setting.null,
                        report.sign_consistent.get(category, False),
                    ]
                )
        return rows

    @staticmethod
    def decomposition_rows(report: Decomposition) -> List[List]:
        rows = []
        for row in report.rows:
            cells = [row.cells.get(c) for c in report.columns]
            rows.append([row.label, *cells, row.spread])
        return rows

    @staticmethod
    def subsample_rows(report: SubsampleReport, group_a, group_b) -> List[List]:
        extra = (
            f"filter={report.filter};excluded={'|'.join(report.excluded_ids)};"
            f"mean_a={fmt(report.means[str(group_a)])};mean_b={fmt(report.means[str(group_b)])}"
        )
        return [
            ReportingService.bootstrap_row("subsample-diff", report.bootstrap, group_a, group_b, extra),
            ReportingService.permutation_row(report.permutation, group_a, group_b, f"filter={report.filter}"),
        ]

    @staticmethod
    def audit_rows(audit: SelectionAudit) -> List[List]:
        return [
            [
                r.event_id,
                r.same_day_btc_return,
                r.three_day_btc_return,
                r.met_same_day,
                r.met_three_day,
                r.met_impact,
                r.met_users,
                r.qualifies,
                r.complete,
            ]
            for r in audit.rows
        ]

    @staticmethod
    def overlap_rows(events: EventSet) -> List[List]:
        return [
            [e.id, e.date.isoformat(), e.category, e.selection, "|".join(e.overlap_ids)]
            for e in events
        ]

    @staticmethod
    def coverage_row(spec: SimSpec, report: CoverageReport) -> List:
        return [
            report.trials,
            spec.rho,
            spec.delta,
            spec.n_assets,
            spec.n_events,
            report.naive_rejection_rate,
            report.bootstrap_rejection_rate,
            report.bootstrap_ci_coverage,
            report.naive_ci_coverage,
            report.mean_car,
            report.mean_car_se,
        ]

    # ------------------------------------------------------------------
    # Dados para gráfico
    # ------------------------------------------------------------------

    @classmethod
    def car_paths(cls, table: CarTable) -> pd.DataFrame:
        """
        Trajetória média do CAR por categoria ao longo de tau.

        Dias sem AR contam como 0 na soma acumulada do par.
        """
        frames = []
        for category in Category:
            rows = [r for r in table.rows if r.category == category and r.abnormal is not None]
            if not rows:
                continue
            tau1, tau2 = rows[0].window
            offsets = range(tau1, tau2 + 1)
            paths = np.vstack(
                [r.abnormal.reindex(offsets, fill_value=0.0).cumsum().to_numpy() for r in rows]
            )
            frames.append(
                pd.DataFrame({"series": category.value, "x": list(offsets), "y": paths.mean(axis=0)})
            )
        if not frames:
            return pd.DataFrame(columns=["series", "x", "y"])
        return pd.concat(frames, ignore_index=True)

    @classmethod
    def plot_rows(cls, table: CarTable) -> List[List]:
        paths = cls.car_paths(table)
        return [[s, int(x), float(y)] for s, x, y in paths.itertuples(index=False)]

    # ------------------------------------------------------------------
    # Relatório Markdown
    # ------------------------------------------------------------------

    @staticmethod
    def _md_table(columns: Sequence[str], rows: Iterable[Sequence]) -> List[str]:
        lines = ["| " + " | ".join(columns) + " |", "|" + "|".join("---" for _ in columns) + "|"]
        lines.extend("| " + " | ".join(str(c) for c in row) + " |" for row in rows)
        lines.append("")
        return lines

    @staticmethod
    def methodology(study: StudyReport) -> List[str]:
        lines = [
            "## Metodologia",
            "",
            "- Retornos simples diários (p_t / p_{t-1} - 1); um dia sem preço deixa lacuna, sem retorno ponte.",
            "- Bootstrap, permutação e Ibragimov-Müller reamostram ou agregam no nível do evento.",
            "- Intervalos do bootstrap usam percentis com interpolação linear entre estatísticas de ordem.",
        ]
        if study.audit is not None:
            lines += [
                f"- Auditoria de seleção: |retorno BTC| > {100 * study.audit.threshold:.1f}% no dia 0, ou no retorno "
                "de 3 dias composto nos dias [0, +2] relativos ao evento.",
            ]
        lines.append("")
        return lines

    @classmethod
    def markdown(cls, cfg: RunConfig, study: StudyReport) -> str:
        """Relatório completo; cada seção informa os N efetivamente analisados."""
        a, b = study.group_a.value, study.group_b.value
        out: List[str] = [
            "# Relatório do estudo de eventos",
            "",
            f"> config={cfg.config_hash} seed={cfg.seed} scheme={study.scheme}",
            "",
            f"- Modelo: `{cfg.model}`; janela [{cfg.window[0]}, {cfg.window[1]}]; "
            f"estimação {cfg.estimation_length} dias (mínimo {cfg.estimation_min}), gap {cfg.gap_length}",
            f"- Capping: {'nenhum' if cfg.cap is None else cfg.cap}; B={cfg.B}; nível {cfg.ci_level}",
            f"- Ponderação principal: {study.scheme.label}",
            "",
        ]
        out += cls.methodology(study)

        out += ["## Amostra de eventos", ""]
        registry_counts: Dict[str, int] = {}
        for event in study.events:
            registry_counts[event.category.value] = registry_counts.get(event.category.value, 0) + 1
        summary = {row["category"].value: row for row in study.summary}
        rows = []
        for category in Category:
            if category == Category.PLACEBO or category.value not in registry_counts:
                continue
            row = summary.get(category.value)
            rows.append(
                [
                    category.label,
                    registry_counts[category.value],
                    row["n_events"] if row else 0,
                    pct(row["mean_car"]) if row else "n/a",
                    row["n_obs"] if row else 0,
                    row["n_sig"] if row else 0,
                ]
            )
        out += cls._md_table(["Categoria", "N eventos", "N analisados", "CAR médio", "N obs", "N sig"], rows)
        if study.table.skipped:
            out += [f"Pares descartados: {len(study.table.skipped)} (ver skipped.csv).", ""]

        if study.audit is not None:
            by_event = study.audit.by_event()
            crit_rows = []
            for category in Category:
                members = [e for e in study.events if e.category == category]
                if not members:
                    continue
                audited = [by_event[e.id] for e in members if e.id in by_event]
                crit_rows.append(
                    [
                        category.label,
                        sum(r.met_same_day for r in audited),
                        sum(r.met_three_day for r in audited),
                        sum(r.met_impact for r in audited),
                        sum(r.met_users for r in audited),
                        sum(r.qualifies for r in audited),
                        sum(not r.complete for r in audited),
                    ]
                )
            out += ["### Critérios de seleção", ""]
            out += cls._md_table(
                ["Categoria", "|BTC| dia 0", "|BTC| 3 dias", "Impacto", "Usuários", "Qualifica", "Incompletos"],
                crit_rows,
            )

        if study.group_means or study.diffs:
            out += ["## Resultado principal", ""]
            rows = []
            for label, result in study.group_means.items():
                rows.append(cls._boot_md(label, result))
            for label, result in study.diffs.items():
                rows.append(cls._boot_md(label, result))
            out += cls._md_table(
                ["Teste", "Esquema", "Estimativa", "EP", "IC", "p", "N eventos", "N obs"], rows
            )

        if study.pre_event is not None:
            pre = study.pre_event
            out += [f"## Antecipação pré-evento [{pre.window[0]}, {pre.window[1]}]", ""]
            out += cls._md_table(
                ["Categoria", "CAR médio", "N obs"],
                [[c, pct(m), pre.n_obs.get(c, 0)] for c, m in pre.means.items()],
            )
            out += [
                f"Welch {a} vs {b}: diff {pct(pre.test.diff)}, t={pre.test.t_stat:.2f}, "
                f"df={pre.test.df:.1f}, p={pre.test.p_value:.3f}",
                "",
            ]

        for label, (cat_summary, betas) in study.market_models.items():
            out += [f"## Modelo de mercado: {label}", ""]
            out += cls._md_table(
                ["Categoria", "CAR médio", "N sig", "N obs"],
                [[r["category"].label, pct(r["mean_car"]), r["n_sig"], r["n_obs"]] for r in cat_summary],
            )
            if betas:
                out += ["Beta médio: " + ", ".join(f"{k} {v:.2f}" for k, v in betas.items()), ""]
            out += ["Capping, quando ativo, é aplicado ao ativo e ao proxy.", ""]

        if study.decomposition is not None:
            dec = study.decomposition
            out += [f"## Decomposição por {dec.by}", ""]
            out += cls._md_table(
                ["", *dec.columns, "Spread"],
                [
                    [row.label, *[pct(row.cells.get(c)) if c in row.cells else "" for c in dec.columns], pct(row.spread)]
                    for row in dec.rows
                ],
            )

        for sweep, title in ((study.window_sweep, "Sensibilidade à janela"), (study.cap_sweep, "Sensibilidade ao capping")):
            if sweep is None:
                continue
            out += [f"## {title}", ""]
            cats = list(sweep.baseline.means)
            rows = []
            for setting in sweep.settings:
                rows.append(
                    [
                        setting.label,
                        *[pct(setting.means.get(c)) if c in setting.means else "n/a" for c in cats],
                        pct(setting.delta),
                        f"[{pct(setting.ci_low)}, {pct(setting.ci_high)}]",
                        "n/a" if math.isnan(setting.p_value) else f"{setting.p_value:.3f}",
                        "nulo" if setting.null else "-",
                    ]
                )
            out += cls._md_table(["Configuração", *cats, "Delta", "IC", "p", "Veredito"], rows)
            consistent = ", ".join(f"{c}: {'sim' if v else 'não'}" for c, v in sweep.sign_consistent.items())
            out += [f"Sinal consistente com a base: {consistent}", ""]

        if study.leave_one_out is not None:
            loo = study.leave_one_out
            out += [f"## Leave-one-out ({loo.category.label}, {loo.scheme.label})", ""]
            names = {e.id: e.name for e in study.events}
            out += [f"Média base: {pct(loo.baseline_mean, 2)} sobre {loo.n_events} eventos", ""]
            out += cls._md_table(
                ["Evento excluído", "CAR do evento", "Média sem o evento", "Variação", "Troca de sinal"],
                [
                    [
                        names.get(r.event_id) or r.event_id,
                        pct(r.event_mean),
                        pct(r.mean_excl, 2),
                        pct(r.change),
                        "sim" if r.sign_flip else "não",
                    ]
                    for r in loo.rows
                ],
            )

        if study.placebo is not None:
            plc = study.placebo
            out += ["## Placebo", ""]
            out += [
                f"{plc.n_generated} pseudo-eventos gerados, {plc.n_analyzed} analisados ({plc.n_obs} obs). "
                f"CAR médio {pct(plc.bootstrap.estimate, 2)}, IC [{pct(plc.bootstrap.ci_low)}, "
                f"{pct(plc.bootstrap.ci_high)}], p={plc.bootstrap.p_value:.3f}",
                "",
            ]

        if study.permutation is not None or study.im_test is not None or study.kp:
            out += ["## Inferência com poucos clusters", ""]
            if study.permutation is not None:
                perm = study.permutation
                mode = "exata" if perm.exact else "Monte Carlo"
                out += [
                    f"- Permutação ({mode}, {perm.n_assignments} atribuições): diff {pct(perm.observed_diff)}, "
                    f"p={perm.p_value:.3f}"
                ]
            if study.im_test is not None:
                im = study.im_test
                out += [
                    f"- Ibragimov-Müller: diff {pct(im.diff)}, t={im.t_stat:.2f}, p={im.p_value:.2f}, "
                    f"IC 95% [{pct(im.ci_low)}, {pct(im.ci_high)}] (N={im.n_a}/{im.n_b} eventos)"
                ]
            for group, kp in study.kp.items():
                out += [
                    f"- Kolari-Pynnönen {group}: t ingênuo {kp.t_unadj:.2f} (N={kp.n}), "
                    f"rho médio {kp.rho_bar:.2f} (correlação dos ARs na janela), t ajustado {kp.t_kp:.2f}"
                ]
            out += [""]

        if study.subsamples:
            out += ["## Subamostras", ""]
            rows = []
            for sub in study.subsamples:
                rows.append(
                    [
                        sub.filter.label,
                        f"{sub.n_events[a]}/{sub.n_events[b]}",
                        pct(sub.means[a]),
                        pct(sub.means[b]),
                        pct(sub.bootstrap.estimate),
                        f"{sub.bootstrap.p_value:.3f}",
                        f"{sub.permutation.p_value:.3f}",
                    ]
                )
            out += cls._md_table(
                ["Filtro", f"N {a}/{b}", f"CAR {a}", f"CAR {b}", "Delta", "p bootstrap", "p permutação"], rows
            )

        if study.power:
            out += ["## Poder", ""]
            out += [f"- {line}" for line in study.power]
            out += [""]

        if study.notes:
            out += ["## Notas", ""]
            out += [f"- {note}" for note in study.notes]
            out += [""]
        return "\n".join(out).rstrip("\n") + "\n"

    @staticmethod
    def _boot_md(label: str, result: BootstrapResult) -> List:
        return [
            label,
            result.scheme.label,
            pct(result.estimate),
            pct(result.se),
            f"[{pct(result.ci_low)}, {pct(result.ci_high)}]",
            f"{result.p_value:.3f}",
            "/".join(map(str, result.n_events)),
            "/".join(map(str, result.n_obs)),
        ]
