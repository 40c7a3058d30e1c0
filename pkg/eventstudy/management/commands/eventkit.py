import time

from django.core.exceptions import ValidationError
from django.core.management.base import BaseCommand, CommandError

from eventstudy.services.pipeline import NO_DATA_SUBCOMMANDS, PipelineService, RunConfigService
from eventstudy.services.reporting import write_outputs

SUBCOMMANDS = {
    "cars": "CARs por (evento, ativo)",
    "bootstrap": "Bootstrap por evento da média de uma categoria",
    "diff": "Bootstrap da diferença entre os dois grupos",
    "permute": "Teste de permutação (exato quando viável)",
    "im": "Teste t de Ibragimov-Müller sobre médias por evento",
    "welch": "Welch entre grupos na janela pré-evento",
    "kp": "t ingênuo ajustado por Kolari-Pynnönen",
    "placebo": "Pseudo-eventos estratificados por dia da semana",
    "loo": "Leave-one-out por evento",
    "sweep-window": "Sensibilidade à janela de evento",
    "sweep-cap": "Sensibilidade ao capping",
    "subsample": "Filtros de subamostra (exógenos, sem sobreposição, exclusão)",
    "decompose": "CAR médio por ativo, categoria ou tag",
    "power": "Tamanho amostral e efeito mínimo detectável",
    "calibrate": "Monte Carlo de rejeição e cobertura",
    "audit": "Auditoria dos critérios de seleção",
    "overlaps": "Eventos com sobreposição de janelas",
    "report": "Relatório Markdown completo",
}


class Command(BaseCommand):
    help = "Estudo de eventos em criptoativos: CARs, inferência por cluster e robustez"

    def add_arguments(self, parser):
        subparsers = parser.add_subparsers(dest="subcommand", required=True)
        for name, help_text in SUBCOMMANDS.items():
            sub = subparsers.add_parser(name, help=help_text)
            self._add_common(sub)
            self._add_specific(name, sub)

    @staticmethod
    def _add_common(sub):
        sub.add_argument("--config", help="Arquivo chave=valor")
        sub.add_argument("--prices")
        sub.add_argument("--events")
        sub.add_argument("--assets", help="Lista separada por vírgula")
        sub.add_argument("--model", help="constant-mean | market-proxy:ATIVO | market-ew")
        sub.add_argument("--window", help="T1:T2 (use --window=-5:30 para T1 negativo)")
        sub.add_argument("--cap", help="Nível de capping ou none")
        sub.add_argument("--weighting", help="ObservationWeighted | EventEqualWeighted")
        sub.add_argument("--B", dest="B", type=int)
        sub.add_argument("--seed", type=int)
        sub.add_argument("--level", type=float, help="Nível do IC")
        sub.add_argument("--out")
        sub.add_argument("--workers", type=int)
        sub.add_argument("--group-a", dest="group_a")
        sub.add_argument("--group-b", dest="group_b")

    @staticmethod
    def _add_specific(name, sub):
        if name in ("bootstrap", "loo"):
            sub.add_argument("--category")
        if name == "loo":
            sub.add_argument("--loo-weighting", dest="loo_weighting")
        if name == "permute":
            sub.add_argument("--perm-unit", dest="perm_unit", choices=["event", "observation"])
        if name == "sweep-window":
            sub.add_argument("--windows", help="Ex.: 0:1,0:3,0:5")
        if name == "sweep-cap":
            sub.add_argument("--caps", help="Ex.: 0.3,0.5,0.75,none")
        if name == "subsample":
            sub.add_argument(
                "--filter", choices=["none", "exogenous-only", "non-overlapping", "exclude-ids"]
            )
            sub.add_argument("--exclude", help="Ids separados por vírgula")
        if name == "decompose":
            sub.add_argument("--by", choices=["asset", "category", "tag"])
        if name in ("placebo", "report"):
            sub.add_argument("--placebo-n", dest="placebo_n", type=int)
        if name == "power":
            sub.add_argument("--alpha", type=float)
            sub.add_argument("--power", type=float)
            sub.add_argument("--d", type=float)
            sub.add_argument("--sigma", type=float)
            sub.add_argument("--n1", type=int)
            sub.add_argument("--n2", type=int)
        if name == "calibrate":
            sub.add_argument("--trials", type=int)
            sub.add_argument("--rho", type=float)
            sub.add_argument("--delta", type=float)
            sub.add_argument("--n-assets", dest="n_assets", type=int)
            sub.add_argument("--n-events", dest="n_events", type=int)
            sub.add_argument("--days-per-event", dest="days_per_event", type=int)
            sub.add_argument("--daily-sd", dest="daily_sd", type=float)

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        start_time = time.time()
        try:
            cfg = RunConfigService.build(
                flags=options,
                config_path=options.get("config"),
                require_paths=subcommand not in NO_DATA_SUBCOMMANDS,
            )
            # Tudo é calculado antes de qualquer escrita
            outputs, messages = PipelineService.execute(subcommand, cfg, options)
            write_outputs(cfg.out, outputs)
        except ValidationError as exc:
            raise CommandError("; ".join(exc.messages))
        except OSError as exc:
            raise CommandError(f"Erro de E/S: {exc}")

        for message in messages:
            self.stdout.write(message)
        elapsed = time.time() - start_time
        self.stdout.write(
            self.style.SUCCESS(
                f"{subcommand}: {len(outputs)} arquivo(s) em {cfg.out} "
                f"(config {cfg.config_hash}, {elapsed:.2f}s)"
            )
        )
