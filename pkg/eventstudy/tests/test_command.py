import os
from collections import Counter
from io import StringIO

import pytest
from django.core.management import CommandError, call_command

from eventstudy.exceptions import InvalidArgumentError, ParseError
from eventstudy.models import Category, WeightingScheme
from eventstudy.services import ReportingService, RunConfigService, write_outputs

from .conftest import TOY_EVENTS
from .factories import random_walk_closes, write_events_csv, write_prices_csv


@pytest.fixture(autouse=True)
def no_seed_env(monkeypatch):
    monkeypatch.delenv("EVENTKIT_SEED", raising=False)


def run(subcommand, study, out, *extra):
    stdout = StringIO()
    call_command(
        "eventkit",
        subcommand,
        "--config",
        str(study["config"]),
        "--prices",
        str(study["prices"]),
        "--events",
        str(study["events"]),
        "--out",
        str(out),
        *extra,
        stdout=stdout,
    )
    return stdout.getvalue()


def read_all(directory):
    return {name: (directory / name).read_bytes() for name in sorted(os.listdir(directory))}


class TestCarsSubcommand:
    def test_single_event_two_assets(self, toy_study):
        """Um evento com dois ativos gera uma tabela de 2 linhas com cabeçalho de proveniência."""
        write_events_csv(toy_study["events"], TOY_EVENTS[:1])
        out = toy_study["root"] / "out"
        stdout = run("cars", toy_study, out)
        lines = (out / "cars.csv").read_text(encoding="utf-8").splitlines()

        assert lines[0].startswith("# config=")
        assert "seed=20250101" in lines[0]
        assert lines[0].endswith("scheme=ObservationWeighted")
        assert lines[1] == "event_id,asset,category,model,tau1,tau2,car,sigma_car,significant"
        assert [line.split(",")[:2] for line in lines[2:]] == [["E1", "BTC"], ["E1", "ETH"]]
        assert "cars:" in stdout

    def test_excluded_events_do_not_appear(self, toy_study):
        """Eventos Excluded ficam fora da tabela."""
        out = toy_study["root"] / "out"
        run("cars", toy_study, out)
        text = (out / "cars.csv").read_text(encoding="utf-8")

        assert "\nX1," not in text
        assert text.count("\nE") == 16

    def test_missing_price_file(self, toy_study):
        """Arquivo de preços inexistente: erro e nenhuma saída gravada."""
        out = toy_study["root"] / "out"
        with pytest.raises(CommandError, match="Arquivo não encontrado"):
            call_command(
                "eventkit",
                "cars",
                "--config",
                str(toy_study["config"]),
                "--prices",
                str(toy_study["root"] / "nope.csv"),
                "--events",
                str(toy_study["events"]),
                "--out",
                str(out),
                stdout=StringIO(),
            )
        assert not out.exists()

    def test_unknown_config_key(self, toy_study):
        """Chave desconhecida no arquivo de configuração aponta a linha."""
        toy_study["config"].write_text("assets = BTC\nhorizon = 3\n", encoding="utf-8")
        with pytest.raises(CommandError, match="Linha 2: chave desconhecida"):
            run("cars", toy_study, toy_study["root"] / "out")


class TestDeterminism:
    def test_report_is_byte_identical(self, toy_study):
        """Duas execuções do relatório com a mesma configuração geram os mesmos bytes."""
        first, second = toy_study["root"] / "r1", toy_study["root"] / "r2"
        run("report", toy_study, first, "--placebo-n", "3")
        run("report", toy_study, second, "--placebo-n", "3")

        outputs = read_all(first)
        assert set(outputs) == {
            "cars.csv",
            "skipped.csv",
            "inference.csv",
            "plot_car_paths.csv",
            "report.md",
        }
        assert outputs == read_all(second)

        report = outputs["report.md"].decode("utf-8")
        assert "## Metodologia" in report
        assert "composto nos dias [0, +2]" in report
        assert "|retorno BTC| > 5.0%" in report
        assert "interpolação linear" in report

    def test_workers_do_not_change_outputs(self, toy_study):
        """1 e 4 workers produzem tabelas idênticas."""
        one, four = toy_study["root"] / "w1", toy_study["root"] / "w4"
        for subcommand in ("cars", "diff"):
            run(subcommand, toy_study, one, "--workers", "1")
            run(subcommand, toy_study, four, "--workers", "4")
        assert read_all(one) == read_all(four)


class TestReportConsistency:
    def test_leave_one_out_baseline_matches_main_result(self, toy_study, monkeypatch):
        """Com ativos desiguais por evento, a base do leave-one-out é a média principal do relatório."""
        closes = random_walk_closes(["BTC", "ETH"], 420, seed=7)
        closes["ETH"] = closes["ETH"].loc["2020-03-01":]
        write_prices_csv(toy_study["prices"], closes)

        captured = {}
        render = ReportingService.markdown

        def capture(cfg, study):
            captured["study"] = study
            return render(cfg, study)

        monkeypatch.setattr(ReportingService, "markdown", capture)
        run("report", toy_study, toy_study["root"] / "out", "--placebo-n", "3")

        study = captured["study"]
        infra = study.table.for_category(Category.INFRA_NEGATIVE)
        main = study.group_means[f"Média {Category.INFRA_NEGATIVE.label}"]
        loo = study.leave_one_out

        assert len(set(Counter(r.event_id for r in infra.rows).values())) > 1
        assert loo.scheme == main.scheme == WeightingScheme.OBSERVATION_WEIGHTED
        assert loo.baseline_mean == pytest.approx(main.estimate)


class TestInferenceSubcommands:
    def test_diff(self, toy_study):
        """diff grava uma linha bootstrap-diff entre os grupos padrão."""
        out = toy_study["root"] / "out"
        run("diff", toy_study, out)
        lines = (out / "diff.csv").read_text(encoding="utf-8").splitlines()

        assert lines[1] == "test,groupA,groupB,estimate,se,ci_low,ci_high,p,meta"
        assert lines[2].startswith("bootstrap-diff,InfraNegative,RegNegative,")

    def test_exact_permutation(self, toy_study):
        """4 contra 4 eventos: 70 atribuições exatas."""
        out = toy_study["root"] / "out"
        stdout = run("permute", toy_study, out)
        assert "70 atribuições" in stdout

    def test_subsample_exogenous(self, toy_study):
        """exogenous-only descarta os eventos selecionados por retorno."""
        out = toy_study["root"] / "out"
        stdout = run("subsample", toy_study, out, "--filter", "exogenous-only")
        assert "N=3/3" in stdout
        assert (out / "subsample.csv").exists()

    def test_negative_window_flag(self, toy_study):
        """Janela com T1 negativo via --window=T1:T2."""
        out = toy_study["root"] / "out"
        run("cars", toy_study, out, "--window=-3:5")
        rows = (out / "cars.csv").read_text(encoding="utf-8").splitlines()[2:]
        assert {tuple(r.split(",")[4:6]) for r in rows} == {("-3", "5")}

    def test_overlaps_and_audit(self, toy_study):
        """overlaps e audit gravam suas tabelas."""
        out = toy_study["root"] / "out"
        run("overlaps", toy_study, out)
        run("audit", toy_study, out)
        overlaps = (out / "overlaps.csv").read_text(encoding="utf-8")
        audit = (out / "selection_audit.csv").read_text(encoding="utf-8")

        assert "E1,2020-04-01,InfraNegative,Exogenous,E2" in overlaps
        assert audit.splitlines()[2].startswith("E1,")

    def test_audit_without_reference_series(self, toy_study):
        """audit sem BTC entre os ativos é erro, sem gravar nada."""
        out = toy_study["root"] / "out"
        with pytest.raises(CommandError, match="requer a série BTC"):
            run("audit", toy_study, out, "--assets", "ETH")
        assert not out.exists()


class TestNoDataSubcommands:
    def test_power(self, tmp_path):
        """power dispensa arquivos de dados."""
        stdout = StringIO()
        call_command(
            "eventkit", "power", "--d", "0.13", "--out", str(tmp_path), stdout=stdout
        )
        rows = dict(
            line.split(",", 1) for line in (tmp_path / "power.csv").read_text().splitlines()[2:]
        )
        assert rows["n_per_group"] == "929"
        assert "-> 929" in stdout.getvalue()

    def test_power_requires_inputs(self, tmp_path):
        """Sem --d nem --sigma/--n1/--n2 não há o que calcular."""
        with pytest.raises(CommandError, match="--d"):
            call_command("eventkit", "power", "--out", str(tmp_path), stdout=StringIO())

    def test_calibrate(self, tmp_path):
        """calibrate grava uma linha com as taxas do Monte Carlo."""
        call_command(
            "eventkit",
            "calibrate",
            "--trials",
            "3",
            "--rho",
            "0.5",
            "--B",
            "1000",
            "--out",
            str(tmp_path),
            stdout=StringIO(),
        )
        lines = (tmp_path / "calibration.csv").read_text().splitlines()
        assert lines[1].startswith("trials,rho,delta")
        assert lines[2].startswith("3,0.5,0.0")


class TestRunConfig:
    def test_precedence(self, toy_study):
        """Padrões < arquivo < flags."""
        cfg = RunConfigService.build(
            flags={"gap_length": 20, "weighting": "EventEqualWeighted"},
            config_path=str(toy_study["config"]),
            require_paths=False,
            environ={},
        )
        assert cfg.estimation_length == 60
        assert cfg.gap_length == 20
        assert cfg.weighting == WeightingScheme.EVENT_EQUAL_WEIGHTED
        assert cfg.assets == ("BTC", "ETH")
        assert cfg.window == (0, 5)

    def test_seed_from_environment(self, toy_study):
        """EVENTKIT_SEED vale quando nem arquivo nem flag definem a semente."""
        cfg = RunConfigService.build(
            config_path=str(toy_study["config"]), require_paths=False, environ={"EVENTKIT_SEED": "77"}
        )
        flagged = RunConfigService.build(
            flags={"seed": 5}, require_paths=False, environ={"EVENTKIT_SEED": "77"}
        )
        assert cfg.seed == 77
        assert flagged.seed == 5

    def test_level_alias(self, tmp_path):
        """`level` é sinônimo de ci_level no arquivo."""
        path = tmp_path / "cfg"
        path.write_text("level = 0.9  # nível do IC\n", encoding="utf-8")
        cfg = RunConfigService.build(config_path=str(path), require_paths=False, environ={})
        assert cfg.ci_level == 0.9

    def test_hash_ignores_out_and_workers(self, tmp_path):
        """out e workers não mudam o hash da configuração."""
        base = RunConfigService.build(require_paths=False, environ={})
        other = RunConfigService.build(
            flags={"out": str(tmp_path), "workers": 8}, require_paths=False, environ={}
        )
        changed = RunConfigService.build(flags={"seed": 1}, require_paths=False, environ={})
        assert base.config_hash == other.config_hash
        assert base.config_hash != changed.config_hash
        assert len(base.config_hash) == 12

    def test_invalid_values(self):
        """B abaixo do mínimo é rejeitado na validação."""
        with pytest.raises(InvalidArgumentError, match="B"):
            RunConfigService.build(flags={"B": 10}, require_paths=False, environ={})

    def test_line_without_equals(self, tmp_path):
        """Linha sem `=` é erro de parse."""
        path = tmp_path / "cfg"
        path.write_text("# ok\nassets BTC\n", encoding="utf-8")
        with pytest.raises(ParseError, match="Linha 2"):
            RunConfigService.read_config_file(path)


class TestWriteOutputs:
    def test_all_files_written(self, tmp_path):
        """Todas as saídas aparecem e nenhum diretório de staging sobra."""
        write_outputs(tmp_path / "out", {"a.csv": "x\n", "b.csv": "y\n"})
        assert sorted(os.listdir(tmp_path / "out")) == ["a.csv", "b.csv"]
        assert (tmp_path / "out" / "b.csv").read_text(encoding="utf-8") == "y\n"

    def test_failure_leaves_directory_untouched(self, tmp_path):
        """Falha no meio do conjunto: arquivo antigo intacto e nenhuma saída nova."""
        out = tmp_path / "out"
        out.mkdir()
        (out / "cars.csv").write_text("antigo\n", encoding="utf-8")

        with pytest.raises(OSError):
            write_outputs(out, {"cars.csv": "novo\n", "missing/x.csv": "z\n"})

        assert os.listdir(out) == ["cars.csv"]
        assert (out / "cars.csv").read_text(encoding="utf-8") == "antigo\n"
