import pytest

from eventstudy.models import WindowConfig

from .factories import random_walk_closes, write_events_csv, write_prices_csv


@pytest.fixture
def short_window():
    """Janelas curtas para painéis sintéticos pequenos."""
    return WindowConfig(estimation_length=60, estimation_min=40, gap_length=10, event_window=(0, 5))


TOY_EVENTS = [
    ["E1", "2020-04-01", "Queda da exchange", "Infra_Neg", "Exogenous", "250000000", "", "hack"],
    ["E2", "2020-04-20", "Proibição regional", "Reg_Neg", "Return", "", "", ""],
    ["E3", "2020-05-15", "Falha de ponte", "Infra_Neg", "Both", "", "200000", "hack;bridge"],
    ["E4", "2020-06-05", "Processo regulatório", "Reg_Neg", "Exogenous", "", "", "sec"],
    ["E5", "2020-07-01", "Interrupção da rede", "Infra_Neg", "Exogenous", "", "", "outage"],
    ["E6", "2020-08-20", "Nova restrição", "Reg_Neg", "Exogenous", "", "", ""],
    ["E7", "2020-09-10", "Colapso de stablecoin", "Infra_Neg", "Return", "", "", ""],
    ["E8", "2020-10-25", "Multa", "Reg_Neg", "Exogenous", "", "", "sec"],
    ["X1", "2020-11-30", "Evento descartado", "Excluded", "Exogenous", "", "", ""],
]

TOY_CONFIG = """\
# Configuração do conjunto de teste
assets = BTC,ETH
estimation_length = 60
estimation_min = 40
gap_length = 10
window = 0:5
B = 1000
"""


@pytest.fixture
def toy_study(tmp_path):
    """Arquivos de preços, eventos e configuração de um estudo pequeno."""
    prices = tmp_path / "prices.csv"
    events = tmp_path / "events.csv"
    config = tmp_path / "eventkit.cfg"
    write_prices_csv(prices, random_walk_closes(["BTC", "ETH"], 420, seed=7))
    write_events_csv(events, TOY_EVENTS)
    config.write_text(TOY_CONFIG, encoding="utf-8")
    return {"prices": prices, "events": events, "config": config, "root": tmp_path}
