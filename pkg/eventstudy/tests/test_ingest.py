import numpy as np
import pandas as pd
import pytest

from eventstudy.exceptions import ConflictError, InvalidArgumentError, ParseError
from eventstudy.models import ReturnPanel
from eventstudy.services import IngestService

from .factories import random_returns, random_walk_closes, write_prices_csv


def write(path, text):
    path.write_text(text, encoding="utf-8")
    return path


class TestLoadPricePanel:
    def test_loads_sorted_panel(self, tmp_path):
        """Painel é indexado por data e ativos em ordem alfabética."""
        path = write(
            tmp_path / "p.csv",
            "asset,date,close\n"
            "ETH,2021-01-02,200\n"
            "BTC,2021-01-01,100\n"
            "BTC,2021-01-02,110\n"
            "ETH,2021-01-01,190\n",
        )
        panel = IngestService.load_price_panel(path)

        assert panel.assets == ["BTC", "ETH"]
        assert list(panel.dates.strftime("%Y-%m-%d")) == ["2021-01-01", "2021-01-02"]
        assert panel.close.at[pd.Timestamp("2021-01-02"), "BTC"] == 110.0
        assert panel.coverage["ETH"][0].isoformat() == "2021-01-01"

    def test_missing_price_is_nan(self, tmp_path):
        """Dia sem preço vira NaN, nunca zero."""
        path = write(
            tmp_path / "p.csv",
            "asset,date,close\nBTC,2021-01-01,100\nBTC,2021-01-02,101\nETH,2021-01-02,5\n",
        )
        panel = IngestService.load_price_panel(path)
        assert np.isnan(panel.close.at[pd.Timestamp("2021-01-01"), "ETH"])

    def test_duplicate_pair_raises_conflict(self, tmp_path):
        """Par (ativo, data) repetido é conflito."""
        path = write(
            tmp_path / "p.csv",
            "asset,date,close\nBTC,2021-01-01,100\nBTC,2021-01-01,101\n",
        )
        with pytest.raises(ConflictError, match="duplicado"):
            IngestService.load_price_panel(path)

    def test_non_positive_close_reports_line(self, tmp_path):
        """Preço não positivo é erro de parse com o número da linha."""
        path = write(
            tmp_path / "p.csv",
            "asset,date,close\nBTC,2021-01-01,100\nBTC,2021-01-02,0\n",
        )
        with pytest.raises(ParseError, match="Linha 3"):
            IngestService.load_price_panel(path)

    def test_malformed_date_reports_line(self, tmp_path):
        """Data fora do formato ISO é rejeitada."""
        path = write(tmp_path / "p.csv", "asset,date,close\nBTC,01/02/2021,100\n")
        with pytest.raises(ParseError, match="Linha 2"):
            IngestService.load_price_panel(path)

    def test_missing_required_column(self, tmp_path):
        """Cabeçalho sem `close` é rejeitado."""
        path = write(tmp_path / "p.csv", "asset,date,open\nBTC,2021-01-01,100\n")
        with pytest.raises(ParseError, match="obrigatórias"):
            IngestService.load_price_panel(path)

    def test_wrong_column_count(self, tmp_path):
        """Linha com colunas a mais é erro de parse."""
        path = write(tmp_path / "p.csv", "asset,date,close\nBTC,2021-01-01,100,7\n")
        with pytest.raises(ParseError, match="colunas"):
            IngestService.load_price_panel(path)


class TestComputeReturns:
    def test_simple_returns(self, tmp_path):
        """Retorno simples entre dias adjacentes; primeiro dia sem retorno."""
        path = write(
            tmp_path / "p.csv",
            "asset,date,close\nBTC,2021-01-01,100\nBTC,2021-01-02,110\nBTC,2021-01-03,99\n",
        )
        returns = IngestService.compute_returns(IngestService.load_price_panel(path))
        series = returns.returns["BTC"]

        assert np.isnan(series.iloc[0])
        assert series.iloc[1] == pytest.approx(0.10)
        assert series.iloc[2] == pytest.approx(-0.10)

    def test_gap_is_not_bridged(self, tmp_path):
        """Dia ausente não gera retorno atravessando a lacuna."""
        path = write(
            tmp_path / "p.csv",
            "asset,date,close\n"
            "BTC,2021-01-01,100\nBTC,2021-01-02,101\nBTC,2021-01-03,102\nBTC,2021-01-04,103\n"
            "ETH,2021-01-01,10\nETH,2021-01-03,12\nETH,2021-01-04,15\n",
        )
        returns = IngestService.compute_returns(IngestService.load_price_panel(path))
        eth = returns.returns["ETH"]

        assert np.isnan(eth.loc["2021-01-02"])
        assert np.isnan(eth.loc["2021-01-03"])
        assert eth.loc["2021-01-04"] == pytest.approx(0.25)

    def test_gap_in_calendar_of_all_assets(self, tmp_path):
        """Dia ausente para todos os ativos também bloqueia o retorno seguinte."""
        path = write(
            tmp_path / "p.csv",
            "asset,date,close\nBTC,2021-01-01,100\nBTC,2021-01-03,120\nBTC,2021-01-04,132\n",
        )
        returns = IngestService.compute_returns(IngestService.load_price_panel(path))
        series = returns.returns["BTC"]

        assert len(series) == 3
        assert np.isnan(series.loc["2021-01-03"])
        assert series.loc["2021-01-04"] == pytest.approx(0.10)

    @pytest.mark.parametrize("seed", [1, 2, 3])
    def test_matches_pairwise_recomputation(self, tmp_path, seed):
        """Em painéis aleatórios com lacunas, cada retorno confere com o par de preços adjacentes."""
        rng = np.random.default_rng(seed)
        closes = random_walk_closes(["BTC", "ETH", "SOL"], 120, seed=seed)
        missing_days = rng.choice(120, size=6, replace=False)
        kept = {}
        for asset, series in closes.items():
            mask = rng.random(len(series)) > 0.1
            mask[missing_days] = False
            kept[asset] = series[mask]
        path = tmp_path / "p.csv"
        write_prices_csv(path, kept)
        returns = IngestService.compute_returns(IngestService.load_price_panel(path)).returns

        one_day = pd.Timedelta(days=1)
        for asset, series in kept.items():
            prices = series.to_dict()
            for day in returns.index:
                value = returns.at[day, asset]
                if day in prices and day - one_day in prices:
                    assert value == pytest.approx(prices[day] / prices[day - one_day] - 1.0, rel=1e-12)
                else:
                    assert np.isnan(value)


class TestWinsorize:
    def panel(self):
        frame = pd.DataFrame(
            {"BTC": [0.8, -0.9, 0.1, np.nan]},
            index=pd.date_range("2021-01-01", periods=4, name="date"),
        )
        return ReturnPanel(returns=frame)

    def test_symmetric_cap(self):
        """Valores acima de |cap| são truncados nos dois lados."""
        capped = IngestService.winsorize(self.panel(), 0.5)
        values = capped.returns["BTC"].tolist()

        assert values[:3] == [0.5, -0.5, 0.1]
        assert np.isnan(values[3])

    def test_none_is_identity(self):
        """cap=None devolve o próprio painel."""
        panel = self.panel()
        assert IngestService.winsorize(panel, None) is panel

    @pytest.mark.parametrize("cap", [0, -0.1])
    def test_invalid_cap(self, cap):
        """cap deve ser positivo."""
        with pytest.raises(InvalidArgumentError, match="positivo"):
            IngestService.winsorize(self.panel(), cap)

    def test_capping_is_idempotent(self):
        """Aplicar o mesmo cap duas vezes não muda o resultado."""
        once = IngestService.winsorize(self.panel(), 0.3)
        twice = IngestService.winsorize(once, 0.3)
        pd.testing.assert_frame_equal(once.returns, twice.returns)

    @pytest.mark.parametrize("seed", [5, 6, 7])
    def test_tighter_cap_never_larger(self, seed):
        """Para c1 >= c2: |w(x, c2)| <= |w(x, c1)| <= |x|, sem alterar o painel original."""
        rng = np.random.default_rng(seed)
        panel = random_returns(["BTC", "ETH"], 200, seed=seed, sd=0.4)
        original = panel.returns.copy()
        raw = panel.returns.abs().to_numpy()
        for _ in range(10):
            c2, c1 = np.sort(rng.uniform(0.01, 1.0, size=2))
            loose = IngestService.winsorize(panel, float(c1)).returns.abs().to_numpy()
            tight = IngestService.winsorize(panel, float(c2)).returns.abs().to_numpy()

            assert (tight <= loose).all()
            assert (loose <= raw).all()
        pd.testing.assert_frame_equal(panel.returns, original)


class TestDumpPricePanel:
    def test_reload_reproduces_panel(self, tmp_path):
        """Painel gravado e relido é idêntico, inclusive colunas opcionais."""
        source = write(
            tmp_path / "p.csv",
            "asset,date,open,close,volume\n"
            "BTC,2021-01-01,99.5,100.123456789,1000\n"
            "BTC,2021-01-02,,101.1,\n"
            "ETH,2021-01-02,4.2,4.25,10\n",
        )
        panel = IngestService.load_price_panel(source)
        target = tmp_path / "out" / "p.csv"
        IngestService.dump_price_panel(panel, target)
        again = IngestService.load_price_panel(target)

        pd.testing.assert_frame_equal(panel.close, again.close)
        pd.testing.assert_frame_equal(panel.open, again.open)
        pd.testing.assert_frame_equal(panel.volume, again.volume)
