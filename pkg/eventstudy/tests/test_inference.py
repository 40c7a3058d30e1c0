import math

import numpy as np
import pandas as pd
import pytest
from scipy import stats

from eventstudy.exceptions import InsufficientClustersError, InvalidArgumentError
from eventstudy.models import CarResult, CarTable, Category, ModelKind, WeightingScheme
from eventstudy.services import InferenceService

from .factories import make_table, two_group_table

INFRA = Category.INFRA_NEGATIVE
REG = Category.REG_NEGATIVE
OW = WeightingScheme.OBSERVATION_WEIGHTED
EE = WeightingScheme.EVENT_EQUAL_WEIGHTED


class TestEventLevelMeans:
    def test_mean_of_assets(self):
        """Média simples dos ativos de cada evento."""
        table = make_table(
            [("E1", INFRA, "BTC", -0.10), ("E1", INFRA, "ETH", -0.20), ("E2", INFRA, "BTC", 0.05)]
        )
        assert InferenceService.event_level_means(table) == [
            ("E1", pytest.approx(-0.15)),
            ("E2", pytest.approx(0.05)),
        ]


class TestBlockBootstrapMean:
    def test_estimate_is_sample_statistic(self):
        """OW: média de todas as observações; EE: média das médias por evento."""
        table = two_group_table([[0.1, 0.3, 0.5], [0.0]], [[0.0], [0.0]])
        ow = InferenceService.block_bootstrap_mean(table, INFRA, OW, B=1000, seed=1)
        ee = InferenceService.block_bootstrap_mean(table, INFRA, EE, B=1000, seed=1)

        assert ow.estimate == pytest.approx(0.9 / 4)
        assert ee.estimate == pytest.approx((0.3 + 0.0) / 2)
        assert ow.n_events == (2,)
        assert ow.n_obs == (4,)

    def test_constant_cars(self):
        """CARs constantes: erro padrão ~0 e IC degenerado."""
        table = two_group_table([[0.04, 0.04]] * 6, [[0.0]] * 2)
        result = InferenceService.block_bootstrap_mean(table, INFRA, OW, B=1000, seed=3)

        assert result.se == pytest.approx(0.0, abs=1e-12)
        assert result.ci_low == pytest.approx(0.04, abs=1e-12)
        assert result.ci_high == pytest.approx(0.04, abs=1e-12)
        assert result.p_value == pytest.approx(2 / 1000)

    def test_two_events_support(self):
        """Com 2 eventos, cada réplica é e1, e2 ou a média dos dois."""
        table = two_group_table([[-0.1], [0.3]], [[0.0], [0.0]])
        result = InferenceService.block_bootstrap_mean(table, INFRA, EE, B=2000, seed=5)
        support = np.array([-0.1, 0.3, 0.1])
        distance = np.abs(result.distribution[:, None] - support[None, :]).min(axis=1)

        assert distance.max() < 1e-12
        assert result.ci_low <= result.estimate <= result.ci_high

    def test_fewer_than_two_events(self):
        """Um evento só não define bootstrap por cluster."""
        table = two_group_table([[0.1, 0.2]], [[0.0], [0.0]])
        with pytest.raises(InsufficientClustersError, match="InfraNegative"):
            InferenceService.block_bootstrap_mean(table, INFRA, B=1000)

    def test_minimum_replications(self):
        """B abaixo de 1000 é rejeitado."""
        table = two_group_table([[0.1], [0.2]], [[0.0], [0.0]])
        with pytest.raises(InvalidArgumentError, match="B deve ser"):
            InferenceService.block_bootstrap_mean(table, INFRA, B=999)

    def test_deterministic_for_seed_and_workers(self):
        """Mesma semente dá o mesmo resultado, com 1 ou 4 workers."""
        rng = np.random.default_rng(0)
        table = two_group_table(rng.normal(0, 0.1, (9, 3)).tolist(), [[0.0], [0.0]])
        first = InferenceService.block_bootstrap_mean(table, INFRA, B=2000, seed=42, workers=1)
        second = InferenceService.block_bootstrap_mean(table, INFRA, B=2000, seed=42, workers=4)
        other = InferenceService.block_bootstrap_mean(table, INFRA, B=2000, seed=43)

        assert np.array_equal(first.distribution, second.distribution)
        assert first == second
        assert not np.array_equal(first.distribution, other.distribution)

    def test_schemes_agree_with_one_asset_per_event(self):
        """Um ativo por evento: os dois esquemas são idênticos."""
        rng = np.random.default_rng(1)
        table = two_group_table(rng.normal(0, 0.1, (7, 1)).tolist(), [[0.0], [0.0]])
        ow = InferenceService.block_bootstrap_mean(table, INFRA, OW, B=1000, seed=9)
        ee = InferenceService.block_bootstrap_mean(table, INFRA, EE, B=1000, seed=9)

        assert ow.estimate == pytest.approx(ee.estimate, abs=1e-15)
        assert np.allclose(ow.distribution, ee.distribution, atol=1e-15)

    def test_replication_count(self):
        """B fora de múltiplo do bloco gera exatamente B réplicas."""
        table = two_group_table([[0.1], [0.2], [0.4]], [[0.0], [0.0]])
        result = InferenceService.block_bootstrap_mean(table, INFRA, B=1111, seed=0)
        assert result.distribution.shape == (1111,)
        assert result.replications == 1111


class TestBlockBootstrapDiff:
    def test_constant_groups(self):
        """Grupos constantes: Delta exato e erro padrão nulo."""
        table = two_group_table([[-0.05, -0.05]] * 4, [[0.02]] * 5)
        result = InferenceService.block_bootstrap_diff(table, INFRA, REG, B=1000, seed=2)

        assert result.estimate == pytest.approx(-0.07)
        assert result.se == pytest.approx(0.0, abs=1e-12)
        assert result.n_events == (4, 5)
        assert result.n_obs == (8, 5)

    def test_identical_groups_centered_on_zero(self):
        """Grupos iguais: Delta = 0 e p-valor alto."""
        values = [[0.1], [-0.2], [0.05], [0.3], [-0.1]]
        table = two_group_table(values, values)
        result = InferenceService.block_bootstrap_diff(table, INFRA, REG, B=2000, seed=4)

        assert result.estimate == pytest.approx(0.0, abs=1e-15)
        assert result.p_value > 0.5
        assert result.ci_low < 0 < result.ci_high

    def test_missing_group(self):
        """Grupo B com um evento é insuficiente."""
        table = two_group_table([[0.1], [0.2]], [[0.0]])
        with pytest.raises(InsufficientClustersError, match="RegNegative"):
            InferenceService.block_bootstrap_diff(table, INFRA, REG, B=1000)


class TestPermutationTest:
    def test_exact_enumeration_count(self):
        """8 contra 7 eventos: C(15, 8) = 6435 atribuições."""
        rng = np.random.default_rng(3)
        result = InferenceService.permutation_test(rng.normal(size=8), rng.normal(size=7))

        assert result.exact
        assert result.n_assignments == 6435
        assert 0 < result.p_value <= 1

    def test_identical_values(self):
        """Todos os valores iguais: p = 1."""
        result = InferenceService.permutation_test([0.25] * 4, [0.25] * 3)
        assert result.observed_diff == 0.0
        assert result.p_value == 1.0

    def test_one_against_one(self):
        """1 contra 1: duas atribuições, ambas tão extremas quanto a observada."""
        result = InferenceService.permutation_test([0.5], [-0.5])
        assert result.n_assignments == 2
        assert result.p_value == 1.0

    def test_separated_groups(self):
        """Separação total: só a observada e a espelhada são extremas."""
        result = InferenceService.permutation_test([10, 11, 12, 13], [0, 1, 2, 3])
        assert result.n_assignments == 70
        assert result.p_value == pytest.approx(2 / 70)

    def test_shift_and_scale_invariance(self):
        """p-valor não muda com a + b*x (b > 0)."""
        rng = np.random.default_rng(6)
        a, b = rng.normal(size=6), rng.normal(0.5, 1, size=5)
        base = InferenceService.permutation_test(a, b)
        moved = InferenceService.permutation_test(3.0 + 2.0 * a, 3.0 + 2.0 * b)
        assert moved.p_value == pytest.approx(base.p_value)

    def test_monte_carlo_mode(self):
        """Acima de max_exact usa sorteios e p = (k + 1) / (N + 1)."""
        rng = np.random.default_rng(7)
        a, b = rng.normal(1, 1, size=10), rng.normal(0, 1, size=10)
        result = InferenceService.permutation_test(a, b, max_exact=5000, seed=1)
        again = InferenceService.permutation_test(a, b, max_exact=5000, seed=1)

        assert not result.exact
        assert result.n_assignments == 5000
        assert 1 / 5001 <= result.p_value <= 1
        assert result == again

    def test_empty_group(self):
        """Grupo vazio é argumento inválido."""
        with pytest.raises(InvalidArgumentError, match="não vazios"):
            InferenceService.permutation_test([], [0.1])


class TestImTTest:
    def test_identical_groups(self):
        """Mesmos valores nos dois grupos: t = 0 e p = 1."""
        values = [0.1, -0.3, 0.2, 0.05]
        result = InferenceService.im_t_test(values, values)
        assert result.t_stat == 0.0
        assert result.p_value == pytest.approx(1.0)

    def test_clear_separation(self):
        """Grupos bem separados: p muito pequeno."""
        rng = np.random.default_rng(2)
        result = InferenceService.im_t_test(
            [0.0, 0.0, 0.0, 0.0], 1.0 + rng.normal(0, 0.001, size=4)
        )
        assert result.p_value < 1e-6
        assert result.diff < 0

    def test_matches_scipy_welch(self):
        """t, p e graus de liberdade de Welch batem com o scipy."""
        rng = np.random.default_rng(8)
        a, b = rng.normal(0, 1, 7), rng.normal(0.3, 2, 9)
        result = InferenceService.welch_t(a, b)
        reference = stats.ttest_ind(a, b, equal_var=False)

        assert result.t_stat == pytest.approx(reference.statistic)
        assert result.p_value == pytest.approx(reference.pvalue)
        assert result.ci_low < result.diff < result.ci_high

    def test_equals_pooled_t_for_balanced_equal_variance(self):
        """Mesmo tamanho e variância amostral: Welch coincide com o t agrupado."""
        a = np.array([1.0, 2.0, 3.0, 4.0])
        b = np.array([0.0, 1.0, 2.0, 3.0]) + 0.5
        welch = InferenceService.welch_t(a, b)
        pooled = stats.ttest_ind(a, b, equal_var=True)

        assert welch.t_stat == pytest.approx(pooled.statistic)
        assert welch.df == pytest.approx(6.0)

    def test_needs_two_clusters(self):
        """Menos de 2 médias em um grupo é insuficiente."""
        with pytest.raises(InsufficientClustersError):
            InferenceService.im_t_test([0.1], [0.2, 0.3])


class TestKolariPynnonen:
    @pytest.mark.parametrize(
        "t, n, rho, expected",
        [(2.0, 50, 0.0, 2.0), (3.0, 1, 0.7, 3.0), (2.0, 5, 0.75, 1.0)],
    )
    def test_known_values(self, t, n, rho, expected):
        """Casos de conta direta."""
        assert InferenceService.kp_adjust(t, n, rho) == pytest.approx(expected)

    def test_monotone_in_rho_and_n(self):
        """|t_kp| não cresce com rho_bar >= 0 nem com N."""
        for n in (2, 10, 100):
            values = [abs(InferenceService.kp_adjust(2.5, n, rho)) for rho in np.linspace(0, 1, 11)]
            assert all(x >= y for x, y in zip(values, values[1:]))
        for rho in (0.0, 0.1, 0.5):
            values = [abs(InferenceService.kp_adjust(2.5, n, rho)) for n in range(1, 50)]
            assert all(x >= y for x, y in zip(values, values[1:]))

    def test_non_positive_inflation(self):
        """1 + (N - 1) * rho <= 0 é inválido."""
        with pytest.raises(InvalidArgumentError, match="inflação"):
            InferenceService.kp_adjust(2.0, 3, -0.5)

    def test_rho_above_one(self):
        """rho_bar > 1 é inválido."""
        with pytest.raises(InvalidArgumentError):
            InferenceService.kp_adjust(2.0, 3, 1.1)

    def test_rho_bar_from_abnormal_returns(self):
        """ARs perfeitamente correlacionados dão rho_bar = 1."""
        base = pd.Series([0.01, -0.02, 0.03, 0.0, 0.01], index=pd.RangeIndex(5, name="tau"))
        rows = []
        table = make_table([("E1", INFRA, "BTC", 0.0), ("E1", INFRA, "ETH", 0.0)])
        for row, scale in zip(table.rows, (1.0, 2.0)):
            rows.append(
                CarResult(
                    event_id=row.event_id,
                    asset=row.asset,
                    category=row.category,
                    car=float(base.sum() * scale),
                    window=(0, 4),
                    model=ModelKind.CONSTANT_MEAN,
                    sigma_car=0.01,
                    significant=False,
                    n_days=5,
                    abnormal=base * scale,
                )
            )
        table = CarTable(rows=tuple(rows), events=table.events)
        assert InferenceService.estimate_rho_bar(table) == pytest.approx(1.0)

    def test_rho_bar_without_pairs(self):
        """Sem pares de ativos, rho_bar = 0."""
        table = make_table([("E1", INFRA, "BTC", 0.1), ("E2", INFRA, "BTC", 0.2)])
        assert InferenceService.estimate_rho_bar(table) == 0.0

    def test_report_uses_observation_count(self):
        """N do ajuste é o número de CARs ativo-evento."""
        table = make_table(
            [("E1", INFRA, "BTC", 0.1), ("E1", INFRA, "ETH", 0.3), ("E2", INFRA, "BTC", 0.2)]
        )
        report = InferenceService.kp_report(table, INFRA)
        t, _ = InferenceService.naive_pooled_t([0.1, 0.3, 0.2])

        assert report.n == 3
        assert report.t_unadj == pytest.approx(t)
        assert report.t_kp == pytest.approx(t)
        assert math.isclose(report.t_unadj, 0.2 / (0.1 / math.sqrt(3)))
