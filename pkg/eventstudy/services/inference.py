import itertools
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from typing import List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd
from scipy import stats

from ..exceptions import InsufficientClustersError, InvalidArgumentError
from ..models import (
    BootstrapResult,
    CarTable,
    Category,
    KPReport,
    PermResult,
    TTestResult,
    WeightingScheme,
)

logger = logging.getLogger(__name__)

MIN_REPLICATIONS = 1000
# Replicações por subfluxo do gerador; fixo para que o resultado não
# dependa do número de workers.
CHUNK_SIZE = 250
PERMUTATION_CHUNK = 10_000
TIE_TOLERANCE = 1e-12

# Rótulos de subfluxo (spawn_key) por procedimento
STREAM_BOOTSTRAP = 1
STREAM_PERMUTATION = 2


def generator(seed: int, *key: int) -> np.random.Generator:
    """Gerador Philox (contador) para o subfluxo `key` derivado da semente."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=key)))


class EventClusters:
    """Somas, contagens e médias por evento de um grupo (ordem da CarTable)."""

    def __init__(self, table: CarTable, category: Optional[Category]):
        grouping = table.for_category(category).grouping
        self.ids = list(grouping)
        self.counts = np.array([len(rows) for rows in grouping.values()], dtype=float)
        self.sums = np.array([math.fsum(r.car for r in rows) for rows in grouping.values()])
        self.means = self.sums / self.counts if len(self.ids) else np.array([])

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_obs(self) -> int:
        return int(self.counts.sum())

    def statistic(self, idx: np.ndarray, scheme: WeightingScheme) -> np.ndarray:
        """Estatística por linha de `idx` (matriz replicações x eventos sorteados)."""
        if scheme == WeightingScheme.EVENT_EQUAL_WEIGHTED:
            return self.means[idx].mean(axis=-1)
        return self.sums[idx].sum(axis=-1) / self.counts[idx].sum(axis=-1)

    def estimate(self, scheme: WeightingScheme) -> float:
        return float(self.statistic(np.arange(len(self)), scheme))


class InferenceService:
    """
    Testes com correção para clusters de eventos.

    Cada evento é um cluster: os ativos de um mesmo evento andam juntos no
    bootstrap e a unidade dos testes t de Ibragimov-Müller é a média do evento.
    """

    @classmethod
    def event_level_means(
        cls, table: CarTable, category: Optional[Category] = None
    ) -> List[Tuple[str, float]]:
        """Média simples dos CARs dos ativos de cada evento, na ordem da tabela."""
        clusters = EventClusters(table, category)
        return [(eid, float(m)) for eid, m in zip(clusters.ids, clusters.means)]

    # ------------------------------------------------------------------
    # Bootstrap por blocos de evento
    # ------------------------------------------------------------------

    @staticmethod
    def _check_replications(B: int, ci_level: float) -> None:
        if B < MIN_REPLICATIONS:
            raise InvalidArgumentError(f"B deve ser >= {MIN_REPLICATIONS} (recebido {B}).")
        if not 0 < ci_level < 1:
            raise InvalidArgumentError("ci_level deve estar em (0, 1).")

    @staticmethod
    def _require_clusters(clusters: EventClusters, category) -> None:
        if len(clusters) < 2:
            label = category.value if category is not None else "todas"
            raise InsufficientClustersError(
                f"Categoria {label}: {len(clusters)} evento(s); o bootstrap exige ao menos 2."
            )

    @classmethod
    def _replicate(cls, B: int, workers: int, draw_chunk) -> np.ndarray:
        """Executa `draw_chunk(chunk_index, size)` e concatena na ordem dos chunks."""
        chunks = [(i, min(CHUNK_SIZE, B - start)) for i, start in enumerate(range(0, B, CHUNK_SIZE))]
        if workers > 1 and len(chunks) > 1:
            with ThreadPoolExecutor(max_workers=workers) as executor:
                parts = list(executor.map(lambda c: draw_chunk(*c), chunks))
        else:
            parts = [draw_chunk(*c) for c in chunks]
        return np.concatenate(parts)

    @staticmethod
    def _summarize(
        estimate: float,
        distribution: np.ndarray,
        scheme: WeightingScheme,
        B: int,
        seed: int,
        ci_level: float,
        n_events: Tuple[int, ...],
        n_obs: Tuple[int, ...],
    ) -> BootstrapResult:
        alpha = 1.0 - ci_level
        ci_low, ci_high = np.quantile(distribution, [alpha / 2, 1 - alpha / 2], method="linear")
        frac_le = float(np.mean(distribution <= 0.0))
        frac_ge = float(np.mean(distribution >= 0.0))
        p_value = min(1.0, max(2.0 * min(frac_le, frac_ge), 2.0 / B))
        return BootstrapResult(
            estimate=float(estimate),
            se=float(np.std(distribution, ddof=1)),
            ci_low=float(ci_low),
            ci_high=float(ci_high),
            p_value=p_value,
            replications=B,
            scheme=scheme,
            seed=seed,
            ci_level=ci_level,
            n_events=n_events,
            n_obs=n_obs,
            distribution=distribution,
        )

    @classmethod
    def block_bootstrap_mean(
        cls,
        table: CarTable,
        category: Optional[Category],
        scheme: WeightingScheme = WeightingScheme.OBSERVATION_WEIGHTED,
        B: int = 5000,
        seed: int = 0,
        ci_level: float = 0.95,
        workers: int = 1,
    ) -> BootstrapResult:
        """
        Bootstrap que reamostra eventos inteiros, com reposição.

        `estimate` é a estatística da amostra original; o p-valor é o
        bicaudal por inversão percentil contra 0, com piso 2/B.

        Raises:
            InsufficientClustersError: menos de 2 eventos na categoria
            InvalidArgumentError: B < 1000 ou ci_level fora de (0, 1)
        """
        cls._check_replications(B, ci_level)
        clusters = EventClusters(table, category)
        cls._require_clusters(clusters, category)
        n = len(clusters)

        def draw_chunk(index: int, size: int) -> np.ndarray:
            rng = generator(seed, STREAM_BOOTSTRAP, index)
            return clusters.statistic(rng.integers(0, n, size=(size, n)), scheme)

        distribution = cls._replicate(B, workers, draw_chunk)
        return cls._summarize(
            clusters.estimate(scheme),
            distribution,
            WeightingScheme(scheme),
            B,
            seed,
            ci_level,
            (n,),
            (clusters.n_obs,),
        )

    @classmethod
    def block_bootstrap_diff(
        cls,
        table: CarTable,
        category_a: Category,
        category_b: Category,
        scheme: WeightingScheme = WeightingScheme.OBSERVATION_WEIGHTED,
        B: int = 5000,
        seed: int = 0,
        ci_level: float = 0.95,
        workers: int = 1,
    ) -> BootstrapResult:
        """Delta = estatística(A) - estatística(B), reamostrando cada grupo à parte."""
        cls._check_replications(B, ci_level)
        group_a = EventClusters(table, category_a)
        group_b = EventClusters(table, category_b)
        cls._require_clusters(group_a, category_a)
        cls._require_clusters(group_b, category_b)
        n_a, n_b = len(group_a), len(group_b)

        def draw_chunk(index: int, size: int) -> np.ndarray:
            rng_a = generator(seed, STREAM_BOOTSTRAP, index, 0)
            rng_b = generator(seed, STREAM_BOOTSTRAP, index, 1)
            stat_a = group_a.statistic(rng_a.integers(0, n_a, size=(size, n_a)), scheme)
            stat_b = group_b.statistic(rng_b.integers(0, n_b, size=(size, n_b)), scheme)
            return stat_a - stat_b

        distribution = cls._replicate(B, workers, draw_chunk)
        estimate = group_a.estimate(scheme) - group_b.estimate(scheme)
        return cls._summarize(
            estimate,
            distribution,
            WeightingScheme(scheme),
            B,
            seed,
            ci_level,
            (n_a, n_b),
            (group_a.n_obs, group_b.n_obs),
        )

    # ------------------------------------------------------------------
    # Permutação
    # ------------------------------------------------------------------

    @classmethod
    def permutation_test(
        cls,
        means_a: Sequence[float],
        means_b: Sequence[float],
        max_exact: int = 100_000,
        seed: int = 0,
    ) -> PermResult:
        """
        Teste de permutação bicaudal para mean(A) - mean(B).

        Enumera todas as C(nA + nB, nA) atribuições quando cabem em
        `max_exact`; caso contrário sorteia `max_exact` atribuições e usa
        p = (contagem + 1) / (sorteios + 1).
        """
        a = np.asarray(means_a, dtype=float)
        b = np.asarray(means_b, dtype=float)
        if a.size == 0 or b.size == 0:
            raise InvalidArgumentError("Permutação exige os dois grupos não vazios.")
        if max_exact < 1:
            raise InvalidArgumentError("max_exact deve ser >= 1.")

        pooled = np.concatenate([a, b])
        n, n_a = pooled.size, a.size
        n_b = n - n_a
        total = math.fsum(pooled)

        def diffs(idx: np.ndarray) -> np.ndarray:
            sum_a = pooled[idx].sum(axis=1)
            return sum_a / n_a - (total - sum_a) / n_b

        observed = float(diffs(np.arange(n_a)[None, :])[0])
        threshold = abs(observed) - TIE_TOLERANCE
        n_total = math.comb(n, n_a)

        if n_total <= max_exact:
            count = 0
            combos = itertools.combinations(range(n), n_a)
            while True:
                block = list(itertools.islice(combos, PERMUTATION_CHUNK))
                if not block:
                    break
                idx = np.array(block, dtype=np.intp).reshape(len(block), n_a)
                count += int(np.count_nonzero(np.abs(diffs(idx)) >= threshold))
            p_value = count / n_total
            logger.info(f"Permutação exata: {n_total} atribuições, p={p_value:.4f}")
            return PermResult(observed, n_total, min(1.0, p_value), True)

        count = 0
        rng = generator(seed, STREAM_PERMUTATION)
        for start in range(0, max_exact, PERMUTATION_CHUNK):
            size = min(PERMUTATION_CHUNK, max_exact - start)
            order = rng.permuted(np.tile(np.arange(n), (size, 1)), axis=1)
            count += int(np.count_nonzero(np.abs(diffs(order[:, :n_a])) >= threshold))
        p_value = (count + 1) / (max_exact + 1)
        logger.info(f"Permutação Monte Carlo: {max_exact} sorteios de {n_total}, p={p_value:.4f}")
        return PermResult(observed, max_exact, p_value, False)

    # ------------------------------------------------------------------
    # Testes t
    # ------------------------------------------------------------------

    @staticmethod
    def _welch(a: np.ndarray, b: np.ndarray, ci_level: float) -> TTestResult:
        n_a, n_b = a.size, b.size
        if n_a < 2 or n_b < 2:
            raise InsufficientClustersError(
                f"Teste t exige ao menos 2 valores por grupo (recebido {n_a} e {n_b})."
            )
        diff = float(a.mean() - b.mean())
        va, vb = a.var(ddof=1) / n_a, b.var(ddof=1) / n_b
        se = math.sqrt(va + vb)

        if se == 0.0:
            df = float(n_a + n_b - 2)
            t_stat = 0.0 if diff == 0.0 else math.copysign(math.inf, diff)
        else:
            df = (va + vb) ** 2 / (va**2 / (n_a - 1) + vb**2 / (n_b - 1))
            t_stat = diff / se
        p_value = float(min(1.0, 2.0 * stats.t.sf(abs(t_stat), df)))
        half = float(stats.t.ppf(0.5 + ci_level / 2, df)) * se
        return TTestResult(
            diff=diff,
            t_stat=float(t_stat),
            df=float(df),
            p_value=p_value,
            ci_low=diff - half,
            ci_high=diff + half,
            n_a=n_a,
            n_b=n_b,
        )

    @classmethod
    def im_t_test(cls, means_a: Sequence[float], means_b: Sequence[float]) -> TTestResult:
        """Ibragimov-Müller: Welch sobre médias por evento (cada evento, um cluster). IC 95%."""
        return cls._welch(np.asarray(means_a, float), np.asarray(means_b, float), 0.95)

    @classmethod
    def welch_t(
        cls, group_a: Sequence[float], group_b: Sequence[float], ci_level: float = 0.95
    ) -> TTestResult:
        return cls._welch(np.asarray(group_a, float), np.asarray(group_b, float), ci_level)

    @classmethod
    def naive_pooled_t(cls, values: Sequence[float]) -> Tuple[float, float]:
        """t de uma amostra contra 0 tratando cada CAR ativo-evento como independente."""
        x = np.asarray(values, dtype=float)
        if x.size < 2:
            raise InsufficientClustersError("Teste t ingênuo exige ao menos 2 observações.")
        sd = x.std(ddof=1)
        if sd == 0.0:
            t_stat = 0.0 if x.mean() == 0.0 else math.copysign(math.inf, x.mean())
        else:
            t_stat = float(x.mean() / (sd / math.sqrt(x.size)))
        p_value = float(min(1.0, 2.0 * stats.t.sf(abs(t_stat), x.size - 1)))
        return t_stat, p_value

    # ------------------------------------------------------------------
    # Kolari-Pynnönen
    # ------------------------------------------------------------------

    @classmethod
    def kp_adjust(cls, t_unadj: float, n: int, rho_bar: float) -> float:
        """t / sqrt(1 + (n - 1) * rho_bar)."""
        if n < 1:
            raise InvalidArgumentError("n deve ser >= 1.")
        if rho_bar > 1:
            raise InvalidArgumentError("rho_bar não pode exceder 1.")
        inflation = 1.0 + (n - 1) * rho_bar
        if inflation <= 0:
            raise InvalidArgumentError(
                f"Termo de inflação de variância não positivo: 1 + ({n} - 1) * {rho_bar}."
            )
        return t_unadj / math.sqrt(inflation)

    @classmethod
    def estimate_rho_bar(cls, table: CarTable, category: Optional[Category] = None) -> float:
        """
        Correlação média entre ativos dos ARs da janela de evento.

        Para cada evento com 2+ ativos, correlação de Pearson par a par nos
        dias comuns (mínimo 3); a média é tomada sobre todos os pares de
        todos os eventos. Sem pares válidos, retorna 0.
        """
        correlations: List[float] = []
        for rows in table.for_category(category).grouping.values():
            series = {r.asset: r.abnormal for r in rows if r.abnormal is not None}
            if len(series) < 2:
                continue
            matrix = pd.DataFrame(series).corr(min_periods=3).to_numpy()
            upper = matrix[np.triu_indices_from(matrix, k=1)]
            correlations.extend(float(v) for v in upper if np.isfinite(v))
        if not correlations:
            logger.warning("rho_bar sem pares de ativos válidos; usando 0")
            return 0.0
        return float(np.mean(correlations))

    @classmethod
    def kp_report(cls, table: CarTable, category: Optional[Category]) -> KPReport:
        """t ingênuo sobre os CARs ativo-evento do grupo, ajustado por KP (N = observações)."""
        group = table.for_category(category)
        t_unadj, _ = cls.naive_pooled_t(group.cars())
        n = len(group)
        rho_bar = cls.estimate_rho_bar(group)
        return KPReport(
            t_unadj=t_unadj,
            n=n,
            rho_bar=rho_bar,
            t_kp=cls.kp_adjust(t_unadj, n, rho_bar),
        )
