import math

from ..exceptions import InvalidArgumentError
from ..models import PowerInput

# Coeficientes da aproximação racional de Acklam para a inversa da normal
_A = (
    -3.969683028665376e01,
    2.209460984245205e02,
    -2.759285104469687e02,
    1.383577518672690e02,
    -3.066479806614716e01,
    2.506628277459239e00,
)
_B = (
    -5.447609879822406e01,
    1.615858368580409e02,
    -1.556989798598866e02,
    6.680131188771972e01,
    -1.328068155288572e01,
)
_C = (
    -7.784894002430293e-03,
    -3.223964580411365e-01,
    -2.400758277161838e00,
    -2.549732539343734e00,
    4.374664141464968e00,
    2.938163982698783e00,
)
_D = (
    7.784695709041462e-03,
    3.224671290700398e-01,
    2.445134137142996e00,
    3.754408661907416e00,
)
_P_LOW = 0.02425


def _tail(q: float) -> float:
    c, d = _C, _D
    return (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) / (
        (((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1
    )


class PowerService:
    """
    Poder prospectivo e efeito mínimo detectável, aproximação normal.

    Para grupos pequenos a aproximação normal subestima N frente ao t
    não central; os números reproduzem as fórmulas fechadas de dois grupos.
    """

    @classmethod
    def z_quantile(cls, p: float) -> float:
        """
        Inversa da CDF normal padrão.

        Aproximação racional de Acklam seguida de um passo de Halley com
        erfc, o que leva o erro absoluto abaixo de 1e-12 em (0, 1).
        """
        if not 0.0 < p < 1.0:
            raise InvalidArgumentError(f"p deve estar em (0, 1) (recebido {p}).")
        if p == 0.5:
            return 0.0
        # Simetria: calcula sempre na metade inferior
        if p > 0.5:
            return -cls.z_quantile(1.0 - p)

        if p < _P_LOW:
            x = _tail(math.sqrt(-2.0 * math.log(p)))
        else:
            q = p - 0.5
            r = q * q
            a, b = _A, _B
            x = (
                (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5])
                * q
                / (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1)
            )

        error = 0.5 * math.erfc(-x / math.sqrt(2.0)) - p
        u = error * math.sqrt(2.0 * math.pi) * math.exp(x * x / 2.0)
        return x - u / (1.0 + x * u / 2.0)

    @classmethod
    def _z_sum(cls, alpha: float, power: float) -> float:
        PowerInput(alpha=alpha, power=power)
        return cls.z_quantile(1.0 - alpha / 2.0) + cls.z_quantile(power)

    @classmethod
    def required_n_per_group(cls, alpha: float, power: float, d: float) -> int:
        """N por grupo = ceil(2 * ((z_{1-alpha/2} + z_{1-beta}) / d)^2)."""
        if d == 0:
            raise InvalidArgumentError("d = 0 exige N infinito.")
        value = 2.0 * (cls._z_sum(alpha, power) / d) ** 2
        # Evita que ruído de ponto flutuante suba um inteiro exato
        return math.ceil(round(value, 9))

    @classmethod
    def required_n_value(cls, alpha: float, power: float, d: float) -> float:
        """Valor da fórmula antes do arredondamento para cima."""
        if d == 0:
            raise InvalidArgumentError("d = 0 exige N infinito.")
        return 2.0 * (cls._z_sum(alpha, power) / d) ** 2

    @classmethod
    def mde(cls, alpha: float, power: float, sigma_pooled: float, n1: int, n2: int) -> float:
        """(z_{1-alpha/2} + z_{1-beta}) * sigma * sqrt(1/n1 + 1/n2)."""
        PowerInput(alpha=alpha, power=power, sigma_pooled=sigma_pooled, n1=n1, n2=n2)
        return cls._z_sum(alpha, power) * sigma_pooled * math.sqrt(1.0 / n1 + 1.0 / n2)

    @classmethod
    def formula_text(cls, alpha: float, power: float, d=None, sigma_pooled=None, n1=None, n2=None):
        """Fórmulas com os valores substituídos, para a saída do subcomando."""
        za = cls.z_quantile(1.0 - alpha / 2.0)
        zb = cls.z_quantile(power)
        lines = []
        if d is not None:
            value = cls.required_n_value(alpha, power, d)
            lines.append(
                f"N por grupo = 2 * (({za:.4f} + {zb:.4f}) / {d:g})^2 = {value:.2f}"
                f" -> {cls.required_n_per_group(alpha, power, d)}"
            )
        if sigma_pooled is not None and n1 is not None and n2 is not None:
            lines.append(
                f"MDE = ({za:.4f} + {zb:.4f}) * {sigma_pooled:g} * sqrt(1/{n1} + 1/{n2})"
                f" = {cls.mde(alpha, power, sigma_pooled, n1, n2):.4f}"
            )
        return lines
