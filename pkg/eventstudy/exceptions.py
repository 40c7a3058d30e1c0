from django.core.exceptions import ValidationError


class ParseError(ValidationError):
    """Linha malformada em arquivo de entrada."""

    def __init__(self, message: str, line: int):
        self.line = line
        super().__init__(f"Linha {line}: {message}")


class ConflictError(ValidationError):
    """Chave duplicada (ativo/data ou id de evento)."""


class InvalidArgumentError(ValidationError):
    pass


class InsufficientDataError(ValidationError):
    """
    Sinal de descarte do par (evento, ativo).

    Não é fatal: o pipeline registra o motivo e segue. `realized` guarda
    quantos retornos efetivamente existiam na janela.
    """

    def __init__(self, message: str, realized: int = 0):
        self.realized = realized
        super().__init__(message)


class DegenerateRegressorError(ValidationError):
    pass


class InsufficientClustersError(ValidationError):
    pass


class FeasibilityError(ValidationError):
    pass
