import math
import os
import re

from rest_framework import serializers

from .models import Category, Event, RunConfig, Selection, WeightingScheme

MODEL_PATTERN = re.compile(r"^(constant-mean|market-ew|market-proxy:[A-Za-z0-9_.\-]+)$")


def _finite(value, field_name):
    if value is not None and not math.isfinite(value):
        raise serializers.ValidationError(f"{field_name} deve ser um número finito.")
    return value


class PriceRowSerializer(serializers.Serializer):
    """
    Valida uma linha do arquivo de preços.

    Validação SINTÁTICA (formato de data, números) e SEMÂNTICA
    (close positivo, high >= low).
    """

    asset = serializers.CharField(max_length=64)
    date = serializers.DateField(input_formats=["%Y-%m-%d"])
    open = serializers.FloatField(required=False, allow_null=True)
    high = serializers.FloatField(required=False, allow_null=True)
    low = serializers.FloatField(required=False, allow_null=True)
    close = serializers.FloatField()
    volume = serializers.FloatField(required=False, allow_null=True, min_value=0)

    def validate_asset(self, value):
        return value.strip()

    def validate_close(self, value):
        _finite(value, "close")
        if value <= 0:
            raise serializers.ValidationError("close deve ser estritamente positivo.")
        return value

    def validate(self, data):
        for name in ("open", "high", "low", "volume"):
            _finite(data.get(name), name)
        high, low = data.get("high"), data.get("low")
        if high is not None and low is not None and high < low:
            raise serializers.ValidationError({"high": "high não pode ser menor que low."})
        return data


class EventRowSerializer(serializers.Serializer):
    """Valida uma linha do registro de eventos e constrói o `Event`."""

    id = serializers.CharField(max_length=128)
    date = serializers.DateField(input_formats=["%Y-%m-%d"])
    name = serializers.CharField(allow_blank=True, required=False, default="")
    category = serializers.ChoiceField(choices=Category.file_tokens())
    selection = serializers.ChoiceField(choices=[s.label for s in Selection])
    impact_usd = serializers.FloatField(required=False, allow_null=True, min_value=0)
    affected_users = serializers.IntegerField(required=False, allow_null=True, min_value=0)
    tags = serializers.CharField(required=False, allow_blank=True, default="")

    def validate_id(self, value):
        value = value.strip()
        if not value:
            raise serializers.ValidationError("id não pode ser vazio.")
        return value

    def validate_tags(self, value):
        return tuple(t.strip() for t in value.split(";") if t.strip())

    def to_event(self) -> Event:
        data = self.validated_data
        return Event(
            id=data["id"],
            date=data["date"],
            name=data.get("name", ""),
            category=Category.from_token(data["category"]),
            selection=Selection.from_token(data["selection"]),
            impact_usd=data.get("impact_usd"),
            affected_users=data.get("affected_users"),
            tags=data.get("tags", ()),
        )


class WindowField(serializers.Field):
    """Janela de evento no formato `T1:T2` (ou par já convertido)."""

    def to_internal_value(self, data):
        if isinstance(data, (list, tuple)) and len(data) == 2:
            parts = data
        elif isinstance(data, str) and ":" in data:
            parts = data.split(":", 1)
        else:
            raise serializers.ValidationError("Use o formato T1:T2, por exemplo -5:30.")
        try:
            tau1, tau2 = int(parts[0]), int(parts[1])
        except (TypeError, ValueError):
            raise serializers.ValidationError("T1 e T2 devem ser inteiros.")
        if tau1 > tau2:
            raise serializers.ValidationError("T1 deve ser menor ou igual a T2.")
        return (tau1, tau2)

    def to_representation(self, value):
        return f"{value[0]}:{value[1]}"


class CapField(serializers.Field):
    """Nível de winsorização: número positivo ou `none` (sem corte)."""

    def to_internal_value(self, data):
        if data is None or (isinstance(data, str) and data.strip().lower() in ("", "none")):
            return None
        try:
            value = float(data)
        except (TypeError, ValueError):
            raise serializers.ValidationError("cap deve ser um número ou 'none'.")
        if not math.isfinite(value) or value <= 0:
            raise serializers.ValidationError("cap deve ser positivo.")
        return value

    def to_representation(self, value):
        return "none" if value is None else repr(value)


class CategoryField(serializers.Field):
    """Aceita o valor interno (InfraNegative) ou o token do arquivo (Infra_Neg)."""

    def to_internal_value(self, data):
        if isinstance(data, Category):
            return data
        if data in Category.values:
            return Category(data)
        try:
            return Category.from_token(data)
        except ValueError:
            raise serializers.ValidationError(f'"{data}" não é uma categoria válida.')

    def to_representation(self, value):
        return str(value)


class RunConfigSerializer(serializers.Serializer):
    """
    Valida a configuração consolidada (padrões < arquivo < flags).

    O contexto `require_paths` (padrão True) liga a verificação de existência
    dos arquivos de entrada; subcomandos sem dados (power, calibrate) desligam.
    """

    prices = serializers.CharField(allow_blank=True, required=False, default="")
    events = serializers.CharField(allow_blank=True, required=False, default="")
    assets = serializers.ListField(child=serializers.CharField(), min_length=1)
    model = serializers.CharField()
    window = WindowField()
    estimation_length = serializers.IntegerField(min_value=1)
    estimation_min = serializers.IntegerField(min_value=1)
    gap_length = serializers.IntegerField(min_value=0)
    cap = CapField(required=False, allow_null=True, default=None)
    weighting = serializers.ChoiceField(choices=WeightingScheme.values)
    B = serializers.IntegerField(min_value=1000)
    seed = serializers.IntegerField(min_value=0)
    ci_level = serializers.FloatField(min_value=0.5, max_value=0.999)
    out = serializers.CharField()
    group_a = CategoryField()
    group_b = CategoryField()
    workers = serializers.IntegerField(min_value=1)

    def validate_assets(self, value):
        assets = [a.strip() for a in value if a.strip()]
        if not assets:
            raise serializers.ValidationError("Informe ao menos um ativo.")
        return assets

    def validate_model(self, value):
        if not MODEL_PATTERN.match(value):
            raise serializers.ValidationError(
                "model deve ser constant-mean, market-ew ou market-proxy:ATIVO."
            )
        return value

    def validate(self, data):
        if data["estimation_min"] > data["estimation_length"]:
            raise serializers.ValidationError(
                {"estimation_min": "estimation_min não pode exceder estimation_length."}
            )
        if data["window"][0] < -data["gap_length"]:
            raise serializers.ValidationError(
                {"window": "A janela de evento não pode começar antes do gap."}
            )
        if self.context.get("require_paths", True):
            for name in ("prices", "events"):
                path = data.get(name)
                if not path or not os.path.isfile(path):
                    raise serializers.ValidationError({name: f"Arquivo não encontrado: {path!r}."})
        return data

    def to_run_config(self) -> RunConfig:
        data = self.validated_data
        return RunConfig(
            prices=data["prices"],
            events=data["events"],
            assets=tuple(data["assets"]),
            model=data["model"],
            window=data["window"],
            estimation_length=data["estimation_length"],
            estimation_min=data["estimation_min"],
            gap_length=data["gap_length"],
            cap=data.get("cap"),
            weighting=WeightingScheme(data["weighting"]),
            B=data["B"],
            seed=data["seed"],
            ci_level=data["ci_level"],
            out=data["out"],
            group_a=data["group_a"],
            group_b=data["group_b"],
            workers=data["workers"],
        )


def flatten_errors(errors) -> str:
    """Achata `serializer.errors` numa mensagem de uma linha."""
    parts = []
    for name, messages in errors.items():
        if isinstance(messages, dict):
            messages = [f"{k}: {v}" for k, v in messages.items()]
        parts.append(f"{name}: {' '.join(str(m) for m in messages)}")
    return "; ".join(parts)
