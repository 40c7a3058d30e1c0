"""
Django settings for the eventkit project.

O projeto não expõe HTTP nem usa banco de dados: o Django fornece a camada de
configuração, o logging e os management commands (CLI) do toolkit.

For the full list of settings and their values, see
https://docs.djangoproject.com/en/5.0/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

SECRET_KEY = os.environ.get("EVENTKIT_SECRET_KEY", "eventkit-batch-only-no-http-surface")

DEBUG = False

ALLOWED_HOSTS = []


# Application definition

INSTALLED_APPS = [
    # Requeridos pelo rest_framework
    "django.contrib.contenttypes",
    "django.contrib.auth",
    # Third-party apps
    "rest_framework",
    # Local apps
    "eventstudy",
]

# Sem persistência: nenhum banco configurado.
DATABASES = {}


# Internationalization

LANGUAGE_CODE = "en-us"

TIME_ZONE = "UTC"

USE_I18N = False

USE_TZ = True


# Logging

LOGGING = {
    "version": 1,
    "disable_existing_loggers": False,
    "formatters": {
        "simple": {
            "format": "{levelname} {name}: {message}",
            "style": "{",
        },
    },
    "handlers": {
        "console": {
            "class": "logging.StreamHandler",
            "formatter": "simple",
        },
    },
    "loggers": {
        "eventstudy": {
            "handlers": ["console"],
            "level": os.environ.get("EVENTKIT_LOG_LEVEL", "INFO"),
            "propagate": False,
        },
    },
}


# Parâmetros padrão do estudo de eventos.
# Precedência na execução: flags > arquivo de configuração > estes valores.

EVENTKIT = {
    "assets": ["BTC", "ETH", "SOL", "ADA"],
    "model": "constant-mean",
    "estimation_length": 250,
    "estimation_min": 120,
    "gap_length": 30,
    "window": (-5, 30),
    "cap": None,
    "weighting": "ObservationWeighted",
    "B": 5000,
    "seed": 20250101,
    "ci_level": 0.95,
    "out": "out",
    "group_a": "InfraNegative",
    "group_b": "RegNegative",
    "overlap_horizon": 30,
    "selection_threshold": 0.05,
    "impact_threshold_usd": 1e8,
    "users_threshold": 1e5,
    "placebo_events": 200,
    "max_exact": 100_000,
    "workers": 1,
    "btc_asset": "BTC",
    "pre_event_window": (-30, -1),
    "sweep_windows": [(0, 1), (0, 3), (0, 5), (-5, 30)],
    "sweep_caps": [0.30, 0.50, 0.75, None],
}
