import os
from pathlib import Path
from dotenv import load_dotenv

load_dotenv()

BASE_DIR = Path(__file__).resolve().parent.parent

# Ensure logs directory exists
LOGS_DIR = os.path.join(BASE_DIR, 'logs')
os.makedirs(LOGS_DIR, exist_ok=True)

SECRET_KEY = os.getenv('DJANGO_SECRET_KEY', 'django-insecure-sweeps-7q!v2m#k0x9c$r4t8w1z@p6n3b5h)j')
DEBUG = os.getenv('DJANGO_DEBUG', 'True') == 'True'
ALLOWED_HOSTS = []

INSTALLED_APPS = [
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'rest_framework',
    'sweeps',
]

# No models; the test runner still expects a default alias.
DATABASES = {
    'default': {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }
}

LANGUAGE_CODE = 'en-us'
TIME_ZONE = 'UTC'
USE_I18N = True
USE_TZ = True
DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'

REST_FRAMEWORK = {
    'DEFAULT_RENDERER_CLASSES': [
        'rest_framework.renderers.JSONRenderer',
    ],
    'DEFAULT_PARSER_CLASSES': [
        'rest_framework.parsers.JSONParser',
    ],
    'UNICODE_JSON': False,
    'COMPACT_JSON': False,
    'STRICT_JSON': True,
}

# Overrides of the numerical defaults in sweeps/conf.py
SWEEPS = {
    'OUTPUT_ROOT': os.getenv('SWEEPS_OUTPUT_ROOT', os.path.join(BASE_DIR, 'runs')),
    'SOLVER_TOL': float(os.getenv('SWEEPS_SOLVER_TOL', '1e-8')),
    'SAMPLE_BUDGET': int(os.getenv('SWEEPS_SAMPLE_BUDGET', '1000')),
}

SWEEPS_LOG_LEVEL = os.getenv('SWEEPS_LOG_LEVEL', 'INFO')

# Logging configuration
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '{levelname} {asctime} {module} {message}',
            'style': '{',
        },
    },
    'handlers': {
        'file': {
            'level': SWEEPS_LOG_LEVEL,
            'class': 'logging.FileHandler',
            'filename': os.path.join(LOGS_DIR, 'sweeps.log'),
            'formatter': 'verbose',
        },
        'console': {
            'level': SWEEPS_LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'loggers': {
        'django': {
            'handlers': ['file', 'console'],
            'level': 'INFO',
            'propagate': True,
        },
        'sweeps': {
            'handlers': ['file', 'console'],
            'level': SWEEPS_LOG_LEVEL,
            'propagate': False,
        },
    },
}
