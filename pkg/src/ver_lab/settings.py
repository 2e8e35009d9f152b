import os
from pathlib import Path

BASE_DIR = Path(__file__).resolve().parent.parent

# secrets
if 'POSTGRES_PASSWORD_FILE' in os.environ:
    with open(os.environ.get('POSTGRES_PASSWORD_FILE'), 'r', encoding='utf-8') as f:
        DB_PASSWORD = f.read()
else:
    DB_PASSWORD = 'please_use_env'
if 'DJANGO_SECRET_FILE' in os.environ:
    with open(os.environ.get('DJANGO_SECRET_FILE'), 'r', encoding='utf-8') as f:
        SECRET_KEY = f.read()
else:
    SECRET_KEY = 'please_use_env'

# debug settings
DEBUG = os.environ.get('DEBUG', 'False') == 'True'

# Application definition

INSTALLED_APPS = [
    'experience',
]

# Database (run ledger). postgres when configured, sqlite otherwise
if 'POSTGRES_HOST' in os.environ:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.postgresql',
            'NAME': os.environ.get('POSTGRES_DB', 'ver-lab'),
            'USER': os.environ.get('POSTGRES_USER', 'postgres'),
            'PASSWORD': DB_PASSWORD,
            'HOST': os.environ.get('POSTGRES_HOST'),
            'PORT': os.environ.get('DB_PORT', '5432'),
        }
    }
else:
    DATABASES = {
        'default': {
            'ENGINE': 'django.db.backends.sqlite3',
            'NAME': os.environ.get('SQLITE_PATH', BASE_DIR / 'db.sqlite3'),
        }
    }

USE_TZ = True

# Logging
VER_LOG_LEVEL = os.environ.get('VER_LOG_LEVEL', 'INFO')
LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'plain': {
            'format': '[%(name)s:%(funcName)s:%(lineno)s] %(levelname)s: %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'plain',
        },
    },
    'loggers': {
        'experience': {
            'handlers': ['console'],
            'level': VER_LOG_LEVEL,
            'propagate': False,
        },
    },
}

# Experiments
VER_OUTPUT_DIR = Path(os.environ.get('VER_OUTPUT_DIR', BASE_DIR.parent / 'results'))
VER_PRESET_DIR = BASE_DIR / 'experience' / 'presets'
VER_WORKERS = int(os.environ.get('VER_WORKERS', os.cpu_count() or 1))
VER_TOLERANCE = float(os.environ.get('VER_TOLERANCE', '1e-9'))
