"""
Django settings for the edgestream project.

The project hosts the streaming-inference runtime (broker, payload store,
joiners, model pipelines, simulator) as Django apps so that every process
shares one configuration vocabulary and one management-command surface.

For the full list of Django settings and their values, see
https://docs.djangoproject.com/en/5.2/ref/settings/
"""

import os
from pathlib import Path

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent


# SECURITY WARNING: keep the secret key used in production secret!
SECRET_KEY = os.environ.get('DJANGO_SECRET_KEY', 'django-insecure-edgestream-local-development-key')

# Read DEBUG from environment; coerce common truthy values.
DEBUG = os.environ.get('DJANGO_DEBUG', 'True').lower() in ('1', 'true', 'yes')

ALLOWED_HOSTS = [h.strip() for h in os.environ.get('DJANGO_ALLOWED_HOSTS', 'localhost,127.0.0.1').split(',') if h.strip()]


# Application definition

INSTALLED_APPS = [
    'django.contrib.admin',
    'django.contrib.auth',
    'django.contrib.contenttypes',
    'django.contrib.sessions',
    'django.contrib.messages',
    'django.contrib.staticfiles',
    'rest_framework',
    'core',
    'wire',
    'broker',
    'store',
    'join',
    'runtime',
    'metrics',
    'sim',
    'cli',
]

MIDDLEWARE = [
    'django.middleware.security.SecurityMiddleware',
    'django.contrib.sessions.middleware.SessionMiddleware',
    'django.middleware.common.CommonMiddleware',
    'django.middleware.csrf.CsrfViewMiddleware',
    'django.contrib.auth.middleware.AuthenticationMiddleware',
    'django.contrib.messages.middleware.MessageMiddleware',
    'django.middleware.clickjacking.XFrameOptionsMiddleware',
]

ROOT_URLCONF = 'edgestream.urls'

TEMPLATES = [
    {
        'BACKEND': 'django.template.backends.django.DjangoTemplates',
        'DIRS': [],
        'APP_DIRS': True,
        'OPTIONS': {
            'context_processors': [
                'django.template.context_processors.debug',
                'django.template.context_processors.request',
                'django.contrib.auth.context_processors.auth',
                'django.contrib.messages.context_processors.messages',
            ],
        },
    },
]

WSGI_APPLICATION = 'edgestream.wsgi.application'


# Database
# Metric reports of simulation runs are persisted here. Prefer Postgres when
# DATABASE_NAME is provided, otherwise fall back to local sqlite.

DATABASES = {}

if os.environ.get('DATABASE_NAME'):
    DATABASES['default'] = {
        'ENGINE': 'django.db.backends.postgresql',
        'NAME': os.environ.get('DATABASE_NAME'),
        'USER': os.environ.get('DATABASE_USER', ''),
        'PASSWORD': os.environ.get('DATABASE_PASSWORD', ''),
        'HOST': os.environ.get('DATABASE_HOST', '127.0.0.1'),
        'PORT': os.environ.get('DATABASE_PORT', '5432'),
    }
else:
    DATABASES['default'] = {
        'ENGINE': 'django.db.backends.sqlite3',
        'NAME': BASE_DIR / 'db.sqlite3',
    }


LANGUAGE_CODE = 'en-us'

TIME_ZONE = 'UTC'

USE_I18N = True

USE_TZ = True

STATIC_URL = 'static/'

DEFAULT_AUTO_FIELD = 'django.db.models.BigAutoField'


# Django REST Framework Settings
# The report API is read-only and unauthenticated (runs are local artifacts).
REST_FRAMEWORK = {
    'DEFAULT_AUTHENTICATION_CLASSES': (),
    'DEFAULT_PERMISSION_CLASSES': (
        'rest_framework.permissions.AllowAny',
    ),
    'EXCEPTION_HANDLER': 'core.utils.custom_exception_handler',
    'DEFAULT_PAGINATION_CLASS': 'metrics.pagination.ReportPagination',
    'PAGE_SIZE': 50,
    'UNAUTHENTICATED_USER': None,
}


def _env_int(name, default):
    raw = os.environ.get(name)
    return int(raw) if raw not in (None, '') else default


# Runtime settings. Entry points read these through core.conf; the algorithm
# modules take explicit parameters.
EDGESTREAM = {
    'LOG_DIR': os.environ.get('EDGESTREAM_LOG_DIR', str(BASE_DIR / 'logs')),
    'BROKER_RETENTION': _env_int('EDGESTREAM_BROKER_RETENTION', 65536),
    'SHARED_WINDOW': _env_int('EDGESTREAM_SHARED_WINDOW', 16),
    'MAX_PAYLOAD_BYTES': _env_int('EDGESTREAM_MAX_PAYLOAD_BYTES', 64 * 1024 * 1024),
    'STORE_RETENTION_BYTES': _env_int('EDGESTREAM_STORE_RETENTION_BYTES', 1024 * 1024 * 1024),
    'SEGMENT_BYTES': _env_int('EDGESTREAM_SEGMENT_BYTES', 64 * 1024 * 1024),
    'SEGMENT_SPAN_MS': _env_int('EDGESTREAM_SEGMENT_SPAN_MS', 10 * 60 * 1000),
    'FETCH_CACHE_BYTES': _env_int('EDGESTREAM_FETCH_CACHE_BYTES', 256 * 1024 * 1024),
    'P2P_SETUP_MS': _env_int('EDGESTREAM_P2P_SETUP_MS', 5),
}

LOG_LEVEL = os.environ.get('EDGESTREAM_LOG_LEVEL', 'INFO').upper()

LOGGING = {
    'version': 1,
    'disable_existing_loggers': False,
    'formatters': {
        'verbose': {
            'format': '%(asctime)s %(levelname)s %(name)s %(message)s',
        },
    },
    'handlers': {
        'console': {
            'class': 'logging.StreamHandler',
            'formatter': 'verbose',
        },
    },
    'root': {
        'handlers': ['console'],
        'level': LOG_LEVEL,
    },
    'loggers': {
        'django': {
            'handlers': ['console'],
            'level': 'WARNING',
            'propagate': False,
        },
    },
}
