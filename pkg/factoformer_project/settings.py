"""
Runtime settings for the FactoFormer toolkit.

Values are read from the environment (or a ``.env`` file at the repository
root). Architecture and optimizer defaults below mirror the published
network and training tables and are what run configs fall back to.
"""

import logging.config
from pathlib import Path

import environ

# Build paths inside the project like this: BASE_DIR / 'subdir'.
BASE_DIR = Path(__file__).resolve().parent.parent

# Environment variables
env = environ.Env(
    DEBUG=(bool, False)
)

# Take environment variables from .env file
environ.Env.read_env(BASE_DIR / '.env')

DEBUG = env('DEBUG')

DATA_ROOT = Path(env('FACTOFORMER_DATA_ROOT', default=str(BASE_DIR / 'data')))
DEFAULT_THREADS = env.int('FACTOFORMER_THREADS', default=1)

# Output layout under --out
OUTPUT_SUBDIRS = ('checkpoints', 'logs', 'reports', 'maps')

# Network configurations (spectral / spatial transformers)
SPECTRAL_ENCODER = {'layers': 5, 'heads': 4, 'emb': 32, 'mlp_hidden': 4}
SPATIAL_ENCODER = {'layers': 5, 'heads': 4, 'emb': 64, 'mlp_hidden': 8}
# Masked spatial-spectral comparator uses the spatial widths over 1x1xk patches
JOINT_ENCODER = {'layers': 5, 'heads': 4, 'emb': 64, 'mlp_hidden': 8}
JOINT_GROUP = 10

DEFAULT_PATCH_SIZE = 7
DEFAULT_BAND_GROUP = 1
FUSION_HIDDEN = 64

# Optimizer contract shared by pre-training and fine-tuning
ADAM_BETAS = (0.9, 0.999)
ADAM_EPS = 1e-8
LR_STEP_SIZE = 20
LR_GAMMA = 0.9

PRETRAIN_DEFAULTS = {
    'epochs': 200,
    'batch_size': 32,
    'lr': 5e-4,
    'weight_decay': 0.0,
    'ratio': 0.7,
    'decoder_sees_sequence': False,
}

FINETUNE_DEFAULTS = {
    'indian_pines': {'lr': 3e-4, 'epochs': 80},
    'pavia_university': {'lr': 1e-2, 'epochs': 80},
    'houston2013': {'lr': 2e-3, 'epochs': 40},
}
FINETUNE_FALLBACK = {'lr': 3e-4, 'epochs': 80, 'batch_size': 32, 'weight_decay': 0.0}

# Observability
OTEL_ENABLED = env.bool('OTEL_ENABLED', default=False)
OTEL_SERVICE_NAME = env('OTEL_SERVICE_NAME', default='factoformer')
OTEL_SERVICE_VERSION = env('OTEL_SERVICE_VERSION', default='1.0.0')
OTEL_EXPORTER_TYPE = env('OTEL_EXPORTER_TYPE', default='console')  # console, none

# Logging configuration with rolling logs
LOG_LEVEL = env('LOG_LEVEL', default='INFO')
LOG_FORMAT = env('LOG_FORMAT', default='verbose')  # 'verbose' or 'simple'
LOG_MAX_SIZE = env('LOG_MAX_SIZE', default='10MB')
LOG_BACKUP_COUNT = env.int('LOG_BACKUP_COUNT', default=5)


def parse_log_size(size_str):
    """Parse log size string like '10MB' to bytes"""
    size_str = size_str.upper()
    if size_str.endswith('KB'):
        return int(size_str[:-2]) * 1024
    elif size_str.endswith('MB'):
        return int(size_str[:-2]) * 1024 * 1024
    elif size_str.endswith('GB'):
        return int(size_str[:-2]) * 1024 * 1024 * 1024
    else:
        return int(size_str)


formatters_config = {
    'verbose': {
        'format': '{levelname} {asctime} [{run_id}] {name} {module}:{funcName}:{lineno} {message}',
        'style': '{',
    },
    'simple': {
        'format': '{levelname} {asctime} [{run_id}] {message}',
        'style': '{',
    },
}


def build_logging_config(log_dir=None):
    """
    Build the dictConfig for a run.

    File handlers are only attached when a log directory is known
    (``<out>/logs`` for CLI runs); library use logs to the console only.
    """
    console_formatter = 'simple' if DEBUG or LOG_FORMAT == 'simple' else 'verbose'
    handlers_config = {
        'console': {
            'level': 'DEBUG' if DEBUG else LOG_LEVEL,
            'class': 'logging.StreamHandler',
            'formatter': console_formatter,
            'filters': ['run_id'],
        },
    }
    root_handlers = ['console']
    training_handlers = ['console']

    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        max_log_size = parse_log_size(LOG_MAX_SIZE)
        handlers_config['run_file'] = {
            'level': LOG_LEVEL,
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': str(log_dir / 'run.log'),
            'maxBytes': max_log_size,
            'backupCount': LOG_BACKUP_COUNT,
            'formatter': 'verbose',
            'filters': ['run_id'],
        }
        handlers_config['training_file'] = {
            'level': LOG_LEVEL,
            'class': 'logging.handlers.RotatingFileHandler',
            'filename': str(log_dir / 'training.log'),
            'maxBytes': max_log_size,
            'backupCount': LOG_BACKUP_COUNT,
            'formatter': 'verbose',
            'filters': ['run_id'],
        }
        root_handlers.append('run_file')
        training_handlers.append('training_file')

    return {
        'version': 1,
        'disable_existing_loggers': False,
        'filters': {
            'run_id': {'()': 'factoformer_project.runlog.RunIdFilter'},
        },
        'formatters': formatters_config,
        'handlers': handlers_config,
        'root': {
            'handlers': root_handlers,
            'level': LOG_LEVEL,
        },
        'loggers': {
            'training': {
                'handlers': training_handlers,
                'level': LOG_LEVEL,
                'propagate': False,
            },
        },
    }


def configure_logging(log_dir=None):
    """Apply the logging configuration for this process."""
    logging.config.dictConfig(build_logging_config(log_dir))
