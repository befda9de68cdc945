import logging


MANIFEST_FILE = "config.yaml"
LOG_LEVEL = logging.INFO
SCHEMA_VERSION = 1

EXIT_OK = 0
EXIT_CONFIG_ERROR = 2
EXIT_NUMERICAL_FAILURE = 3
EXIT_PREREQUISITE_MISSING = 4
