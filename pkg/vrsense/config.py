# vrsense/config.py

import os
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()


def parse_bool(value) -> bool:
    if isinstance(value, str):
        return value.strip().lower() in ("1", "true", "yes")
    return bool(value)


def _env_bool(name, default):
    return parse_bool(os.getenv(name, default))


class Config:
    # General settings
    DEBUG = False
    TESTING = False
    LOG_LEVEL = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE = os.getenv("LOG_FILE", "vrsense.log")

    # Capture
    VRSENSE_LOCAL_PREFIXES = os.getenv("VRSENSE_LOCAL_PREFIXES", "10.0.0.0/8")

    # Stage filters
    VRSENSE_PRIMARY_PORTS = os.getenv("VRSENSE_PRIMARY_PORTS", "443")
    VRSENSE_UDP_PORTS = os.getenv("VRSENSE_UDP_PORTS", "5055,5056,5058")

    # Flow table
    VRSENSE_MAX_FLOWS = int(os.getenv("VRSENSE_MAX_FLOWS", 1_000_000))
    VRSENSE_K_MAX = int(os.getenv("VRSENSE_K_MAX", 8))
    VRSENSE_IDLE_TIMEOUT_CANDIDATE = float(os.getenv("VRSENSE_IDLE_TIMEOUT_CANDIDATE", 60))
    VRSENSE_IDLE_TIMEOUT_TRACKED = float(os.getenv("VRSENSE_IDLE_TIMEOUT_TRACKED", 300))

    # Sessions and classification
    VRSENSE_INTERVAL_LEN = float(os.getenv("VRSENSE_INTERVAL_LEN", 10))
    VRSENSE_SESSION_IDLE_TIMEOUT = float(os.getenv("VRSENSE_SESSION_IDLE_TIMEOUT", 120))
    VRSENSE_CANDIDATE_TTL = float(os.getenv("VRSENSE_CANDIDATE_TTL", 60))
    VRSENSE_PAST_STATES = int(os.getenv("VRSENSE_PAST_STATES", 5))
    # A float, or one of the presets "main" (0.85) / "appendix" (0.80)
    VRSENSE_CONFIDENCE_THRESHOLD = os.getenv("VRSENSE_CONFIDENCE_THRESHOLD", "main")
    VRSENSE_COUNT_IDLE_FLOWS = _env_bool("VRSENSE_COUNT_IDLE_FLOWS", "true")
    VRSENSE_ATTRIBUTE_DIRECTION = os.getenv("VRSENSE_ATTRIBUTE_DIRECTION", "upstream")

    # Engine
    VRSENSE_SHARDS = int(os.getenv("VRSENSE_SHARDS", 1))
    VRSENSE_QUEUE_SIZE = int(os.getenv("VRSENSE_QUEUE_SIZE", 10_000))
    VRSENSE_TICK_SECONDS = float(os.getenv("VRSENSE_TICK_SECONDS", 1.0))

    # Files
    VRSENSE_MODEL_DIR = os.getenv("VRSENSE_MODEL_DIR", "models")
    VRSENSE_SIGNATURES = os.getenv("VRSENSE_SIGNATURES")
    VRSENSE_AS_MAP = os.getenv("VRSENSE_AS_MAP")
    VRSENSE_REPORT_PATH = os.getenv("VRSENSE_REPORT_PATH")


class DevelopmentConfig(Config):
    DEBUG = True


class ProductionConfig(Config):
    DEBUG = False


class TestingConfig(Config):
    TESTING = True
    LOG_LEVEL = "DEBUG"
