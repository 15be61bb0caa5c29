import os
from functools import lru_cache
from pathlib import Path
from typing import Optional

import yaml
from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict

APP_DIR = Path(__file__).resolve().parent.parent
CONFIG_PATH = APP_DIR / 'config.yaml'


class LoggingSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    level: str = "INFO"
    directory: Optional[str] = "logs"
    file_name: str = "geommc.log"


class SamplerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    affinity_samples: int = 1000
    rejection_max_attempts: int = 1_000_000
    quadrature_points: int = 100_001
    score_cache_size: int = 512


class OutputSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    root: str = "results"
    float_format: str = "%.17g"


class ServerSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    host: str = "127.0.0.1"
    port: int = 8000


class ReplicateSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    max_workers: int = 4


class AppSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    logging: LoggingSettings = LoggingSettings()
    sampler: SamplerSettings = SamplerSettings()
    output: OutputSettings = OutputSettings()
    server: ServerSettings = ServerSettings()
    replicates: ReplicateSettings = ReplicateSettings()


@lru_cache(maxsize=1)
def getSettings() -> AppSettings:
    """config.yaml + .env 환경변수로 설정 로드"""
    load_dotenv(APP_DIR / '.env')

    raw = {}
    if CONFIG_PATH.exists():
        with open(CONFIG_PATH, 'r', encoding='utf-8') as f:
            raw = yaml.safe_load(f) or {}

    settings = AppSettings.model_validate(raw)

    logLevel = os.getenv("GEOMMC_LOG_LEVEL")
    if logLevel:
        settings.logging.level = logLevel
    logDir = os.getenv("GEOMMC_LOG_DIR")
    if logDir is not None:
        # 빈 문자열이면 파일 로그 비활성화
        settings.logging.directory = logDir or None

    return settings
