import logging
import sys
from typing import Any, Optional
from pathlib import Path

LOGGER_NAME = 'geommc_app'

emojiMap = {
    '📊': '[INFO]',
    '❌': '[ERROR]',
    '✅': '[SUCCESS]',
    '⚠️': '[WARN]',
    '⏳': '[WAIT]',
    '🚀': '[START]',
    '🧮': '[COMPUTE]',
    '🔗': '[CHAIN]',
    '🧪': '[VERIFY]',
    '💾': '[SAVE]',
    '📡': '[REQUEST]',
    '📐': '[DESIGN]',
    '📂': '[LOAD]',
    '📋': '[REPORT]',
    '🔁': '[REPLICATE]',
    '🛑': '[STOP]',
    '🎉': '[COMPLETE]'
}


def _replaceEmoji(text: str) -> str:
    for emoji, label in emojiMap.items():
        text = text.replace(emoji, label)
    return text


class SafeFormatter(logging.Formatter):
    """이모지 안전 처리 로그 포매터"""

    def format(self, record: logging.LogRecord) -> str:
        message = super().format(record)
        encoding = getattr(sys.stdout, 'encoding', None) or 'utf-8'
        try:
            message.encode(encoding)
            return message
        except (UnicodeEncodeError, LookupError):
            return _replaceEmoji(message)


def setupLogging(level: Optional[str] = None, logDir: Optional[str] = None) -> logging.Logger:
    """로깅 시스템 초기화 (이미 설정된 경우 기존 로거 반환)"""
    logger = logging.getLogger(LOGGER_NAME)
    if logger.handlers and level is None and logDir is None:
        return logger

    # 순환 import 방지
    from app.utils.settings import getSettings
    settings = getSettings()
    level = level or settings.logging.level
    if logDir is None:
        logDir = settings.logging.directory

    logger.setLevel(getattr(logging, str(level).upper(), logging.INFO))
    logger.propagate = False

    # 기존 핸들러 제거
    for handler in logger.handlers[:]:
        logger.removeHandler(handler)
        handler.close()

    formatter = SafeFormatter(
        '[%(asctime)s] %(levelname)s: %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )

    if logDir:
        logPath = Path(logDir)
        logPath.mkdir(parents=True, exist_ok=True)
        fileHandler = logging.FileHandler(
            logPath / settings.logging.file_name,
            mode='a',
            encoding='utf-8'
        )
        fileHandler.setFormatter(formatter)
        logger.addHandler(fileHandler)

    consoleHandler = logging.StreamHandler(sys.stdout)
    consoleHandler.setFormatter(formatter)
    logger.addHandler(consoleHandler)

    return logger


def safePrint(*args: Any, **kwargs: Any) -> None:
    """안전한 콘솔 출력"""
    try:
        print(*args, **kwargs)
    except UnicodeEncodeError:
        convertedArgs = [_replaceEmoji(arg) if isinstance(arg, str) else arg for arg in args]
        print(*convertedArgs, **kwargs)
