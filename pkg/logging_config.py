# -*- coding: utf-8 -*-
"""
Модуль конфигурации системы логирования Auto-Set HAR.

Этот модуль обеспечивает:
- Ротацию файла логов по времени (ежедневно, в полночь)
- Единый формат сообщений с временными метками
- Вывод логов в файл и консоль

Автор: Auto-Set HAR Project
Версия: 1.0
"""

# ============================================================================
# ИМПОРТЫ И ЗАВИСИМОСТИ
# ============================================================================

import logging                # Основная библиотека логирования
import logging.handlers       # Обработчики с ротацией
import os                     # Работа с файловой системой
from typing import Union

LOG_FILENAME = 'autoset.log'
LOG_FORMAT = '[%(asctime)s] %(levelname)s: %(message)s'
LOG_DATEFMT = '%Y-%m-%d %H:%M:%S'

# ============================================================================
# ОСНОВНЫЕ ФУНКЦИИ КОНФИГУРАЦИИ
# ============================================================================


def setup_logging(log_dir: str = 'logs', level: Union[int, str] = logging.INFO) -> logging.Logger:
    """
    Настройка корневого логгера с ротацией файлов.

    Два обработчика:
    1. TimedRotatingFileHandler - <log_dir>/autoset.log, ротация в полночь, 30 архивов
    2. StreamHandler - вывод в консоль

    Args:
        log_dir (str): Директория логов (создается при необходимости)
        level: Уровень логирования (число или имя, например 'DEBUG')

    Returns:
        logging.Logger: Настроенный корневой логгер

    Note:
        Существующие обработчики удаляются, повторный вызов не дублирует вывод
    """
    os.makedirs(log_dir, exist_ok=True)

    logger = logging.getLogger()
    logger.setLevel(level.upper() if isinstance(level, str) else level)

    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()

    log_formatter = logging.Formatter(LOG_FORMAT, datefmt=LOG_DATEFMT)

    time_handler = logging.handlers.TimedRotatingFileHandler(
        filename=os.path.join(log_dir, LOG_FILENAME),
        when='midnight',            # Ротация в полночь
        interval=1,                 # Каждый день
        backupCount=30,             # Храним логи за 30 дней
        encoding='utf-8'
    )
    time_handler.setFormatter(log_formatter)
    time_handler.suffix = '%Y-%m-%d'  # autoset.log.2026-01-15

    console_handler = logging.StreamHandler()
    console_handler.setFormatter(log_formatter)

    logger.addHandler(time_handler)
    logger.addHandler(console_handler)
    return logger
