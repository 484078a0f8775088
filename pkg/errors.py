# -*- coding: utf-8 -*-
"""
Иерархия исключений конвейера Auto-Set.

Все ошибки библиотеки наследуются от AutoSetError, поэтому CLI может
перехватить их одним обработчиком, залогировать и завершиться с кодом 1.

Автор: Auto-Set HAR Project
Версия: 1.0
"""


class AutoSetError(Exception):
    """Базовое исключение проекта."""


class ShapeError(AutoSetError):
    """Несовпадение размерностей тензоров (сообщение называет измерение)."""


class UnknownActivityError(AutoSetError):
    """Метка активности отсутствует в словаре."""

    def __init__(self, label):
        super().__init__(f"Unknown activity label: {label!r}")
        self.label = label


class DataFormatError(AutoSetError):
    """Некорректный входной файл, архив или дамп."""


class EmptyDatasetError(AutoSetError):
    """Пустой набор данных там, где нужен хотя бы один сегмент."""


class CardinalityError(AutoSetError):
    """Мощность целевого множества превышает K."""


class CheckpointMismatchError(AutoSetError):
    """Чекпоинт не соответствует архитектуре или конфигурации."""


class ConfigError(AutoSetError):
    """Ошибка валидации конфигурации запуска."""


class AlignmentError(AutoSetError):
    """Несогласованные дампы, цели или словари."""


class TrainingDivergedError(AutoSetError):
    """Ни одна эпоха не дала конечного значения целевой функции на валидации."""
