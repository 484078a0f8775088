# -*- coding: utf-8 -*-
"""
Мониторинг обучения Auto-Set.

Обеспечивает:
- Сбор системных метрик процесса (CPU, память) через psutil
- Метрики прогресса обучения в формате Prometheus (эпоха, целевые функции, шаг)
- Экспорт в текстовый файл для node_exporter textfile collector

Метрики мониторинга не входят в детерминированный набор артефактов.

Автор: Auto-Set HAR Project
Версия: 1.0
"""

import logging
import os
from typing import Dict

import psutil
from prometheus_client import CollectorRegistry, Gauge, write_to_textfile

logger = logging.getLogger(__name__)


def collect_system_metrics() -> Dict[str, Dict[str, float]]:
    """
    Сбор системных метрик.

    Returns:
        dict: Метрики CPU, памяти системы и RSS процесса; {} при ошибке
    """
    try:
        memory = psutil.virtual_memory()
        process = psutil.Process(os.getpid())
        return {
            'cpu': {
                'percent': psutil.cpu_percent(interval=None),
                'count': psutil.cpu_count(),
            },
            'memory': {
                'total': memory.total,
                'available': memory.available,
                'percent': memory.percent,
            },
            'process': {
                'rss': process.memory_info().rss,
                'cpu_percent': process.cpu_percent(interval=None),
            },
        }
    except Exception as e:
        logger.error(f"Error collecting system metrics: {e}")
        return {}


class TrainingMonitor:
    """
    Метрики одного запуска обучения в собственном реестре Prometheus.
    """

    def __init__(self, run_name: str = 'autoset'):
        self.run_name = run_name
        self.registry = CollectorRegistry()
        labels = ['run', 'phase']
        self.epoch = Gauge('autoset_epoch', 'Last completed epoch', labels,
                           registry=self.registry)
        self.train_objective = Gauge('autoset_train_objective', 'Mean training objective',
                                     labels, registry=self.registry)
        self.val_objective = Gauge('autoset_val_objective', 'Mean validation objective',
                                   labels, registry=self.registry)
        self.learning_rate = Gauge('autoset_learning_rate', 'Learning rate of the last epoch',
                                   labels, registry=self.registry)
        self.rss_bytes = Gauge('autoset_process_rss_bytes', 'Resident set size of the process',
                               ['run'], registry=self.registry)
        self.cpu_percent = Gauge('autoset_system_cpu_percent', 'System CPU usage',
                                 ['run'], registry=self.registry)

    def observe_epoch(self, phase: str, epoch: int, train_objective: float,
                      val_objective: float, learning_rate: float) -> None:
        """Обновление метрик после эпохи."""
        self.epoch.labels(self.run_name, phase).set(epoch)
        self.train_objective.labels(self.run_name, phase).set(train_objective)
        self.val_objective.labels(self.run_name, phase).set(val_objective)
        self.learning_rate.labels(self.run_name, phase).set(learning_rate)

        metrics = collect_system_metrics()
        if metrics:
            self.rss_bytes.labels(self.run_name).set(metrics['process']['rss'])
            self.cpu_percent.labels(self.run_name).set(metrics['cpu']['percent'])
            if metrics['memory']['percent'] > 90:
                logger.warning(f"High memory usage: {metrics['memory']['percent']}%")

    def export(self, path: str) -> None:
        """Запись метрик в текстовом формате Prometheus."""
        try:
            os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
            write_to_textfile(path, self.registry)
        except OSError as e:
            logger.error(f"Error exporting metrics to {path}: {e}")
