# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
import os
from typing import Dict

from prometheus_client import CollectorRegistry, Counter, Gauge, write_to_textfile


class TrainingMetrics:
    """
    Prometheus metrics for one training run, kept in a private registry and
    exported through the textfile collector format.
    """

    def __init__(self, run: str = 'cpnet'):
        self.registry = CollectorRegistry(auto_describe=True)
        self.run = run
        self.loss = Gauge('cpnet_loss', 'Latest value of each loss term', ['run', 'term'], registry=self.registry)
        self.iteration = Gauge('cpnet_iteration', 'Last completed training iteration', ['run'], registry=self.registry)
        self.iterations = Counter('cpnet_iterations', 'Training iterations completed', ['run'], registry=self.registry)
        self.checkpoints = Counter('cpnet_checkpoints', 'Checkpoints written', ['run'], registry=self.registry)
        self.failures = Counter('cpnet_failures', 'Runs aborted by an error', ['run', 'reason'], registry=self.registry)

    def recordStep(self, iteration: int, terms: Dict[str, float]):
        for term, value in terms.items():
            self.loss.labels(run=self.run, term=term).set(value)
        self.iteration.labels(run=self.run).set(iteration)
        self.iterations.labels(run=self.run).inc()

    def recordCheckpoint(self):
        self.checkpoints.labels(run=self.run).inc()

    def recordFailure(self, reason: str):
        self.failures.labels(run=self.run, reason=reason).inc()

    def write(self, path: str) -> str:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        write_to_textfile(path, self.registry)
        return path
