# Copyright 2025 PyHSS Contributors
# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Report Template Cache

Thread-safe cache of compiled Jinja2 templates used to render metric
reports and ablation tables as markdown.
"""

import threading
from pathlib import Path
from typing import Dict, Optional

import jinja2

TEMPLATE_DIR = Path(__file__).resolve().parent / "templates"


def format_metric(value, digits: int = 3) -> str:
    if value is None:
        return "n/a"
    return f"{value:.{digits}f}"


class ReportTemplateCache:
    """
    Compiles each template once per search path. Cache keys are
    "{search_path}:{template_name}".
    """

    def __init__(self, logTool=None):
        self._cache: Dict[str, jinja2.Template] = {}
        self._lock = threading.Lock()
        self.logTool = logTool
        self._environments: Dict[str, jinja2.Environment] = {}

    def _log(self, level: str, message: str):
        if self.logTool:
            self.logTool.log(service='Report', level=level, message=message)

    def _environment(self, search_path: str) -> jinja2.Environment:
        if search_path not in self._environments:
            environment = jinja2.Environment(loader=jinja2.FileSystemLoader(searchpath=search_path),
                                             undefined=jinja2.StrictUndefined, keep_trailing_newline=True)
            environment.filters['metric'] = format_metric
            self._environments[search_path] = environment
        return self._environments[search_path]

    def get_template(self, name: str, search_path: Optional[str] = None) -> jinja2.Template:
        search_path = str(search_path or TEMPLATE_DIR)
        cache_key = f"{search_path}:{name}"
        with self._lock:
            if cache_key in self._cache:
                self._log('debug', f"Template cache hit for {name}")
                return self._cache[cache_key]
            template = self._environment(search_path).get_template(name)
            self._cache[cache_key] = template
        self._log('debug', f"Template {name} compiled and cached")
        return template

    def render(self, name: str, **context) -> str:
        return self.get_template(name).render(**context)

    def invalidate_all(self) -> int:
        with self._lock:
            count = len(self._cache)
            self._cache.clear()
            return count


_template_cache_instance: Optional[ReportTemplateCache] = None
_instance_lock = threading.Lock()


def get_template_cache(logTool=None) -> ReportTemplateCache:
    global _template_cache_instance

    if _template_cache_instance is None:
        with _instance_lock:
            if _template_cache_instance is None:
                _template_cache_instance = ReportTemplateCache(logTool)

    return _template_cache_instance
