# Copyright 2026 CPNet Contributors
# SPDX-License-Identifier: AGPL-3.0-or-later
"""
Ablation grids. Each table is a list of rows, each row a set of overrides on
a base TrainConfig; every row is trained and evaluated independently, and a
failed row is recorded without stopping the suite.
"""

import copy
import csv
import os
from typing import Any, Dict, List, Optional, Sequence, Tuple

from pydantic import BaseModel

from baseModels import MetricReport, TrainConfig
from clip_condenser import EmbeddingProvider
from cpnet_config import train_config_from
from data_pipeline import FrameClip
from logtool import LogTool
from template_cache import get_template_cache
from trainer import Trainer

COMPONENT_ROWS: List[Tuple[bool, bool, bool]] = [
    (False, False, False),
    (True, False, False),
    (True, True, False),
    (True, True, True),
]
LOSS_ROWS: List[Tuple[str, Dict[str, float]]] = [
    ('L_adv', {'lambda_r': 0.0, 'lambda_t': 0.0, 'lambda_p': 0.0}),
    ('L_adv + L_r', {'lambda_t': 0.0, 'lambda_p': 0.0}),
    ('L_adv + L_r + L_t', {'lambda_p': 0.0}),
    ('L_adv + L_r + L_t + L_p', {}),
]
LAMBDA_P_SWEEP = [1.0, 0.5, 0.1, 0.05]
TABLES = (2, 3, 4)


class AblationRow(BaseModel):
    label: str
    cells: List[str]
    overrides: Dict[str, Any]
    report: Optional[MetricReport] = None
    checkpoint: Optional[str] = None
    error: Optional[str] = None


class AblationTable(BaseModel):
    table: int
    title: str
    row_header: List[str]
    rows: List[AblationRow] = []


def _mark(flag: bool) -> str:
    return "✓" if flag else ""


def table_rows(table: int) -> AblationTable:
    """The row structure of one table, reports not yet filled in."""
    if table == 2:
        rows = [AblationRow(label=f"I={i} II={ii} III={iii}", cells=[_mark(i), _mark(ii), _mark(iii)],
                            overrides={'modules': {'dense_fusion': i, 'condenser': ii, 'prob_map': iii}})
                for i, ii, iii in COMPONENT_ROWS]
        return AblationTable(table=2, title="Individual components (I dense fusion, II condenser, III probability map)",
                             row_header=['I', 'II', 'III'], rows=rows)
    if table == 3:
        rows = [AblationRow(label=label, cells=[label], overrides={'loss_weights': weights})
                for label, weights in LOSS_ROWS]
        return AblationTable(table=3, title="Accumulated loss terms", row_header=['Objective'], rows=rows)
    if table == 4:
        rows = [AblationRow(label=f"lambda_p={value}", cells=[str(value)], overrides={'loss_weights': {'lambda_p': value}})
                for value in LAMBDA_P_SWEEP]
        return AblationTable(table=4, title="Probability-map loss weight", row_header=['lambda_p'], rows=rows)
    raise ValueError(f"unknown ablation table {table}, expected one of {TABLES}")


def deep_merge(base: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    merged = copy.deepcopy(base)
    for key, value in overrides.items():
        if isinstance(value, dict) and isinstance(merged.get(key), dict):
            merged[key] = deep_merge(merged[key], value)
        else:
            merged[key] = value
    return merged


def row_config(base: TrainConfig, row: AblationRow) -> TrainConfig:
    return train_config_from(deep_merge(base.model_dump(), row.overrides))


def run_ablation_table(base: TrainConfig, table: int, train_clips: Sequence[FrameClip], eval_clips: Sequence[FrameClip],
                       out_dir: str, logTool: Optional[LogTool] = None,
                       provider: Optional[EmbeddingProvider] = None) -> AblationTable:
    logTool = logTool or LogTool(config={})
    result = table_rows(table)
    for index, row in enumerate(result.rows):
        row_dir = os.path.join(out_dir, f"table{table}", f"row{index}")
        try:
            trainer = Trainer(row_config(base, row), logTool=logTool, provider=provider)
            row.checkpoint = trainer.train(train_clips, row_dir)
            row.report = trainer.evaluate(eval_clips)
            logTool.log(service='Ablation', level='info',
                        message=f"Table {table} [{row.label}]: SSIM {row.report.ssim:.4f} PSNR {row.report.psnr:.2f}")
        except Exception as e:
            row.error = f"{type(e).__name__}: {e}"
            logTool.log(service='Ablation', level='error', message=f"Table {table} [{row.label}] failed: {row.error}")
    return result


def run_ablation_suite(base: TrainConfig, train_clips: Sequence[FrameClip], eval_clips: Sequence[FrameClip],
                       out_dir: str, tables: Sequence[int] = TABLES, logTool: Optional[LogTool] = None,
                       provider: Optional[EmbeddingProvider] = None) -> Dict[int, AblationTable]:
    results = {}
    for table in tables:
        results[table] = run_ablation_table(base, table, train_clips, eval_clips, out_dir, logTool, provider)
        write_ablation_csv(results[table], os.path.join(out_dir, f"table{table}.csv"))
        with open(os.path.join(out_dir, f"table{table}.md"), "w") as stream:
            stream.write(render_ablation_table(results[table]))
    return results


def write_ablation_csv(table: AblationTable, path: str):
    columns = list(MetricReport().columns())
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "w", newline="") as stream:
        writer = csv.writer(stream)
        writer.writerow(table.row_header + columns + ['error'])
        for row in table.rows:
            values = row.report.columns().values() if row.report else [None] * len(columns)
            writer.writerow(row.cells + ['' if v is None else repr(v) for v in values] + [row.error or ''])


def render_ablation_table(table: AblationTable, logTool: Optional[LogTool] = None) -> str:
    return get_template_cache(logTool).render('ablation_table.md.j2', table=table,
                                              columns=list(MetricReport().columns()))
