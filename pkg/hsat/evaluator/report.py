import os
from typing import Dict, Sequence

import pandas as pd
from logzero import logger

from hsat.contrastive.positives import LEVEL_ORDER
from hsat.evaluator.evaluate import EvalReport

COLUMNS = ['model', 'surrogate', 'level', 'condition', 'Acc', 'MCA', 'Acc-D', 'MCA-D']


def report_frame(reports: Sequence[EvalReport]) -> pd.DataFrame:
    rows = []
    for report in reports:
        for level in LEVEL_ORDER:
            metrics = report.levels[level]
            drop = report.drops[level] if report.drops is not None else None
            rows.append({
                'model': report.model,
                'surrogate': report.surrogate or '',
                'level': level.value,
                'condition': report.condition,
                'Acc': round(metrics.acc, 2),
                'MCA': round(metrics.mca, 2),
                'Acc-D': round(drop.acc, 2) if drop is not None else None,
                'MCA-D': round(drop.mca, 2) if drop is not None else None,
            })
    return pd.DataFrame(rows, columns=COLUMNS)


def write_report(reports: Sequence[EvalReport], out_dir: str, name: str = 'report') -> Dict[str, str]:
    """Write ``<name>.csv`` and a plain-text table ``<name>.txt``; returns both paths."""
    os.makedirs(out_dir, exist_ok=True)
    frame = report_frame(reports)
    paths = {'csv': os.path.join(out_dir, f'{name}.csv'), 'table': os.path.join(out_dir, f'{name}.txt')}
    frame.to_csv(paths['csv'], index=False, float_format='%.2f')
    table = frame.to_string(index=False, na_rep='-')
    with open(paths['table'], 'w') as fp:
        fp.write(table + '\n')
    logger.info(f'Report written to {paths["csv"]}\n{table}')
    return paths
