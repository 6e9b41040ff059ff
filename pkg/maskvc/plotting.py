from __future__ import annotations

import json
import logging
from pathlib import Path

import matplotlib
matplotlib.use('Agg')
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

from .errors import FeatureFileError  # noqa: E402

logger = logging.getLogger(__name__)

GENERATOR_TERMS = ('adv_xy', 'adv_yx', 'cyc_xyx', 'cyc_yxy', 'id_xy', 'id_yx', 'adv2_xyx', 'adv2_yxy')
TOTALS = ('total_g', 'total_d')


def read_training_log(path):
    records = []
    with open(path, 'r', encoding='utf-8') as f:
        for number, line in enumerate(f, 1):
            line = line.strip()
            if not line:
                continue
            try:
                records.append(json.loads(line))
            except json.JSONDecodeError as e:
                raise FeatureFileError("bad record on line {0} of {1}: {2}".format(number, path, e))
    return records


def plot_training_log(log_path, out_path, terms=GENERATOR_TERMS):
    records = read_training_log(log_path)
    if not records:
        raise FeatureFileError("training log {0} is empty".format(log_path))
    iterations = np.array([r['iteration'] for r in records])
    fig, (top, bottom) = plt.subplots(2, 1, figsize=(10, 7), sharex=True)
    for name in terms:
        top.plot(iterations, [r.get(name, np.nan) for r in records], label=name, linewidth=1)
    top.set_yscale('log')
    top.set_ylabel('loss term')
    top.legend(ncol=4, fontsize='small')
    for name in TOTALS:
        bottom.plot(iterations, [r.get(name, np.nan) for r in records], label=name)
    bottom.set_xlabel('iteration')
    bottom.set_ylabel('total')
    bottom.legend()
    fig.tight_layout()
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    logger.info("plotted %d log records to %s", len(records), out_path)
    return out_path


def plot_mel(mel, out_path, mask=None, title=''):
    panels = 2 if mask is not None else 1
    fig, axes = plt.subplots(panels, 1, figsize=(8, 3 * panels), squeeze=False)
    axes[0, 0].imshow(mel.values, origin='lower', aspect='auto', interpolation='nearest')
    axes[0, 0].set_title(title or mel.domain_tag or 'mel')
    if mask is not None:
        axes[1, 0].imshow(mask.values, origin='lower', aspect='auto', cmap='gray', vmin=0, vmax=1)
        axes[1, 0].set_title(mask.policy.label)
    fig.tight_layout()
    fig.savefig(out_path, dpi=100)
    plt.close(fig)
    return Path(out_path)
