import logging

import numpy as np
import pandas as pd
import matplotlib

matplotlib.use('Agg')

import matplotlib.pyplot as pl

from tools.general import ensure_parent_dir
from tools.data_structure import BenchResults

MODE_COLORS = {
    'base': 'tab:green',
    'fast': 'tab:blue',
    'vanilla': 'tab:red'
}


def _save(fig, filepath: str):
    ensure_parent_dir(filepath)

    fig.savefig(filepath, bbox_inches='tight')
    pl.close(fig)

    logging.info(f'Saved plot: {filepath}')


def plot_speed(results: BenchResults, filepath: str):
    """
    Decoding speed (tokens / s) against c; base and vanilla do not depend on c and are
    drawn as horizontal lines.
    """
    df = results.to_frame()

    fig, ax = pl.subplots(figsize=(7, 5))

    fast = df[df['mode'] == 'fast'].groupby('c', as_index=False)['tokens_per_sec'].mean()

    ax.plot(fast.c, fast.tokens_per_sec, 'o-', color=MODE_COLORS['fast'], linewidth=2, label='fast')

    for mode in ('base', 'vanilla'):
        speed = df[df['mode'] == mode]['tokens_per_sec']

        if len(speed):
            ax.axhline(speed.mean(), color=MODE_COLORS[mode], linewidth=2, linestyle='--', label=mode)

    ax.set_xscale('log', base=2)
    ax.set_yscale('log')
    ax.set_xlabel('c (neighbours per source token)')
    ax.set_ylabel('tokens / s')
    ax.legend()
    ax.grid(True)

    _save(fig, filepath)


def plot_quality(results: BenchResults, parameter: str, filepath: str, quality: str = 'token_accuracy'):
    """
    :param parameter:       c or k
    :param quality:         token_accuracy or bleu
    """
    df = results.to_frame()
    df = df[df['mode'] == 'fast'].dropna(subset=[quality])

    fig, ax = pl.subplots(figsize=(7, 5))

    for (metric, quantized), group in df.groupby(['metric', 'quantized']):
        curve = group.groupby(parameter, as_index=False)[quality].mean()

        ax.plot(
            curve[parameter],
            curve[quality],
            'o-',
            linewidth=2,
            label=f'{metric}{" (PQ)" if quantized else ""}'
        )

    ax.set_xscale('log', base=2)
    ax.set_xlabel(parameter)
    ax.set_ylabel(quality.replace('_', ' '))
    ax.legend()
    ax.grid(True)

    _save(fig, filepath)


def plot_k_sweep(sweep: pd.DataFrame, filepath: str):
    fig, ax = pl.subplots(figsize=(7, 5))

    ax.plot(sweep.k, sweep.accuracy, 'o-', color=MODE_COLORS['fast'], linewidth=2)

    ax.set_xscale('log', base=2)
    ax.set_xlabel('k')
    ax.set_ylabel('accuracy')
    ax.grid(True)

    _save(fig, filepath)


def plot_heatmap(similarity: np.ndarray, row_labels: list, col_labels: list, filepath: str):
    """
    Cosine similarity of gold decoder states (rows) and retrieved target keys (columns)
    """
    fig, ax = pl.subplots(figsize=(max(6, 0.3 * len(col_labels)), max(4, 0.4 * len(row_labels))))

    image = ax.imshow(similarity, cmap='viridis', aspect='auto', vmin=-1, vmax=1)

    ax.set_yticks(range(len(row_labels)))
    ax.set_yticklabels(row_labels)
    ax.set_xticks(range(len(col_labels)))
    ax.set_xticklabels(col_labels, rotation=90)

    fig.colorbar(image, ax=ax)

    _save(fig, filepath)
