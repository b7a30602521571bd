"""Figure rendering for the reporting paths.

Every CLI command that writes a delimited report also renders a small
matplotlib figure next to it: training curves beside history.csv,
per-layer cost bars beside the complexity table, WER bars and a
per-utterance histogram beside the evaluation TSV. The Agg backend is
forced so this works in headless runs.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def plot_history(history, path) -> None:
    """Training loss and validation WER against epoch."""
    if not history:
        return
    epochs = [h.epoch for h in history]
    fig, ax_loss = plt.subplots(figsize=(7, 4))
    ax_loss.plot(epochs, [h.train_loss for h in history], "o-", color="tab:blue", label="train loss")
    ax_loss.set_xlabel("epoch")
    ax_loss.set_ylabel("CTC loss", color="tab:blue")
    ax_wer = ax_loss.twinx()
    ax_wer.plot(epochs, [h.val_wer for h in history], "s-", color="tab:red", label="val WER")
    ax_wer.set_ylabel("validation WER %", color="tab:red")
    ax_loss.set_title("training history")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_complexity(report, path) -> None:
    """Per-layer parameter and FLOP bars on log scales."""
    names = [layer.name for layer in report.layers]
    fig, (ax_p, ax_f) = plt.subplots(1, 2, figsize=(11, 4))
    ax_p.barh(names, [layer.params for layer in report.layers], color="tab:blue")
    ax_p.set_xscale("log")
    ax_p.set_xlabel("parameters")
    ax_p.invert_yaxis()
    ax_f.barh(names, [layer.flops for layer in report.layers], color="tab:orange")
    ax_f.set_xscale("log")
    ax_f.set_xlabel("FLOPs per pass")
    ax_f.invert_yaxis()
    ax_f.set_yticklabels([])
    fig.suptitle(f"{report.title} (input {'x'.join(str(d) for d in report.input_shape)})")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_eval(results: dict, path) -> None:
    """Corpus WER/CER per decoding mode plus a per-utterance WER histogram."""
    fig, (ax_bar, ax_hist) = plt.subplots(1, 2, figsize=(10, 4))
    modes = list(results)
    xs = range(len(modes))
    ax_bar.bar([x - 0.18 for x in xs], [results[m].wer for m in modes], width=0.36, label="WER %")
    ax_bar.bar([x + 0.18 for x in xs], [results[m].cer for m in modes], width=0.36, label="CER %")
    ax_bar.set_xticks(list(xs))
    ax_bar.set_xticklabels(modes)
    ax_bar.set_ylabel("error rate %")
    ax_bar.legend()
    for mode in modes:
        ax_hist.hist(
            [u.wer for u in results[mode].per_utterance],
            bins=20, alpha=0.6, label=mode,
        )
    ax_hist.set_xlabel("per-utterance WER %")
    ax_hist.set_ylabel("utterances")
    ax_hist.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
