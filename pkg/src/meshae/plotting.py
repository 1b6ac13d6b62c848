"""Figure output for reports. Uses the non-interactive Agg backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def plot_cumulative_errors(curves: dict, path, units: str = "model units") -> None:
    """``curves`` maps a model name to ``(edges, fractions)``."""
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for name, (edges, fractions) in curves.items():
        ax.plot(edges, 100.0 * fractions, label=name)
    ax.set_xlabel(f"Euclidean error ({units})")
    ax.set_ylabel("% of vertices")
    ax.set_ylim(0, 100)
    ax.grid(alpha=0.3)
    ax.legend(loc="lower right")
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)


def plot_training_history(history: list, path) -> None:
    epochs = [r["epoch"] for r in history]
    fig, ax = plt.subplots(figsize=(5, 3.5))
    ax.plot(epochs, [r["train_l1"] for r in history], label="train L1")
    if any(r["val_l1"] is not None for r in history):
        ax.plot(epochs, [r["val_l1"] for r in history], label="validation L1")
    ax.set_xlabel("epoch")
    ax.set_ylabel("L1 (normalized units)")
    ax.set_yscale("log")
    ax.grid(alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120, metadata={"Software": None})
    plt.close(fig)
