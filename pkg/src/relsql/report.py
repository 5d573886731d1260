"""Delimited run artifacts and the figures rendered alongside them.

Training produces a tab-separated log (step, lr, loss, dev exact match)
plus loss/learning-rate curves; evaluation produces a tab-separated
breakdown next to the JSON report plus an accuracy / clause-error figure.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt


def write_tsv(path: str, header: list[str], rows: list[list]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("\t".join(header) + "\n")
        for row in rows:
            f.write("\t".join("" if v is None else str(v) for v in row) + "\n")


def training_log(path_prefix: str, rows: list[dict]) -> list[str]:
    """Write <prefix>.log.tsv and the loss/lr figures; returns written paths."""
    log_path = f"{path_prefix}.log.tsv"
    write_tsv(log_path, ["step", "lr", "loss", "dev_exact_match"],
              [[r["step"], f"{r['lr']:.8e}", f"{r['loss']:.6f}",
                "" if r.get("dev_em") is None else f"{r['dev_em']:.4f}"] for r in rows])

    steps = [r["step"] for r in rows]
    written = [log_path]

    fig, ax = plt.subplots(figsize=(7, 4))
    ax.plot(steps, [r["loss"] for r in rows], lw=1.0, color="tab:blue", label="train loss")
    ax.set_xlabel("step")
    ax.set_ylabel("loss")
    evaluated = [(r["step"], r["dev_em"]) for r in rows if r.get("dev_em") is not None]
    if evaluated:
        ax2 = ax.twinx()
        ax2.plot(*zip(*evaluated), marker="o", ms=3, color="tab:orange",
                 label="dev exact match")
        ax2.set_ylabel("dev exact match")
        ax2.set_ylim(0, 1.05)
    ax.legend(loc="upper right")
    fig.tight_layout()
    loss_fig = f"{path_prefix}.loss.png"
    fig.savefig(loss_fig, dpi=110)
    plt.close(fig)
    written.append(loss_fig)

    fig, ax = plt.subplots(figsize=(7, 3))
    ax.plot(steps, [r["lr"] for r in rows], lw=1.0, color="tab:green")
    ax.set_xlabel("step")
    ax.set_ylabel("learning rate")
    fig.tight_layout()
    lr_fig = f"{path_prefix}.lr.png"
    fig.savefig(lr_fig, dpi=110)
    plt.close(fig)
    written.append(lr_fig)
    return written


def eval_breakdown(path_prefix: str, report: dict) -> list[str]:
    """Write <prefix>.breakdown.tsv and <prefix>.png next to the JSON report."""
    rows = [["all", report["count"], report["exact_match"]]]
    for name, counts in sorted(report.get("by_difficulty", {}).items()):
        rows.append([name, counts["total"], counts["accuracy"]])
    tsv_path = f"{path_prefix}.breakdown.tsv"
    write_tsv(tsv_path, ["subset", "count", "exact_match"], rows)

    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.5))
    labels = [r[0] for r in rows]
    ax1.bar(labels, [r[2] for r in rows], color="tab:blue")
    ax1.set_ylim(0, 1.05)
    ax1.set_ylabel("exact match")
    ax1.set_title("accuracy")
    clauses = report.get("clause_errors", {})
    ax2.bar(list(clauses), list(clauses.values()), color="tab:red")
    ax2.set_title("clause errors")
    ax2.tick_params(axis="x", rotation=45)
    fig.tight_layout()
    fig_path = f"{path_prefix}.png"
    fig.savefig(fig_path, dpi=110)
    plt.close(fig)
    return [tsv_path, fig_path]
