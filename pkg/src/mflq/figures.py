"""Static figure rendering for solver and sweep outputs."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402  (backend must be set first)


def save_sweep_figure(sweep, path, title=None):
    """One curve per sweep value: control along the closed-loop mean."""
    fig, ax = plt.subplots(figsize=(6.4, 4.2))
    for value, curve in zip(sweep.values, sweep.curves):
        ax.plot(sweep.ts, curve, label=f"{sweep.param} = {value:g}")
    ax.set_xlabel("t")
    ax.set_ylabel("control along the mean trajectory")
    if title:
        ax.set_title(title)
    ax.legend()
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_riccati_figure(sol, path, title=None):
    """Entry-wise curves of the solution pair over time."""
    grid = sol.P.grid
    n = sol.P.shape[0]
    fig, axes = plt.subplots(1, 2, figsize=(9.6, 4.0), sharex=True)
    for i in range(n):
        for j in range(i, n):
            axes[0].plot(grid.nodes, sol.P.samples[:, i, j],
                         label=f"P[{i},{j}]")
            axes[1].plot(grid.nodes, sol.Pi.samples[:, i, j],
                         label=f"Pi[{i},{j}]")
    for ax, name in zip(axes, ("centered weight P", "mean weight Pi")):
        ax.set_xlabel("t")
        ax.set_title(name)
        ax.legend()
        ax.grid(True, alpha=0.3)
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)


def save_paths_figure(ensemble, grid, path, max_paths=30, title=None):
    """A fan of sample state paths with the deterministic mean overlaid."""
    count = min(max_paths, ensemble.n_paths)
    n = ensemble.states.shape[2]
    fig, axes = plt.subplots(n, 1, figsize=(6.4, 3.0 * n), sharex=True,
                             squeeze=False)
    for i in range(n):
        ax = axes[i, 0]
        for p in range(count):
            ax.plot(grid.nodes, ensemble.states[p, :, i],
                    color="steelblue", alpha=0.25, lw=0.7)
        ax.plot(grid.nodes, ensemble.mean.states[:, i], color="black",
                lw=1.8, label="mean trajectory")
        ax.set_ylabel(f"state[{i}]")
        ax.legend()
        ax.grid(True, alpha=0.3)
    axes[-1, 0].set_xlabel("t")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    fig.savefig(path, dpi=150)
    plt.close(fig)
