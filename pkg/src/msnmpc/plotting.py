"""Static figures for one episode, rendered off-screen with matplotlib."""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

_STYLE = {
    "font.size": 9,
    "axes.grid": True,
    "grid.alpha": 0.3,
    "lines.linewidth": 1.2,
    "savefig.dpi": 150,
    "savefig.bbox": "tight",
}


def _cylinder(ax, obs, z_top: float, color="0.55"):
    theta = np.linspace(0, 2 * np.pi, 40)
    z = np.array([0.0, min(obs.height, z_top)])
    th, zz = np.meshgrid(theta, z)
    ax.plot_surface(
        obs.center_x + obs.radius * np.cos(th), obs.center_y + obs.radius * np.sin(th), zz,
        color=color, alpha=0.35, linewidth=0,
    )


def plot_path_3d(trace, config, path):
    p = trace.positions
    fig = plt.figure(figsize=(5.5, 4.5))
    ax = fig.add_subplot(projection="3d")
    z_top = max(1.25, float(p[:, 2].max()) + 0.1)
    if config is not None:
        for o in config.obstacles:
            _cylinder(ax, o, z_top)
        ax.scatter(*config.start, color="tab:green", s=25, label="start")
        ax.scatter(*config.goal, color="tab:red", marker="x", s=35, label="goal")
    ax.plot(p[:, 0], p[:, 1], p[:, 2], color="tab:blue", label="MAV path")
    ax.set_xlabel("x [m]")
    ax.set_ylabel("y [m]")
    ax.set_zlabel("z [m]")
    ax.set_zlim(0, z_top)
    ax.legend(loc="upper left", fontsize=8)
    fig.savefig(path)
    plt.close(fig)


def plot_attitude_thrust(trace, path):
    fig, axes = plt.subplots(3, 1, figsize=(6, 5.5), sharex=True)
    t = trace.t
    for ax, k, label in ((axes[0], 6, "roll"), (axes[1], 7, "pitch")):
        ax.plot(t, np.degrees(trace.x[:, k]), label=f"{label} (state)")
        ax.plot(t, np.degrees(trace.u[:, k - 5]), "--", label=f"{label} (command)")
        ax.set_ylabel(f"{label} [deg]")
        ax.legend(fontsize=7, loc="upper right")
    axes[2].plot(t, trace.u[:, 0], color="tab:purple")
    axes[2].set_ylabel("thrust [m/s$^2$]")
    axes[2].set_xlabel("t [s]")
    fig.savefig(path)
    plt.close(fig)


def plot_delays_weights(trace, path):
    cyc = trace.cycles
    t = np.array([c.t for c in cyc])
    fig, axes = plt.subplots(2, 1, figsize=(6, 4.5), sharex=True)
    axes[0].plot(t, 1e3 * np.array([c.delay for c in cyc]), ".", ms=3)
    axes[0].set_ylabel("round-trip delay [ms]")
    w = np.array([c.weights for c in cyc]).reshape(len(cyc), trace.n_branches)
    for i in range(w.shape[1]):
        axes[1].plot(t, w[:, i], label=f"w{i + 1}")
    axes[1].set_ylabel("branch weight")
    axes[1].set_xlabel("t [s]")
    axes[1].set_ylim(-0.02, 1.02)
    axes[1].legend(fontsize=7, ncol=w.shape[1], loc="upper right")
    fig.savefig(path)
    plt.close(fig)


def render_figures(trace, config, out_dir) -> list:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = [out / "path_3d.png", out / "attitude_thrust.png", out / "delays_weights.png"]
    with plt.rc_context(_STYLE):
        plot_path_3d(trace, config, files[0])
        plot_attitude_thrust(trace, files[1])
        plot_delays_weights(trace, files[2])
    return files
