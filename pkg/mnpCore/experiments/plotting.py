"""SVG heatmaps of predictive probabilities over a 2-D mesh grid."""
import logging

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

logger = logging.getLogger("experiments.plotting")

# fixed ids and no timestamp so the same grid always renders the same bytes
SVG_RC = {"svg.hashsalt": "mnp", "svg.fonttype": "none", "font.size": 9, "figure.figsize": (4.5, 3.6)}
CLASS_COLOURS = ("tab:blue", "tab:orange", "tab:green", "tab:red", "tab:purple")


def heatmap_svg(path, mesh, values, nx, ny, points=None, classes=None, label="p(class 1)", title=None):
    """
    Render ``values`` (one per mesh row, x varying fastest) as a heatmap with optional scatter points.

    Args:
        path (str): output .svg file.
        mesh (np.ndarray): [nx * ny, 2] grid coordinates.
        values (np.ndarray): [nx * ny] values in [0, 1].
        points (np.ndarray, optional): [N, 2] training points drawn on top.
        classes (np.ndarray, optional): class index per point, used for colours.
    """
    with plt.rc_context(SVG_RC):
        fig, ax = plt.subplots()
        xs, ys = mesh[:nx, 0], mesh[::nx, 1]
        image = ax.pcolormesh(xs, ys, values.reshape(ny, nx), cmap="RdBu_r", vmin=0.0, vmax=1.0, shading="auto")
        fig.colorbar(image, ax=ax, label=label)
        if points is not None:
            colours = [CLASS_COLOURS[int(k) % len(CLASS_COLOURS)] for k in classes] if classes is not None else "k"
            ax.scatter(points[:, 0], points[:, 1], c=colours, s=4, linewidths=0)
        ax.set_xlim(xs[0], xs[-1])
        ax.set_ylim(ys[0], ys[-1])
        if title:
            ax.set_title(title)
        fig.savefig(path, format="svg", bbox_inches="tight", metadata={"Date": None})
        plt.close(fig)
    logger.info(f"heatmap written to {path}")
    return path
