import os
from typing import Dict, List, Optional, Sequence

import numpy as np
import plotly.graph_objects as go
from plotly.subplots import make_subplots


def loss_curve_figure(curves: Dict[str, Sequence[float]], title: str = "Loss curves", log_y: bool = True) -> go.Figure:
    """One line per named loss curve."""
    fig = go.Figure()
    for name, values in curves.items():
        fig.add_trace(go.Scatter(x=list(range(len(values))), y=list(values), mode="lines", name=name))
    fig.update_layout(title=title, xaxis_title="step", yaxis_title="loss", template="plotly_white")
    if log_y:
        fig.update_yaxes(type="log")
    return fig


def image_grid_figure(
    rows: List[List[np.ndarray]],
    column_titles: Optional[List[str]] = None,
    title: Optional[str] = None,
) -> go.Figure:
    """
    Grid of images, one ``rows[i][j]`` per cell.

    Images are ``(H, W)`` grayscale or ``(H, W, 3)`` RGB arrays with values in ``[0, 1]``.
    """
    n_rows = len(rows)
    n_cols = max(len(r) for r in rows)
    fig = make_subplots(rows=n_rows, cols=n_cols, column_titles=column_titles,
                        horizontal_spacing=0.02, vertical_spacing=0.02)
    for i, row in enumerate(rows):
        for j, image in enumerate(row):
            image = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
            if image.ndim == 2:
                image = np.repeat(image[..., None], 3, axis=2)
            fig.add_trace(go.Image(z=(image * 255).astype(np.uint8)), row=i + 1, col=j + 1)
    fig.update_xaxes(visible=False)
    fig.update_yaxes(visible=False)
    fig.update_layout(title=title, width=140 * n_cols + 60, height=140 * n_rows + 80,
                      margin=dict(l=10, r=10, t=60, b=10), template="plotly_white")
    return fig


def save_figure(fig: go.Figure, path: str) -> str:
    """Write ``fig`` as PNG (via kaleido) or HTML, chosen by the file extension."""
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    if path.lower().endswith(".html"):
        fig.write_html(path)
    else:
        fig.write_image(path)
    return path
