"""Minimal polyline charts written as SVG text."""
import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf")
WIDTH, HEIGHT = 720, 300
MARGIN = dict(left=70, right=150, top=30, bottom=45)


def _fmt(v):
    return f"{v:.6g}"


def _ticks(lo, hi, n=5):
    if hi == lo:
        return [lo]
    return list(np.linspace(lo, hi, n))


def line_chart(t, series, title, ylabel, xlabel="t in s", max_points=2000):
    """Render ``series`` (list of ``(label, values)``) over ``t`` as an SVG string."""
    t = np.asarray(t, float)
    if t.size == 0:
        raise ValueError("nothing to plot")
    step = max(1, int(np.ceil(t.size / max_points)))
    idx = np.arange(0, t.size, step)
    finite = [np.asarray(v, float)[idx] for _, v in series]
    vals = np.concatenate([v[np.isfinite(v)] for v in finite] or [np.zeros(1)])
    if vals.size == 0:
        vals = np.zeros(1)
    y_lo, y_hi = float(vals.min()), float(vals.max())
    if y_hi - y_lo < 1e-12:
        y_lo, y_hi = y_lo - 1.0, y_hi + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad
    t_lo, t_hi = float(t[0]), float(t[-1]) if t[-1] > t[0] else float(t[0]) + 1.0
    pw = WIDTH - MARGIN["left"] - MARGIN["right"]
    ph = HEIGHT - MARGIN["top"] - MARGIN["bottom"]

    def sx(v):
        return MARGIN["left"] + (v - t_lo) / (t_hi - t_lo) * pw

    def sy(v):
        return MARGIN["top"] + (y_hi - v) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">{title}</text>',
        f'<rect x="{MARGIN["left"]}" y="{MARGIN["top"]}" width="{pw}" height="{ph}" '
        'fill="none" stroke="#444"/>',
    ]
    for yv in _ticks(y_lo, y_hi):
        y = sy(yv)
        out.append(f'<line x1="{MARGIN["left"]}" x2="{MARGIN["left"] + pw}" y1="{y:.1f}" y2="{y:.1f}" '
                   'stroke="#ddd"/>')
        out.append(f'<text x="{MARGIN["left"] - 5}" y="{y + 4:.1f}" text-anchor="end">{_fmt(yv)}</text>')
    for tv in _ticks(t_lo, t_hi):
        x = sx(tv)
        out.append(f'<text x="{x:.1f}" y="{MARGIN["top"] + ph + 15}" text-anchor="middle">{_fmt(tv)}</text>')
    out.append(f'<text x="{MARGIN["left"] + pw / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">{xlabel}</text>')
    out.append(f'<text x="14" y="{MARGIN["top"] + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {MARGIN["top"] + ph / 2:.1f})">{ylabel}</text>')
    for k, ((label, _), v) in enumerate(zip(series, finite)):
        color = PALETTE[k % len(PALETTE)]
        ok = np.isfinite(v)
        if ok.any():
            pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(t[idx][ok], v[ok]))
            out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.2" points="{pts}"/>')
        ly = MARGIN["top"] + 12 + 16 * k
        lx = MARGIN["left"] + pw + 10
        out.append(f'<line x1="{lx}" x2="{lx + 18}" y1="{ly - 4}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{lx + 24}" y="{ly}">{label}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
