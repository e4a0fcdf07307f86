"""Render one frame of a detection log to SVG.

Detections are drawn as boxes whose stroke encodes provenance: image
candidates solid blue, radar candidates dashed amber, recovered boxes dotted
red, each labeled with its confidence.  Ground truth is a thin gray outline;
when the frame's lighting falls below the visibility threshold a stick
figure is drawn inside each truth box instead, since that is when the
annotation carries information the image channel does not.

Output is a pure function of the frame record, so rendered files are
byte-identical across runs.
"""

from .fusion import (PROVENANCE_IMAGE, PROVENANCE_RADAR, PROVENANCE_RECOVERED)

BACKGROUND = "#10151b"
TRUTH_STROKE = "#78909c"
FIGURE_STROKE = "#cfd8dc"

# provenance -> (stroke color, dash pattern or None for solid)
STROKES = {
    PROVENANCE_IMAGE: ("#4fc3f7", None),
    PROVENANCE_RADAR: ("#ffb74d", "14 7"),
    PROVENANCE_RECOVERED: ("#e57373", "3 6"),
}
FALLBACK_STROKE = ("#ba68c8", "1 3")

STROKE_WIDTH = 4.0
FONT_SIZE = 30
LIGHTING_THRESHOLD = 0.3


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _rect(box, stroke: str, dash, width=STROKE_WIDTH) -> str:
    dash_attr = f' stroke-dasharray="{dash}"' if dash else ""
    return (f'<rect x="{_fmt(box.u_min)}" y="{_fmt(box.v_min)}" '
            f'width="{_fmt(box.u_max - box.u_min)}" '
            f'height="{_fmt(box.v_max - box.v_min)}" '
            f'fill="none" stroke="{stroke}" '
            f'stroke-width="{_fmt(width)}"{dash_attr}/>')


def _label(box, text: str, color: str) -> str:
    u = box.u_min + 6.0
    v = max(box.v_min - 10.0, float(FONT_SIZE))
    return (f'<text x="{_fmt(u)}" y="{_fmt(v)}" fill="{color}" '
            f'font-family="monospace" font-size="{FONT_SIZE}">{text}</text>')


def _line(u1, v1, u2, v2, stroke: str) -> str:
    return (f'<line x1="{_fmt(u1)}" y1="{_fmt(v1)}" x2="{_fmt(u2)}" '
            f'y2="{_fmt(v2)}" stroke="{stroke}" '
            f'stroke-width="{_fmt(STROKE_WIDTH)}" stroke-linecap="round"/>')


def _stick_figure(box) -> list:
    """A head circle and five limb segments, all inside the box."""
    w = box.u_max - box.u_min
    h = box.v_max - box.v_min
    cu = box.u_min + 0.5 * w
    head_r = 0.10 * h
    head_cv = box.v_min + 0.125 * h
    neck = box.v_min + 0.225 * h
    shoulder = box.v_min + 0.32 * h
    hip = box.v_min + 0.60 * h
    foot = box.v_max - 0.02 * h
    hand_v = box.v_min + 0.50 * h
    parts = [
        f'<circle cx="{_fmt(cu)}" cy="{_fmt(head_cv)}" r="{_fmt(head_r)}" '
        f'fill="none" stroke="{FIGURE_STROKE}" '
        f'stroke-width="{_fmt(STROKE_WIDTH)}"/>',
        _line(cu, neck, cu, hip, FIGURE_STROKE),
        _line(cu, shoulder, box.u_min + 0.12 * w, hand_v, FIGURE_STROKE),
        _line(cu, shoulder, box.u_max - 0.12 * w, hand_v, FIGURE_STROKE),
        _line(cu, hip, box.u_min + 0.20 * w, foot, FIGURE_STROKE),
        _line(cu, hip, box.u_max - 0.20 * w, foot, FIGURE_STROKE),
    ]
    return parts


def render_frame_svg(record, image_size=(1536, 2048),
                     lighting_threshold=LIGHTING_THRESHOLD) -> str:
    """Return the SVG document for one FrameRecord."""
    rows, cols = image_size
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{cols}" '
        f'height="{rows}" viewBox="0 0 {cols} {rows}">',
        f'<rect width="{cols}" height="{rows}" fill="{BACKGROUND}"/>',
    ]
    dark = record.lighting < lighting_threshold
    for t in record.truth:
        if dark:
            parts.extend(_stick_figure(t.box))
        else:
            parts.append(_rect(t.box, TRUTH_STROKE, None, width=2.0))
    for d in record.detections:
        stroke, dash = STROKES.get(d.provenance, FALLBACK_STROKE)
        parts.append(_rect(d.box, stroke, dash))
        parts.append(_label(d.box, _fmt(d.q), stroke))
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def save_frame_svg(path, record, image_size=(1536, 2048),
                   lighting_threshold=LIGHTING_THRESHOLD) -> None:
    svg = render_frame_svg(record, image_size=image_size,
                           lighting_threshold=lighting_threshold)
    with open(path, "w") as fh:
        fh.write(svg)
