"""Box conventions and overlap.

Two box layouts are used throughout:

* ``cxcywh`` -- centre and size, the simulator's native layout;
* ``xywh``   -- top-left corner and size, used by detections and track files.
"""

from __future__ import annotations

Box = tuple[float, float, float, float]


def cxcywh_to_xywh(box: Box) -> Box:
    cx, cy, w, h = box
    return (cx - w / 2.0, cy - h / 2.0, w, h)


def xywh_to_cxcywh(box: Box) -> Box:
    x, y, w, h = box
    return (x + w / 2.0, y + h / 2.0, w, h)


def iou(a: Box, b: Box) -> float:
    """Intersection over union of two ``xywh`` boxes."""
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    iw = min(ax + aw, bx + bw) - max(ax, bx)
    ih = min(ay + ah, by + bh) - max(ay, by)
    if iw <= 0.0 or ih <= 0.0:
        return 0.0
    inter = iw * ih
    union = aw * ah + bw * bh - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))
