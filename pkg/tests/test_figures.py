"""Report figure rendering: files appear and stay valid on edge cases."""

import os

from fusedet.evaluate import EvalReport
from fusedet.figures import save_report_figures

PNG_MAGIC = b"\x89PNG\r\n\x1a\n"


def report(**kwargs):
    base = dict(iou_thresh=0.5, frames=10, tp=8, fp=2, fn=1,
                provenance_tp={"image": 5, "radar": 3, "recovered": 0},
                provenance_fp={"image": 1, "radar": 1, "recovered": 0},
                lighting_recall={"0.0-0.2": None, "0.8-1.0": 0.9})
    base.update(kwargs)
    return EvalReport(**base)


def test_writes_three_pngs(tmp_path):
    paths = save_report_figures(tmp_path, report())
    assert len(paths) == 3
    for path in paths:
        assert os.path.exists(path)
        with open(path, "rb") as fh:
            assert fh.read(8) == PNG_MAGIC


def test_handles_empty_breakdowns(tmp_path):
    empty = report(tp=0, fp=0, fn=0, provenance_tp={}, provenance_fp={},
                   lighting_recall={"0.0-0.2": None})
    paths = save_report_figures(tmp_path, empty, prefix="empty")
    for path in paths:
        assert os.path.getsize(path) > 0
