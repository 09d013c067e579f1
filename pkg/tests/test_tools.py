import math
from dataclasses import dataclass

import numpy as np
import pandas as pd
import pytest
import torch

from hanlab.tools.logging import format_stage_name, log_records, read_records, to_record, unique_file_name
from hanlab.tools.metadata import get_report_summary, load_report_frame
from hanlab.utils.plotly import loss_curve_figure, save_figure

CURVES = [
    {"stage": 1, "loss_name": "aggregation", "step": 0, "value": 0.5},
    {"stage": 1, "loss_name": "aggregation", "step": 1, "value": 0.2},
    {"stage": 2, "loss_name": "attacker", "step": 0, "value": 0.9},
]


@dataclass
class _Point:
    x: float
    tags: tuple


def test_format_stage_name():
    assert format_stage_name("stage4_balance ") == "---STAGE4 BALANCE----"


def test_to_record_is_strict_json():
    record = to_record({"p": _Point(math.inf, (1, 2)), "t": torch.tensor([0.5]), "n": np.float32(2.0), 3: math.nan})
    assert record == {"p": {"x": None, "tags": [1, 2]}, "t": [0.5], "n": 2.0, "3": None}


def test_log_records_appends_and_overwrites(tmp_path):
    path, name = log_records([{"a": 1}, _Point(1.0, ())], "r.jsonl", log_path=str(tmp_path))
    assert name == "r.jsonl"
    log_records([{"a": 2}], "r.jsonl", log_path=str(tmp_path))
    assert [r.get("a") for r in read_records(path)] == [1, None, 2]
    log_records([{"a": 3}], "r.jsonl", log_path=str(tmp_path), overwrite=True)
    assert read_records(path) == [{"a": 3}]
    assert log_records([{"a": 4}], "r.jsonl", log=False) == (None, None)


def test_unique_file_name(tmp_path):
    assert unique_file_name(str(tmp_path), "bench.jsonl") == "bench.jsonl"
    (tmp_path / "bench.jsonl").write_text("")
    (tmp_path / "bench_1.jsonl").write_text("")
    assert unique_file_name(str(tmp_path), "bench.jsonl") == "bench_2.jsonl"


def test_report_summary_of_loss_curves():
    (summary,) = get_report_summary(CURVES)
    assert "Single_Report" in summary
    assert "Loss Curves:" in summary
    assert "3 records x 4 fields" in summary
    assert "Loss Curves:" not in get_report_summary(CURVES, skip_stats=True)[0]


def test_report_summary_of_named_reports(tmp_path):
    path, _ = log_records([{"op": "encrypt", "seconds": [0.1, 0.2]}], "bench.jsonl", log_path=str(tmp_path))
    summaries = get_report_summary({"bench": path, "curves": pd.DataFrame(CURVES)})
    assert summaries[0].startswith("Report Name: bench")
    assert summaries[1].startswith("Report Name: curves")


def test_load_report_frame_rejects_other_inputs():
    assert load_report_frame(CURVES).shape == (3, 4)
    with pytest.raises(TypeError):
        load_report_frame(42)


def test_loss_curve_figure_saved_as_html(tmp_path):
    fig = loss_curve_figure({"encryptor": [1.0, 0.5, 0.25], "attacker_0_pk": [0.3, 0.2]}, log_y=False)
    assert [trace.name for trace in fig.data] == ["encryptor", "attacker_0_pk"]
    path = save_figure(fig, str(tmp_path / "plots" / "curves.html"))
    assert (tmp_path / "plots" / "curves.html").exists() and path.endswith("curves.html")
