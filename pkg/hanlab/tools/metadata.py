import pandas as pd
from typing import Dict, List, Union

from hanlab.tools.logging import read_records


def load_report_frame(source: Union[str, pd.DataFrame, List[dict]]) -> pd.DataFrame:
    """A JSON-lines report path, a list of records, or a frame, as a DataFrame."""
    if isinstance(source, pd.DataFrame):
        return source
    if isinstance(source, str):
        return pd.DataFrame(read_records(source))
    if isinstance(source, list):
        return pd.DataFrame(source)
    raise TypeError("Input must be a JSON-lines path, a list of records, or a DataFrame.")


def get_report_summary(
    reports: Union[str, pd.DataFrame, List[dict], Dict[str, Union[str, pd.DataFrame, List[dict]]]],
    n_sample: int = 10,
    skip_stats: bool = False,
) -> List[str]:
    """
    Generate a text summary for one or more reports. Accepts a single report, or a
    dictionary mapping names to reports. A report is a JSON-lines path, a list of
    records, or a DataFrame.

    Parameters
    ----------
    reports : str or list of dict or pandas.DataFrame or dict of (str -> report)
        - Single report: produce a single summary (returned within a one-element list).
        - Dictionary of reports: produce a summary for each, using dictionary keys as names.
    n_sample : int, default 10
        Number of records to display in the "Records (first 10)" section.
    skip_stats : bool, default False
        If True, skip the per-loss statistics section.

    Example:
    --------
    ``` python
    from hanlab.tools.metadata import get_report_summary
    summaries = get_report_summary({"training": "logs/train_curves.jsonl"})
    print(summaries[0])
    ```

    Returns
    -------
    list of str
        A list of summaries, one for each report. Each summary includes:
        - Number of records and fields
        - Field data types
        - First records
        - For loss curves: final value, minimum and step count per stage and loss
        - Descriptive statistics of numeric fields
    """

    summaries = []

    if isinstance(reports, dict):
        for report_name, report in reports.items():
            summaries.append(_summarize_report(load_report_frame(report), report_name, n_sample, skip_stats))
    else:
        summaries.append(_summarize_report(load_report_frame(reports), "Single_Report", n_sample, skip_stats))

    return summaries


def _summarize_report(df: pd.DataFrame, report_name: str, n_sample=10, skip_stats=False) -> str:
    """Generate a summary string for a single report frame."""
    # Nested cells (lists, dicts) would break nunique/describe
    df = df.apply(lambda col: col.map(lambda x: str(x) if isinstance(x, (dict, list)) else x))

    column_types = "\n".join([f"{col}: {dtype}" for col, dtype in df.dtypes.items()])

    lines = [
        f"Report Name: {report_name}",
        "----------------------------",
        f"Shape: {df.shape[0]} records x {df.shape[1]} fields",
        "",
        "Field Data Types:",
        column_types,
        "",
        f"Records (first {n_sample}):",
        df.head(n_sample).to_string(),
    ]

    if not skip_stats:
        if {"stage", "loss_name", "value"}.issubset(df.columns):
            curves = (
                df.sort_values(["stage", "step"])
                .groupby(["stage", "loss_name"])["value"]
                .agg(steps="count", final="last", minimum="min")
            )
            lines += ["", "Loss Curves:", curves.to_string()]
        numeric = df.select_dtypes("number")
        if not numeric.empty:
            lines += ["", "Data Description:", numeric.describe().to_string()]

    return "\n".join(lines).strip()
