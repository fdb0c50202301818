"""CSV form of expert panels.

Forecasts, one row per member or quantile::

    date,location_id,lead_time_h,expert_name,kind,index,value,order

``kind`` is ``sample`` or ``quantile``; ``order`` is empty for samples.
Observations::

    date,location_id,lead_time_h,observed_value
"""

from __future__ import annotations

import datetime as dt
import io
from typing import Sequence

import numpy as np
import pandas as pd

from ..stepwise_cdf import Provenance, from_quantiles, from_sample
from .panel import ExpertPanel, PanelError

FORECAST_COLUMNS = ["date", "location_id", "lead_time_h", "expert_name", "kind", "index", "value", "order"]
OBSERVATION_COLUMNS = ["date", "location_id", "lead_time_h", "observed_value"]
FLOAT_FORMAT = "%.9g"


class PanelFormatError(PanelError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


def _fmt(v: float) -> str:
    return FLOAT_FORMAT % v


def write_panels(panels: Sequence[ExpertPanel], forecasts, observations) -> None:
    """Write panels to two CSV files (paths or text streams)."""
    frows, orows = [], []
    for p in panels:
        for t in range(p.T):
            d = p.dates[t].isoformat()
            orows.append(f"{d},{p.location_id},{p.lead_time_h},{_fmt(p.observations[t])}\n")
            for name, series in zip(p.expert_names, p.forecasts):
                c = series[t]
                if c.provenance is Provenance.RANDOM_SAMPLE:
                    for i, v in enumerate(c.members(), 1):
                        frows.append(f"{d},{p.location_id},{p.lead_time_h},{name},sample,{i},{_fmt(v)},\n")
                elif c.provenance is Provenance.QUANTILE_SET:
                    for i, (v, o) in enumerate(zip(c.locations, c.orders), 1):
                        frows.append(f"{d},{p.location_id},{p.lead_time_h},{name},quantile,{i},{_fmt(v)},{_fmt(o)}\n")
                else:
                    raise PanelError(f"expert {name!r}: only sample and quantile forecasts can be written")
    _write(forecasts, ",".join(FORECAST_COLUMNS) + "\n", frows)
    _write(observations, ",".join(OBSERVATION_COLUMNS) + "\n", orows)


def _write(target, header, rows):
    if hasattr(target, "write"):
        target.write(header)
        target.writelines(rows)
    else:
        with open(target, "w", encoding="utf-8", newline="") as fh:
            fh.write(header)
            fh.writelines(rows)


def _read(source, columns) -> pd.DataFrame:
    if isinstance(source, str) and "\n" in source:
        source = io.StringIO(source)
    try:
        df = pd.read_csv(source, dtype=str, keep_default_na=False, encoding="utf-8")
    except (pd.errors.ParserError, UnicodeDecodeError) as exc:
        raise PanelFormatError(f"unreadable CSV: {exc}") from exc
    missing = [c for c in columns if c not in df.columns]
    if missing:
        raise PanelFormatError(f"missing columns {missing}", 1)
    return df


def _numeric(df, col, kind=float, allow_empty=False) -> np.ndarray:
    raw = df[col].str.strip()
    vals = pd.to_numeric(raw, errors="coerce")
    bad = vals.isna() & ~(allow_empty & (raw == ""))
    if kind is float:
        bad |= ~np.isfinite(vals.fillna(0.0))
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise PanelFormatError(f"invalid {col} value {df[col].iloc[i]!r}", i + 2)
    if kind is int:
        if ((vals % 1) != 0).any():
            i = int(np.flatnonzero(((vals % 1) != 0).to_numpy())[0])
            raise PanelFormatError(f"non-integer {col} value {df[col].iloc[i]!r}", i + 2)
        return vals.astype(np.int64).to_numpy()
    return vals.to_numpy(dtype=float)


def _dates(df) -> np.ndarray:
    uniq = {}
    for i, s in enumerate(df["date"]):
        if s not in uniq:
            try:
                uniq[s] = dt.date.fromisoformat(s.strip())
            except ValueError:
                raise PanelFormatError(f"invalid date {s!r}", i + 2) from None
    return df["date"].map(uniq).to_numpy()


def read_panels(forecasts, observations) -> list[ExpertPanel]:
    """Read and validate all (location, lead time) panels in the two files."""
    odf = _read(observations, OBSERVATION_COLUMNS)
    fdf = _read(forecasts, FORECAST_COLUMNS)

    odf["_date"] = _dates(odf)
    odf["_lead"] = _numeric(odf, "lead_time_h", int)
    odf["_y"] = _numeric(odf, "observed_value")
    fdf["_date"] = _dates(fdf)
    fdf["_lead"] = _numeric(fdf, "lead_time_h", int)
    fdf["_index"] = _numeric(fdf, "index", int)
    fdf["_value"] = _numeric(fdf, "value")
    fdf["_order"] = _numeric(fdf, "order", allow_empty=True)
    fdf["_line"] = np.arange(len(fdf)) + 2

    kinds = fdf["kind"].str.strip()
    bad = ~kinds.isin(["sample", "quantile"])
    if bad.any():
        i = int(np.flatnonzero(bad.to_numpy())[0])
        raise PanelFormatError(f"unknown kind {fdf['kind'].iloc[i]!r}", i + 2)
    fdf["kind"] = kinds
    q = (kinds == "quantile").to_numpy()
    bad_order = q & ~((fdf["_order"] >= 0) & (fdf["_order"] <= 1)).to_numpy()
    if bad_order.any():
        i = int(np.flatnonzero(bad_order)[0])
        raise PanelFormatError("quantile rows need an order in [0, 1]", i + 2)

    dup = odf.duplicated(["_date", "location_id", "_lead"], keep="first")
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        raise PanelFormatError("duplicate observation", i + 2)
    key = ["_date", "location_id", "_lead", "expert_name", "_index"]
    dup = fdf.duplicated(key, keep="first")
    if dup.any():
        i = int(np.flatnonzero(dup.to_numpy())[0])
        r = fdf.iloc[i]
        raise PanelFormatError(
            f"duplicate member {r['_index']} of expert {r['expert_name']!r} on {r['date']}", i + 2
        )

    expert_order = list(dict.fromkeys(fdf["expert_name"]))
    panels = []
    fgroups = dict(tuple(fdf.groupby(["_lead", "location_id"], sort=True)))
    for (lead, loc), og in odf.groupby(["_lead", "location_id"], sort=True):
        og = og.sort_values("_date")
        dates = list(og["_date"])
        fg = fgroups.pop((lead, loc), None)
        if fg is None:
            raise PanelError(f"no forecasts for location {loc!r}, lead time {lead} h")
        panels.append(_build_panel(fg, dates, og["_y"].to_numpy(), loc, int(lead), expert_order))
    if fgroups:
        lead, loc = next(iter(fgroups))
        raise PanelError(f"forecasts without observations for location {loc!r}, lead time {lead} h")
    return panels


def _build_panel(fg, dates, y, loc, lead, expert_order) -> ExpertPanel:
    names = list(expert_order)
    date_pos = {d: i for i, d in enumerate(dates)}
    extra = set(fg["_date"]) - set(date_pos)
    if extra:
        d = min(extra)
        raise PanelError(f"forecasts on {d.isoformat()} without observation at {loc!r}, {lead} h")
    series = {n: [None] * len(dates) for n in names}
    fg = fg.sort_values(["expert_name", "_date", "_index"], kind="stable")
    exp_arr = fg["expert_name"].to_numpy()
    date_arr = fg["_date"].to_numpy()
    kind_arr = fg["kind"].to_numpy()
    val = fg["_value"].to_numpy()
    order = fg["_order"].to_numpy()
    line = fg["_line"].to_numpy()
    brk = np.flatnonzero((exp_arr[1:] != exp_arr[:-1]) | (date_arr[1:] != date_arr[:-1])) + 1
    starts = np.concatenate(([0], brk))
    ends = np.concatenate((brk, [len(fg)]))
    kinds = {}
    for s, e in zip(starts, ends):
        name, d = exp_arr[s], date_arr[s]
        k = set(kind_arr[s:e])
        if len(k) != 1 or kinds.setdefault(name, next(iter(k))) != next(iter(k)):
            raise PanelFormatError(f"expert {name!r} mixes sample and quantile rows", int(line[s]))
        try:
            if kinds[name] == "sample":
                cdf = from_sample(val[s:e])
            else:
                cdf = from_quantiles(val[s:e], order[s:e])
        except ValueError as exc:
            raise PanelFormatError(f"expert {name!r} on {d.isoformat()}: {exc}", int(line[s])) from None
        series[name][date_pos[d]] = cdf
    for name in names:
        for i, c in enumerate(series[name]):
            if c is None:
                raise PanelError(f"expert {name!r} has no forecast on {dates[i].isoformat()} at {loc!r}, {lead} h")
    return ExpertPanel(names, [series[n] for n in names], y, dates, str(loc), lead)


def load_panel_csv(forecasts, observations) -> ExpertPanel:
    """Read a file pair holding exactly one (location, lead time) panel."""
    panels = read_panels(forecasts, observations)
    if len(panels) != 1:
        raise PanelError(f"expected one panel, found {len(panels)}")
    return panels[0]
