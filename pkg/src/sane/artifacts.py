"""Run artifacts: CSV traces, lineage events and graph, summary and manifest.

Every file goes through :func:`atomic_write_bytes` (temp file in the same
directory, fsync, rename), so a reader never sees a half-written artifact.
Floats are written with ``repr`` so identical runs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path

from .ensemble import LineageEvent, replay_lineage

SCHEMAS = {
    "returns.csv": 1,
    "module_ids.csv": 1,
    "critic_trace.csv": 1,
    "events.jsonl": 1,
    "lineage.dot": 1,
    "summary.json": 1,
    "config.ini": 1,
    "checkpoint.bin": 1,
}
RETURNS_HEADER = ("step", "task_id", "mean_return", "sem")
MODULE_IDS_HEADER = ("step", "module_id")
CRITIC_TRACE_HEADER = ("step", "observed_return", "predicted_v", "predicted_u", "module_id")


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def _cell(v) -> str:
    return repr(float(v)) if isinstance(v, float) else str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(v) for v in row])
    return buf.getvalue()


def write_csv(path, header, rows) -> None:
    atomic_write_text(path, csv_text(header, rows))


def read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def events_text(events) -> str:
    return "".join(json.dumps(ev.to_json(), sort_keys=True) + "\n" for ev in events)


def read_events(path) -> list[LineageEvent]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                out.append(LineageEvent.from_json(json.loads(line)))
    return out


def lineage_dot(events, live_ids, initial_ids=None) -> str:
    """DOT digraph of module lineage.

    Spawn edges run parent -> child in blue; merge edges run dropped -> survivor
    in red.  Live modules are filled light blue.
    """
    live = set(live_ids)
    nodes = set(live) | set(initial_ids or ())
    for ev in events:
        nodes.update((ev.parent_id, ev.child_id))
    lines = ["digraph lineage {", "  rankdir=LR;", "  node [shape=circle];"]
    for n in sorted(nodes):
        attrs = f'label="{n}"'
        if n in live:
            attrs += ', style=filled, fillcolor=lightblue'
        lines.append(f"  m{n} [{attrs}];")
    for ev in events:
        if ev.kind == "spawn":
            lines.append(f'  m{ev.parent_id} -> m{ev.child_id} '
                         f'[label="spawn", color=blue, step={ev.step}];')
        else:
            lines.append(f'  m{ev.child_id} -> m{ev.parent_id} '
                         f'[label="merge", color=red, style=dashed, step={ev.step}];')
    lines.append("}")
    return "\n".join(lines) + "\n"


def lineage_dot_from_events(events, initial_ids) -> str:
    return lineage_dot(events, replay_lineage(events, initial_ids), initial_ids)


def json_text(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def write_run_artifacts(out_dir, log, lineage, live_ids, initial_ids, summary: dict,
                        config_text: str) -> dict[str, Path]:
    """Write every per-run artifact plus ``manifest.json``; returns name -> path."""
    out = Path(out_dir)
    files = {
        "returns.csv": csv_text(RETURNS_HEADER, log.returns),
        "module_ids.csv": csv_text(MODULE_IDS_HEADER, log.module_ids),
        "critic_trace.csv": csv_text(CRITIC_TRACE_HEADER, log.critic_trace),
        "events.jsonl": events_text(lineage),
        "lineage.dot": lineage_dot(lineage, live_ids, initial_ids),
        "summary.json": json_text(summary),
        "config.ini": config_text,
    }
    paths = {}
    for name, text in files.items():
        atomic_write_text(out / name, text)
        paths[name] = out / name
    manifest = {"schemas": {n: SCHEMAS[n] for n in sorted(SCHEMAS) if (out / n).exists()},
                "initial_ids": list(initial_ids)}
    atomic_write_text(out / "manifest.json", json_text(manifest))
    paths["manifest.json"] = out / "manifest.json"
    return paths
