import pydot

from sane.artifacts import (atomic_write_text, csv_text, events_text, lineage_dot,
                            lineage_dot_from_events, read_csv, read_events)
from sane.ensemble import LineageEvent


def parse(dot):
    graphs = pydot.graph_from_dot_data(dot)
    assert graphs is not None and len(graphs) == 1
    return graphs[0]


def filled(graph):
    return {n.get_name() for n in graph.get_nodes() if n.get("style") == "filled"}


def test_single_node_graph():
    g = parse(lineage_dot([], [0]))
    assert [n.get_name() for n in g.get_nodes() if n.get_name().startswith("m")] == ["m0"]
    assert g.get_edges() == []
    assert filled(g) == {"m0"}


def test_spawn_then_merge_back():
    events = [LineageEvent("spawn", 0, 1, 5), LineageEvent("merge", 0, 1, 9)]
    g = parse(lineage_dot_from_events(events, [0]))
    names = {n.get_name() for n in g.get_nodes() if n.get_name().startswith("m")}
    assert names == {"m0", "m1"}
    edges = [(e.get_source(), e.get_destination(), e.get("label")) for e in g.get_edges()]
    assert edges == [("m0", "m1", '"spawn"'), ("m1", "m0", '"merge"')]
    assert filled(g) == {"m0"}


def test_larger_lineage_parses():
    events = [LineageEvent("spawn", 0, 3, 1), LineageEvent("spawn", 3, 4, 2),
              LineageEvent("merge", 2, 3, 2), LineageEvent("merge", 4, 1, 6)]
    g = parse(lineage_dot_from_events(events, [0, 1, 2]))
    assert filled(g) == {"m0", "m2", "m4"}
    assert len(g.get_edges()) == 4


def test_events_round_trip(tmp_path):
    events = [LineageEvent("spawn", 0, 1, 5), LineageEvent("merge", 0, 1, 9)]
    path = tmp_path / "events.jsonl"
    atomic_write_text(path, events_text(events))
    assert read_events(path) == events
    first = path.read_text().splitlines()[0]
    assert first == '{"child": 1, "kind": "spawn", "parent": 0, "step": 5}'


def test_csv_header_and_float_repr(tmp_path):
    path = tmp_path / "r.csv"
    atomic_write_text(path, csv_text(("step", "task_id", "mean_return", "sem"),
                                     [(10, 0, 0.1, 0.0)]))
    assert path.read_text().splitlines() == ["step,task_id,mean_return,sem", "10,0,0.1,0.0"]
    assert read_csv(path) == [{"step": "10", "task_id": "0", "mean_return": "0.1", "sem": "0.0"}]
    assert not list(tmp_path.glob("*.tmp*"))
