import json
import random
import string
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

import numpy as np
import pytest
from PIL import Image as PILImage

from chartbench.table import Cell, Table

FIXTURES = Path(__file__).parent / "fixtures"

_ALNUM = string.ascii_letters + string.digits


def random_label(rng: random.Random, k: int = None) -> str:
    while True:
        s = "".join(rng.choice(_ALNUM) for _ in range(k or rng.randint(1, 8)))
        if s != "TITLE":
            return s


def random_cell(rng: random.Random) -> str:
    roll = rng.random()
    if roll < 0.4:
        return str(rng.randint(-10_000, 10_000))
    if roll < 0.7:
        return repr(round(rng.uniform(-1e4, 1e4), rng.randint(0, 4)))
    if roll < 0.8:
        return f"{rng.randint(0, 100)}%"
    if roll < 0.9:
        return ""
    return " ".join(random_label(rng) for _ in range(rng.randint(1, 3)))


def random_table(rng: random.Random, *, max_rows: int = 6, max_cols: int = 4) -> Table:
    n_cols = rng.randint(1, max_cols)
    n_rows = rng.randint(0, max_rows)
    return Table(
        tuple(random_label(rng) for _ in range(n_cols)),
        tuple(
            (random_label(rng), tuple(Cell(random_cell(rng)) for _ in range(n_cols)))
            for _ in range(n_rows)
        ),
        title=rng.choice([None, "Share of " + random_label(rng)]),
        corner=rng.choice(["Entity", "Year", "", random_label(rng)]),
    )


def numeric_table(rng: random.Random, n_rows: int = None, n_cols: int = None) -> Table:
    """Fixed-width distinct labels so no two row+column keys collide."""
    n_rows = n_rows or rng.randint(1, 6)
    n_cols = n_cols or rng.randint(1, 3)
    rows = rng.sample(range(100, 1000), n_rows)
    cols = rng.sample(range(10, 100), n_cols)
    return Table.from_values(
        [f"C{c}" for c in cols],
        [(f"R{r}", [rng.randint(1, 5000) for _ in cols]) for r in rows],
    )


def write_png(path: Path, color=(200, 220, 240), size=(320, 240)) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    arr = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    arr[...] = color
    arr[20:40, 20:200] = (10, 10, 10)
    PILImage.fromarray(arr).save(path)
    return path


def write_table_csv(path: Path, table: Table) -> Path:
    import csv
    import io

    path.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([table.corner or "Entity", *table.col_headers])
    for label, cells in table.rows:
        w.writerow([label, *(c.raw for c in cells)])
    path.write_text(buf.getvalue(), encoding="utf-8")
    return path


def make_dataset(root: Path, charts: dict, qa: dict = None, chart_types: bool = True) -> Path:
    """Build a ChartQA-layout tree.

    ``charts`` maps chart_id -> (split, chart_type, Table or None);
    ``qa`` maps "<split>_<kind>" -> list of ChartQA-style records.
    """
    types = []
    for k, (chart_id, (split, chart_type, table)) in enumerate(sorted(charts.items())):
        write_png(root / split / "png" / f"{chart_id}.png", color=(40 * k % 255, 120, 200))
        if table is not None:
            write_table_csv(root / split / "tables" / f"{chart_id}.csv", table)
        types.append(f"{chart_id},{chart_type}")
    if chart_types:
        (root / "chart_types.csv").write_text("chart_id,chart_type\n" + "\n".join(types) + "\n")
    for name, records in (qa or {}).items():
        split = name.split("_")[0]
        (root / split).mkdir(parents=True, exist_ok=True)
        (root / split / f"{name}.json").write_text(json.dumps(records))
    return root


# ---------------------------------------------------------------------------
# local stand-in for an OpenAI-compatible server


class StubServer:
    """Replies from a scripted list of ``(status, body)`` and records requests."""

    def __init__(self, script, delay: float = 0.0):
        self.script = list(script)
        self.delay = delay
        self.requests = []
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def do_POST(self):
                length = int(self.headers.get("Content-Length", 0))
                body = self.rfile.read(length)
                stub.requests.append(
                    {"path": self.path, "headers": dict(self.headers), "body": json.loads(body)}
                )
                if stub.delay:
                    import time

                    time.sleep(stub.delay)
                status, payload = stub.script.pop(0) if stub.script else (500, {"error": "script exhausted"})
                data = payload if isinstance(payload, bytes) else json.dumps(payload).encode()
                self.send_response(status)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                try:
                    self.wfile.write(data)
                except BrokenPipeError:
                    pass

            def log_message(self, *args):
                pass

        self.httpd = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.httpd.serve_forever, daemon=True)
        self.thread.start()

    @property
    def url(self) -> str:
        host, port = self.httpd.server_address
        return f"http://{host}:{port}"

    def close(self):
        self.httpd.shutdown()
        self.httpd.server_close()


def completion(text: str, finish_reason: str = "stop") -> dict:
    return {
        "id": "cmpl-1",
        "object": "chat.completion",
        "choices": [
            {"index": 0, "message": {"role": "assistant", "content": text}, "finish_reason": finish_reason}
        ],
        "usage": {"prompt_tokens": 11, "completion_tokens": 7, "total_tokens": 18},
    }


@pytest.fixture
def stub_server():
    servers = []

    def start(script, delay=0.0):
        s = StubServer(script, delay)
        servers.append(s)
        return s

    yield start
    for s in servers:
        s.close()


@pytest.fixture
def api_key(monkeypatch):
    monkeypatch.setenv("CHARTBENCH_API_KEY", "test-key")
    return "test-key"


# ---------------------------------------------------------------------------
# acceptance summary: one PASS/FAIL line per criterion

_ACCEPTANCE: dict = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or not marker.args:
        return
    name = marker.args[0]
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        _ACCEPTANCE[name] = (rep.passed, getattr(item, "acceptance_detail", ""), rep.duration)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name, (ok, detail, duration) in _ACCEPTANCE.items():
        status = "PASS" if ok else "FAIL"
        extra = f" ({detail})" if detail else ""
        terminalreporter.write_line(f"{status}  {name}{extra} [{duration:.2f}s]")
