"""Secondary-surface acceptance: console round trip against a live service.

Skipped automatically when the console is unbuilt or node is unavailable, so
the primary suite never depends on it.
"""

import os
import shutil
import socket
import subprocess
import sys
import time
from pathlib import Path

import pytest

FRONTEND = Path(__file__).resolve().parent.parent / "frontend"

pytestmark = pytest.mark.skipif(
    shutil.which("npx") is None or not (FRONTEND / "node_modules").exists(),
    reason="console not built (frontend/node_modules missing) or node unavailable",
)


def free_port() -> int:
    with socket.socket() as sock:
        sock.bind(("127.0.0.1", 0))
        return sock.getsockname()[1]


@pytest.fixture()
def live_service(desk_artifacts):
    port = free_port()
    code = (
        "import sys, uvicorn\n"
        "from apiro.service import create_app\n"
        "app = create_app(sys.argv[1], sys.argv[2], static_dir=sys.argv[3])\n"
        f"uvicorn.run(app, host='127.0.0.1', port={port}, log_level='warning')\n"
    )
    proc = subprocess.Popen(
        [
            sys.executable,
            "-c",
            code,
            str(desk_artifacts / "recommender.bin"),
            str(desk_artifacts / "embedding.bin"),
            str(FRONTEND / "dist"),
        ]
    )
    base = f"http://127.0.0.1:{port}"
    try:
        import httpx

        deadline = time.time() + 30
        while time.time() < deadline:
            try:
                if httpx.get(f"{base}/v1/health", timeout=1).status_code == 200:
                    break
            except httpx.HTTPError:
                time.sleep(0.2)
        else:
            raise RuntimeError("service did not come up")
        yield base
    finally:
        proc.terminate()
        proc.wait(timeout=10)


def test_console_round_trip(live_service):
    result = subprocess.run(
        ["npx", "vitest", "run", "tests/integration"],
        cwd=FRONTEND,
        env={**os.environ, "CONSOLE_SERVICE_URL": live_service},
        capture_output=True,
        text=True,
        timeout=300,
    )
    if result.returncode != 0:
        raise AssertionError(
            f"console round trip failed:\n{result.stdout}\n{result.stderr}"
        )
    assert "1 passed" in result.stdout
    print("[ACCEPTANCE] console round trip against live desk service: PASS")


def test_service_serves_console_assets(live_service):
    import httpx

    page = httpx.get(f"{live_service}/ui/", timeout=5)
    assert page.status_code == 200
    assert "query-form" in page.text
    script = httpx.get(f"{live_service}/ui/main.js", timeout=5)
    assert script.status_code == 200
