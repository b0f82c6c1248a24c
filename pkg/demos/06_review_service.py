"""The session service driven end to end through its HTTP API.

Uses the in-process ASGI test client; the same requests work against a
deployed instance (`uvicorn periop.service:create_app --factory` with
PERIOP_CONFIG set).
"""

import tempfile

from fastapi.testclient import TestClient

from periop.config import load_config
from periop.fixtures import write_engine_config
from periop.service import SessionManager, create_app

workdir = tempfile.mkdtemp(prefix="periop-demo-")
manager = SessionManager(load_config(write_engine_config(workdir)))
client = TestClient(create_app(manager=manager))

created = client.post(
    "/v1/sessions",
    json={"patient_id": "P002", "task_text": "review the admission notes for missed diagnoses"},
).json()
session_id = created["session_id"]
print(f"created session {session_id} (phase {created['phase']})")

client.post(f"/v1/sessions/{session_id}/run?wait=true")
state = client.get(f"/v1/sessions/{session_id}").json()
print(f"after run: phase={state['phase']}, plan={state['plan']}")

trace = client.get(f"/v1/sessions/{session_id}/trace").json()["trace"]
kept = sum(1 for r in trace["rounds"] for c in r["candidates"] if c["kept"])
total = sum(len(r["candidates"]) for r in trace["rounds"])
print(f"search trace: {total} candidates, {kept} kept, {total - kept} pruned")

feedback = client.post(
    f"/v1/sessions/{session_id}/feedback",
    json={
        "feedback_id": "demo-http-fb",
        "directives": [
            {"target": "case overview", "action": "append", "text": "seen by orthogeriatrics"}
        ],
    },
).json()
print(f"feedback accepted: {feedback['accepted']}")

final = client.post(f"/v1/sessions/{session_id}/finalize").json()
print("final sections:", [s["heading"] for s in final["final_sections"]])
print(f"phase now: {client.get(f'/v1/sessions/{session_id}').json()['phase']}")
