"""Driving the HTTP service end to end, including the push channel.

Creates a demo clip tree, starts the app in-process, opens a session,
draws an event span, and walks suggestion/accept rounds until the event is
fully confirmed, then saves and reads back the metrics.  The same
endpoints serve the browser front-end.
"""

import json
import tempfile
from pathlib import Path

from fastapi.testclient import TestClient

from handloop.service import create_app
from handloop.synthetic import synth_clip, write_clip_assets

root = Path(tempfile.mkdtemp(prefix="handloop-demo-"))
synthetic = synth_clip(n_events=3, seed=14)
write_clip_assets(root / "clips" / "demo", synthetic)
print("clip assets under", root / "clips" / "demo")

app = create_app(root)
client = TestClient(app)

sid = client.post("/sessions", json={"clip_id": "demo"}).json()["session_id"]
print("session:", sid)

hand, t_s, t_e = synthetic.clip.spans[0]
event = client.post(f"/sessions/{sid}/events", json={"hand": hand, "t_s": t_s, "t_e": t_e}).json()
print(f"event created: index {event['index']}, onset prior {event['onset_prior']}")

while True:
    nxt = client.post(f"/sessions/{sid}/next-intervention", json={"hand": hand}).json()
    if nxt["status"] != "intervention":
        print("loop finished with status:", nxt["status"])
        break
    print(
        f"  intervention {nxt['intervention_id']}: {nxt['authority']} {nxt['surface']}"
        f" targets={nxt['targets']} payload={nxt['payload']}"
    )
    body = (
        {"intervention_id": nxt["intervention_id"], "kind": "accept", "latency": 0.8}
        if nxt["payload"]
        else {
            "intervention_id": nxt["intervention_id"],
            "kind": "manual_entry",
            "values": {f: synthetic.references[0].__getattribute__(f) for f in nxt["targets"]},
            "latency": 2.0,
        }
    )
    delta = client.post(f"/sessions/{sid}/respond", json=body).json()
    changed = {f: d["status"] for f, d in delta["fields"].items()}
    print("    delta:", changed)

client.post(f"/sessions/{sid}/confirm-field", json={"hand": hand, "field": "t_s"})
client.post(f"/sessions/{sid}/confirm-field", json={"hand": hand, "field": "t_e"})

saved = client.post(f"/sessions/{sid}/save").json()
print("saved; complete match rate:", saved["metrics"]["complete_match_rate"])

updates = client.get(f"/sessions/{sid}/updates", params={"since": 0}).json()
kinds = [e["type"] for e in updates["events"]]
print(f"push buffer carried {len(kinds)} events:", kinds)

log_lines = client.get(f"/sessions/{sid}/log").text.splitlines()
print("log export:", len(log_lines), "trace records")
first = json.loads(log_lines[0])
print("first record keys:", sorted(first.keys()))
