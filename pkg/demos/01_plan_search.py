"""Stepwise plan search on the shipped synthetic corpus.

Generates candidate surgical steps with the scripted backend, scores each
candidate on the five-criterion rubric, keeps the top-2 per depth, and shows
every pruning decision the search made.
"""

import tempfile

from periop.config import build_backend, build_embedder, load_config
from periop.domain import TaskKind
from periop.fixtures import write_engine_config
from periop.memory import load_long_term
from periop.planner import beam_search_plan

workdir = tempfile.mkdtemp(prefix="periop-demo-")
config = load_config(write_engine_config(workdir))
store = load_long_term(config.corpus_path, build_embedder(config))

patient = store.get_patient("P001")
print(f"patient: {patient.basic_info_text()}\n")

plan, trace = beam_search_plan(patient, TaskKind.SURGERY, config.planner, build_backend(config))

for round_doc in trace.rounds:
    print(f"depth {round_doc.depth}: {len(round_doc.candidates)} candidates")
    for node in round_doc.candidates:
        mark = "kept " if node.node_id in round_doc.beam_ids else "prune"
        print(f"  [{mark}] score={node.score:.3f} {node.plan.steps[-1].text}")

print("\nselected plan:")
for step in plan.steps:
    print(f"  {step.index + 1}. {step.text}")
print(f"final score: {trace.final_score:.3f}")
