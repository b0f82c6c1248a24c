"""Dual-memory retrieval: best-record argmax and thresholded exemplar cases.

Loads the shipped corpus, generates a retrieval query for one plan step, and
shows how the exemplar set shrinks as the similarity threshold rises.
"""

import tempfile

from periop.config import build_backend, build_embedder, load_config
from periop.domain import PlanStep, TaskKind
from periop.fixtures import write_engine_config
from periop.memory import (
    generate_query,
    load_long_term,
    retrieve_best_record,
    retrieve_exemplar_cases,
)

workdir = tempfile.mkdtemp(prefix="periop-demo-")
config = load_config(write_engine_config(workdir))
embedder = build_embedder(config)
store = load_long_term(config.corpus_path, embedder)
backend = build_backend(config)

patient = store.get_patient("P001")
step = PlanStep(text="optimize reversible comorbidities before listing", index=0)

query = generate_query(patient, TaskKind.SURGERY, step, backend, embedder)
print(f"generated query: {query.text!r}\n")

record = retrieve_best_record(query, store, "P001")
print(f"best record: {record.record_id} ({record.date})")
print(f"  {record.text[:100]}...\n")

for threshold in (-1.0, 0.3, 0.6, 0.9):
    cases = retrieve_exemplar_cases(query, store, threshold, max_cases=config.max_cases)
    names = ", ".join(c.case_id for c in cases) or "(none)"
    print(f"threshold {threshold:+.1f}: {len(cases)} exemplar case(s): {names}")
