"""The four-stage laboratory workflow on one patient's lab table.

Identify abnormal rows, rank them down to the k_max budget, retrieve
evidence per selected item from the offline tool fixtures, and synthesize
one interpretation per item into working memory.
"""

import tempfile

from periop.config import build_backend, build_embedder, build_tools, load_config
from periop.domain import TaskKind
from periop.fixtures import write_engine_config
from periop.agents import identify_abnormal, run_lab_agent
from periop.memory import WorkingMemory, load_long_term

workdir = tempfile.mkdtemp(prefix="periop-demo-")
config = load_config(write_engine_config(workdir))
store = load_long_term(config.corpus_path, build_embedder(config))

patient = store.get_patient("P001")
labs = store.labs_for("P001")
abnormal = identify_abnormal(labs)
print(f"{len(labs)} lab rows, {len(abnormal)} abnormal:")
for item in abnormal:
    low, high = item.reference_range
    print(f"  {item.name}: {item.value} {item.unit} (reference {low}-{high})")

working = WorkingMemory("lab-demo")
analyses = run_lab_agent(
    patient,
    TaskKind.ANALYSIS,
    labs,
    build_tools(config),
    build_backend(config),
    working,
    k_max=config.k_max,
)

print(f"\nselected {len(analyses)} of {len(abnormal)} (k_max={config.k_max}):")
for analysis in analyses:
    sources = ", ".join(e.evidence_id for e in analysis.evidence) or "no evidence found"
    print(f"\n- {analysis.item.name} [{sources}]")
    print(f"  {analysis.interpretation}")

print(f"\nworking memory now holds {len(working)} laboratory entries")
