"""The evaluation-metric harness over the shipped eval records.

Computes diagnostic coverage, misdiagnosis avoidance, plan feasibility,
guideline adherence, warning sensitivity/false-alarm rate, complication
recall, and guidance similarity, then prints the plot-ready table.
"""

import tempfile
from pathlib import Path

from periop.fixtures import FIXTURES_DIR
from periop.metrics import evaluate_corpus, load_eval_records, write_report

records = load_eval_records(FIXTURES_DIR / "eval")
print(f"loaded {len(records)} eval records\n")

report = evaluate_corpus(records)
print(report.to_table())

if report.undefined_counts:
    print(f"undefined (excluded from means): {report.undefined_counts}")

out_prefix = Path(tempfile.mkdtemp(prefix="periop-demo-")) / "report"
tsv_path, json_path = write_report(report, out_prefix)
print(f"written: {tsv_path}\n         {json_path}")
