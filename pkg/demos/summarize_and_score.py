"""
Summarize synthetic charts with every strategy and score them
=============================================================

Runs offline against the scripted model backend.
"""

from datetime import timedelta

from tumorboard.charts import ChartStore, generate_synthetic_chart, random_profile, synthetic_rubric
from tumorboard.gateway import Gateway
from tumorboard.judge import judge_summary, score_summary
from tumorboard.model import AUTOMATED_METHODS
from tumorboard.orchestrator import StrategyConfig, run_strategy
from tumorboard.reports import comparison_report
from tumorboard.scripted import ScriptedModel

# three seeded patients; each rubric lists the facts planted in the chart
charts, rubrics = [], {}
for seed in range(3):
    profile = random_profile(seed)
    chart = generate_synthetic_chart(seed, profile)
    charts.append(chart)
    rubrics[chart.patient_id] = synthetic_rubric(seed, profile)
store = ChartStore.from_charts(charts)
gateway = Gateway("live", ScriptedModel())

chart = charts[0]
board_date = chart.notes[-1].timestamp.date() + timedelta(days=3)
print(f"{chart.patient_id}: {len(chart.notes)} notes, board on {board_date}")

# one summary per strategy for the first patient
for method in AUTOMATED_METHODS:
    art = run_strategy(StrategyConfig(method), chart.patient_id, board_date, gateway, store)
    print(f"\n--- {method.value} ({len(art.body)} characters, {len(art.transcript_digests)} model calls)")
    print(art.body)

# the multi-agent audit log shows what each agent did
art = run_strategy(StrategyConfig(AUTOMATED_METHODS[-1]), chart.patient_id, board_date, gateway, store)
for entry in art.audit_log:
    if entry["action"] == "tool_call":
        print(entry["agent"], entry["tool"], entry.get("lookback_days", ""))

# judge every summary against its rubric and compare methods
scores = []
for c in charts:
    as_of = c.notes[-1].timestamp.date() + timedelta(days=3)
    for method in AUTOMATED_METHODS:
        body = run_strategy(StrategyConfig(method), c.patient_id, as_of, gateway, store).body
        records = judge_summary(rubrics[c.patient_id], body, gateway)
        scores.append(score_summary(rubrics[c.patient_id], records, c.patient_id, method))

for s in scores:
    print(f"{s.case_id} {s.method.value:16s} fully={s.fully_present:.2f} partial={s.fully_or_partial:.2f}")

report = comparison_report(scores, baseline=AUTOMATED_METHODS[0])
for row in report.comparisons:
    d = row.to_dict()
    print(d["family"], d["method"], d["median_difference"], d["p_adjusted"], d["significance_mark"])
