"""
Weekly rating monitor after deployment
======================================
"""

import random
from datetime import date, timedelta

from tumorboard.model import GenerationMethod
from tumorboard.ratings import DOMAINS, RatingRecord, combine_pair, weekly_monitor

# two raters score every case; the final score is the floor of their mean
print(combine_pair(3, 4), combine_pair(2, 3))

rng = random.Random(1)
weeks = [date(2025, 3, 3) + timedelta(weeks=k) for k in range(5)]
ratings, case_dates = [], {}
for k, size in enumerate((10, 10, 5, 6, 19)):
    for j in range(size):
        case = f"wk{k}-{j:02d}"
        case_dates[case] = weeks[k] + timedelta(days=j % 5)
        for domain in DOMAINS:
            pair = (2, 2) if case == "wk3-01" and domain == "Accuracy" else (rng.randint(3, 5), rng.randint(3, 5))
            for rater, score in zip(("dr_a", "dr_b"), pair):
                ratings.append(RatingRecord(case, GenerationMethod.MULTI_AGENT_LOW, rater, domain, score,
                                            case_dates[case]))

rows = weekly_monitor(ratings, weeks, n_reps=10_000, seed=0, case_dates=case_dates)
for r in rows:
    flag = " <-- " + ",".join(r.cases_below) if r.any_case_below else ""
    print(f"{r.week} {r.domain:9s} n={r.n:2d} mean={r.mean:.2f} [{r.ci_low:.2f}, {r.ci_high:.2f}]{flag}")
