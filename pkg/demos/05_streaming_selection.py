"""Streaming top-K snapshot retention under a storage budget.

Feeds a stream of scored files through the selector and shows that the
retained set always equals the batch top-K when scores are distinct, while
dropped files are deleted as the stream progresses (never resurrected).
"""

import numpy as np

from pnclosure import ScoredFile, streaming_topk

rng = np.random.default_rng(3)
scores = rng.permutation(20).astype(float)
files = [ScoredFile(f"seed{i:02d}_t{(i % 4) / 10:.1f}", s, (i, (i % 4) / 10))
         for i, s in enumerate(scores)]

budget = 5
state = streaming_topk(files, budget)

print(f"stream of {len(files)} files, budget {budget}\n")
print("event log:")
for ev in state.events:
    print(f"  {ev.sequence:3d}  {ev.action:5s}  {ev.file_id}  score {ev.score:.1f}")

kept = sorted(state.retained.values(), key=lambda f: -f.score)
print("\nretained (score-ranked):")
for f in kept:
    print(f"  {f.file_id}  score {f.score:.1f}")

batch_topk = sorted(files, key=lambda f: -f.score)[:budget]
print("\nmatches batch top-K:", {f.file_id for f in kept} == {f.file_id for f in batch_topk})
print("score threshold:", state.threshold)
