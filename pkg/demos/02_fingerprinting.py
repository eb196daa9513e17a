"""Profiling tracked pages offline, then spotting their visits in a live stream.

Run with ``python3 demos/02_fingerprinting.py`` (about ten seconds).
"""

# %% Configure a mid-sized world: 40 pages, half of them tracked
from sgxleak.experiment import ExperimentConfig, run_experiment

cfg = ExperimentConfig.from_dict({"seed": 2, "corpus": {"n_pages": 40}})
arts = run_experiment(cfg)
print(f"{len(arts.stream)} packets from {len(arts.plan)} visits, "
      f"{len(arts.profiles)} tracked pages profiled")

# %% What a profile holds
prof = arts.profiles[0]
print(f"page {prof.page_id}: T={prof.T} constant packets, t={prof.interval_threshold_t:.2f} s, "
      f"k={prof.k} exemplar orders")
for pp in prof.packets[:5]:
    path = [h[0] for h in pp.key]
    print(f"  slot {pp.index}: hops {path} x{pp.per_visit_count} per visit, "
          f"delay ranges {list(pp.delay_ranges)}")
print("  first exemplar order:", prof.exemplar_sequences[0])

# %% Every detection fired once all of a page's counters turned positive
for ev in arts.detections[:8]:
    print(f"t={ev.detection_time:7.2f}s page {ev.page_id:3d} R before={ev.r_before:.2f} "
          f"attributed {len(ev.attributed)}/{len(ev.contributing)} buffered packets")

# %% How well did it do?
print(arts.report.summary())

# %% The legality classifier separates real packet orders from scrambled ones
import numpy as np

from sgxleak.classifier import predict_proba

clf = arts.classifiers.params[prof.page_id]
real = prof.exemplar_sequences[:3]
rng = np.random.default_rng(0)
scrambled = [tuple(int(x) for x in rng.permutation(prof.T)) for _ in range(3)]
print("real orders     ", np.round(predict_proba(clf, real), 3))
print("scrambled orders", np.round(predict_proba(clf, scrambled), 3))
