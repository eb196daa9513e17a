"""Padding and batching against the fingerprinting attack, with their costs.

Run with ``python3 demos/03_countermeasures.py`` (under a minute).
"""

# %% One attacker, trained once on an undefended replica
from sgxleak.cli import DEFAULT_DEFENSES
from sgxleak.countermeasures import MaxLen, MultipleOf
from sgxleak.experiment import (ExperimentConfig, GroundTruth, defense_sweep, noise_sweep,
                                run_experiment, stage_rules)
from sgxleak.metrics import bandwidth_overhead

cfg = ExperimentConfig.from_dict({"seed": 5, "corpus": {"n_pages": 40}})
arts = run_experiment(cfg)
rules = stage_rules(cfg)
gt = GroundTruth.build(arts.corpus, arts.plan, arts.stream)

# %% Replay the same stream under each defense
rows = defense_sweep(cfg, rules, arts.stream, arts.profiles, arts.classifiers.params, gt,
                     DEFAULT_DEFENSES)
print(f"{'defense':22s} {'page acc':>8s} {'recall':>7s} {'overhead':>9s} {'cyc/pkt':>9s}")
for r in rows:
    print(f"{r['defense']:22s} {r['page_accuracy']:8.3f} {r['page_recall']:7.3f} "
          f"{r['bandwidth_overhead']:9.3f} {r['cycles_per_packet']:9.0f}")

# %% Bandwidth overhead grows with the padding block
for x in (100, 200, 400, 600, 800, 1000):
    print(f"MultipleOf({x:4d}) overhead {bandwidth_overhead(arts.corpus, MultipleOf(x)):.3f}")
print(f"MaxLen(1460)     overhead {bandwidth_overhead(arts.corpus, MaxLen(1460)):.3f}")

# %% Timing noise blurs the delay ranges the profiles rely on
for r in noise_sweep(cfg, rules, arts.stream, arts.profiles, arts.classifiers.params, gt,
                     [0, 50, 200, 800]):
    print(f"noise {r['noise_amplitude']:4d} cycles: recall {r['page_recall']:.3f}, "
          f"accuracy {r['page_accuracy']:.3f}")

# %% An attacker who profiles behind the same padding gets some of it back
for x in (200, 1000):
    adapted = ExperimentConfig.from_dict({
        "seed": 5, "corpus": {"n_pages": 40},
        "countermeasures": {"padding": {"mode": "multiple_of", "x_bytes": x}},
        "attack": {"profile_under_defense": True}})
    r = run_experiment(adapted).report
    print(f"profiled under MultipleOf({x}): accuracy {r.page_accuracy:.3f}, "
          f"recall {r.page_recall:.3f}")
