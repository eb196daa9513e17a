"""Watching one page load through the enclave chain.

Run with ``python3 demos/01_side_channels.py``. Each ``# %%`` block is a step.
"""

# %% A tiny corpus and one rendered visit
from collections import Counter

import numpy as np

from sgxleak.collector import Collector
from sgxleak.enclave import ServiceChain, generate_rules, wanopt_process
from sgxleak.trace import Direction, extract_feature_vector
from sgxleak.traffic import generate_corpus, render_visit

corpus = generate_corpus(seed=4, n_pages=6)
page = corpus.pages[0]
packets = render_visit(page, visit_seed=1, start_time=0.0)
print(f"page {page.page_id}: {len(page.objects)} objects, {len(packets)} packets")

# %% Interpose a collector on every ECALL and OCALL
rules = generate_rules(0, n_waf=200, n_ids=600, n_nat=200)
col = Collector()
chain = ServiceChain(rules=rules, collector=col)
names = {1: "NAT", 2: "WAF", 3: "IDS", 4: "WANOPT"}

for p in packets[:6]:
    mark = col.mark()
    chain.process(p)
    events = col.since(mark)
    fv = extract_feature_vector(events, chain.topology.enclave_ids, chain.wanopt_id)
    path = "->".join(names[e] for e in fv.chain_path)
    delays = [h.delay_cycles for h in fv.hops]
    print(f"{p.kind:16s} {p.payload_bytes:5d} B  path {path:18s} delays {delays}")

# %% Routing: a suspicious response detours through the IDS
paths = Counter()
for p in (q for pg in corpus.pages for q in render_visit(pg, 3, 0.0)):
    paths[(p.kind, p.suspicious, chain.process(p).chain_path)] += 1
for (kind, flag, path), n in sorted(paths.items()):
    print(f"{kind:16s} suspicious={flag!s:5s} {'->'.join(names[e] for e in path):22s} x{n}")

# %% Compression: the WAN optimizer's output size betrays text versus images
# Plaintext in/out sizes per object; the observer sees the same split on the
# ciphertext parameter sizes, blurred a little by 16-byte block rounding.
ratios = {"text": [], "image": []}
observed = {"text": [], "image": []}
for pg in corpus.pages:
    for p in render_visit(pg, 0, 0.0):
        ratios[p.content_class].append(1 - wanopt_process(p).out_bytes / p.payload_bytes)
        fv = chain.process(p)
        if fv.size_change_ratio is not None:
            observed[p.content_class].append(-fv.size_change_ratio)
for cls in ratios:
    r, o = np.array(ratios[cls]), np.array(observed[cls])
    print(f"{cls:5s} plaintext reduction {r.min():.2f}..{r.max():.2f}, "
          f"observed {o.min():+.2f}..{o.max():+.2f}")

# %% The ECALL order alone already tells the two apart
ecalls = [e.enclave_id for e in col.events if e.direction is Direction.ECALL]
print("first ECALLs in the trace:", [names[e] for e in ecalls[:12]])
