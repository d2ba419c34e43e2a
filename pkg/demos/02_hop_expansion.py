"""Show why fan-out sampling is necessary: the multi-hop neighborhood of a
mini-batch quickly swallows most of a well-connected graph, while the
sampled ego graph stays flat.

Run:  python3 demos/02_hop_expansion.py
"""

import tempfile

import numpy as np

from streamgcn import GrowingGraph, SbmSpec, gen_sbm, profile_hops, sample_ego
from streamgcn.graph import ego_node_bound
from streamgcn.runner import RunConfig, build_stream

with tempfile.TemporaryDirectory() as tmp:
    dataset = gen_sbm(SbmSpec(classes=4, per_class=150, p_in=0.1,
                              p_out=0.01, feature_dim=8, seed=0), tmp)

cfg = RunConfig(sbm_classes=4, sbm_per_class=150, sbm_dim=8, batch_size=10)
stream, _ = build_stream(cfg, dataset)
graph = GrowingGraph(dataset.feature_dim, dataset.num_classes)

rng = np.random.default_rng(1)
fanouts = (10, 10)
bound = ego_node_bound(cfg.batch_size, fanouts)
print(f"{'batch':>6} {'graph':>6} {'1-hop':>6} {'2-hop':>6} "
      f"{'2-hop%':>7} {'sampled':>8}")

batch_idx = 0
while not stream.exhausted():
    start = stream.cursor
    events = stream.next_minibatch()
    for off, ev in enumerate(events):
        graph.ingest(ev, split=int(stream.split_tags[start + off]))
    ids = [ev.node_id for ev in events]
    if batch_idx % 10 == 0:
        prof = profile_hops(graph, ids, 2)
        ego = sample_ego(graph, ids, fanouts, rng)
        print(f"{batch_idx:>6} {graph.size:>6} {prof.node_counts[1]:>6} "
              f"{prof.node_counts[2]:>6} "
              f"{prof.node_counts[2] / graph.size:>6.0%} "
              f"{ego.num_nodes:>8}")
    batch_idx += 1

print(f"\nthe full 2-hop union grows with the graph; "
      f"the sampled ego never exceeds {bound} nodes")
