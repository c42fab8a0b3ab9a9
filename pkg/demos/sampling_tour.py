# A walk through the T-CSR graph and the temporal sampler on a toy stream.
#
# Run with:  python3 demos/sampling_tour.py
import numpy as np

from tempgnn import SamplingConfig, TCsrGraph, TemporalSampler
from tempgnn.sampler import MOST_RECENT, UNIFORM

# Five interactions among four nodes. Times are deliberately out of order;
# the graph sorts each node's neighbor list by timestamp.
src = np.array([0, 0, 1, 0, 2])
dst = np.array([1, 2, 2, 3, 3])
t = np.array([5.0, 1.0, 3.0, 9.0, 7.0])
g = TCsrGraph.from_arrays(src, dst, t, num_nodes=4)
print("indptr ", g.indptr)
print("indices", g.indices)
print("times  ", g.times)

# Node 0 queried at time 6 sees only the edges at t=1 and t=5.
cfg = SamplingConfig(1, (2,), MOST_RECENT, 1, float("inf"))
with TemporalSampler(g, cfg) as s:
    batch = s.sample(np.array([0]), np.array([6.0]))
    mfg = batch.mfgs[0][0]
    print("\nneighbors of node 0 before t=6:", mfg.src_nodes[mfg.edge_src].tolist(),
          "at", g.times[mfg.edge_ids].tolist())
    # The pointer for node 0 now sits past every edge earlier than t=6.
    print("pointer row:", g.pointers[1].tolist())

# A bigger random stream, one epoch of uniform sampling, then a look at how far
# the pointers travelled. Each pointer only ever moves forward, so one epoch
# costs at most |E| increments per pointer array.
rng = np.random.default_rng(0)
m = 20_000
times = np.sort(rng.uniform(0, 1000, m))
g = TCsrGraph.from_arrays(rng.integers(0, 500, m), rng.integers(0, 500, m), times, 500)
cfg = SamplingConfig(2, (10, 10), UNIFORM, 1, float("inf"))
with TemporalSampler(g, cfg, n_threads=2, seed=1) as s:
    s.reset()
    for b, lo in enumerate(range(0, m, 600)):
        hi = min(lo + 600, m)
        s.sample(rng.integers(0, 500, hi - lo), times[lo:hi], 0, b)
    print("\npointer increments this epoch:", int(g.pointer_moves[1]), "of", g.num_edges, "edges")
    print("time per phase (s):", {k: round(v, 3) for k, v in s.timings.items()})
