import cProfile
import pstats
import sys
import time

import numpy as np

sys.path.insert(0, "src")

from lyapcert.pwl import Box
from lyapcert.systems import make_pendulum
from lyapcert.train import fit_dynamics, lqr_init
from lyapcert.verify import _verify_common

system = make_pendulum()
dyn = fit_dynamics(system)
policy, V = lqr_init(system, dyn)

box = system.domain.scaled(0.2, center=system.x_eq)

t0 = time.perf_counter()
rep = _verify_common(dyn, policy, V, box, 0.01, 1e-6, "interval", 300,
                     None, "box")
print(f"one leaf: {time.perf_counter()-t0:.2f}s nodes={rep.stats['nodes']} "
      f"iters={rep.stats['simplex_iterations']} rows={rep.stats['rows']} "
      f"vars={rep.stats['vars']} bin={rep.stats['binaries']} "
      f"bound={rep.gamma_star:.4f}", flush=True)

pr = cProfile.Profile()
pr.enable()
rep = _verify_common(dyn, policy, V, box, 0.01, 1e-6, "interval", 300,
                     None, "box")
pr.disable()
st = pstats.Stats(pr)
st.sort_stats("cumulative").print_stats(18)
