import sys
import time

import numpy as np

sys.path.insert(0, "src")

from lyapcert.pwl import Box
from lyapcert.systems import make_pendulum
from lyapcert.train import fit_dynamics, lqr_init
from lyapcert.verify import verify_box

system = make_pendulum()
t0 = time.perf_counter()
dyn = fit_dynamics(system)
print(f"fit {time.perf_counter()-t0:.1f}s residual {dyn.fit_report['max_residual']:.5f}",
      flush=True)
t0 = time.perf_counter()
policy, V = lqr_init(system, dyn)
print(f"init {time.perf_counter()-t0:.1f}s", flush=True)

for frac in (0.2, 0.4, 1.0):
    box = system.domain.scaled(frac, center=system.x_eq)
    t0 = time.perf_counter()
    rep = verify_box(dyn, policy, V, box, eps=0.01, node_limit=60000,
                     gap=0.05, log=sys.stdout)
    s = rep.stats
    print(f"frac {frac}: {time.perf_counter()-t0:.1f}s status={s['status']} "
          f"boxes={s['boxes']} nodes={s['nodes']} "
          f"gamma*={rep.gamma_star:.6g} worst={s['objective']:.6g} "
          f"certified={rep.certified}", flush=True)
