"""Train the three stages on a small cluster set and try to recover each training structure from its PDF.

Takes about ten minutes on one core with the default 9 clusters per family.
Pass a smaller count as the first argument for a quicker (and worse) run:

    python demos/04_desk_overfit.py 3
"""
import logging
import sys
import time

import numpy as np

from cbldm.diffusion import SkipPlan
from cbldm.pipeline import train
from cbldm.pipeline.data import simulate_training_set
from cbldm.pipeline.predict import Predictor, best_rwps
from cbldm.pipeline.profiles import DESK
from cbldm.structgen import KINDS, DatasetSpec, generate_structures

logging.basicConfig(level=logging.INFO, format="%(message)s")
per_kind = int(sys.argv[1]) if len(sys.argv) > 1 else 9
profile = DESK

t0 = time.time()
clouds = generate_structures(DatasetSpec(counts={k: per_kind for k in KINDS}, max_atoms=32, seed=42))
data = simulate_training_set(clouds, profile)
print(f"{len(data)} clusters, {min(c.n_atoms for c in clouds)}..{max(c.n_atoms for c in clouds)} atoms")

cvae, cmeta = train.train_cvae(profile, data)
xvae, xmeta = train.train_xvae(profile, data, cvae, cvae_meta=cmeta)
ddm, dmeta = train.train_ddm(profile, data, cvae, xvae, xvae_meta=xmeta)
print(f"trained in {time.time() - t0:.0f}s")

pred = Predictor(profile, cvae, xvae, ddm, dmeta["latent_scale"])

# T1 = T2 = T runs the whole reverse chain; T1 = 0 keeps only the conditional-prior draw
for plan in (SkipPlan(profile.T, profile.T), SkipPlan(0, profile.T)):
    scores = best_rwps(pred, data.pdfs, 8, plan)
    print(f"plan ({plan.t1}, {plan.t2}): median best-of-8 R_wp {np.median(scores):.3f}, "
          f"{np.mean(scores < 0.5):.0%} under 0.5")
    for kind in sorted(set(data.kinds)):
        sel = [s for s, k in zip(scores, data.kinds) if k == kind]
        print(f"  {kind}: {np.round(sel, 2)}")
