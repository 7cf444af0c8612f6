"""The skip sampler on a 2-D Gaussian, where the optimal noise predictor is known exactly."""
import numpy as np

from cbldm.diffusion import SkipPlan, full_chain_sample, gaussian_optimal_eps, make_schedule, skip_sample
from cbldm.nn import RngStream

T = 100
sched = make_schedule(T, 1e-4, 0.2)
mean = np.array([1.0, -2.0])
cov = np.array([[1.0, 0.6], [0.6, 2.0]])
eps = gaussian_optimal_eps(mean, cov, sched)

x = full_chain_sample((10000, 2), eps, sched, RngStream(0))
print("full chain  mean", x.mean(0).round(3), "cov", np.cov(x.T).round(3).tolist())

# blend coefficients: u and a satisfy a + u*sqrt(abar_T2) = sqrt(abar_T1)
plan = SkipPlan(30, 80)
u, a = plan.coefficients(sched)
print("T1=30 T2=80: u=%.4f a=%.4f identity error %.1e"
      % (u, a, abs(a + u * np.sqrt(sched.alpha_bars[80]) - np.sqrt(sched.alpha_bars[30]))))

# the prior here is the data distribution's marginal, so blending loses nothing
prior = lambda: (np.tile(mean, (10000, 1)), np.tile(np.log(np.diag(cov)), (10000, 1)))
for t1, t2 in [(100, 100), (50, 100), (0, 100)]:
    y = skip_sample(SkipPlan(t1, t2), prior, eps, sched, RngStream(0))
    print(f"plan ({t1:3d},{t2}) mean {y.mean(0).round(3)} var {y.var(0).round(3)}")

same = skip_sample(SkipPlan(T, T), prior, eps, sched, RngStream(0))
print("T1 == T2 reproduces the full chain bitwise:", np.array_equal(same, x))
