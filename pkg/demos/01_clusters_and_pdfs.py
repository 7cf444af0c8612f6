"""Build a few clusters, simulate their PDFs and check the peaks against pair distances."""
import numpy as np

from cbldm.pdfsim import DebyeParams, distance_histogram, local_maxima, normalize, pdf_from_structure
from cbldm.structgen import generate_cluster

params = DebyeParams(r_step=0.05)
r = params.r_grid()

# one cluster per motif, all with a 2.88 A nearest-neighbour distance (gold)
for kind, size in [("ICO", {"shells": 1}), ("DEC", {"p": 2, "q": 2, "r": 1}), ("OCT", {"m": 3}),
                   ("FCC", {"radius": 4.5})]:
    try:
        cloud = generate_cluster(kind, size, lattice_constant=4.08)
    except ValueError as exc:
        print(kind, "skipped:", exc)
        continue
    g = normalize(pdf_from_structure(cloud, params).g)
    edges, counts = distance_histogram(cloud, 0.2)
    peaks = r[local_maxima(g)[:3]]
    bins = edges[np.argsort(-counts, kind="stable")[:3]] + 0.1
    print(f"{kind}: {cloud.n_atoms} atoms")
    print("  top PDF peaks (A):     ", np.round(np.sort(peaks), 2))
    print("  busiest distance bins: ", np.round(np.sort(bins), 2))

# instrument damping only rescales the curve in r
cloud = generate_cluster("ICO", {"shells": 2}, lattice_constant=4.08)
g0 = pdf_from_structure(cloud, params).g
g1 = pdf_from_structure(cloud, params.with_(q_damp=0.1)).g
i = np.argmin(abs(r - 25.0))
print("damping at 25 A:", g1[i] / g0[i], "expected", np.exp(-0.5 * (0.1 * r[i]) ** 2))
