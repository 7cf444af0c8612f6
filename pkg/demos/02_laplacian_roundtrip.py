"""Coordinates -> Laplacian image -> coordinates, exact and with noise on the image."""
import numpy as np

from cbldm.geomrecover import align_rmsd, recover_coords, spectral_embed
from cbldm.graphrep import block_merge, block_split, laplacian_encode, symmetrize
from cbldm.structgen import generate_cluster

cloud = generate_cluster("ICO", {"shells": 2}, lattice_constant=4.08)
img = laplacian_encode(cloud.coords, sigma=5.0, n_max=64)
print("atoms", img.n_atoms, "image", img.matrix.shape, "row sums max", abs(img.raw().sum(1)).max())

# the network sees four 32x32 blocks
blocks = block_split(img.matrix)
assert np.array_equal(block_merge(blocks), img.matrix)

# exact recovery: spectral start, rescale, then L-BFGS on the Laplacian MSE
init = spectral_embed(img).coords
fit = recover_coords(img)
print("spectral-start RMSD %.3f A, refined RMSD %.2e A, Laplacian MSE %.1e"
      % (align_rmsd(init, cloud.coords), align_rmsd(fit.coords, cloud.coords), fit.final_mse))

# what a decoder error of a given size does to the geometry
rng = np.random.default_rng(0)
for noise in [1e-5, 1e-4, 1e-3]:
    noisy = img.matrix + noise * rng.standard_normal(img.matrix.shape)
    back = symmetrize(noisy, 5.0, 64.0)
    fit = recover_coords(back)
    rmsd = align_rmsd(fit.coords, cloud.coords) if back.n_atoms == cloud.n_atoms else float("nan")
    print(f"image noise {noise:.0e}: inferred {back.n_atoms} atoms, RMSD {rmsd:.3f} A")
