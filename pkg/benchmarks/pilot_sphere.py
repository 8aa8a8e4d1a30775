"""Pilot run that fixed the trainer thresholds (500-point unit sphere, width 64).

Usage: python3 benchmarks/pilot_sphere.py [sigma_ff] [steps] > pilot.json
"""
import json
import sys
import time

import numpy as np

from sartomo.network import NetworkConfig, init_network
from sartomo.scenes import Sphere
from sartomo.training import TrainConfig, train, validate


def main(sigma_ff=0.1, steps=2000, seed=0):
    rng = np.random.default_rng(seed)
    sphere = Sphere(1.0)
    points, normals = sphere.sample_surface(500, rng)
    bounds = (-1.2 * np.ones(3), 1.2 * np.ones(3))
    net = init_network(NetworkConfig(width=64, sigma_ff=sigma_ff), seed=seed, bounds=bounds)
    config = TrainConfig(epochs=steps, batch_size=1024, lr=1e-3, iso_target=1000, seed=seed)
    t0 = time.perf_counter()
    result = train(net, points, normals, config, bounds=bounds)
    elapsed = time.perf_counter() - t0
    metrics = validate(result.net, sphere, bounds, 2000, seed=seed)
    return {"sigma_ff": sigma_ff, "steps": steps, "train_seconds": round(elapsed, 1),
            "final": result.history[-1], **metrics}


if __name__ == "__main__":
    args = [float(a) for a in sys.argv[1:]]
    sigma = args[0] if args else 0.1
    steps = int(args[1]) if len(args) > 1 else 2000
    print(json.dumps(main(sigma, steps), indent=2, sort_keys=True))
