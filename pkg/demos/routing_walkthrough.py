"""Walk through the projection module on random features.

Shows the fixed-length output, the three router types, and why experts
copied from the image expert start out indistinguishable.

    python demos/routing_walkthrough.py
"""

import numpy as np

from omnialign.config import config_from_dict
from omnialign.modality import Modality
from omnialign.model import OmniModel
from omnialign.numerics import Tensor, no_grad


def main():
    cfg = config_from_dict({})
    model = OmniModel(cfg.model, n_experts=1)
    rng = np.random.default_rng(0)

    print("Any input length maps to the same number of modality tokens:")
    for length in (1, 7, 64, 256):
        x = Tensor(rng.standard_normal((length, cfg.model.width)).astype(np.float32))
        with no_grad():
            out = model.project(Modality.AUDIO, x)
        print(f"  L={length:3d} -> q_bar {out.q_bar.shape}")

    x = Tensor(rng.standard_normal((8, cfg.model.width)).astype(np.float32))
    with no_grad():
        single = model.project(Modality.IMAGE, x).q_bar.data
        model.expand_experts(3, "image", seed=0)
        routed = model.project(Modality.IMAGE, x)
    print("\nAfter copying the image expert three times:")
    print(f"  max |soft output - single expert| = {np.abs(routed.q_bar.data - single).max():.2e}")
    print("  routing weights per modality token:")
    for row in routed.routing_weights.data:
        print("   ", np.array2string(row, precision=3))

    model.expand_experts(3, "random", seed=0)
    print("\nWith randomly initialised experts the router choice matters:")
    with no_grad():
        for router in ("constant", "sparse", "soft"):
            q = model.project(Modality.IMAGE, x, router).q_bar.data
            print(f"  {router:8s} mean |q_bar| = {np.abs(q).mean():.4f}")


if __name__ == "__main__":
    main()
