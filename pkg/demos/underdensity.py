"""Detect a hole instead of a bump.

The sphere-deletion scenario removes 90% of the test points inside a
sphere of radius 0.2 and replaces them with fresh uniform draws, so the
test sample ends up underdense there while keeping its row count. An
underdensity in the test sample is an overdensity of the reference
sample relative to it, so it surfaces in the reference scan direction.
"""

import numpy as np

from eagleeye import Direction, EagleEyeConfig, preset_scenario, run
from eagleeye.cli import default_k_max

CENTER = np.array([0.5, 0.5, 0.5])


def main():
    pair = preset_scenario("sphere-deletion")
    reference, test, _, _ = pair.build()

    # count points near the center before running anything
    for name, sample in (("reference", reference), ("test", test)):
        inside = int((np.linalg.norm(sample.points - CENTER, axis=1) < 0.2).sum())
        print(f"{name}: {inside} of {sample.n} points inside the sphere")

    config = EagleEyeConfig(k_max=default_k_max(reference.n + test.n))
    result = run(reference, test, config)

    for direction in (Direction.TEST, Direction.REFERENCE):
        clusters = result.reports[direction].clusters
        print(f"{direction.name} direction: {len(clusters)} cluster(s)")
        for alpha, cr in clusters.items():
            pts = reference.points if direction is Direction.REFERENCE else test.points
            centroid = pts[sorted(cr.members)].mean(axis=0)
            offset = float(np.linalg.norm(centroid - CENTER))
            print(f"  cluster {alpha}: {len(cr.members)} members, "
                  f"centroid {np.round(centroid, 3)}, "
                  f"{offset:.3f} from the deletion center")


if __name__ == "__main__":
    main()
