"""Print per-tensor finite-difference errors of the U-Net gradients."""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "tests"))

from oracles import unet_gradient_errors  # noqa: E402
from soundseg.nn import LossKind  # noqa: E402

for kind in LossKind:
    errors = unet_gradient_errors(kind)
    print(kind.value)
    for name, err in errors.items():
        print(f"  {name:<28} {err:.2e}")
