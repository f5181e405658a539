"""Write the two-class shapes dataset to disk plus a YAML config for `sgxl train`.

    python demos/make_toy_run.py /tmp/toy
    sgxl train --config /tmp/toy/config.yaml
"""
import sys
from pathlib import Path

import yaml

from sgxl.data import make_shapes, write_image_folder
from sgxl.toy import toy_config

root = Path(sys.argv[1] if len(sys.argv) > 1 else "toy_run")
images, labels = make_shapes(256, 32, seed=0)   # 256 discs, 256 squares
data = write_image_folder(root / "data", images, labels)

cfg = toy_config(data={"path": str(data)}, output_dir=str(root / "run"))
(root / "config.yaml").write_text(yaml.safe_dump(cfg.to_dict()))
print("wrote", root / "config.yaml")
