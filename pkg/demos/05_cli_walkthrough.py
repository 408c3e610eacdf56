"""
The command line, end to end
============================

Every stage is also a ``graspkit`` subcommand. This script writes a small
planted dataset into a scratch folder and drives the CLI through
``main(argv)``, exactly as a shell would.
"""
import json
import sys
import tempfile
from pathlib import Path

from graspkit import synthetic as sy
from graspkit.cli import main
from graspkit.fileio import save_tensor

work = Path(sys.argv[1]) if len(sys.argv) > 1 else Path(tempfile.mkdtemp(prefix="graspkit-demo-"))
data = sy.planted_dataset(seed=7, n_per_class=4)
manifest = sy.write_planted_dataset(work / "data", data)
(work / "hand.json").write_text(json.dumps(sy.pointing_index((0.4, 0.6)).to_json()))


def run(*argv):
    print("$ graspkit", " ".join(str(a) for a in argv))
    code = main([str(a) for a in argv])
    print(f"  (exit {code})")
    return code


run("funcfinger", work / "hand.json", "--out-dir", work / "ff")
run("train-heads", "--manifest", manifest, "--epochs", 5, "--out-dir", work / "run", "--quiet")
feature = work / "data" / "features" / f"{data.egos[0].id}.gaft"
run("infer", feature, "--task", "Press", "--checkpoint", work / "run" / "checkpoint", "--out-dir", work / "infer")
run("render", work / "infer" / "map.gaft", "--out", work / "infer" / "overlay.ppm")

# Self-evaluation of the planted heatmaps scores KLD 0 and SIM 1.
run("eval", work / "data" / "heatmaps", work / "data" / "heatmaps", "--out-dir", work / "eval")

scene = sy.button_scene()
save_tensor(work / "scene_map.gaft", scene.amap)
save_tensor(work / "scene_depth.gaft", scene.depth_map)
(work / "cam.json").write_text(json.dumps({"fx": 500.0, "fy": 500.0, "cx": 32.0, "cy": 24.0}))
(work / "contacts.json").write_text(json.dumps({"fingers": [{"theta_contact": 0.9, "stiffness": 5.0}] * 5}))
run("grasp-sim", work / "scene_map.gaft", work / "scene_depth.gaft", "--camera", work / "cam.json",
    "--contacts", work / "contacts.json", "--pair", "Click", "lightswitch", "--out-dir", work / "grasp")
print("outputs in", work)
