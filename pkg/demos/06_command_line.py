"""
Command line
============

The same flow as the ``taylor-aec`` console script: synthesize, train briefly,
process one item and write an evaluation report.
"""

import json
import tempfile
from pathlib import Path

from taylor_aec.cli import main

with tempfile.TemporaryDirectory() as tmp:
    tmp = Path(tmp)
    (tmp / "manifest.txt").write_text(
        "id=dt seed=1 duration=1.0\nid=fe seed=2 duration=2.0 scenario=ST-FE\nid=ne seed=3 duration=1.0 scenario=ST-NE\n")

    # %% synthesize
    main(["synth", str(tmp / "manifest.txt"), str(tmp / "data")])

    # %% a few training steps with config overrides
    main(["train", str(tmp / "data"), str(tmp / "run"), "--set", "train.max_steps=5",
          "--set", "train.epochs=2", "--set", "train.crop_seconds=0.5", "--seed", "1"])

    # %% process one item with and without the post-filter
    d, x = tmp / "data" / "fe" / "d.wav", tmp / "data" / "fe" / "x.wav"
    main(["process", str(d), str(x), str(tmp / "linear.wav")])
    main(["process", str(d), str(x), str(tmp / "full.wav"), str(tmp / "run" / "final.bin")])

    # %% per-scenario report
    main(["evaluate", str(tmp / "data"), str(tmp / "report.jsonl")])
    for line in (tmp / "report.jsonl").read_text().splitlines():
        rec = json.loads(line)
        print({k: (round(v, 3) if isinstance(v, float) else v) for k, v in rec.items()})

    # %% errors come back as one JSON line on stderr and a nonzero exit
    print("exit code:", main(["process", str(tmp / "missing.wav"), str(x), str(tmp / "o.wav")]))
