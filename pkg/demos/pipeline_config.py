"""Config-driven pipeline end to end, exactly as the command line runs it.

Writes a small INI config, invokes the `all` stage through the CLI entry
point, and lists the artifacts with the manifest summary. The on-disk
result is identical to running

    volpers all --config demos/out/demo.ini

from a shell.
"""

import json
from pathlib import Path

from volpers import cli

CONFIG = """\
[simulate]
n_stocks = 6
n_days = 1100
seed = 20240601

[figarch]
truncation = 250

[ladder]
models = A,A1,C,D_lasso
horizons = 1,5

[output]
dir = {out}
"""


def main():
    out = Path(__file__).resolve().parent / "out" / "pipeline"
    out.parent.mkdir(parents=True, exist_ok=True)
    config_path = out.parent / "demo.ini"
    config_path.write_text(CONFIG.format(out=out))

    rc = cli.main(["all", "--config", str(config_path)])
    print(f"\nexit code: {rc}")

    manifest = json.loads((out / "manifest.json").read_text())
    print(f"config sha256: {manifest['config_sha256'][:16]}...")
    print("stages and artifacts:")
    for stage, entry in manifest["stages"].items():
        print(f"  {stage:<10} v{entry['version']}: "
              + ", ".join(entry["artifacts"]))


if __name__ == "__main__":
    main()
