import json
from pathlib import Path

from qmpemba.cli import main


def run_cli(out: Path, *args: str) -> int:
    return main([*args, "--out", str(out)])


def data_payloads(out: Path) -> dict[str, str]:
    """Artifact contents with run metadata stripped: JSON ``data`` and non-comment CSV lines."""
    res = {}
    for path in sorted(Path(out).iterdir()):
        text = path.read_text()
        if path.suffix == ".json":
            res[path.name] = json.dumps(json.loads(text)["data"])
        else:
            res[path.name] = "\n".join(l for l in text.splitlines() if not l.startswith("#"))
    return res
