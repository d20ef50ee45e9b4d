import json
import os
import pathlib
import tempfile


def get_data_dir():
    """Return the writable base directory for run artefacts (corpora, checkpoints, sweeps).

    HYPERFUSE_HOME wins when set, otherwise ``runs/`` beside this script.
    """
    base = os.environ.get("HYPERFUSE_HOME")
    if not base:
        base = os.path.join(os.path.dirname(os.path.abspath(__file__)), "runs")
    os.makedirs(base, exist_ok=True)
    return base


def get_run_dir(name):
    """Return (and create) a named sub-directory of the data dir."""
    run_dir = os.path.join(get_data_dir(), name)
    os.makedirs(run_dir, exist_ok=True)
    return run_dir


def atomic_write_text(path, text):
    """Write text to ``path`` through a temp file in the same directory and rename it.

    Readers never observe a half-written file.
    """
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    return path


def atomic_write_bytes(path, payload):
    """Binary twin of :func:`atomic_write_text`."""
    path = pathlib.Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f".{path.name}.", suffix=".tmp", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.remove(tmp_name)
        raise
    return path


def write_json(path, data):
    return atomic_write_text(path, json.dumps(data, indent=2) + "\n")


def load_json(file_path):
    """Load JSON file."""
    with open(file_path, "r", encoding="utf-8") as f:
        return json.load(f)
