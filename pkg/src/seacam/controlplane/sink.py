"""Upload sinks. The directory sink lays sessions out as::

    <root>/session-<id>/<camera-id>/pat<idx:03>.pgm
    <root>/session-<id>/manifest.json

Files are staged under ``.session-<id>.partial`` and renamed into place on
commit, so a session directory only ever appears complete. The manifest
records a sha256 per image.
"""
import hashlib
import json
import shutil
from pathlib import Path


class SinkError(Exception):
    pass


class DirectorySink:
    def __init__(self, root):
        self.root = Path(root)
        self._staging = None
        self._session = None
        self.hashes = {}

    def begin(self, session_id):
        self.root.mkdir(parents=True, exist_ok=True)
        self._session = str(session_id)
        self._staging = self.root / f".session-{session_id}.partial"
        if self._staging.exists():
            shutil.rmtree(self._staging)
        self._staging.mkdir()
        self.hashes = {}

    def _path(self, rel):
        if self._staging is None:
            raise SinkError("sink not opened (call begin first)")
        return self._staging / rel

    def put_file(self, rel, data):
        path = self._path(rel)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(data)
        self.hashes[str(rel)] = hashlib.sha256(data).hexdigest()
        return str(rel)

    def put_image(self, camera_id, pattern_index, pgm_bytes):
        return self.put_file(f"{camera_id}/pat{int(pattern_index):03d}.pgm", pgm_bytes)

    def put_manifest(self, manifest):
        data = (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode()
        path = self._path("manifest.json")
        path.write_bytes(data)

    def commit(self):
        final = self.root / f"session-{self._session}"
        if final.exists():
            shutil.rmtree(final)
        self._staging.rename(final)
        self._staging = None
        return final

    def abort(self):
        if self._staging is not None and self._staging.exists():
            shutil.rmtree(self._staging)
        self._staging = None


def parse_sink(text):
    """``dir:<path>`` -> DirectorySink."""
    kind, _, arg = text.partition(":")
    if kind == "dir" and arg:
        return DirectorySink(arg)
    raise ValueError(f"unsupported sink {text!r} (expected dir:<path>)")
