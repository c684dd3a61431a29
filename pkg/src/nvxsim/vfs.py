"""In-memory file trees and the static-file manifest."""

from __future__ import annotations

import copy
import hashlib
import posixpath
from dataclasses import dataclass, field

from .canonical import resolve_path, within_root


@dataclass
class FsContext:
    """One machine's view of the application tree.

    ``files`` maps absolute paths to contents; ``dirs`` holds every directory,
    parents included (they are added automatically).
    """

    root: str = "/app"
    cwd: str = "/app"
    files: dict[str, bytearray] = field(default_factory=dict)
    dirs: set[str] = field(default_factory=set)

    def __post_init__(self):
        self.files = {p: bytearray(c) for p, c in self.files.items()}
        self.dirs = set(self.dirs) | {self.root, self.cwd}
        for p in list(self.files) + list(self.dirs):
            self._add_parents(p)

    def _add_parents(self, path: str):
        d = posixpath.dirname(path)
        while d and d not in self.dirs:
            self.dirs.add(d)
            if d == "/":
                break
            d = posixpath.dirname(d)
        self.dirs.add("/")

    def resolve(self, path: str, base: str | None = None) -> str:
        return resolve_path(path, base or self.cwd)

    def is_file(self, path: str) -> bool:
        return path in self.files

    def is_dir(self, path: str) -> bool:
        return path in self.dirs

    def children(self, path: str) -> list[str]:
        prefix = path.rstrip("/") + "/"
        names = {p[len(prefix):].split("/", 1)[0] for p in list(self.files) + list(self.dirs) if p.startswith(prefix)}
        return sorted(n for n in names if n)

    def clone(self) -> FsContext:
        return FsContext(self.root, self.cwd, copy.deepcopy(self.files), set(self.dirs))


def _dir_digest(fs: FsContext, path: str) -> str:
    return hashlib.sha256(("dir:" + "\0".join(fs.children(path))).encode()).hexdigest()


@dataclass
class StaticFileManifest:
    """Startup digests of files under the application root and the set of
    paths written since then. A path is static while its digest is recorded
    and it is not in the written set."""

    digests: dict[str, str] = field(default_factory=dict)
    written: set[str] = field(default_factory=set)

    @classmethod
    def capture(cls, fs: FsContext) -> StaticFileManifest:
        digests = {}
        for p, content in fs.files.items():
            if within_root(p, fs.root):
                digests[p] = hashlib.sha256(bytes(content)).hexdigest()
        for d in fs.dirs:
            if within_root(d, fs.root):
                digests[d] = _dir_digest(fs, d)
        return cls(digests)

    @classmethod
    def agreed(cls, trees: list[FsContext]) -> StaticFileManifest:
        """Paths whose startup digest is identical on every machine."""
        first, *rest = [cls.capture(t) for t in trees]
        common = {p: d for p, d in first.digests.items() if all(m.digests.get(p) == d for m in rest)}
        return cls(common)

    def is_static(self, path: str | None) -> bool:
        return path is not None and path in self.digests and path not in self.written

    def mark_written(self, path: str):
        self.written.add(path)

    def copy(self) -> StaticFileManifest:
        return StaticFileManifest(dict(self.digests), set(self.written))
