"""On-disk store of enrolled devices and consumed timestamps.

Layout of a registry directory::

    index.txt          version=1 header, then one tab-separated record per device:
                       device_id, fingerprint file, theta, P, max_retries, enrolled_at
    fingerprints/      one version-1 fingerprint file per device (<device_id>.fp)
    consumed.log       version=1 header, then "<device_id> <timestamp>" per line

``index.txt`` is rewritten atomically on every enrollment; ``consumed.log``
is append-only.
"""

from __future__ import annotations

import os
import re
import threading
import time
from collections import defaultdict
from pathlib import Path

from ..errors import CorruptFingerprint, DuplicateDevice, RegistryError
from ..fingerprint import FullFingerprint, dumps_fingerprint, load_fingerprint
from .messages import EnrollmentRecord

DEFAULT_MAX_RETRIES = 2
INDEX_VERSION = "version=1"
_DEVICE_ID = re.compile(r"[A-Za-z0-9][A-Za-z0-9._-]{0,127}\Z")


def check_device_id(device_id: str) -> str:
    if not _DEVICE_ID.match(device_id):
        raise ValueError(
            f"invalid device id {device_id!r}: use 1-128 characters from [A-Za-z0-9._-], "
            "starting with a letter or digit"
        )
    return device_id


class Registry:
    """Enrollment records, fingerprints and the replay log of one verifier.

    Reads may run concurrently. ``consume`` serializes per device so the
    check-and-insert of a timestamp is atomic.
    """

    def __init__(self, directory: str | os.PathLike, durable: bool = True):
        self.directory = Path(directory)
        self.durable = durable
        self._lock = threading.RLock()
        self._device_locks: dict[str, threading.Lock] = defaultdict(threading.Lock)
        self._records: dict[str, EnrollmentRecord] = {}
        self._fingerprints: dict[str, FullFingerprint] = {}
        self._consumed: dict[str, set[int]] = defaultdict(set)
        try:
            (self.directory / "fingerprints").mkdir(parents=True, exist_ok=True)
            self._load()
            self._log = open(self.directory / "consumed.log", "a", encoding="utf-8")
            if self._log.tell() == 0:
                self._log.write(INDEX_VERSION + "\n")
                self._log.flush()
        except OSError as exc:
            raise RegistryError(f"{self.directory}: {exc}") from exc

    # -- persistence --------------------------------------------------------

    def _load(self) -> None:
        index = self.directory / "index.txt"
        if index.exists():
            lines = index.read_text(encoding="utf-8").splitlines()
            if not lines or lines[0] != INDEX_VERSION:
                raise RegistryError(f"{index}: missing or unsupported version header")
            for lineno, line in enumerate(lines[1:], start=2):
                if not line.strip() or line.startswith("#"):
                    continue
                cells = line.split("\t")
                try:
                    dev, fname, theta, P, retries, enrolled_at = cells
                    rec = EnrollmentRecord(dev, fname, int(enrolled_at), float(theta), int(P), int(retries))
                except ValueError:
                    raise RegistryError(f"{index}:{lineno}: malformed record") from None
                self._records[dev] = rec
        log = self.directory / "consumed.log"
        if log.exists():
            text = log.read_text(encoding="utf-8")
            lines = text.splitlines()
            if lines and lines[0] != INDEX_VERSION:
                raise RegistryError(f"{log}: unsupported version header")
            if text and not text.endswith("\n"):
                # torn final write from a crash: drop it and terminate the line
                lines.pop()
                with open(log, "a", encoding="utf-8") as fh:
                    fh.write("\n")
            for line in lines[1:]:
                parts = line.split()
                if len(parts) == 2 and parts[1].lstrip("-").isdigit():
                    self._consumed[parts[0]].add(int(parts[1]))

    def _write_index(self) -> None:
        index = self.directory / "index.txt"
        tmp = index.with_suffix(".tmp")
        lines = [INDEX_VERSION, "# device_id\tfingerprint_file\ttheta\tP\tmax_retries\tenrolled_at"]
        for r in self._records.values():
            lines.append(f"{r.device_id}\t{r.fingerprint_file}\t{r.theta!r}\t{r.P}\t{r.max_retries}\t{r.enrolled_at}")
        with open(tmp, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
            fh.flush()
            if self.durable:
                os.fsync(fh.fileno())
        os.replace(tmp, index)

    def close(self) -> None:
        with self._lock:
            if not self._log.closed:
                self._log.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    # -- enrollment ---------------------------------------------------------

    def enroll(
        self,
        device_id: str,
        fingerprint: FullFingerprint | str | os.PathLike,
        theta: float = 0.01,
        P: int = 10,
        max_retries: int = DEFAULT_MAX_RETRIES,
        enrolled_at: int | None = None,
    ) -> EnrollmentRecord:
        """Store a device's full fingerprint and matching parameters.

        ``fingerprint`` is either a loaded fingerprint or a path to a
        fingerprint file.
        """
        check_device_id(device_id)
        if not theta > 0:
            raise ValueError("theta must be positive")
        if P < 1 or max_retries < 1:
            raise ValueError("P and max_retries must be >= 1")
        fp = fingerprint if isinstance(fingerprint, FullFingerprint) else load_fingerprint(fingerprint)
        if P > fp.grid.size:
            raise CorruptFingerprint(f"P={P} exceeds the fingerprint's {fp.grid.size} frequencies")
        with self._lock:
            if device_id in self._records:
                raise DuplicateDevice(f"device {device_id!r} is already enrolled")
            fname = f"fingerprints/{device_id}.fp"
            rec = EnrollmentRecord(
                device_id=device_id,
                fingerprint_file=fname,
                enrolled_at=int(time.time()) if enrolled_at is None else int(enrolled_at),
                theta=float(theta),
                P=int(P),
                max_retries=int(max_retries),
            )
            try:
                (self.directory / fname).write_text(dumps_fingerprint(fp), encoding="utf-8")
                self._records[device_id] = rec
                self._write_index()
            except OSError as exc:
                self._records.pop(device_id, None)
                raise RegistryError(f"cannot persist enrollment of {device_id!r}: {exc}") from exc
            self._fingerprints[device_id] = fp
        return rec

    def get(self, device_id: str) -> EnrollmentRecord | None:
        return self._records.get(device_id)

    def __contains__(self, device_id: str) -> bool:
        return device_id in self._records

    def __len__(self) -> int:
        return len(self._records)

    def device_ids(self) -> list[str]:
        return list(self._records)

    def fingerprint(self, device_id: str) -> FullFingerprint:
        fp = self._fingerprints.get(device_id)
        if fp is None:
            rec = self._records[device_id]
            try:
                fp = load_fingerprint(self.directory / rec.fingerprint_file)
            except CorruptFingerprint as exc:
                raise RegistryError(str(exc)) from exc
            with self._lock:
                self._fingerprints[device_id] = fp
        return fp

    # -- replay log ---------------------------------------------------------

    def device_lock(self, device_id: str) -> threading.Lock:
        with self._lock:
            return self._device_locks[device_id]

    def is_consumed(self, device_id: str, timestamp: int) -> bool:
        return timestamp in self._consumed.get(device_id, ())

    def consume(self, device_id: str, timestamp: int) -> bool:
        """Record ``timestamp`` as used; False if it already was.

        Callers that combine this with other checks should hold
        :meth:`device_lock` around the whole sequence.
        """
        seen = self._consumed[device_id]
        if timestamp in seen:
            return False
        with self._lock:
            try:
                self._log.write(f"{device_id} {int(timestamp)}\n")
                self._log.flush()
                if self.durable:
                    os.fsync(self._log.fileno())
            except (OSError, ValueError) as exc:
                raise RegistryError(f"cannot persist consumed timestamp: {exc}") from exc
            seen.add(timestamp)
        return True
