import json
import logging
import os
import stat
import threading
from pathlib import Path
from typing import List, Optional

from models.digest import ArchiveRecord, DeliveryReceipt, DigestDocument
from models.run import RunConfig
from util.email import content_hash
from util.errors import ArchiveConflictError, DigestError
from util.options import archive_dir

logger = logging.getLogger(__name__)

_index_lock = threading.Lock()

READ_ONLY = stat.S_IRUSR | stat.S_IRGRP | stat.S_IROTH


class Archive:
    """
    Immutable digest copies under `<root>/<run_id>/`, with an index
    appended one JSON line per archived digest.
    """

    def __init__(self, root: Path):
        self.root = Path(root)
        self.index_path = self.root / "index.jsonl"

    def _write(self, path: Path, text: str):
        path.write_bytes(text.encode("utf-8"))
        os.chmod(path, READ_ONLY)

    def store(
        self,
        digest: DigestDocument,
        run_id: str,
        dry_run: bool = False,
        delivery: Optional[DeliveryReceipt] = None,
    ) -> ArchiveRecord:
        physician_id = digest.physician.physician_id
        folder = self.root / run_id
        markdown_path = folder / f"{physician_id}.md"

        with _index_lock:
            if markdown_path.exists():
                raise ArchiveConflictError(f"{physician_id} is already archived for run {run_id}")
            record = ArchiveRecord(
                run_id=run_id,
                physician_id=physician_id,
                run_date=digest.run_date,
                path=str(markdown_path),
                content_hash=content_hash(digest),
                dry_run=dry_run,
                delivery=delivery.status if delivery else None,
            )
            try:
                folder.mkdir(parents=True, exist_ok=True)
                self._write(markdown_path, digest.markdown_source)
                self._write(folder / f"{physician_id}.html", digest.html_rendered)
                metadata = {
                    "record": record.model_dump(mode="json"),
                    "delivery": delivery.model_dump(mode="json") if delivery else None,
                    "digest": digest.model_dump(mode="json"),
                }
                self._write(folder / f"{physician_id}.json", json.dumps(metadata, ensure_ascii=False, indent=2))
                with open(self.index_path, "a", encoding="utf-8") as file:
                    file.write(json.dumps(record.model_dump(mode="json"), ensure_ascii=False) + "\n")
            except OSError as e:
                raise DigestError(f"could not archive digest for {physician_id}: {e}")

        logger.info("Archived digest for %s under %s%s", physician_id, folder, " (dry run)" if dry_run else "")
        return record

    def read(self, run_id: str, physician_id: str) -> str:
        path = self.root / run_id / f"{physician_id}.md"
        if not path.exists():
            raise DigestError(f"no archived digest for {physician_id} in run {run_id}")
        return path.read_bytes().decode("utf-8")

    def index(self, run_id: Optional[str] = None) -> List[ArchiveRecord]:
        if not self.index_path.exists():
            return []
        with open(self.index_path, "r", encoding="utf-8") as file:
            records = [ArchiveRecord.model_validate_json(line) for line in file if line.strip()]
        return [r for r in records if run_id is None or r.run_id == run_id]


def build_archive(config: RunConfig) -> Archive:
    return Archive(archive_dir(config))
