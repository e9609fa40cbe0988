import json

import pytest

from models.digest import DeliveryReceipt, DeliveryStatus
from models.results import SummaryPayload
from util.archive import Archive
from util.digest import build_digest, make_entry, summary_placeholder
from util.ehr import get_schedule
from util.email import content_hash
from util.errors import ArchiveConflictError, DigestError


@pytest.fixture
def digest(store, run_date):
    entries = [
        make_entry(a, store.chart(a.patient_id).name, summary_placeholder(), None)
        for a in get_schedule(store, "dr-C", run_date)
        if a.visit_kind.value not in ("consult", "new")
    ]
    return build_digest(store.physician("dr-C"), run_date, entries)


def test_store_and_read(tmp_path, digest):
    archive = Archive(tmp_path)

    record = archive.store(digest, "run-1")

    assert record.physician_id == "dr-C"
    assert record.content_hash == content_hash(digest)
    assert not record.dry_run and record.delivery is None
    assert archive.read("run-1", "dr-C") == digest.markdown_source
    assert archive.index() == [record]


def test_archived_files_are_read_only(tmp_path, digest):
    Archive(tmp_path).store(digest, "run-1")

    for suffix in ("md", "html", "json"):
        path = tmp_path / "run-1" / f"dr-C.{suffix}"
        assert path.exists()
        assert not path.stat().st_mode & 0o222


def test_metadata_carries_the_delivery(tmp_path, digest, run_date):
    receipt = DeliveryReceipt(
        physician_id="dr-C",
        run_date=run_date,
        transport="outbox",
        status=DeliveryStatus.delivered,
        content_hash=content_hash(digest),
        timestamp="2025-08-04T10:00:00Z",
    )

    record = Archive(tmp_path).store(digest, "run-1", delivery=receipt)

    metadata = json.loads((tmp_path / "run-1" / "dr-C.json").read_text(encoding="utf-8"))
    assert record.delivery == DeliveryStatus.delivered
    assert metadata["delivery"]["status"] == "delivered"
    assert metadata["digest"]["markdown_source"] == digest.markdown_source


def test_archive_entries_are_never_overwritten(tmp_path, digest):
    archive = Archive(tmp_path)
    archive.store(digest, "run-1")

    with pytest.raises(ArchiveConflictError):
        archive.store(digest, "run-1")
    assert len(archive.index()) == 1


def test_index_by_run(tmp_path, digest):
    archive = Archive(tmp_path)
    archive.store(digest, "run-1")
    archive.store(digest, "run-2", dry_run=True)

    (dry,) = archive.index("run-2")
    assert dry.dry_run
    assert len(archive.index()) == 2
    assert archive.index("run-3") == []


def test_reading_a_missing_digest(tmp_path):
    with pytest.raises(DigestError):
        Archive(tmp_path).read("run-1", "dr-C")
