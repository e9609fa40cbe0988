import hashlib
import json
import logging
import smtplib
import threading
from datetime import datetime, timezone
from email.mime.multipart import MIMEMultipart
from email.mime.text import MIMEText
from pathlib import Path
from typing import Callable, List, Optional, Protocol

from models.digest import DeliveryReceipt, DeliveryStatus, DigestDocument
from models.run import RunConfig, TransportSettings
from util.errors import DeliveryError
from util.options import outbox_dir

logger = logging.getLogger(__name__)


def content_hash(digest: DigestDocument) -> str:
    return hashlib.sha256(digest.markdown_source.encode("utf-8")).hexdigest()


class Transport(Protocol):
    name: str

    def send(self, digest: DigestDocument) -> Optional[str]:
        ...


class OutboxTransport:
    """
    Writes `<root>/<date>/<physician_id>.md` and `.html`.
    """

    name = "outbox"

    def __init__(self, root: Path):
        self.root = Path(root)

    def send(self, digest: DigestDocument) -> Optional[str]:
        folder = self.root / digest.run_date.isoformat()
        try:
            folder.mkdir(parents=True, exist_ok=True)
            markdown_path = folder / f"{digest.physician.physician_id}.md"
            markdown_path.write_bytes(digest.markdown_source.encode("utf-8"))
            (folder / f"{digest.physician.physician_id}.html").write_bytes(digest.html_rendered.encode("utf-8"))
        except OSError as e:
            raise DeliveryError(f"could not write outbox for {digest.physician.physician_id}: {e}")
        return str(markdown_path)


class SmtpTransport:
    """
    This handles sending the digest through the mail server, with the
    Markdown as the plain-text alternative.
    """

    name = "smtp"

    def __init__(self, settings: TransportSettings, connect: Optional[Callable[..., smtplib.SMTP]] = None):
        self.settings = settings
        self.connect = connect or (smtplib.SMTP_SSL if settings.use_ssl else smtplib.SMTP)

    def build_message(self, digest: DigestDocument) -> MIMEMultipart:
        msg = MIMEMultipart("alternative")
        msg["Subject"] = digest.subject()
        msg["From"] = self.settings.from_address
        msg["To"] = digest.physician.email
        msg.attach(MIMEText(digest.markdown_source, "plain", "utf-8"))
        msg.attach(MIMEText(digest.html_rendered, "html", "utf-8"))
        return msg

    def send(self, digest: DigestDocument) -> Optional[str]:
        msg = self.build_message(digest)
        try:
            with self.connect(
                self.settings.smtp_host, self.settings.smtp_port, timeout=self.settings.timeout_seconds
            ) as smtp_server:
                if self.settings.username:
                    smtp_server.login(self.settings.username, self.settings.password)
                smtp_server.sendmail(self.settings.from_address, [digest.physician.email], msg.as_string())
        except smtplib.SMTPAuthenticationError as e:
            raise DeliveryError(f"mail server rejected the credentials: {e}", retryable=False)
        except smtplib.SMTPRecipientsRefused as e:
            raise DeliveryError(f"mail server refused {digest.physician.email}: {e}", retryable=False)
        except (smtplib.SMTPException, OSError) as e:
            raise DeliveryError(f"could not reach {self.settings.smtp_host}:{self.settings.smtp_port}: {e}")
        return f"smtp://{self.settings.smtp_host}/{digest.physician.email}"


class DeliveryLedger:
    """
    JSON-lines receipts. A digest whose content hash was already delivered
    to the same physician is recorded as a duplicate and not sent again.
    """

    def __init__(self, path: Path):
        self.path = Path(path)
        self._lock = threading.Lock()

    def receipts(self) -> List[DeliveryReceipt]:
        if not self.path.exists():
            return []
        with open(self.path, "r", encoding="utf-8") as file:
            return [DeliveryReceipt.model_validate_json(line) for line in file if line.strip()]

    def delivered(self, physician_id: str, digest_hash: str) -> bool:
        return any(
            r.physician_id == physician_id and r.content_hash == digest_hash and r.status == DeliveryStatus.delivered
            for r in self.receipts()
        )

    def append(self, receipt: DeliveryReceipt):
        with self._lock:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            with open(self.path, "a", encoding="utf-8") as file:
                file.write(json.dumps(receipt.model_dump(mode="json"), ensure_ascii=False) + "\n")


def deliver(
    digest: DigestDocument,
    transport: Transport,
    ledger: DeliveryLedger,
    clock: Callable[[], datetime] = lambda: datetime.now(timezone.utc),
) -> DeliveryReceipt:
    digest_hash = content_hash(digest)
    physician_id = digest.physician.physician_id

    def receipt(status: DeliveryStatus, location: Optional[str] = None, detail: str = "") -> DeliveryReceipt:
        return DeliveryReceipt(
            physician_id=physician_id,
            run_date=digest.run_date,
            transport=transport.name,
            status=status,
            content_hash=digest_hash,
            timestamp=clock(),
            location=location,
            detail=detail,
        )

    if ledger.delivered(physician_id, digest_hash):
        logger.info("Digest for %s on %s already delivered; not resending", physician_id, digest.run_date)
        duplicate = receipt(DeliveryStatus.duplicate, detail="identical digest already delivered")
        ledger.append(duplicate)
        return duplicate

    try:
        location = transport.send(digest)
    except DeliveryError as e:
        ledger.append(receipt(DeliveryStatus.failed, detail=str(e)))
        raise

    delivered = receipt(DeliveryStatus.delivered, location=location)
    ledger.append(delivered)
    logger.info("Delivered digest for %s via %s", physician_id, transport.name)
    return delivered


def build_transport(config: RunConfig) -> Transport:
    if config.transport.kind == "smtp":
        return SmtpTransport(config.transport)
    return OutboxTransport(outbox_dir(config))


def build_ledger(config: RunConfig) -> DeliveryLedger:
    return DeliveryLedger(outbox_dir(config) / "receipts.jsonl")
