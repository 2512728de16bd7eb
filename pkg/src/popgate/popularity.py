"""Entity popularity: monthly page-view fetching with an on-disk cache,
plus log and relation-normalized popularity scores."""

from __future__ import annotations

import calendar
import json
import logging
import math
import os
import re
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, asdict
from datetime import datetime, timezone
from pathlib import Path
from typing import Iterable, Mapping, Sequence
from urllib.parse import quote

import requests

from .dataset import QAExample
from .errors import TransportError, ValidationError
from .util import RateLimiter, atomic_write_text, dumps_stable, sha256_hex

logger = logging.getLogger(__name__)

DEFAULT_PAGEVIEWS_BASE_URL = "https://wikimedia.org/api/rest_v1/metrics/pageviews"
# Pinned so unconfigured runs are reproducible; override via config/CLI.
DEFAULT_PAGEVIEWS_MONTH = "2022-12"
USER_AGENT_ENV = "POPGATE_USER_AGENT"

_MONTH_RE = re.compile(r"^\d{4}-(0[1-9]|1[0-2])$")


@dataclass(frozen=True)
class PopularityRecord:
    """Monthly page views for one entity title."""

    entity_title: str
    month: str
    views: int
    fetched_at: str
    missing: bool = False

    def __post_init__(self):
        if self.views < 0:
            raise ValidationError(f"{self.entity_title!r}: negative views")
        if not _MONTH_RE.match(self.month):
            raise ValidationError(f"malformed month {self.month!r}, expected YYYY-MM")


@dataclass(frozen=True)
class RelationPopularityStats:
    relation_type: str
    mean_log10_pop: float
    std_log10_pop: float
    count: int

    def __post_init__(self):
        if self.std_log10_pop < 0 or self.count < 1:
            raise ValidationError(f"bad stats for relation {self.relation_type!r}")


def log_popularity(views: int) -> float:
    """log10 of the view count, flooring at one view so the result stays finite."""
    if views < 0:
        raise ValidationError(f"negative views: {views}")
    return math.log10(max(views, 1))


def compute_relation_stats(
    examples: Iterable[QAExample],
) -> dict[str, RelationPopularityStats]:
    """Mean/std of log10 popularity per relation (population std, ddof=0)."""
    pops: dict[str, list[float]] = {}
    for ex in examples:
        pops.setdefault(ex.relation_type, []).append(ex.log10_popularity)
    stats = {}
    for relation, values in pops.items():
        mean = math.fsum(values) / len(values)
        var = math.fsum((v - mean) ** 2 for v in values) / len(values)
        stats[relation] = RelationPopularityStats(
            relation_type=relation,
            mean_log10_pop=mean,
            std_log10_pop=math.sqrt(var),
            count=len(values),
        )
    return stats


def relative_popularity(
    example: QAExample, stats: Mapping[str, RelationPopularityStats]
) -> float:
    """Standardize an example's log-popularity against its relation; 0 when std is 0."""
    st = stats.get(example.relation_type)
    if st is None:
        raise LookupError(f"no popularity stats for relation {example.relation_type!r}")
    if st.std_log10_pop == 0:
        return 0.0
    return (example.log10_popularity - st.mean_log10_pop) / st.std_log10_pop


def fetch_pageviews(
    entity_title: str, month: str, config: "PageviewsConfig | None" = None
) -> PopularityRecord:
    """One-shot fetch with the default (or given) client configuration."""
    return PageviewsClient(config).fetch(entity_title, month)


@dataclass(frozen=True)
class PageviewsConfig:
    base_url: str = DEFAULT_PAGEVIEWS_BASE_URL
    project: str = "en.wikipedia"
    access: str = "all-access"
    agent: str = "user"
    cache_dir: str | Path = "pageviews-cache"
    timeout_s: float = 30.0
    max_retries: int = 3
    backoff_s: float = 0.5
    max_parallelism: int = 4
    requests_per_second: float | None = 10.0


def _month_bounds(month: str) -> tuple[str, str]:
    if not _MONTH_RE.match(month):
        raise ValidationError(f"malformed month {month!r}, expected YYYY-MM")
    year, mon = (int(p) for p in month.split("-"))
    last = calendar.monthrange(year, mon)[1]
    return f"{year:04d}{mon:02d}01", f"{year:04d}{mon:02d}{last:02d}"


class PageviewsClient:
    """Fetches monthly page views, caching each (title, month) as a JSON file.

    Cache entries are written atomically, so concurrent fetchers sharing one
    cache directory cannot corrupt each other's entries.
    """

    def __init__(self, config: PageviewsConfig | None = None):
        self.config = config or PageviewsConfig()
        self._limiter = RateLimiter(self.config.requests_per_second)
        self._session = requests.Session()
        user_agent = os.environ.get(USER_AGENT_ENV)
        if user_agent:
            self._session.headers["User-Agent"] = user_agent

    def _cache_path(self, title: str, month: str) -> Path:
        key = sha256_hex(f"{title}\x00{month}")[:24]
        return Path(self.config.cache_dir) / f"{key}.json"

    def fetch(self, entity_title: str, month: str) -> PopularityRecord:
        """Return the cached record if present, otherwise fetch and cache it."""
        path = self._cache_path(entity_title, month)
        if path.exists():
            with open(path, encoding="utf-8") as fh:
                return PopularityRecord(**json.load(fh))
        record = self._fetch_remote(entity_title, month)
        atomic_write_text(path, dumps_stable(asdict(record)))
        return record

    def fetch_many(self, titles: Sequence[str], month: str) -> dict[str, PopularityRecord]:
        """Fetch several titles with bounded parallelism; returns title -> record."""
        unique = list(dict.fromkeys(titles))
        with ThreadPoolExecutor(max_workers=self.config.max_parallelism) as pool:
            records = pool.map(lambda t: self.fetch(t, month), unique)
            return dict(zip(unique, records))

    def annotate(self, examples: Sequence[QAExample], month: str) -> list[QAExample]:
        """Fill each example's popularity from its subject label's page views."""
        records = self.fetch_many([ex.subject_label for ex in examples], month)
        return [ex.with_popularity(records[ex.subject_label].views) for ex in examples]

    def _fetch_remote(self, title: str, month: str) -> PopularityRecord:
        start, end = _month_bounds(month)
        url = (
            f"{self.config.base_url}/per-article/{self.config.project}"
            f"/{self.config.access}/{self.config.agent}"
            f"/{quote(title, safe='')}/monthly/{start}/{end}"
        )
        began = time.monotonic()
        last_error: Exception | None = None
        for attempt in range(self.config.max_retries + 1):
            if attempt:
                delay = self.config.backoff_s * (2 ** (attempt - 1))
                logger.info("pageviews retry %d for %r after %.2fs", attempt, title, delay)
                time.sleep(delay)
            self._limiter.acquire()
            try:
                resp = self._session.get(url, timeout=self.config.timeout_s)
            except requests.RequestException as exc:
                last_error = exc
                continue
            if resp.status_code == 404:
                return self._record(title, month, views=0, missing=True)
            if resp.status_code == 429 or resp.status_code >= 500:
                last_error = TransportError(f"HTTP {resp.status_code} from {url}")
                continue
            if resp.status_code != 200:
                raise TransportError(f"HTTP {resp.status_code} from {url}")
            try:
                items = resp.json()["items"]
                views = sum(int(item["views"]) for item in items)
            except (ValueError, KeyError, TypeError) as exc:
                raise TransportError(f"unexpected pageviews payload from {url}: {exc}") from exc
            return self._record(title, month, views=views, missing=False)
        elapsed = time.monotonic() - began
        raise TransportError(
            f"pageviews fetch for {title!r} failed after "
            f"{self.config.max_retries + 1} attempts ({elapsed:.1f}s): {last_error}"
        )

    @staticmethod
    def _record(title: str, month: str, views: int, missing: bool) -> PopularityRecord:
        return PopularityRecord(
            entity_title=title,
            month=month,
            views=views,
            fetched_at=datetime.now(timezone.utc).isoformat(timespec="seconds"),
            missing=missing,
        )
