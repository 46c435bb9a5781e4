#!/usr/bin/env python3
"""
Redis-based cache for Monte Carlo estimates keyed by parameters and MC settings

Entries live under hhk-estimate:<operation>:<md5 of the canonical payload>. The
payload carries the tool version, so a new release never reads stale estimates.
"""
import hashlib
import json
import logging
import os
from collections import Counter
from typing import Any, Callable, Dict, Iterator, Optional, TypeVar

import redis

from core import __version__

logger = logging.getLogger(__name__)

DEFAULT_TTL = 86400
KEY_PREFIX = "hhk-estimate:"

T = TypeVar("T")


class EstimateCache:
    def __init__(self, redis_client: Optional[redis.Redis] = None, cache_ttl: Optional[int] = None):
        self.redis_client = redis_client
        self.cache_ttl = cache_ttl or int(os.getenv("HHK_CACHE_TTL", DEFAULT_TTL))
        self.hits = 0
        self.misses = 0

    @classmethod
    def from_env(cls) -> "EstimateCache":
        """Connect to REDIS_URL when set; without a server caching is disabled"""
        url = os.getenv("REDIS_URL")
        if not url:
            return cls(None)
        try:
            client = redis.Redis.from_url(url, decode_responses=True)
            client.ping()
        except redis.ConnectionError:
            logger.warning(f"Redis at {url} not available - caching disabled")
            return cls(None)
        logger.info(f"Connected to Redis at {url}")
        return cls(client)

    @property
    def enabled(self) -> bool:
        return self.redis_client is not None

    def _guarded(self, action: str, fn: Callable[[], T], fallback: T) -> T:
        """Run fn against Redis; a disabled cache or a Redis failure yields fallback"""
        if self.redis_client is None:
            return fallback
        try:
            return fn()
        except (redis.RedisError, ValueError) as e:
            logger.warning(f"Estimate cache {action} failed: {e}")
            return fallback

    def _scan(self, operation: Optional[str] = None) -> Iterator[str]:
        pattern = f"{KEY_PREFIX}{operation}:*" if operation else f"{KEY_PREFIX}*"
        return self.redis_client.scan_iter(match=pattern)

    def get_cache_key(self, operation: str, payload: Dict[str, Any]) -> str:
        canonical = json.dumps({"op": operation, "version": __version__, **payload}, sort_keys=True, default=str)
        return f"{KEY_PREFIX}{operation}:{hashlib.md5(canonical.encode()).hexdigest()}"

    def get_cached_estimate(self, operation: str, payload: Dict[str, Any]) -> Optional[Dict[str, Any]]:
        def lookup():
            raw = self.redis_client.get(self.get_cache_key(operation, payload))
            if not raw:
                self.misses += 1
                return None
            self.hits += 1
            logger.info(f"Serving cached {operation} estimate")
            return json.loads(raw).get("estimate")

        return self._guarded("lookup", lookup, None)

    def cache_estimate(self, operation: str, payload: Dict[str, Any], estimate: Dict[str, Any]):
        def store():
            entry = json.dumps({"version": __version__, "estimate": estimate}, default=str)
            self.redis_client.setex(self.get_cache_key(operation, payload), self.cache_ttl, entry)
            logger.info(f"Cached {operation} estimate for {self.cache_ttl}s")

        self._guarded("store", store, None)

    def clear_cache(self, operation: Optional[str] = None) -> int:
        """Delete every estimate, or only those of one operation; returns the count"""
        def clear():
            keys = list(self._scan(operation))
            if keys:
                self.redis_client.delete(*keys)
            logger.info(f"Cleared {len(keys)} cached estimates" + (f" for {operation}" if operation else ""))
            return len(keys)

        return self._guarded("clear", clear, 0)

    def get_cache_stats(self) -> Dict[str, Any]:
        def stats():
            per_operation = Counter(key[len(KEY_PREFIX):].split(":", 1)[0] for key in self._scan())
            return {
                "cached_estimates": sum(per_operation.values()),
                "cache_enabled": True,
                "cache_ttl_seconds": self.cache_ttl,
                "by_operation": dict(per_operation),
                "hits": self.hits,
                "misses": self.misses,
            }

        return self._guarded("stats", stats, {"cached_estimates": 0, "cache_enabled": False})
