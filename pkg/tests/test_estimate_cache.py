#!/usr/bin/env python3
"""
Test script for estimate caching functionality
"""
import sys
from pathlib import Path
sys.path.append(str(Path(__file__).parent.parent))

import fnmatch
import os

import redis

from core.estimate_cache import EstimateCache
from core.model import ModelParams, derive, validate
from core.verify import MCConfig, klm_relation

P0 = dict(r=0.02, sigma=0.2, aPrime=-0.10, a=0.05, b=0.15, bPrime=0.30,
          delta=0.30, alpha=0.5, beta=0.1, eta=1.0, w=5.0)


class InMemoryRedis:
    """The slice of the redis client the cache uses"""

    def __init__(self):
        self.store = {}
        self.gets = 0
        self.ttls = {}

    def get(self, key):
        self.gets += 1
        return self.store.get(key)

    def setex(self, key, ttl, value):
        self.store[key] = value
        self.ttls[key] = ttl

    def scan_iter(self, match="*"):
        return iter([k for k in self.store if fnmatch.fnmatch(k, match)])

    def delete(self, *keys):
        for k in keys:
            self.store.pop(k, None)
        return len(keys)


def test_disabled_cache():
    print("🧪 Testing the cache without Redis...")
    cache = EstimateCache(None)
    assert not cache.enabled
    cache.cache_estimate("utility", {"x": 1}, {"mean": 1.0})
    assert cache.get_cached_estimate("utility", {"x": 1}) is None
    assert cache.get_cache_stats() == {"cached_estimates": 0, "cache_enabled": False}
    assert cache.clear_cache() == 0

    previous = os.environ.pop("REDIS_URL", None)
    try:
        assert not EstimateCache.from_env().enabled
        os.environ["REDIS_URL"] = "redis://127.0.0.1:1/0"
        assert not EstimateCache.from_env().enabled
    finally:
        os.environ.pop("REDIS_URL", None)
        if previous is not None:
            os.environ["REDIS_URL"] = previous
    print("✅ Disabled cache test completed!")


def test_cache_keys():
    print("🧪 Testing cache keys...")
    cache = EstimateCache(None)
    key = cache.get_cache_key("multiplier", {"K": 0.8, "mc": {"seed": 1}})
    assert key.startswith("hhk-estimate:multiplier:")
    assert key == cache.get_cache_key("multiplier", {"mc": {"seed": 1}, "K": 0.8})
    assert key != cache.get_cache_key("multiplier", {"K": 0.8, "mc": {"seed": 2}})
    assert key != cache.get_cache_key("utility", {"K": 0.8, "mc": {"seed": 1}})
    print("✅ Cache key test completed!")


def test_store_and_clear():
    print("🧪 Testing store, stats and clear...")
    client = InMemoryRedis()
    cache = EstimateCache(client, cache_ttl=60)
    cache.cache_estimate("utility", {"x": 1}, {"mean": 1.5})
    cache.cache_estimate("multiplier", {"x": 1}, {"mean": 0.2})
    assert cache.get_cached_estimate("utility", {"x": 1}) == {"mean": 1.5}
    assert set(client.ttls.values()) == {60}
    stats = cache.get_cache_stats()
    assert stats["cached_estimates"] == 2 and stats["cache_ttl_seconds"] == 60
    assert stats["by_operation"] == {"utility": 1, "multiplier": 1}
    assert stats["hits"] == 1 and stats["misses"] == 0
    assert cache.clear_cache("utility") == 1
    assert cache.get_cached_estimate("utility", {"x": 1}) is None
    assert cache.get_cached_estimate("multiplier", {"x": 1}) == {"mean": 0.2}
    assert cache.clear_cache() == 1
    assert cache.get_cache_stats()["cached_estimates"] == 0
    assert cache.get_cache_stats()["misses"] == 1
    print("✅ Store and clear test completed!")


def test_multiplier_served_from_cache():
    print("🧪 Testing a cached multiplier estimate...")
    params = ModelParams.from_dict(P0)
    K = derive(validate(params)).K
    cfg = MCConfig(nPaths=100, dt=1 / 32, horizon=16.0, autoHorizon=False, seed=2)
    client = InMemoryRedis()
    cache = EstimateCache(client)
    first = klm_relation(params, K, cfg, cache=cache)
    assert len(client.store) == 1
    second = klm_relation(params, K, cfg, cache=cache)
    assert second == first and client.gets == 2
    assert klm_relation(params, K, cfg.model_copy(update={"seed": 3}), cache=cache) != first
    assert len(client.store) == 2
    print("✅ Cached multiplier test completed!")


def test_live_redis():
    print("🧪 Testing against a local Redis when one is running...")
    try:
        client = redis.from_url('redis://localhost:6379/0', decode_responses=True)
        client.ping()
    except redis.ConnectionError:
        print("   ⚠️  Redis not available, skipping")
        return
    cache = EstimateCache(client, cache_ttl=30)
    cache.cache_estimate("selftest", {"x": 1}, {"mean": 2.0})
    assert cache.get_cached_estimate("selftest", {"x": 1}) == {"mean": 2.0}
    cache.clear_cache("selftest")
    assert cache.get_cached_estimate("selftest", {"x": 1}) is None
    print("✅ Live Redis test completed!")


if __name__ == "__main__":
    test_disabled_cache()
    test_cache_keys()
    test_store_and_clear()
    test_multiplier_served_from_cache()
    test_live_redis()
