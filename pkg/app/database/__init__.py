# On-disk cache (SLELAB01 binary format)
from .cache import cache_key, cache_root, cached_domain_raster, cached_driving, clear_cache

__all__ = ["cache_key", "cache_root", "cached_domain_raster", "cached_driving", "clear_cache"]
