"""
Caching of conforming generation results so dataset reruns skip the generator
"""

import os
import json
import hashlib
import logging
import threading
from typing import Dict, Iterable, Optional

from btforge.frames import EpisodeSource

logger = logging.getLogger(__name__)

DEFAULT_CACHE_DIR = ".btforge_cache"


class GenerationCache:
    """Cache of Scene Analysis + tree pairs keyed by episode, valid while the episode is unchanged."""

    def __init__(self, cache_dir: str = DEFAULT_CACHE_DIR):
        """
        Initialize the generation cache.

        Args:
            cache_dir: Directory to store cache files (default: .btforge_cache)
        """
        self.cache_dir = cache_dir
        self.cache_file = os.path.join(cache_dir, "generation_cache.json")
        self._lock = threading.Lock()
        self._data: Optional[Dict] = None

    @staticmethod
    def episode_signature(source: EpisodeSource, library: Iterable[str]) -> str:
        """
        SHA256 over the instruction, every frame's name, mtime and size, and
        the primitive library the result was validated against.
        """
        signature_data = [f"instruction:{source.instruction}", f"library:{','.join(library)}"]

        for frame in source.frames:
            name = os.path.basename(frame.path)
            try:
                mtime = os.path.getmtime(frame.path)
                file_size = os.path.getsize(frame.path)
                signature_data.append(f"{name}:{mtime}:{file_size}")
            except OSError:
                # If we can't get file info, include the name only
                signature_data.append(f"{name}:0:0")

        signature_str = "\n".join(signature_data)
        return hashlib.sha256(signature_str.encode('utf-8')).hexdigest()

    def _load_cache(self) -> Dict:
        if self._data is not None:
            return self._data
        if not os.path.exists(self.cache_file):
            logger.debug("No cache file found")
            self._data = {}
            return self._data

        try:
            with open(self.cache_file, 'r', encoding='utf-8') as f:
                self._data = json.load(f)
                logger.debug(f"Loaded cache with {len(self._data)} entries")
        except (json.JSONDecodeError, OSError) as e:
            logger.warning(f"Failed to load cache: {e}")
            self._data = {}
        return self._data

    def _save_cache(self) -> None:
        try:
            os.makedirs(self.cache_dir, exist_ok=True)
            with open(self.cache_file, 'w', encoding='utf-8') as f:
                json.dump(self._data, f, indent=2, sort_keys=True)
                logger.debug(f"Saved cache with {len(self._data)} entries")
        except OSError as e:
            logger.warning(f"Failed to save cache: {e}")

    def get(self, source: EpisodeSource, library: Iterable[str]) -> Optional[Dict]:
        """
        Return the cached {'scene_analysis': ..., 'bt_xml': ...} entry if still valid.
        """
        signature = self.episode_signature(source, library)
        with self._lock:
            entry = self._load_cache().get(source.episode_id)
        if entry and entry.get("signature") == signature:
            logger.debug(f"Cache hit for episode {source.episode_id}")
            return {"scene_analysis": entry["scene_analysis"], "bt_xml": entry["bt_xml"]}
        logger.debug(f"Cache miss for episode {source.episode_id}")
        return None

    def put(self, source: EpisodeSource, library: Iterable[str], scene_analysis: Dict, bt_xml: str) -> None:
        """Store a conforming result for an episode."""
        signature = self.episode_signature(source, library)
        with self._lock:
            data = self._load_cache()
            data[source.episode_id] = {
                "signature": signature,
                "scene_analysis": scene_analysis,
                "bt_xml": bt_xml,
            }
            self._save_cache()

    def clear_cache(self) -> bool:
        """
        Clear all cached data.

        Returns:
            True if cache was cleared successfully, False otherwise
        """
        with self._lock:
            self._data = None
            try:
                if os.path.exists(self.cache_file):
                    os.remove(self.cache_file)
                    logger.info("Cache cleared successfully")
                return True
            except OSError as e:
                logger.warning(f"Failed to clear cache: {e}")
                return False

    def get_cache_info(self) -> Dict:
        """
        Get information about the current cache state.

        Returns:
            Dictionary containing cache statistics
        """
        with self._lock:
            entries = len(self._load_cache())
        return {
            "cache_exists": os.path.exists(self.cache_file),
            "cache_entries": entries,
            "cache_file": self.cache_file,
            "cache_size_bytes": os.path.getsize(self.cache_file) if os.path.exists(self.cache_file) else 0
        }
