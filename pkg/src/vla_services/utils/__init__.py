from .hashing import sha256_file, sha256_json, sha256_path, sha256_tree
from .log_config import configure_logging
from .seeding import derive_seed

__all__ = ['configure_logging', 'derive_seed', 'sha256_file', 'sha256_json',
           'sha256_path', 'sha256_tree']
