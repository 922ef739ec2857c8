"""
Content checksums for run artifacts
Uses SHA-256 from the cryptography hazmat primitives for the run-report manifest
"""
import os

from cryptography.hazmat.primitives import hashes

CHUNK_SIZE = 1 << 16


class IntegrityManager:
    """Computes and verifies artifact checksums"""

    def __init__(self, algorithm: str = 'sha256'):
        if algorithm != 'sha256':
            raise ValueError(f"unsupported checksum algorithm '{algorithm}'")
        self.algorithm = algorithm

    def digest_file(self, path: str) -> str:
        """Hex SHA-256 of a file, read in chunks"""
        digest = hashes.Hash(hashes.SHA256())
        with open(path, 'rb') as handle:
            for chunk in iter(lambda: handle.read(CHUNK_SIZE), b''):
                digest.update(chunk)
        return digest.finalize().hex()

    def verify_file(self, path: str, expected: str) -> bool:
        """Check a file against a stored checksum"""
        if not os.path.exists(path):
            return False
        return self.digest_file(path) == expected


# Singleton instance
integrity_manager = IntegrityManager()
