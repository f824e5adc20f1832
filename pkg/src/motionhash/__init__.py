"""Compact binary fuzzy hashing of in-air-handwriting motion signals.

Fixed-length motion signals are mapped by a small convolutional network
to B-bit codes with Hamming-distance semantics; an account database
indexed by those codes answers identification queries in a number of
hash-table probes that does not depend on the database size.
"""

__version__ = "0.1.0"
