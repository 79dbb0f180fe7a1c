"""Cross-platform coordination analysis toolkit.

Builds user-user affiliation networks from content clusters, tracks them over
time, finds cross-platform bridge communities, and measures narrative
migration between platforms.
"""

__version__ = "0.1.0"
