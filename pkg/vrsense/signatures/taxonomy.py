# vrsense/signatures/taxonomy.py

"""
Training-time domain taxonomy.

SNI-based categorization is only used to describe training corpora. The
runtime pipeline never reads SNI.
"""

from enum import Enum
from typing import Iterable, Optional

CLOUD_CONTENT_SUFFIXES = (
    "amazonaws.com", "cloudfront.net", "azureedge.net", "blob.core.windows.net",
    "googleapis.com", "akamaized.net", "fastly.net", "cloudflare.com",
)


class DomainCategory(Enum):
    PRIMARY = "primary"
    TIME_CRITICAL = "time_critical"
    CLOUD_CONTENT = "cloud_content"
    THIRD_PARTY = "third_party"


def sni_prefix(sni: str, domain: str) -> Optional[str]:
    """
    Labels in front of ``domain`` when the SNI belongs to it, e.g.
    ("prod.shapevrcloud.com", "shapevrcloud") -> "prod". None otherwise.
    """
    if not sni or not domain:
        return None
    labels = sni.lower().rstrip(".").split(".")
    wanted = domain.lower().strip(".").split(".")
    for i in range(1, len(labels) - len(wanted) + 1):
        if labels[i:i + len(wanted)] == wanted:
            return ".".join(labels[:i])
    return None


def categorize_sni(sni: str, primary_domain: str, time_critical_domains: Iterable[str] = ()) -> DomainCategory:
    if sni_prefix(sni, primary_domain) is not None:
        return DomainCategory.PRIMARY
    host = sni.lower().rstrip(".")
    if any(sni_prefix(host, d) is not None or host.endswith(d) for d in time_critical_domains):
        return DomainCategory.TIME_CRITICAL
    if any(host == s or host.endswith("." + s) for s in CLOUD_CONTENT_SUFFIXES):
        return DomainCategory.CLOUD_CONTENT
    return DomainCategory.THIRD_PARTY
