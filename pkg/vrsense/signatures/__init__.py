from vrsense.signatures.model import (  # noqa: F401
    DEFAULT_UDP_PORTS, PrimarySignature, SignatureSet, UdpSignature, default_signature_set, load_model, save_model,
)
from vrsense.signatures.matcher import MatchKind, MatchOutcome, match_primary, match_udp  # noqa: F401
from vrsense.signatures.training import (  # noqa: F401
    LabeledCapture, build_signature_set, train_primary_signatures, train_udp_signatures,
)
