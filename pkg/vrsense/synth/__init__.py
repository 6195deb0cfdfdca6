from vrsense.synth.packets import Frame, emit_pcap, frames_as_source, merge_streams  # noqa: F401
from vrsense.synth.profiles import Distribution, ProfileSet, StateProfile, load_profiles  # noqa: F401
from vrsense.synth.script import (  # noqa: F401
    FlowTruth, GroundTruthSidecar, IntervalTruth, SessionScript, load_scripts, load_sidecars, random_script,
    save_sidecars, sidecar_labels,
)
from vrsense.synth.generator import generate_session  # noqa: F401
from vrsense.synth.background import generate_background  # noqa: F401
