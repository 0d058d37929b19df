"""capexec: a transparent sandboxing service supervisor.

A declarative service file names a workload binary and the resources it
may touch.  The supervisor spawns one capability broker per granted
resource class, runs the workload in a capability mode where ambient
access is denied, and records a verifiable trace.  A static analyzer
(``capexec.capcheck``) predicts which operations a binary will need
brokered so declarations can be written before the first run.

Import the submodules directly; this package root stays light so that
workload processes can start quickly:

    from capexec import declaration, supervisor, capclient
"""

__version__ = "0.1.0"

from .errors import CapabilityError, CapexecError

__all__ = ["CapabilityError", "CapexecError", "__version__"]
