"""Roberto: a medication-adherence chat service.

Reminds patients about doses through a chat channel, collects adherence and
lifestyle check-ins, classifies each patient's behavioral stage, and exposes
reports, alerts, and an asynchronous intervention chat to providers.
"""

__version__ = "0.1.0"
