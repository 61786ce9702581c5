from .echo import EchoBrb
from .sig import SigBrb, verify_certificate

__all__ = ["EchoBrb", "SigBrb", "verify_certificate"]
